//! Potentials `V`, the equilibrium `m = e^{-V}` and the weight `ρ`.
//!
//! A [`PotentialSpec`] describes an unnormalized potential `V₀` analytically.
//! [`build_equilibrium`] fixes `γ = 1 / ∫ e^{-V₀}` over the grid, so that
//!
//! ```text
//! ρ = e^{-(r+1) V₀},   V = V₀ - log γ,   m = e^{-V} = γ ρ^{1/(r+1)},
//! ```
//!
//! and `ρ = γ^{-(r+1)} m^{r+1}` holds pointwise.

use std::f64::consts::{LN_2, PI};

use crate::density::{quadrature, Grid, GridDensity};
use crate::{Error, Result};

/// Ratios `min(F, 1-F)` below this are treated as boundary cells.
pub const ISOPERIMETRIC_CUTOFF: f64 = 1e-12;

/// Samples per grid cell used by [`certify_assumptions`].
const CERTIFY_OVERSAMPLING: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PotentialKind {
    /// `log cosh(x/w) + log(π w)`; params `[w]`, default `w = 1`.
    LogCosh,
    /// `sqrt(ε² + x²)`; params `[ε]`, default `ε = 1`.
    SmoothedLaplace,
    /// `|x| + log 2`; kink at the origin.
    Laplace,
    /// `x²/(2σ²) + log(σ √(2π))`; params `[σ]`. Not globally Lipschitz.
    Gaussian,
    /// `Σ a_j exp(b_j x)`; params `[a_1, b_1, a_2, b_2, ...]`.
    ExpSum,
}

impl PotentialKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::LogCosh => "log-cosh",
            Self::SmoothedLaplace => "smoothed-laplace",
            Self::Laplace => "laplace",
            Self::Gaussian => "gaussian",
            Self::ExpSum => "custom-polynomial-of-exponentials",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "log-cosh" | "logcosh" => Self::LogCosh,
            "smoothed-laplace" => Self::SmoothedLaplace,
            "laplace" => Self::Laplace,
            "gaussian" => Self::Gaussian,
            "custom-polynomial-of-exponentials" | "exp-sum" => Self::ExpSum,
            _ => return None,
        })
    }
}

/// `V`, `V'`, `V''` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialDerivs {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Analytic potential `x ↦ scale · V_kind(x - shift) + offset` together with
/// the exponent `r` of the equation.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub params: Vec<f64>,
    pub r: f64,
    pub scale: f64,
    pub offset: f64,
    pub shift: f64,
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, params: Vec<f64>, r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Config(format!(
                "exponent r must be positive, got {r}"
            )));
        }
        let expected = match kind {
            PotentialKind::LogCosh | PotentialKind::SmoothedLaplace | PotentialKind::Gaussian => {
                0..=1
            }
            PotentialKind::Laplace => 0..=0,
            PotentialKind::ExpSum => 2..=usize::MAX,
        };
        if !expected.contains(&params.len()) {
            return Err(Error::Config(format!(
                "potential.params: {} takes {:?} parameters, got {}",
                kind.name(),
                expected,
                params.len()
            )));
        }
        if kind == PotentialKind::ExpSum && !params.len().is_multiple_of(2) {
            return Err(Error::Config(
                "potential.params: exp-sum parameters come in (a, b) pairs".into(),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("potential.params must be finite".into()));
        }
        if matches!(
            kind,
            PotentialKind::LogCosh | PotentialKind::SmoothedLaplace | PotentialKind::Gaussian
        ) && params.first().is_some_and(|&w| w <= 0.0)
        {
            return Err(Error::Config(
                "potential.params: width must be positive".into(),
            ));
        }
        Ok(Self {
            kind,
            params,
            r,
            scale: 1.0,
            offset: 0.0,
            shift: 0.0,
        })
    }

    pub fn log_cosh(r: f64) -> Result<Self> {
        Self::new(PotentialKind::LogCosh, vec![], r)
    }

    pub fn smoothed_laplace(r: f64) -> Result<Self> {
        Self::new(PotentialKind::SmoothedLaplace, vec![], r)
    }

    pub fn laplace(r: f64) -> Result<Self> {
        Self::new(PotentialKind::Laplace, vec![], r)
    }

    pub fn gaussian(r: f64) -> Result<Self> {
        Self::new(PotentialKind::Gaussian, vec![], r)
    }

    /// `x ↦ V(x - h)`.
    pub fn translated(&self, h: f64) -> Self {
        Self {
            shift: self.shift + h,
            ..self.clone()
        }
    }

    /// `x ↦ a V(x) + b`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            scale: self.scale * a,
            offset: a * self.offset + b,
            ..self.clone()
        }
    }

    fn width(&self) -> f64 {
        self.params.first().copied().unwrap_or(1.0)
    }

    pub fn eval(&self, x: f64) -> PotentialDerivs {
        let y = x - self.shift;
        let (v, d1, d2) = match self.kind {
            PotentialKind::LogCosh => {
                let w = self.width();
                let z = y / w;
                let a = z.abs();
                // log cosh z = |z| + log(1 + e^{-2|z|}) - log 2
                let lc = a + (-2.0 * a).exp().ln_1p() - LN_2;
                let sech = 1.0 / z.cosh();
                (lc + (PI * w).ln(), z.tanh() / w, sech * sech / (w * w))
            }
            PotentialKind::SmoothedLaplace => {
                let e = self.width();
                let s = (e * e + y * y).sqrt();
                (s, y / s, e * e / (s * s * s))
            }
            PotentialKind::Laplace => {
                let sign = if y > 0.0 {
                    1.0
                } else if y < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (y.abs() + LN_2, sign, 0.0)
            }
            PotentialKind::Gaussian => {
                let s = self.width();
                (
                    y * y / (2.0 * s * s) + (s * (2.0 * PI).sqrt()).ln(),
                    y / (s * s),
                    1.0 / (s * s),
                )
            }
            PotentialKind::ExpSum => self.params.chunks_exact(2).fold((0.0, 0.0, 0.0), |acc, p| {
                let (a, b) = (p[0], p[1]);
                let e = a * (b * y).exp();
                (acc.0 + e, acc.1 + b * e, acc.2 + b * b * e)
            }),
        };
        PotentialDerivs {
            value: self.scale * v + self.offset,
            first: self.scale * d1,
            second: self.scale * d2,
        }
    }

    /// Global analytic bounds `(sup |V'|, sup |V''|)` when they exist.
    /// `None` in a slot means the bound fails on the whole line.
    pub fn nominal_constants(&self) -> (Option<f64>, Option<f64>) {
        let s = self.scale.abs();
        match self.kind {
            PotentialKind::LogCosh => {
                let w = self.width();
                (Some(s / w), Some(s / (w * w)))
            }
            PotentialKind::SmoothedLaplace => (Some(s), Some(s / self.width())),
            PotentialKind::Laplace => (Some(s), None),
            PotentialKind::Gaussian => (None, Some(s / (self.width() * self.width()))),
            PotentialKind::ExpSum => {
                let flat = self
                    .params
                    .chunks_exact(2)
                    .all(|p| p[0] == 0.0 || p[1] == 0.0);
                if flat {
                    (Some(0.0), Some(0.0))
                } else {
                    (None, None)
                }
            }
        }
    }

    /// Analytic kink locations (points where `V'` jumps).
    pub fn kinks(&self) -> Vec<f64> {
        match self.kind {
            PotentialKind::Laplace => vec![self.shift],
            _ => vec![],
        }
    }
}

/// Sampled certificate of convexity and Lipschitz bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub min_second_derivative: f64,
    pub sup_first_derivative: f64,
    /// Excludes the cells adjacent to detected kinks.
    pub sup_second_derivative: f64,
    pub convex: bool,
    pub lipschitz: bool,
    pub derivative_lipschitz: bool,
    /// Points where `V'` jumps.
    pub kinks: Vec<f64>,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn within_assumptions(&self) -> bool {
        self.convex && self.lipschitz && self.derivative_lipschitz
    }

    /// The single constant `L` bounding both `|V'|` and `|V''|` on the samples.
    pub fn lipschitz_constant(&self) -> f64 {
        self.sup_first_derivative.max(self.sup_second_derivative)
    }
}

/// Samples `V'` and `V''` at ten points per grid cell.
pub fn certify_assumptions(spec: &PotentialSpec, grid: &Grid) -> AssumptionReport {
    let h = grid.dx() / CERTIFY_OVERSAMPLING as f64;
    let count = (grid.len() - 1) * CERTIFY_OVERSAMPLING + 1;
    let x0 = grid.node(0);
    let samples: Vec<(f64, PotentialDerivs)> = (0..count)
        .map(|j| {
            let x = x0 + j as f64 * h;
            (x, spec.eval(x))
        })
        .collect();

    let mut kinks = Vec::new();
    let mut near_kink = vec![false; count];
    for j in 0..count - 1 {
        let (a, b) = (samples[j].1, samples[j + 1].1);
        let jump = (b.first - a.first).abs();
        let smooth = 10.0 * h * a.second.abs().max(b.second.abs()) + 1e-9;
        if jump > smooth {
            kinks.push(0.5 * (samples[j].0 + samples[j + 1].0));
            near_kink[j] = true;
            near_kink[j + 1] = true;
            if j > 0 {
                near_kink[j - 1] = true;
            }
        }
    }
    // a kink sitting exactly on a sample shows up as two half jumps
    kinks.dedup_by(|a, b| (*a - *b).abs() <= 1.5 * h);

    let mut min_second = f64::INFINITY;
    let mut sup_first = 0.0f64;
    let mut sup_second = 0.0f64;
    for (j, (_, d)) in samples.iter().enumerate() {
        sup_first = sup_first.max(d.first.abs());
        if !near_kink[j] {
            min_second = min_second.min(d.second);
            sup_second = sup_second.max(d.second.abs());
        }
    }
    let kinks_convex = kinks.iter().all(|&k| {
        let (l, r) = (spec.eval(k - h).first, spec.eval(k + h).first);
        r >= l
    });
    let convex = min_second >= -1e-12 && kinks_convex;

    let (nominal_l, nominal_lp) = spec.nominal_constants();
    let mut notes = Vec::new();
    let lipschitz = match nominal_l {
        Some(l) => sup_first <= l * (1.0 + 1e-12) + 1e-12,
        None => {
            notes.push(format!(
                "V' reaches {sup_first:.6} on the truncation; Lipschitz only on truncation; outside the standing assumptions"
            ));
            false
        }
    };
    let derivative_lipschitz = if !kinks.is_empty() {
        notes.push(format!(
            "V' is discontinuous at {:?}; sampled sup|V''| excludes the kink cells",
            kinks
        ));
        false
    } else {
        match nominal_lp {
            Some(l) => sup_second <= l * (1.0 + 1e-12) + 1e-12,
            None => {
                notes.push("V'' unbounded on the line".into());
                false
            }
        }
    };
    if !convex {
        notes.push(format!("V'' reaches {min_second:.3e} < 0: not convex"));
    }
    notes.push("sampled certificate".into());
    AssumptionReport {
        min_second_derivative: min_second,
        sup_first_derivative: sup_first,
        sup_second_derivative: sup_second,
        convex,
        lipschitz,
        derivative_lipschitz,
        kinks,
        notes,
    }
}

/// Two-sided bound on `m(x) / min(F(x), 1 - F(x))` with full-line tails.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoperimetricReport {
    pub c_v: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Mass of `e^{-V}` beyond the left and right ends of the grid.
    pub left_tail: f64,
    pub right_tail: f64,
    pub excluded_cells: usize,
}

/// Equilibrium data of a potential on a grid.
#[derive(Debug, Clone)]
pub struct EquilibriumModel {
    spec: PotentialSpec,
    grid: Grid,
    log_gamma: f64,
    potential: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    m: GridDensity,
    rho: Vec<f64>,
    assumptions: AssumptionReport,
    isoperimetric: IsoperimetricReport,
}

/// Normalizes `e^{-V₀}` over the grid and derives `ρ`, `m`, `γ` and `C_V`.
pub fn build_equilibrium(spec: &PotentialSpec, grid: &Grid) -> Result<EquilibriumModel> {
    let assumptions = certify_assumptions(spec, grid);
    if !assumptions.convex {
        return Err(Error::Assumption(format!(
            "{} potential is not convex (min V'' = {:.3e})",
            spec.kind.name(),
            assumptions.min_second_derivative
        )));
    }
    let derivs: Vec<PotentialDerivs> = (0..grid.len()).map(|i| spec.eval(grid.node(i))).collect();
    let raw: Vec<f64> = derivs.iter().map(|d| d.value).collect();
    let vmin = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    if !vmin.is_finite() {
        return Err(Error::Config("potential is not finite on the grid".into()));
    }
    let shifted: Vec<f64> = raw.iter().map(|v| (vmin - v).exp()).collect();
    let shifted_mass = quadrature(&shifted, grid)?;
    // log ∫ e^{-V₀} = log(shifted mass) - vmin
    let log_mass = shifted_mass.ln() - vmin;
    if !log_mass.is_finite() || log_mass < -690.0 {
        return Err(Error::Config(format!(
            "e^(-V) is not normalizable on the grid (log mass {log_mass})"
        )));
    }
    let log_gamma = -log_mass;
    let potential: Vec<f64> = raw.iter().map(|v| v - log_gamma).collect();
    let m_values: Vec<f64> = potential.iter().map(|v| (-v).exp()).collect();
    if m_values.iter().any(|&v| !(v > 1e-300) || !v.is_finite()) {
        return Err(Error::Config(
            "equilibrium density underflows on the grid; reduce grid.R".into(),
        ));
    }
    let r1 = spec.r + 1.0;
    let rho: Vec<f64> = raw.iter().map(|v| (-r1 * v).exp()).collect();
    let m = GridDensity::unnormalized(*grid, m_values)?;
    let isoperimetric = isoperimetric_bound(spec, log_gamma, &m);
    Ok(EquilibriumModel {
        spec: spec.clone(),
        grid: *grid,
        log_gamma,
        potential,
        first: derivs.iter().map(|d| d.first).collect(),
        second: derivs.iter().map(|d| d.second).collect(),
        m,
        rho,
        assumptions,
        isoperimetric,
    })
}

impl EquilibriumModel {
    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn r(&self) -> f64 {
        self.spec.r
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }

    pub fn log_gamma(&self) -> f64 {
        self.log_gamma
    }

    /// `γ^{-(r+1)}`, the constant value of `ρ / m^{r+1}`.
    pub fn pressure_scale(&self) -> f64 {
        (-(self.spec.r + 1.0) * self.log_gamma).exp()
    }

    pub fn m(&self) -> &GridDensity {
        &self.m
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Normalized potential `V = -log m` at the nodes.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn potential_first(&self) -> &[f64] {
        &self.first
    }

    pub fn potential_second(&self) -> &[f64] {
        &self.second
    }

    pub fn assumptions(&self) -> &AssumptionReport {
        &self.assumptions
    }

    pub fn isoperimetric(&self) -> &IsoperimetricReport {
        &self.isoperimetric
    }

    pub fn c_v(&self) -> f64 {
        self.isoperimetric.c_v
    }

    /// Normalized `V` and derivatives at an arbitrary point.
    pub fn potential_at(&self, x: f64) -> PotentialDerivs {
        let d = self.spec.eval(x);
        PotentialDerivs {
            value: d.value - self.log_gamma,
            ..d
        }
    }

    /// Analytic `m(x)`.
    pub fn density_at(&self, x: f64) -> f64 {
        (-self.potential_at(x).value).exp()
    }

    /// Analytic `(ρ, ρ', ρ'')` at `x`.
    pub fn rho_derivs(&self, x: f64) -> (f64, f64, f64) {
        let d = self.spec.eval(x);
        let r1 = self.spec.r + 1.0;
        let rho = (-r1 * d.value).exp();
        (
            rho,
            -r1 * d.first * rho,
            (r1 * r1 * d.first * d.first - r1 * d.second) * rho,
        )
    }
}

/// `C_V` of a model; see [`IsoperimetricReport`].
pub fn isoperimetric_constant(model: &EquilibriumModel) -> f64 {
    model.isoperimetric.c_v
}

fn isoperimetric_bound(
    spec: &PotentialSpec,
    log_gamma: f64,
    m: &GridDensity,
) -> IsoperimetricReport {
    let grid = *m.grid();
    let density = |x: f64| (log_gamma - spec.eval(x).value).exp();
    let left_tail = tail_mass(&density, grid.node(0), -grid.dx());
    let right_tail = tail_mass(&density, grid.node(grid.len() - 1), grid.dx());
    let cdf = m.cdf();
    let total = m.mass();
    let ratio_at = |i: usize| -> Option<f64> {
        let lower = left_tail + cdf[i];
        let upper = right_tail + (total - cdf[i]);
        let denom = lower.min(upper);
        (denom >= ISOPERIMETRIC_CUTOFF).then(|| m.values()[i] / denom)
    };
    let ratios: Vec<Option<f64>> = (0..grid.len()).map(ratio_at).collect();
    let excluded_cells = ratios.iter().filter(|r| r.is_none()).count();

    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    let mut push = |v: f64| {
        min_ratio = min_ratio.min(v);
        max_ratio = max_ratio.max(v);
    };
    ratios.iter().flatten().for_each(|&v| push(v));

    // The ratio has a corner at the median, where the two tails are equal;
    // evaluate it there exactly.
    let level = 0.5 * (total + right_tail - left_tail);
    let median = (level > 0.0 && level < total).then(|| m.quantile_clamped(level));
    if let Some(xm) = median {
        push(density(xm) / (left_tail + level));
    }
    // Smooth interior extrema: vertex of the three-point parabola.
    for i in 1..grid.len() - 1 {
        let (Some(a), Some(b), Some(c)) = (ratios[i - 1], ratios[i], ratios[i + 1]) else {
            continue;
        };
        let straddles = median.is_some_and(|xm| (xm - grid.node(i)).abs() <= grid.dx());
        let extremum = (b >= a && b >= c) || (b <= a && b <= c);
        let curvature = a - 2.0 * b + c;
        if straddles || !extremum || curvature == 0.0 {
            continue;
        }
        let vertex = b - (c - a) * (c - a) / (8.0 * curvature);
        push(vertex);
    }
    let c_v = max_ratio.max(1.0 / min_ratio).max(1.0);
    IsoperimetricReport {
        c_v,
        min_ratio,
        max_ratio,
        left_tail,
        right_tail,
        excluded_cells,
    }
}

/// Trapezoid integral of `density` from `start` outwards in steps of `step`
/// until the integrand is negligible.
fn tail_mass(density: &impl Fn(f64) -> f64, start: f64, step: f64) -> f64 {
    let first = density(start);
    if first == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut prev = first;
    let mut x = start;
    for _ in 0..2_000_000 {
        x += step;
        let next = density(x);
        acc += 0.5 * step.abs() * (prev + next);
        if next < 1e-18 * first || next == 0.0 {
            break;
        }
        prev = next;
    }
    acc
}
