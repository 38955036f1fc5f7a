//! Proof constants and numerical audits of the functional inequalities.
//!
//! Every check yields an [`InequalityReport`] `lhs ≤ rhs`, which passes when
//! `rhs - lhs ≥ -tol |rhs|` for the tolerance of its [`TolClass`].

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::density::{cone_measure, ConeBounds, Grid, GridDensity};
use crate::functional::{dissipation, equilibrium_energy, free_energy, poincare_spectral};
use crate::ot1d::{
    displacement_interpolate, transport_map, w2_distance, TransportMap, DEFAULT_ALPHA_POINTS,
};
use crate::potential::EquilibriumModel;
use crate::solver::Trajectory;
use crate::{Error, Result};

/// Dissipation below this counts as zero in the EPE consistency guard.
pub const ZERO_DISSIPATION: f64 = 1e-14;
/// Energy gaps above this with zero dissipation are inconsistent.
pub const NONZERO_GAP: f64 = 1e-12;
/// Slack on transport-derivative bounds, in grid cells.
pub const MAP_SLACK_CELLS: f64 = 10.0;
/// Relative change allowed in `(c', C')` when the α grid is doubled.
pub const GEODESIC_STABILITY: f64 = 1e-3;
/// Largest mass drift tolerated in a displacement interpolant.
pub const MAX_MASS_DRIFT: f64 = 1e-6;
/// Smallest `L²` gap used by the decay fit.
pub const FIT_FLOOR: f64 = 1e-13;
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TolClass {
    /// Identities that hold up to rounding.
    Analytic,
    /// Checks limited by the grid.
    Discretization,
}

impl TolClass {
    pub fn tol(self) -> f64 {
        match self {
            TolClass::Analytic => 1e-6,
            TolClass::Discretization => 1e-3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TolClass::Analytic => "analytic",
            TolClass::Discretization => "discretization",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub class: TolClass,
    /// Index of the snapshot or sample with the smallest relative slack.
    pub worst: Option<usize>,
}

pub const REPORT_HEADER: &str = "name,lhs,rhs,slack,pass";

impl InequalityReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, class: TolClass) -> Self {
        let slack = rhs - lhs;
        Self {
            name: name.into(),
            lhs,
            rhs,
            slack,
            pass: slack >= -class.tol() * rhs.abs() && slack.is_finite(),
            class,
            worst: None,
        }
    }

    /// Slack relative to `|rhs|` (absolute when `rhs = 0`).
    pub fn relative_slack(&self) -> f64 {
        if self.rhs == 0.0 {
            self.slack
        } else {
            self.slack / self.rhs.abs()
        }
    }

    /// Worst of a family of reports of the same check, tagged with its index;
    /// passes only if every member passes.
    pub fn worst_of(reports: &[InequalityReport]) -> Option<InequalityReport> {
        let (i, worst) = reports
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.relative_slack().total_cmp(&b.1.relative_slack()))?;
        let mut out = worst.clone();
        out.pass = reports.iter().all(|r| r.pass);
        out.worst = Some(i);
        Some(out)
    }

    pub fn write_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{}",
            self.name, self.lhs, self.rhs, self.slack, self.pass
        )
    }
}

pub fn write_reports_csv<W: Write>(reports: &[InequalityReport], mut w: W) -> io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        r.write_row(&mut w)?;
    }
    Ok(())
}

/// `λ = c'^{-(r+1)} (L²/r + L)`; `C'` does not enter.
pub fn lambda_bound(c_geo: f64, c_geo_upper: f64, lipschitz: f64, r: f64) -> Result<f64> {
    if !(c_geo > 0.0 && c_geo_upper >= c_geo && lipschitz >= 0.0 && r > 0.0) {
        return Err(Error::Input(format!(
            "lambda_bound needs 0 < c' <= C', L >= 0, r > 0 (got {c_geo}, {c_geo_upper}, {lipschitz}, {r})"
        )));
    }
    Ok(c_geo.powf(-(r + 1.0)) * (lipschitz * lipschitz / r + lipschitz))
}

/// `4 C_P² C^e / (r² (r+1)²)`, the local weighted-inequality constant.
pub fn local_wi_constant(c_p: f64, upper: f64, r: f64, exponent: f64) -> f64 {
    4.0 * c_p * c_p * upper.powf(exponent) / (r * r * (r + 1.0) * (r + 1.0))
}

/// `√K + (λ/2) K` with `K` the local constant at exponent `2r + 3`, that is
/// `2 C_P C^{r+3/2}/(r(r+1)) + 2 λ C_P² C^{2r+3}/(r²(r+1)²)`.
pub fn epe_constant(c_p: f64, upper: f64, r: f64, lambda: f64) -> f64 {
    let k = local_wi_constant(c_p, upper, r, 2.0 * r + 3.0);
    k.sqrt() + 0.5 * lambda * k
}

/// `|V(y) - V(x)| ≥ ℓ₁ |y - x| - ℓ₂` for `x, y` on the same side of the
/// minimizer of `V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGrowth {
    pub l1: f64,
    pub l2: f64,
    pub argmin: f64,
}

/// `ℓ₁ = min(V'(q₇₅), -V'(q₂₅))` from quantiles of `m`; `ℓ₂` is the least
/// constant that makes the bound hold on the grid.
pub fn linear_growth_constants(model: &EquilibriumModel) -> Result<LinearGrowth> {
    let m = model.m();
    let q75 = m.quantile(0.75 * m.mass())?;
    let q25 = m.quantile(0.25 * m.mass())?;
    let l1 = model
        .potential_at(q75)
        .first
        .min(-model.potential_at(q25).first);
    if !(l1 > 0.0) {
        return Err(Error::Assumption(format!(
            "potential is flat beyond its quartiles (l1 = {l1}); no linear growth"
        )));
    }
    let v = model.potential();
    let grid = model.grid();
    let k = v
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid has nodes");
    // right: max_{x<y} G(y) - G(x), G = ℓ₁ x - V; left mirrored
    let mut l2 = 0.0f64;
    let mut low = f64::INFINITY;
    for i in k..v.len() {
        let g = l1 * grid.node(i) - v[i];
        low = low.min(g);
        l2 = l2.max(g - low);
    }
    let mut low = f64::INFINITY;
    for i in (0..=k).rev() {
        let g = -l1 * grid.node(i) - v[i];
        low = low.min(g);
        l2 = l2.max(g - low);
    }
    Ok(LinearGrowth {
        l1,
        l2,
        argmin: grid.node(k),
    })
}

/// `2 (ℓ₂ + log max(C² C_V²/c, C C_V²/c²)) / ℓ₁`; the two logarithms cover
/// `T(x) ≥ x` and `T(x) ≤ x`, the factor 2 the case where `x` and `T(x)`
/// straddle the minimizer.
pub fn displacement_bound(growth: &LinearGrowth, cone: ConeBounds, c_v: f64) -> f64 {
    let (c, big) = (cone.lower, cone.upper);
    let forward = big * big * c_v * c_v / c;
    let backward = big * c_v * c_v / (c * c);
    2.0 * (growth.l2 + forward.max(backward).ln()) / growth.l1
}

/// `[c/(C C_V²), C C_V²/c]`.
pub fn map_derivative_bounds(cone: ConeBounds, c_v: f64) -> (f64, f64) {
    let s = cone.upper * c_v * c_v;
    (cone.lower / s, s / cone.lower)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapBounds {
    pub derivative_lower: f64,
    pub derivative_upper: f64,
    pub displacement: f64,
    /// Added to both derivative bounds.
    pub slack: f64,
}

/// `T'` bounds and `sup |T - x| ≤ A_disp` for a map from `m`.
pub fn check_map_bounds(map: &TransportMap, bounds: &MapBounds) -> Vec<InequalityReport> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &d in map.derivative().iter().filter(|d| d.is_finite()) {
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let mut reports = vec![
        // -T'_min ≤ -(bound - slack)
        InequalityReport::new(
            "map_derivative_lower",
            bounds.derivative_lower - bounds.slack,
            lo,
            TolClass::Discretization,
        ),
        InequalityReport::new(
            "map_derivative_upper",
            hi,
            bounds.derivative_upper + bounds.slack,
            TolClass::Discretization,
        ),
        InequalityReport::new(
            "displacement",
            map.displacement_sup(),
            bounds.displacement,
            TolClass::Discretization,
        ),
    ];
    if !map.flagged().is_empty() {
        reports.push(InequalityReport::new(
            "map_flagged_cells",
            map.flagged().len() as f64,
            0.0,
            TolClass::Analytic,
        ));
    }
    reports
}

/// `φ = Σ aₖ (1 - sₖ²)⁴`, `sₖ = (x - xₖ)/wₖ`, supported on `|sₖ| < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub bumps: Vec<(f64, f64, f64)>,
}

impl TestFunction {
    pub fn bump(center: f64, width: f64, amplitude: f64) -> Self {
        Self {
            bumps: vec![(center, width, amplitude)],
        }
    }

    /// `(φ, φ', φ'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let mut out = (0.0, 0.0, 0.0);
        for &(c, w, a) in &self.bumps {
            let s = (x - c) / w;
            if s.abs() >= 1.0 {
                continue;
            }
            let q = 1.0 - s * s;
            let q2 = q * q;
            out.0 += a * q2 * q2;
            out.1 += a * (-8.0 * s * q * q2) / w;
            out.2 += a * (-8.0 * q * q2 + 48.0 * s * s * q2) / (w * w);
        }
        out
    }

    /// Smallest interval containing every support.
    pub fn support(&self) -> (f64, f64) {
        self.bumps.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), &(c, w, _)| (lo.min(c - w), hi.max(c + w)),
        )
    }
}

/// One to three bumps with supports at least two cells inside the grid.
pub fn random_test_function(rng: &mut impl Rng, grid: &Grid) -> TestFunction {
    let r = grid.half_width();
    let count = rng.gen_range(1..=3);
    let bumps = (0..count)
        .map(|_| {
            let center = rng.gen_range(-0.8 * r..0.8 * r);
            let room = r - center.abs() - 2.0 * grid.dx();
            let width = rng.gen_range(0.5f64..5.0).min(room);
            (center, width, rng.gen_range(-1.0..1.0))
        })
        .collect();
    TestFunction { bumps }
}

/// `Q[φ]` and `∫ φ'² f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianForm {
    pub q: f64,
    pub gradient_energy: f64,
}

impl HessianForm {
    /// `-λ ∫ φ'² f`.
    pub fn bound(&self, lambda: f64) -> f64 {
        -lambda * self.gradient_energy
    }

    /// Smallest `λ` with `Q ≥ -λ ∫ φ'² f` (zero when `Q ≥ 0`).
    pub fn ratio(&self) -> f64 {
        if self.gradient_energy > 0.0 {
            (-self.q / self.gradient_energy).max(0.0)
        } else {
            0.0
        }
    }
}

/// `Q[φ] = 2(r+1)∫ρ'φ'φ''/f^r + r(r+1)∫ρφ''²/f^r + ∫ρ''φ'²/f^r` with the
/// analytic derivatives of `ρ`.
pub fn hessian_form(
    f: &GridDensity,
    phi: &TestFunction,
    model: &EquilibriumModel,
) -> Result<HessianForm> {
    if f.grid() != model.grid() {
        return Err(Error::Input(
            "density and model live on different grids".into(),
        ));
    }
    let grid = f.grid();
    let (lo, hi) = phi.support();
    if lo <= grid.node(0) || hi >= grid.node(grid.len() - 1) {
        return Err(Error::Input(format!(
            "test function support [{lo}, {hi}] touches the boundary"
        )));
    }
    let r = model.r();
    let (mut q, mut energy) = (0.0, 0.0);
    for (i, &fv) in f.values().iter().enumerate() {
        let x = grid.node(i);
        let (_, d1, d2) = phi.eval(x);
        if d1 == 0.0 && d2 == 0.0 {
            continue;
        }
        if !(fv > 0.0) {
            return Err(Error::Domain(format!("density vanishes at node {i}")));
        }
        let (rho, rho1, rho2) = model.rho_derivs(x);
        let inv = fv.powf(-r);
        let w = grid.weight(i);
        q += w
            * inv
            * (2.0 * (r + 1.0) * rho1 * d1 * d2 + r * (r + 1.0) * rho * d2 * d2 + rho2 * d1 * d1);
        energy += w * d1 * d1 * fv;
    }
    Ok(HessianForm {
        q,
        gradient_energy: energy,
    })
}

/// `F_gap ≤ W₂ √I + (λ/2) W₂²`.
pub fn check_hwi(
    f: &GridDensity,
    model: &EquilibriumModel,
    lambda: f64,
) -> Result<InequalityReport> {
    let gap = free_energy(f, model)? - equilibrium_energy(model);
    let w = w2_distance(f, model.m())?;
    let i = dissipation(f, model)?;
    Ok(InequalityReport::new(
        "hwi",
        gap,
        w * i.sqrt() + 0.5 * lambda * w * w,
        TolClass::Discretization,
    ))
}

/// `F_gap ≤ K_epe I`; also returns the raw ratio `F_gap / I`.
pub fn check_epe(
    f: &GridDensity,
    model: &EquilibriumModel,
    k_epe: f64,
) -> Result<(InequalityReport, f64)> {
    let gap = free_energy(f, model)? - equilibrium_energy(model);
    let i = dissipation(f, model)?;
    if i < ZERO_DISSIPATION && gap > NONZERO_GAP {
        return Err(Error::Inconsistency(format!(
            "energy gap {gap:e} with vanishing dissipation {i:e}"
        )));
    }
    let ratio = if i > 0.0 { gap / i } else { 0.0 };
    Ok((
        InequalityReport::new("epe", gap, k_epe * i, TolClass::Discretization),
        ratio,
    ))
}

/// `W₂²(f, m) ≤ 4 C_P² C^e / (r²(r+1)²) · I`.
pub fn check_local_wi(
    f: &GridDensity,
    model: &EquilibriumModel,
    c_p: f64,
    upper: f64,
    exponent: f64,
) -> Result<InequalityReport> {
    let w = w2_distance(f, model.m())?;
    let i = dissipation(f, model)?;
    let r = model.r();
    let name = if exponent == 2.0 * r + 3.0 {
        "local_wi".to_string()
    } else {
        format!("local_wi_exp{exponent}")
    };
    Ok(InequalityReport::new(
        name,
        w * w,
        local_wi_constant(c_p, upper, r, exponent) * i,
        TolClass::Discretization,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicAudit {
    pub c_prime: f64,
    pub upper_prime: f64,
    /// The same bounds from twice as many α points.
    pub c_prime_fine: f64,
    pub upper_prime_fine: f64,
    pub max_mass_drift: f64,
    pub report: InequalityReport,
}

fn geodesic_range(
    f: &GridDensity,
    m: &GridDensity,
    map: &TransportMap,
    points: usize,
) -> Result<(f64, f64, f64)> {
    // the endpoints are exactly m and f
    let own = cone_measure(f, m)?.bounds;
    let (mut lo, mut hi, mut drift) = (own.lower.min(1.0), own.upper.max(1.0), 0.0f64);
    for k in 1..points - 1 {
        let alpha = k as f64 / (points - 1) as f64;
        let interp = displacement_interpolate(m, map, alpha)?;
        drift = drift.max(interp.mass_drift);
        let b = cone_measure(&interp.density, m)?.bounds;
        lo = lo.min(b.lower);
        hi = hi.max(b.upper);
    }
    Ok((lo, hi, drift))
}

/// Empirical cone `(c', C')` of the geodesic from `m` to `f`, and its
/// stability when the α grid is doubled.
pub fn geodesic_cone_audit(
    f: &GridDensity,
    m: &GridDensity,
    map: &TransportMap,
    points: usize,
) -> Result<GeodesicAudit> {
    if points < 2 {
        return Err(Error::Input(
            "geodesic audit needs at least two alpha points".into(),
        ));
    }
    let (c, big, d1) = geodesic_range(f, m, map, points)?;
    let (cf, bigf, d2) = geodesic_range(f, m, map, 2 * points - 1)?;
    let drift = d1.max(d2);
    if drift > MAX_MASS_DRIFT {
        return Err(Error::Numeric(format!(
            "geodesic interpolation mass drift {drift:e}"
        )));
    }
    let change = ((c - cf) / c).abs().max(((big - bigf) / big).abs());
    let finite = c > 0.0 && big.is_finite();
    let mut report = InequalityReport::new(
        "geodesic_cone",
        change,
        GEODESIC_STABILITY,
        TolClass::Analytic,
    );
    report.pass &= finite;
    Ok(GeodesicAudit {
        c_prime: c,
        upper_prime: big,
        c_prime_fine: cf,
        upper_prime_fine: bigf,
        max_mass_drift: drift,
        report,
    })
}

/// `L2sq(t) ≈ A e^{-a t}` over `[t_end/4, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub amplitude: f64,
    pub rate: f64,
    pub points: usize,
}

/// Least squares on `log values` over the window, skipping values below
/// [`FIT_FLOOR`].
pub fn fit_decay(times: &[f64], values: &[f64]) -> Result<DecayFit> {
    let t_end = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let points: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|&(&t, &v)| t >= 0.25 * t_end && v > FIT_FLOOR)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!(
            "{} usable points in [t_end/4, t_end] (need {MIN_FIT_POINTS})",
            points.len()
        )));
    }
    if points
        .windows(2)
        .any(|w| w[1].1 > w[0].1 + 1e-6 * w[0].1.abs())
    {
        log::warn!("decay fit: log L2 gap is not monotone in the window");
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("decay window has a single time".into()));
    }
    let slope = sxy / sxx;
    Ok(DecayFit {
        amplitude: (my - slope * mt).exp(),
        rate: -slope,
        points: points.len(),
    })
}

pub fn fit_trajectory(trajectory: &Trajectory) -> Result<DecayFit> {
    let t: Vec<f64> = trajectory.snapshots.iter().map(|s| s.t).collect();
    let v: Vec<f64> = trajectory.snapshots.iter().map(|s| s.l2sq).collect();
    fit_decay(&t, &v)
}

/// `F_gap(t) / F_gap(0) ≤ e^{-t / K_epe}` at every snapshot after `t = 0`
/// (worst reported).
pub fn gronwall_report(trajectory: &Trajectory, k_epe: f64) -> Option<InequalityReport> {
    let first = trajectory.snapshots.first()?.f_gap;
    if !(first > 0.0) {
        return None;
    }
    let reports: Vec<InequalityReport> = trajectory
        .snapshots
        .iter()
        .filter(|s| s.t > 0.0)
        .map(|s| {
            InequalityReport::new(
                "gronwall",
                s.f_gap / first,
                (-s.t / k_epe).exp(),
                TolClass::Analytic,
            )
        })
        .collect();
    InequalityReport::worst_of(&reports)
}

/// HWI and EPE at every stored density of a trajectory.
pub fn audit_trajectory(
    trajectory: &Trajectory,
    model: &EquilibriumModel,
    lambda: f64,
    k_epe: f64,
) -> Result<Vec<InequalityReport>> {
    let mut hwi = Vec::new();
    let mut epe = Vec::new();
    for f in &trajectory.densities {
        let density = GridDensity::unnormalized(*model.grid(), f.clone())?;
        hwi.push(check_hwi(&density, model, lambda)?);
        epe.push(check_epe(&density, model, k_epe)?.0);
    }
    let mut out: Vec<InequalityReport> = [hwi, epe]
        .iter()
        .filter_map(|r| InequalityReport::worst_of(r))
        .collect();
    out.extend(gronwall_report(trajectory, k_epe));
    Ok(out)
}

/// Deterministic per-sample generator: stream `index` of `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `f = m e^g / Z` with `g` a damped random trigonometric sum scaled so
/// that `|g| ≤ A`, `A ≤ min(-log c, log C)/2`; then `c ≤ f/m ≤ C`.
pub fn random_cone_density(
    rng: &mut impl Rng,
    model: &EquilibriumModel,
    cone: ConeBounds,
) -> Result<GridDensity> {
    let grid = *model.grid();
    let room = 0.5 * (-cone.lower.ln()).min(cone.upper.ln());
    let terms: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..=4))
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.1..2.5),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let spread = rng.gen_range(2.0..3.0 * grid.half_width());
    let shift = rng.gen_range(-0.3 * grid.half_width()..0.3 * grid.half_width());
    let g: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&x| {
            let envelope = (-((x - shift) / spread).powi(2)).exp();
            envelope
                * terms
                    .iter()
                    .map(|(a, k, p)| a * (k * x + p).sin())
                    .sum::<f64>()
        })
        .collect();
    let top = g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let amplitude = room * rng.gen_range(0.2..1.0);
    let scale = if top > 0.0 { amplitude / top } else { 0.0 };
    let values = g
        .iter()
        .zip(model.m().values())
        .map(|(g, m)| m * (scale * g).exp())
        .collect();
    let raw = GridDensity::unnormalized(grid, values)?;
    let mass = raw.mass();
    GridDensity::unnormalized(
        grid,
        raw.into_values().into_iter().map(|v| v / mass).collect(),
    )
}

/// Model-level inputs shared by every density audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSetup {
    pub cone: ConeBounds,
    pub lipschitz: f64,
    pub c_v: f64,
    pub c_p: f64,
    pub growth: LinearGrowth,
    pub alpha_points: usize,
}

impl AuditSetup {
    pub fn new(model: &EquilibriumModel, cone: ConeBounds) -> Result<Self> {
        Ok(Self {
            cone,
            lipschitz: model.assumptions().lipschitz_constant(),
            c_v: model.c_v(),
            c_p: poincare_spectral(model)?,
            growth: linear_growth_constants(model)?,
            alpha_points: DEFAULT_ALPHA_POINTS,
        })
    }

    pub fn map_bounds(&self, grid: &Grid) -> MapBounds {
        let (lo, hi) = map_derivative_bounds(self.cone, self.c_v);
        MapBounds {
            derivative_lower: lo,
            derivative_upper: hi,
            displacement: displacement_bound(&self.growth, self.cone, self.c_v),
            slack: MAP_SLACK_CELLS * grid.dx(),
        }
    }
}

/// Every audit for one density of the cone.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityAudit {
    pub reports: Vec<InequalityReport>,
    /// The same inequality at exponent `2r + 1`; recorded, not required.
    pub local_wi_statement: InequalityReport,
    pub geodesic: GeodesicAudit,
    pub lambda: f64,
    pub k_epe: f64,
    pub epe_ratio: f64,
    pub hessian: HessianForm,
    pub displacement: f64,
}

impl DensityAudit {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

pub fn audit_density(
    f: &GridDensity,
    model: &EquilibriumModel,
    setup: &AuditSetup,
    phi: &TestFunction,
) -> Result<DensityAudit> {
    let r = model.r();
    let map = transport_map(model.m(), f)?;
    let geodesic = geodesic_cone_audit(f, model.m(), &map, setup.alpha_points)?;
    let lambda = lambda_bound(geodesic.c_prime, geodesic.upper_prime, setup.lipschitz, r)?;
    let k_epe = epe_constant(setup.c_p, setup.cone.upper, r, lambda);
    let (epe, epe_ratio) = check_epe(f, model, k_epe)?;
    let hessian = hessian_form(f, phi, model)?;
    let mut reports = vec![
        check_hwi(f, model, lambda)?,
        epe,
        check_local_wi(f, model, setup.c_p, setup.cone.upper, 2.0 * r + 3.0)?,
        InequalityReport::new(
            "hessian_form",
            -hessian.q,
            lambda * hessian.gradient_energy,
            TolClass::Discretization,
        ),
        geodesic.report.clone(),
    ];
    reports.extend(check_map_bounds(&map, &setup.map_bounds(model.grid())));
    Ok(DensityAudit {
        reports,
        local_wi_statement: check_local_wi(f, model, setup.c_p, setup.cone.upper, 2.0 * r + 1.0)?,
        geodesic,
        lambda,
        k_epe,
        epe_ratio,
        hessian,
        displacement: map.displacement_sup(),
    })
}

/// Proof constants and measured quantities of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstantsLedger {
    pub lipschitz: f64,
    pub r: f64,
    pub c: f64,
    pub upper: f64,
    pub c_v: f64,
    pub c_p: f64,
    pub c_prime: f64,
    pub upper_prime: f64,
    pub lambda: f64,
    pub lambda_audit: f64,
    pub l1: f64,
    pub l2: f64,
    pub a_disp: f64,
    pub k_wi: f64,
    pub k_epe: f64,
    pub epe_ratio_max: f64,
    pub a_fit_amplitude: Option<f64>,
    pub a_fit: Option<f64>,
}

impl ConstantsLedger {
    /// Constants from the model alone; the geodesic cone is taken as `(c, C)`
    /// until audits refine it.
    pub fn from_setup(setup: &AuditSetup, r: f64) -> Result<Self> {
        let lambda = lambda_bound(setup.cone.lower, setup.cone.upper, setup.lipschitz, r)?;
        Ok(Self {
            lipschitz: setup.lipschitz,
            r,
            c: setup.cone.lower,
            upper: setup.cone.upper,
            c_v: setup.c_v,
            c_p: setup.c_p,
            c_prime: setup.cone.lower,
            upper_prime: setup.cone.upper,
            lambda,
            lambda_audit: 0.0,
            l1: setup.growth.l1,
            l2: setup.growth.l2,
            a_disp: displacement_bound(&setup.growth, setup.cone, setup.c_v),
            k_wi: local_wi_constant(setup.c_p, setup.cone.upper, r, 2.0 * r + 3.0),
            k_epe: epe_constant(setup.c_p, setup.cone.upper, r, lambda),
            epe_ratio_max: 0.0,
            a_fit_amplitude: None,
            a_fit: None,
        })
    }

    /// Replaces `(c', C')` by the extremes measured over `audits` and
    /// recomputes `λ` and `K_epe` from them; keeps the largest observed ratios.
    pub fn absorb(&mut self, audits: &[DensityAudit]) {
        if audits.is_empty() {
            return;
        }
        self.c_prime = f64::INFINITY;
        self.upper_prime = 0.0;
        for a in audits {
            self.c_prime = self.c_prime.min(a.geodesic.c_prime);
            self.upper_prime = self.upper_prime.max(a.geodesic.upper_prime);
            self.lambda_audit = self.lambda_audit.max(a.hessian.ratio());
            self.epe_ratio_max = self.epe_ratio_max.max(a.epe_ratio);
        }
        if let Ok(lambda) = lambda_bound(self.c_prime, self.upper_prime, self.lipschitz, self.r) {
            self.lambda = lambda;
            self.k_epe = epe_constant(self.c_p, self.upper, self.r, lambda);
        }
    }

    pub fn with_fit(mut self, fit: &DecayFit) -> Self {
        self.a_fit_amplitude = Some(fit.amplitude);
        self.a_fit = Some(fit.rate);
        self
    }

    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("L", self.lipschitz),
            ("r", self.r),
            ("c", self.c),
            ("C", self.upper),
            ("C_V", self.c_v),
            ("C_P", self.c_p),
            ("c_prime", self.c_prime),
            ("C_prime", self.upper_prime),
            ("lambda", self.lambda),
            ("lambda_audit", self.lambda_audit),
            ("l1", self.l1),
            ("l2", self.l2),
            ("A_disp", self.a_disp),
            ("K_wi", self.k_wi),
            ("K_epe", self.k_epe),
            ("epe_ratio_max", self.epe_ratio_max),
        ];
        if let (Some(a), Some(rate)) = (self.a_fit_amplitude, self.a_fit) {
            out.push(("A_fit", a));
            out.push(("a_fit", rate));
        }
        out
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (k, v) in self.entries() {
            writeln!(w, "{k}={v:.16e}")?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "key,value")?;
        for (k, v) in self.entries() {
            writeln!(w, "{k},{v:.16e}")?;
        }
        Ok(())
    }
}
