//! Free energy `F_ρ[f] = ∫ ρ / f^r`, its dissipation, distances to the
//! equilibrium and Poincaré constants of `m`.

use crate::density::{Grid, GridDensity};
use crate::potential::EquilibriumModel;
use crate::{Error, Result};

/// Values of `m` below this are clipped in the Muckenhoupt sums.
pub const MUCKENHOUPT_FLOOR: f64 = 1e-280;

fn check_grid(f: &GridDensity, model: &EquilibriumModel) -> Result<()> {
    if f.grid() != model.grid() {
        return Err(Error::Input(
            "density and model live on different grids".into(),
        ));
    }
    Ok(())
}

fn check_positive(f: &GridDensity) -> Result<()> {
    match f.values().iter().position(|&v| !(v > 0.0)) {
        Some(i) => Err(Error::Domain(format!(
            "density vanishes at node {i} (x = {}); outside every cone",
            f.grid().node(i)
        ))),
        None => Ok(()),
    }
}

/// `∫ ρ / f^r`.
pub fn free_energy(f: &GridDensity, model: &EquilibriumModel) -> Result<f64> {
    check_grid(f, model)?;
    check_positive(f)?;
    let r = model.r();
    let grid = f.grid();
    Ok(f.values()
        .iter()
        .zip(model.rho())
        .enumerate()
        .map(|(i, (v, rho))| grid.weight(i) * rho / v.powf(r))
        .sum())
}

/// `F_ρ[m] = γ^{-(r+1)}`, evaluated by the same quadrature as
/// [`free_energy`].
pub fn equilibrium_energy(model: &EquilibriumModel) -> f64 {
    free_energy(model.m(), model).expect("m is positive on its grid")
}

/// Central differences, one-sided at the ends.
pub(crate) fn gradient(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| match i {
            0 => (values[1] - values[0]) / dx,
            _ if i + 1 == n => (values[n - 1] - values[n - 2]) / dx,
            _ => (values[i + 1] - values[i - 1]) / (2.0 * dx),
        })
        .collect()
}

/// `I_ρ[f] = r² ∫ f |∂ₓ(ρ / f^{r+1})|²
///        = r² γ^{-2(r+1)} ∫ u |∂ₓ u^{-(r+1)}|² m`, with `u = f/m`.
pub fn dissipation(f: &GridDensity, model: &EquilibriumModel) -> Result<f64> {
    check_grid(f, model)?;
    check_positive(f)?;
    let r = model.r();
    let grid = f.grid();
    let m = model.m().values();
    let u: Vec<f64> = f.values().iter().zip(m).map(|(v, w)| v / w).collect();
    let q: Vec<f64> = u.iter().map(|x| x.powf(-(r + 1.0))).collect();
    let dq = gradient(&q, grid.dx());
    let scale = model.pressure_scale();
    let integral: f64 = (0..u.len())
        .map(|i| grid.weight(i) * u[i] * dq[i] * dq[i] * m[i])
        .sum();
    Ok(r * r * scale * scale * integral)
}

/// `∫ |u - 1|² m = ∫ (f - m)² / m`.
pub fn l2_gap(f: &GridDensity, model: &EquilibriumModel) -> Result<f64> {
    check_grid(f, model)?;
    let grid = f.grid();
    Ok(f.values()
        .iter()
        .zip(model.m().values())
        .enumerate()
        .map(|(i, (v, w))| grid.weight(i) * (v - w) * (v - w) / w)
        .sum())
}

/// `Var_m(u) = ∫ u² m - (∫ u m)²`.
pub fn variance(f: &GridDensity, model: &EquilibriumModel) -> Result<f64> {
    check_grid(f, model)?;
    let grid = f.grid();
    let (mut first, mut second) = (0.0, 0.0);
    for (i, (v, w)) in f.values().iter().zip(model.m().values()).enumerate() {
        first += grid.weight(i) * v;
        second += grid.weight(i) * v * v / w;
    }
    Ok((second - first * first).max(0.0))
}

/// One snapshot of the functionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalReport {
    pub f_value: f64,
    /// `F_ρ[f] - F_ρ[m]`.
    pub f_gap: f64,
    pub i_value: f64,
    pub l2sq: f64,
    pub var_u: f64,
}

impl FunctionalReport {
    pub fn evaluate(f: &GridDensity, model: &EquilibriumModel) -> Result<Self> {
        let f_value = free_energy(f, model)?;
        Ok(Self {
            f_value,
            f_gap: f_value - equilibrium_energy(model),
            i_value: dissipation(f, model)?,
            l2sq: l2_gap(f, model)?,
            var_u: variance(f, model)?,
        })
    }
}

/// `‖u - 1‖²_{H^{-1}(m)} = ∫ (F_f - F_m)² / m`: the weighted elliptic
/// problem `-(m ψ')' = f - m` with Neumann ends integrates once to
/// `m ψ' = F_m - F_f`.
pub fn h_minus_one_norm_sq(f: &GridDensity, m: &GridDensity) -> Result<f64> {
    if f.grid() != m.grid() {
        return Err(Error::Input("densities live on different grids".into()));
    }
    let grid = f.grid();
    let scale = m.mass() / f.mass();
    Ok(f.cdf()
        .iter()
        .zip(m.cdf())
        .zip(m.values())
        .enumerate()
        .map(|(i, ((a, b), w))| {
            let d = a * scale - b;
            grid.weight(i) * d * d / w
        })
        .sum())
}

/// Poincaré constants of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoincareEstimate {
    pub c_p_spectral: f64,
    pub muckenhoupt: MuckenhouptBound,
}

impl PoincareEstimate {
    pub fn of(model: &EquilibriumModel) -> Result<Self> {
        Ok(Self {
            c_p_spectral: poincare_spectral(model)?,
            muckenhoupt: poincare_muckenhoupt(model)?,
        })
    }

    /// Whether the spectral value lies in `[B (1 - tol), 4B (1 + tol)]`.
    pub fn consistent(&self, tol: f64) -> bool {
        let MuckenhouptBound { lower, upper, .. } = self.muckenhoupt;
        self.c_p_spectral >= lower * (1.0 - tol) && self.c_p_spectral <= upper * (1.0 + tol)
    }
}

/// `1/λ₁` of `g ↦ -(1/m)(m g')'` with Neumann ends; see [`spectral_constant`].
pub fn poincare_spectral(model: &EquilibriumModel) -> Result<f64> {
    spectral_constant(model.m())
}

/// Symmetric tridiagonal `M^{-1/2} K M^{-1/2}`: `K` is the finite-volume
/// stiffness with face weights `(m_i + m_{i+1}) / (2 dx)`, `M = diag(w_i m_i)`.
fn weighted_laplacian(m: &GridDensity) -> (Vec<f64>, Vec<f64>) {
    let grid = m.grid();
    let n = grid.len();
    let v = m.values();
    let faces: Vec<f64> = v
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) / grid.dx())
        .collect();
    let root_mass: Vec<f64> = (0..n).map(|i| (grid.weight(i) * v[i]).sqrt()).collect();
    let diag = (0..n)
        .map(|i| {
            let left = if i > 0 { faces[i - 1] } else { 0.0 };
            let right = if i + 1 < n { faces[i] } else { 0.0 };
            (left + right) / (root_mass[i] * root_mass[i])
        })
        .collect();
    let off = (0..n - 1)
        .map(|i| -faces[i] / root_mass[i] / root_mass[i + 1])
        .collect();
    (diag, off)
}

/// Number of eigenvalues below `x` (Sturm count through the `LDLᵀ` pivots).
fn eigen_count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..diag.len() {
        let coupling = if i > 0 {
            off[i - 1] * off[i - 1] / d
        } else {
            0.0
        };
        d = diag[i] - x - coupling;
        if d == 0.0 {
            d = -f64::EPSILON * (diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// `1/λ₁` for the weighted Neumann operator of an arbitrary positive
/// density, by bisection on the Sturm count.
pub fn spectral_constant(m: &GridDensity) -> Result<f64> {
    if let Some(i) = m.values().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::Domain(format!("weight vanishes at node {i}")));
    }
    let (diag, off) = weighted_laplacian(m);
    let upper = (0..diag.len())
        .map(|i| {
            let l = if i > 0 { off[i - 1].abs() } else { 0.0 };
            let r = off.get(i).map_or(0.0, |o| o.abs());
            diag[i] + l + r
        })
        .fold(0.0, f64::max);
    if !upper.is_finite() {
        return Err(Error::Numeric(format!(
            "weighted Laplacian is not finite (Gershgorin bound {upper})"
        )));
    }
    let (mut lo, mut hi) = (0.0, upper);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if eigen_count_below(&diag, &off, mid) >= 2 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    if !(lambda > 0.0) || lambda < 1e-14 * upper {
        return Err(Error::Numeric(format!(
            "spectral gap {lambda:e} not resolved (spectral radius bound {upper:e})"
        )));
    }
    Ok(1.0 / lambda)
}

/// Two-sided Muckenhoupt estimate around the median:
/// `B = max_± sup_x m(tail beyond x) ∫_med^x 1/m` and `B ≤ C_P ≤ 4B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuckenhouptBound {
    pub b: f64,
    pub lower: f64,
    pub upper: f64,
    /// Nodes skipped because `m` fell below [`MUCKENHOUPT_FLOOR`].
    pub clipped: usize,
}

pub fn poincare_muckenhoupt(model: &EquilibriumModel) -> Result<MuckenhouptBound> {
    muckenhoupt(model.m())
}

pub fn muckenhoupt(m: &GridDensity) -> Result<MuckenhouptBound> {
    let grid: &Grid = m.grid();
    let mass = m.mass();
    let median = m.quantile(0.5 * mass)?;
    let v = m.values();
    let n = grid.len();
    let (cell, _) = grid.locate(median);
    let mut clipped = 0usize;
    let inv = |i: usize, clipped: &mut usize| {
        if v[i] < MUCKENHOUPT_FLOOR {
            *clipped += 1;
            None
        } else {
            Some(1.0 / v[i])
        }
    };
    let at_median = 1.0 / m.value_at(median);

    // right: x = node j > median
    let mut b_right = 0.0f64;
    let mut integral = 0.0;
    let mut prev = (median, at_median);
    for j in cell + 1..n {
        let x = grid.node(j);
        let Some(w) = inv(j, &mut clipped) else { break };
        integral += 0.5 * (x - prev.0) * (w + prev.1);
        prev = (x, w);
        b_right = b_right.max((mass - m.cdf()[j]) * integral);
    }
    let mut b_left = 0.0f64;
    let mut integral = 0.0;
    let mut prev = (median, at_median);
    for j in (0..=cell).rev() {
        let x = grid.node(j);
        let Some(w) = inv(j, &mut clipped) else { break };
        integral += 0.5 * (prev.0 - x) * (w + prev.1);
        prev = (x, w);
        b_left = b_left.max(m.cdf()[j] * integral);
    }
    if clipped > 0 {
        log::warn!("muckenhoupt: {clipped} nodes clipped where m < {MUCKENHOUPT_FLOOR:e}");
    }
    let b = b_right.max(b_left);
    Ok(MuckenhouptBound {
        b,
        lower: b,
        upper: 4.0 * b,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{build_equilibrium, PotentialSpec};
    use std::f64::consts::PI;

    fn logcosh() -> EquilibriumModel {
        build_equilibrium(
            &PotentialSpec::log_cosh(2.0).unwrap(),
            &Grid::new(15.0, 2001).unwrap(),
        )
        .unwrap()
    }

    fn tilted(model: &EquilibriumModel, eps: f64) -> GridDensity {
        let g = *model.grid();
        let vals = (0..g.len())
            .map(|i| model.m().values()[i] * (1.0 + eps * g.node(i).sin()))
            .collect();
        GridDensity::new(g, vals).unwrap()
    }

    #[test]
    fn equilibrium_values() {
        let model = logcosh();
        let expected = model.pressure_scale();
        assert!((free_energy(model.m(), &model).unwrap() - expected).abs() < 1e-8);
        assert_eq!(dissipation(model.m(), &model).unwrap(), 0.0);
        assert_eq!(l2_gap(model.m(), &model).unwrap(), 0.0);
        assert!(variance(model.m(), &model).unwrap() < 1e-15);
    }

    #[test]
    fn energy_is_minimal_at_m() {
        let model = logcosh();
        let f_m = equilibrium_energy(&model);
        for eps in [0.01, 0.1, 0.3, -0.2] {
            let r = FunctionalReport::evaluate(&tilted(&model, eps), &model).unwrap();
            assert!(r.f_gap > 0.0 && r.i_value > 0.0);
            assert!(r.l2sq >= r.var_u);
            assert!(r.f_value > f_m);
        }
    }

    #[test]
    fn zero_cell_is_domain_error() {
        let model = logcosh();
        let mut v = model.m().values().to_vec();
        v[1000] = 0.0;
        let f = GridDensity::new(*model.grid(), v).unwrap();
        assert!(matches!(free_energy(&f, &model), Err(Error::Domain(_))));
        assert!(matches!(dissipation(&f, &model), Err(Error::Domain(_))));
    }

    #[test]
    fn free_energy_of_step_tilt_matches_fine_quadrature() {
        let model = logcosh();
        let g = *model.grid();
        let r = model.r();
        // jump at the node x = 0, which carries the mean of the one-sided
        // integrands so the composite rule splits cleanly there
        let (lo, hi) = (0.8f64, 1.25f64);
        let at_jump = (0.5 * (lo.powf(-r) + hi.powf(-r))).powf(-1.0 / r);
        let tilt = |x: f64| match x.partial_cmp(&0.0).unwrap() {
            std::cmp::Ordering::Less => lo,
            std::cmp::Ordering::Greater => hi,
            std::cmp::Ordering::Equal => at_jump,
        };
        let raw =
            GridDensity::unnormalized(g, g.sample(|x| model.density_at(x) * tilt(x))).unwrap();
        let z = raw.mass();
        let f = GridDensity::new(g, raw.into_values()).unwrap();
        let fine = 10 * (g.len() - 1);
        let h = 2.0 * g.half_width() / fine as f64;
        let oracle = |t: &dyn Fn(f64) -> f64, z: f64| -> f64 {
            (0..fine)
                .map(|k| {
                    let x = -g.half_width() + (k as f64 + 0.5) * h;
                    let fx = model.density_at(x) * t(x) / z;
                    h * model.rho_derivs(x).0 / fx.powf(r)
                })
                .sum()
        };
        let value = free_energy(&f, &model).unwrap();
        let expected = oracle(&tilt, z);
        assert!((value - expected).abs() < 1e-6, "{value} vs {expected}");

        let smooth = |x: f64| 1.0 + 0.3 * x.sin();
        let zs = GridDensity::unnormalized(g, g.sample(|x| model.density_at(x) * smooth(x)))
            .unwrap()
            .mass();
        let value = free_energy(&tilted(&model, 0.3), &model).unwrap();
        let expected = oracle(&smooth, zs);
        assert!((value - expected).abs() < 1e-6, "{value} vs {expected}");
    }

    #[test]
    fn dissipation_matches_refined_closed_form() {
        // central differences carry a dx²/6 relative error in ∂ₓu^{-(r+1)}
        let model = build_equilibrium(
            &PotentialSpec::log_cosh(2.0).unwrap(),
            &Grid::new(15.0, 3001).unwrap(),
        )
        .unwrap();
        let g = *model.grid();
        let f = tilted(&model, 0.3);
        let z =
            GridDensity::unnormalized(g, g.sample(|x| model.density_at(x) * (1.0 + 0.3 * x.sin())))
                .unwrap()
                .mass();
        let r = model.r();
        let scale = model.pressure_scale();
        let fine = 10 * (g.len() - 1);
        let h = 2.0 * g.half_width() / fine as f64;
        let oracle: f64 = (0..fine)
            .map(|k| {
                let x = -g.half_width() + (k as f64 + 0.5) * h;
                let u = (1.0 + 0.3 * x.sin()) / z;
                let du = 0.3 * x.cos() / z;
                let dq = -(r + 1.0) * u.powf(-(r + 2.0)) * du;
                h * u * dq * dq * model.density_at(x)
            })
            .sum::<f64>()
            * r
            * r
            * scale
            * scale;
        let value = dissipation(&f, &model).unwrap();
        assert!(
            ((value - oracle) / oracle).abs() < 1e-4,
            "{value} vs {oracle}"
        );
    }

    #[test]
    fn dissipation_is_quadratic_in_small_perturbations() {
        let model = logcosh();
        let i = |e: f64| dissipation(&tilted(&model, e), &model).unwrap();
        for e in [1e-2, 1e-3] {
            let ratio = i(2.0 * e) / i(e);
            assert!((ratio - 4.0).abs() < 40.0 * e, "{e}: {ratio}");
        }
    }

    #[test]
    fn l2_gap_of_translate() {
        let model = logcosh();
        let g = *model.grid();
        let h = 0.05;
        let f = GridDensity::from_fn(g, |x| model.density_at(x - h)).unwrap();
        let z = GridDensity::unnormalized(g, g.sample(|x| model.density_at(x - h)))
            .unwrap()
            .mass();
        let fine = 10 * (g.len() - 1);
        let dx = 2.0 * g.half_width() / fine as f64;
        let oracle: f64 = (0..fine)
            .map(|k| {
                let x = -g.half_width() + (k as f64 + 0.5) * dx;
                let m = model.density_at(x);
                let d = model.density_at(x - h) / z - m;
                dx * d * d / m
            })
            .sum();
        let value = l2_gap(&f, &model).unwrap();
        assert!(
            ((value - oracle) / oracle).abs() < 1e-5,
            "{value} vs {oracle}"
        );
        // leading order h² ∫ (m'/m)² m = h² ∫ tanh² sech / π = h² / 2
        assert!((value / (h * h) - 0.5).abs() < 0.05);
    }

    #[test]
    fn h_minus_one_bounds_w2() {
        let model = logcosh();
        for eps in [0.05, 0.3] {
            let f = tilted(&model, eps);
            let w = crate::ot1d::w2_distance(&f, model.m()).unwrap();
            let h = h_minus_one_norm_sq(&f, model.m()).unwrap().sqrt();
            assert!(w <= 2.0 * h, "{w} vs {h}");
        }
    }

    #[test]
    fn uniform_gap_is_pi_squared() {
        let g = Grid::new(0.5, 2001).unwrap();
        let u = GridDensity::new(g, vec![1.0; 2001]).unwrap();
        let c = spectral_constant(&u).unwrap();
        assert!((c * PI * PI - 1.0).abs() < 1e-5, "{c}");
        let mb = muckenhoupt(&u).unwrap();
        assert!((mb.b - 1.0 / 16.0).abs() < 1e-6, "{}", mb.b);
        assert!(mb.lower <= c && c <= mb.upper);
    }

    #[test]
    fn gaussian_constant_is_one() {
        let model = build_equilibrium(
            &PotentialSpec::gaussian(2.0).unwrap(),
            &Grid::new(10.0, 2001).unwrap(),
        )
        .unwrap();
        let c = poincare_spectral(&model).unwrap();
        assert!((c - 1.0).abs() < 0.02, "{c}");
    }

    #[test]
    fn laplace_muckenhoupt_is_one() {
        let model = build_equilibrium(
            &PotentialSpec::laplace(2.0).unwrap(),
            &Grid::new(20.0, 2001).unwrap(),
        )
        .unwrap();
        let mb = poincare_muckenhoupt(&model).unwrap();
        // sup_x (1 - e^{-x}) over x ≤ R, up to the trapezoid error in ∫ e^x
        assert!((mb.b - 1.0).abs() < 1e-4, "{}", mb.b);
        assert_eq!(mb.clipped, 0);
    }

    #[test]
    fn muckenhoupt_translation_invariant() {
        let g = Grid::new(15.0, 3001).unwrap();
        let h = 40.0 * g.dx();
        let spec = PotentialSpec::log_cosh(2.0).unwrap();
        let a = poincare_muckenhoupt(&build_equilibrium(&spec, &g).unwrap()).unwrap();
        let b = poincare_muckenhoupt(&build_equilibrium(&spec.translated(h), &g).unwrap()).unwrap();
        assert!(((a.b - b.b) / a.b).abs() < 1e-4, "{} {}", a.b, b.b);
    }

    #[test]
    fn spectral_inside_bracket_for_builtins() {
        for spec in [
            PotentialSpec::log_cosh(2.0).unwrap(),
            PotentialSpec::smoothed_laplace(2.0).unwrap(),
            PotentialSpec::laplace(2.0).unwrap(),
        ] {
            let model = build_equilibrium(&spec, &Grid::new(15.0, 1501).unwrap()).unwrap();
            let est = PoincareEstimate::of(&model).unwrap();
            assert!(est.consistent(0.0), "{:?}", est);
        }
    }
}
