//! One-dimensional optimal transport.
//!
//! On the line the optimal map for quadratic cost is the monotone
//! rearrangement `T = F_ν^{-1} ∘ F_μ`, and `W₂² = ∫₀¹ |F_μ^{-1} - F_ν^{-1}|²`.
//! Everything here is built on the exact CDF / quantile pair of
//! [`GridDensity`].

use std::io::{self, Write};

use crate::density::{Grid, GridDensity};
use crate::{Error, Result};

/// Default number of `α` samples along a geodesic.
pub const DEFAULT_ALPHA_POINTS: usize = 17;

/// Levels within this distance of 0 or 1 are left out of profiles.
pub const PROFILE_EDGE: f64 = 1e-6;

const UNIT_MASS_TOL: f64 = 1e-6;

/// Monotone map `T` pushing `μ` onto `ν`, sampled at the nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    grid: Grid,
    map: Vec<f64>,
    derivative: Vec<f64>,
    flagged: Vec<usize>,
    displacement_sup: f64,
}

/// `T(x_i) = F_ν^{-1}(F_μ(x_i))`, `T'(x_i) = μ(x_i) / ν(T(x_i))`.
///
/// Nodes where `ν(T(x_i))` vanishes get a NaN derivative and are listed in
/// [`TransportMap::flagged`].
pub fn transport_map(mu: &GridDensity, nu: &GridDensity) -> Result<TransportMap> {
    check_pair(mu, nu)?;
    let grid = *mu.grid();
    let n = grid.len();
    if let Some(i) = (1..n - 1).find(|&i| mu.values()[i] <= 0.0) {
        return Err(Error::Domain(format!(
            "source density vanishes at interior node {i}"
        )));
    }
    let scale = nu.mass() / mu.mass();
    let levels: Vec<f64> = mu.cdf().iter().map(|c| c * scale).collect();
    let mut map = nu.quantiles_sorted(&levels);
    for i in 1..n {
        if map[i] < map[i - 1] {
            map[i] = map[i - 1];
        }
    }
    let mut flagged = Vec::new();
    let derivative: Vec<f64> = (0..n)
        .map(|i| {
            let target = nu.smooth_value_at(map[i]);
            if target > 1e-300 {
                mu.values()[i] / target
            } else {
                flagged.push(i);
                f64::NAN
            }
        })
        .collect();
    if !flagged.is_empty() {
        log::warn!("transport map: ν vanishes at {} hit points", flagged.len());
    }
    let displacement_sup = map
        .iter()
        .enumerate()
        .map(|(i, t)| (t - grid.node(i)).abs())
        .fold(0.0, f64::max);
    Ok(TransportMap {
        grid,
        map,
        derivative,
        flagged,
        displacement_sup,
    })
}

impl TransportMap {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.map
    }

    /// `T'` from the Monge–Ampère relation.
    pub fn derivative(&self) -> &[f64] {
        &self.derivative
    }

    pub fn flagged(&self) -> &[usize] {
        &self.flagged
    }

    /// `sup_i |T(x_i) - x_i|`.
    pub fn displacement_sup(&self) -> f64 {
        self.displacement_sup
    }

    /// Central differences of `T` (one-sided at the ends).
    pub fn finite_difference_derivative(&self) -> Vec<f64> {
        let n = self.map.len();
        let dx = self.grid.dx();
        (0..n)
            .map(|i| match i {
                0 => (self.map[1] - self.map[0]) / dx,
                _ if i + 1 == n => (self.map[n - 1] - self.map[n - 2]) / dx,
                _ => (self.map[i + 1] - self.map[i - 1]) / (2.0 * dx),
            })
            .collect()
    }

    /// `∫ |μ(x) - ν(T(x)) T'(x)| dx` with `T'` taken from finite differences.
    pub fn monge_ampere_residual(&self, mu: &GridDensity, nu: &GridDensity) -> f64 {
        let fd = self.finite_difference_derivative();
        (0..self.map.len())
            .map(|i| {
                self.grid.weight(i) * (mu.values()[i] - nu.value_at(self.map[i]) * fd[i]).abs()
            })
            .sum()
    }

    /// CSV with columns `x,T,T',|T-x|`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,T,T',|T-x|")?;
        for (i, (t, d)) in self.map.iter().zip(&self.derivative).enumerate() {
            let x = self.grid.node(i);
            writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e}", x, t, d, (t - x).abs())?;
        }
        Ok(())
    }
}

fn check_pair(mu: &GridDensity, nu: &GridDensity) -> Result<()> {
    if mu.grid() != nu.grid() {
        return Err(Error::Input("densities live on different grids".into()));
    }
    for (name, d) in [("source", mu), ("target", nu)] {
        if (d.mass() - 1.0).abs() > UNIT_MASS_TOL {
            return Err(Error::Input(format!(
                "{name} density has mass {} (unit mass required)",
                d.mass()
            )));
        }
    }
    Ok(())
}

// Three-point Gauss–Legendre rule on [0, 1].
const GAUSS_NODES: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// `W₂(μ, ν)` from the quantile representation.
///
/// The level axis is split at every node CDF value of both densities; on
/// each piece both quantile functions are smooth and a three-point
/// Gauss–Legendre rule is applied. The construction is symmetric in `μ, ν`.
pub fn w2_distance(mu: &GridDensity, nu: &GridDensity) -> Result<f64> {
    check_pair(mu, nu)?;
    let (a, b) = (mu.cdf(), nu.cdf());
    let (ma, mb) = (mu.mass(), nu.mass());
    let mut breaks = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x / ma <= y / mb => {
                i += 1;
                x / ma
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y / mb
            }
            (Some(&x), None) => {
                i += 1;
                x / ma
            }
            (None, Some(&y)) => {
                j += 1;
                y / mb
            }
            (None, None) => unreachable!(),
        };
        breaks.push(next.clamp(0.0, 1.0));
    }
    breaks.dedup();
    let mut levels = Vec::with_capacity(3 * breaks.len());
    let mut widths = Vec::with_capacity(breaks.len());
    for w in breaks.windows(2) {
        let h = w[1] - w[0];
        if h <= 0.0 {
            continue;
        }
        widths.push(h);
        levels.extend(GAUSS_NODES.iter().map(|g| w[0] + g * h));
    }
    let qa = mu.quantiles_sorted(&levels.iter().map(|t| t * ma).collect::<Vec<_>>());
    let qb = nu.quantiles_sorted(&levels.iter().map(|t| t * mb).collect::<Vec<_>>());
    let cost: f64 = widths
        .iter()
        .enumerate()
        .map(|(k, h)| {
            h * (0..3)
                .map(|g| {
                    let d = qa[3 * k + g] - qb[3 * k + g];
                    GAUSS_WEIGHTS[g] * d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(cost.max(0.0).sqrt())
}

/// `f_α`, the push-forward of `m` by `x ↦ (1-α) x + α T(x)`, so that
/// `f_0 = m` and `f_1 = T#m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    pub alpha: f64,
    pub density: GridDensity,
    /// `|mass - 1|` before the final renormalization.
    pub mass_drift: f64,
}

/// Displacement interpolation from `m` along `map`.
///
/// The density at the image point `y_i = (1-α) x_i + α T(x_i)` is
/// `m(x_i) / ((1-α) + α T'(x_i))`; these values are interpolated linearly
/// back onto the nodes and renormalized.
/// Value at `x ∈ [y_i, y_{i+1}]` from the four surrounding image points,
/// falling back to linear near the ends or where points coincide.
fn lagrange_resample(y: &[f64], v: &[f64], i: usize, x: f64) -> f64 {
    let (y0, y1) = (y[i], y[i + 1]);
    if !(y1 > y0) {
        return v[i];
    }
    let linear = v[i] + ((x - y0) / (y1 - y0)).clamp(0.0, 1.0) * (v[i + 1] - v[i]);
    if i == 0 || i + 2 >= y.len() {
        return linear;
    }
    let ys = &y[i - 1..i + 3];
    if ys.windows(2).any(|w| !(w[1] > w[0])) {
        return linear;
    }
    let mut out = 0.0;
    for j in 0..4 {
        let mut l = 1.0;
        for k in 0..4 {
            if k != j {
                l *= (x - ys[k]) / (ys[j] - ys[k]);
            }
        }
        out += l * v[i - 1 + j];
    }
    // cubic overshoot near a vanishing density
    if out < 0.0 {
        linear
    } else {
        out
    }
}

pub fn displacement_interpolate(
    m: &GridDensity,
    map: &TransportMap,
    alpha: f64,
) -> Result<Interpolant> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha = {alpha} outside [0, 1]")));
    }
    if m.grid() != map.grid() {
        return Err(Error::Input(
            "map and density live on different grids".into(),
        ));
    }
    let grid = *m.grid();
    let n = grid.len();
    let fd;
    let derivative: &[f64] = if map.flagged().is_empty() {
        map.derivative()
    } else {
        fd = map.finite_difference_derivative();
        &fd
    };
    let mut image = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let x = grid.node(i);
        let jac = (1.0 - alpha) + alpha * derivative[i];
        if !(jac > 0.0) {
            return Err(Error::Input(format!(
                "interpolated Jacobian {jac} is not positive at node {i}"
            )));
        }
        image.push((1.0 - alpha) * x + alpha * map.values()[i]);
        values.push(m.values()[i] / jac);
    }
    let slack = 1e-9 * grid.half_width();
    if image[0] < grid.node(0) - slack || image[n - 1] > grid.node(n - 1) + slack {
        return Err(Error::Truncation(format!(
            "displacement image [{}, {}] leaves the grid",
            image[0],
            image[n - 1]
        )));
    }
    let mut resampled = Vec::with_capacity(n);
    let mut i = 0usize;
    for k in 0..n {
        let x = grid.node(k);
        if x < image[0] - slack || x > image[n - 1] + slack {
            resampled.push(0.0);
            continue;
        }
        while i + 2 < n && image[i + 1] < x {
            i += 1;
        }
        resampled.push(lagrange_resample(&image, &values, i, x));
    }
    let raw = GridDensity::unnormalized(grid, resampled)?;
    let mass = raw.mass();
    if !(mass > 0.0) {
        return Err(Error::Numeric("interpolated density has no mass".into()));
    }
    let scaled = raw.into_values().into_iter().map(|v| v / mass).collect();
    Ok(Interpolant {
        alpha,
        density: GridDensity::unnormalized(grid, scaled)?,
        mass_drift: (mass - 1.0).abs(),
    })
}

/// Densities along the geodesic from `m` (α = 0) to `T#m` (α = 1).
#[derive(Debug, Clone)]
pub struct Geodesic {
    pub points: Vec<Interpolant>,
}

impl Geodesic {
    /// Samples `n_alpha ≥ 2` uniformly spaced values of `α`.
    pub fn sample(m: &GridDensity, map: &TransportMap, n_alpha: usize) -> Result<Self> {
        if n_alpha < 2 {
            return Err(Error::Input(
                "a geodesic needs at least two alpha points".into(),
            ));
        }
        let points = (0..n_alpha)
            .map(|k| displacement_interpolate(m, map, k as f64 / (n_alpha - 1) as f64))
            .collect::<Result<_>>()?;
        Ok(Self { points })
    }

    pub fn max_mass_drift(&self) -> f64 {
        self.points.iter().map(|p| p.mass_drift).fold(0.0, f64::max)
    }
}

/// `t ↦ f(F^{-1}(t))` on a uniform grid of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
}

impl Profile {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,Is")?;
        for (t, v) in self.levels.iter().zip(&self.values) {
            writeln!(w, "{:.16e},{:.16e}", t, v)?;
        }
        Ok(())
    }
}

/// Isoperimetric profile at `t_j = j / (points + 1)`, `j = 1..=points`,
/// skipping levels closer than [`PROFILE_EDGE`] to 0 or 1.
pub fn isoperimetric_profile(f: &GridDensity, points: usize) -> Result<Profile> {
    if (f.mass() - 1.0).abs() > UNIT_MASS_TOL {
        return Err(Error::Input(format!(
            "profile needs unit mass, got {}",
            f.mass()
        )));
    }
    let levels: Vec<f64> = (1..=points)
        .map(|j| j as f64 / (points + 1) as f64)
        .filter(|&t| (PROFILE_EDGE..=1.0 - PROFILE_EDGE).contains(&t))
        .collect();
    let quantiles = f.quantiles_sorted(&levels.iter().map(|t| t * f.mass()).collect::<Vec<_>>());
    let values = quantiles.iter().map(|&x| f.value_at(x)).collect();
    Ok(Profile { levels, values })
}

/// Finite measure `Σ w_k δ_{x_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Upper limit on atoms for the brute-force oracle.
pub const MAX_ORACLE_ATOMS: usize = 32;
/// Upper limit on atoms for assignment enumeration.
pub const MAX_ENUMERATION_ATOMS: usize = 10;

impl AtomicMeasure {
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::Input(
                "atoms need matching, nonempty points and weights".into(),
            ));
        }
        if points.iter().any(|p| !p.is_finite())
            || weights.iter().any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(Error::Input(
                "atoms must be finite with positive weights".into(),
            ));
        }
        let mut pairs: Vec<(f64, f64)> = points.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (points, weights) = pairs.into_iter().unzip();
        Ok(Self { points, weights })
    }

    /// Equal weights `1/n`.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        let n = points.len();
        Self::new(points, vec![w; n])
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_atoms(mu: &AtomicMeasure, nu: &AtomicMeasure, limit: usize) -> Result<()> {
    if mu.len() > limit || nu.len() > limit {
        return Err(Error::Input(format!("at most {limit} atoms per measure")));
    }
    let (a, b) = (mu.total_mass(), nu.total_mass());
    if (a - b).abs() > 1e-12 * a.max(b) {
        return Err(Error::Input(format!("unequal total masses {a} and {b}")));
    }
    Ok(())
}

/// `W₂` of two atomic measures from their (piecewise constant) quantile
/// functions, integrated exactly between merged CDF breakpoints.
pub fn w2_atomic(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    check_atoms(mu, nu, usize::MAX)?;
    let total = mu.total_mass();
    let cum = |w: &[f64]| -> Vec<f64> {
        w.iter()
            .scan(0.0, |acc, x| {
                *acc += x;
                Some(*acc)
            })
            .collect()
    };
    let (ca, cb) = (cum(&mu.weights), cum(&nu.weights));
    let mut breaks: Vec<f64> = ca.iter().chain(&cb).map(|c| c.min(total)).collect();
    breaks.push(0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut cost = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    for w in breaks.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        while i + 1 < ca.len() && ca[i] < mid {
            i += 1;
        }
        while j + 1 < cb.len() && cb[j] < mid {
            j += 1;
        }
        let d = mu.points[i] - nu.points[j];
        cost += (w[1] - w[0]) * d * d;
    }
    Ok(cost.sqrt())
}

/// Explicit monotone (north-west corner) coupling of two atomic measures,
/// as `(source atom, target atom, mass)` triples in sorted order.
pub fn monotone_coupling(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
) -> Result<Vec<(usize, usize, f64)>> {
    check_atoms(mu, nu, usize::MAX)?;
    let mut plan = Vec::with_capacity(mu.len() + nu.len());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut left_a, mut left_b) = (mu.weights[0], nu.weights[0]);
    loop {
        let moved = left_a.min(left_b);
        if moved > 0.0 {
            plan.push((i, j, moved));
        }
        left_a -= moved;
        left_b -= moved;
        let a_done = left_a <= 1e-15 * mu.total_mass();
        let b_done = left_b <= 1e-15 * nu.total_mass();
        if a_done {
            i += 1;
        }
        if b_done {
            j += 1;
        }
        if i >= mu.len() || j >= nu.len() {
            break;
        }
        if a_done {
            left_a = mu.weights[i];
        }
        if b_done {
            left_b = nu.weights[j];
        }
    }
    Ok(plan)
}

/// Optimal coupling cost `min_π ∫ |x - y|² dπ` (that is, `W₂²`) for up to
/// [`MAX_ORACLE_ATOMS`] atoms per side, from the monotone coupling.
pub fn brute_force_w2(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    check_atoms(mu, nu, MAX_ORACLE_ATOMS)?;
    let plan = monotone_coupling(mu, nu)?;
    Ok(plan
        .iter()
        .map(|&(i, j, w)| {
            let d = mu.points[i] - nu.points[j];
            w * d * d
        })
        .sum())
}

/// Minimum of `(1/n) Σ |x_k - y_{σ(k)}|²` over all permutations `σ`, for
/// equal-weight measures with the same number of atoms (at most
/// [`MAX_ENUMERATION_ATOMS`]).
pub fn enumerate_assignment_cost(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n != ys.len() || n == 0 || n > MAX_ENUMERATION_ATOMS {
        return Err(Error::Input(format!(
            "enumeration needs 1..={MAX_ENUMERATION_ATOMS} atoms on each side"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| -> f64 {
        p.iter()
            .enumerate()
            .map(|(k, &s)| (xs[k] - ys[s]).powi(2))
            .sum()
    };
    let mut best = cost(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut k = 1;
    while k < n {
        if c[k] < k {
            if k % 2 == 0 {
                perm.swap(0, k);
            } else {
                perm.swap(c[k], k);
            }
            best = best.min(cost(&perm));
            c[k] += 1;
            k = 1;
        } else {
            c[k] = 0;
            k += 1;
        }
    }
    Ok(best / n as f64)
}
