//! Uniform grids on `[-R, R]` and probability densities sampled on them.
//!
//! Densities are node values of a continuous piecewise-linear function. Every
//! integral in the crate is the trapezoid rule over the nodes, which is the
//! exact integral of that interpolant; the CDF and the quantile function are
//! the exact CDF of the interpolant and its exact inverse.

use std::io::{self, Write};

use crate::{Error, Result};

/// Masses inside this band are accepted as-is by [`GridDensity::new`].
pub const MASS_TOLERANCE: f64 = 1e-8;

/// Uniform, odd-sized grid symmetric about the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    half_width: f64,
    n: usize,
    dx: f64,
}

impl Grid {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::Config(format!(
                "grid half-width must be positive and finite, got {half_width}"
            )));
        }
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "grid.n must be odd and at least 3, got {n}"
            )));
        }
        Ok(Self {
            half_width,
            n,
            dx: 2.0 * half_width / (n - 1) as f64,
        })
    }

    /// Grid on `[-half_width, half_width]` whose spacing is as close as
    /// possible to `dx` while keeping an odd node count.
    pub fn with_spacing(half_width: f64, dx: f64) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::Config(format!(
                "grid spacing must be positive, got {dx}"
            )));
        }
        let half_cells = (half_width / dx).round().max(1.0) as usize;
        Self::new(half_width, 2 * half_cells + 1)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Node `i`; computed from the centre so that `x_{n-1-i} = -x_i` exactly.
    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 - ((self.n - 1) / 2) as f64) * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weight of node `i` (the width of its control volume).
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.dx
        } else {
            self.dx
        }
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n).map(|i| f(self.node(i))).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= -self.half_width && x <= self.half_width
    }

    /// Cell index `i` and fraction `s ∈ [0, 1]` with `x = x_i + s dx`.
    /// Points outside the grid are clamped to the end cells.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let pos = (x + self.half_width) / self.dx;
        let last = self.n - 2;
        if !(pos > 0.0) {
            return (0, 0.0);
        }
        let i = (pos.floor() as usize).min(last);
        (i, (pos - i as f64).clamp(0.0, 1.0))
    }
}

/// Trapezoid integral of node samples over the whole grid.
pub fn quadrature(values: &[f64], grid: &Grid) -> Result<f64> {
    check_len(values, grid)?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "non-finite sample {} at node {i}",
            values[i]
        )));
    }
    Ok(trapezoid(values, grid))
}

#[inline]
pub(crate) fn trapezoid(values: &[f64], grid: &Grid) -> f64 {
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().sum();
    grid.dx() * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Running trapezoid integral from `-R`; entry `i` integrates up to `x_i`.
pub fn cumulative(values: &[f64], grid: &Grid) -> Vec<f64> {
    let half = 0.5 * grid.dx();
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += half * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

fn check_len(values: &[f64], grid: &Grid) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::Input(format!(
            "{} samples for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// A nonnegative density on a grid, with its mass and CDF cached.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Grid,
    values: Vec<f64>,
    mass: f64,
    cdf: Vec<f64>,
}

impl GridDensity {
    /// Builds a probability density. Samples whose mass is off by more than
    /// [`MASS_TOLERANCE`] are rescaled to unit mass.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let mut density = Self::unnormalized(grid, values)?;
        if (density.mass - 1.0).abs() > MASS_TOLERANCE {
            if density.mass <= 0.0 {
                return Err(Error::Data("density has zero mass".into()));
            }
            log::debug!("renormalizing density of mass {:.3e}", density.mass);
            let scale = 1.0 / density.mass;
            density.values.iter_mut().for_each(|v| *v *= scale);
            density.refresh();
        }
        Ok(density)
    }

    /// Keeps the samples as given (any finite nonnegative mass).
    pub fn unnormalized(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_len(&values, &grid)?;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite density value at node {i}")));
            }
            if v < 0.0 {
                return Err(Error::Data(format!(
                    "negative density value {v} at node {i}"
                )));
            }
        }
        let mut density = Self {
            grid,
            values,
            mass: 0.0,
            cdf: Vec::new(),
        };
        density.refresh();
        Ok(density)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.sample(f))
    }

    fn refresh(&mut self) {
        self.cdf = cumulative(&self.values, &self.grid);
        self.mass = *self.cdf.last().expect("grid has nodes");
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// CDF at the nodes: `cdf()[0] = 0`, `cdf()[n-1] = mass()`.
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Linear interpolation; zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        if !self.grid.contains(x) {
            return 0.0;
        }
        let (i, s) = self.grid.locate(x);
        self.values[i] + s * (self.values[i + 1] - self.values[i])
    }

    /// Four-point Lagrange interpolation; linear in the end cells.
    pub(crate) fn smooth_value_at(&self, x: f64) -> f64 {
        if !self.grid.contains(x) {
            return 0.0;
        }
        let (i, s) = self.grid.locate(x);
        if i == 0 || i + 2 >= self.values.len() {
            return self.values[i] + s * (self.values[i + 1] - self.values[i]);
        }
        let v = &self.values[i - 1..i + 3];
        let (a, b, c, d) = (
            (s) * (s - 1.0) * (s - 2.0),
            (s + 1.0) * (s - 1.0) * (s - 2.0),
            (s + 1.0) * s * (s - 2.0),
            (s + 1.0) * s * (s - 1.0),
        );
        -a / 6.0 * v[0] + b / 2.0 * v[1] - c / 2.0 * v[2] + d / 6.0 * v[3]
    }

    /// Exact integral of the interpolant over `[-R, x]`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if x <= -self.grid.half_width() {
            return 0.0;
        }
        if x >= self.grid.half_width() {
            return self.mass;
        }
        let (i, s) = self.grid.locate(x);
        let (a, b) = (self.values[i], self.values[i + 1]);
        self.cdf[i] + self.grid.dx() * s * (a + 0.5 * s * (b - a))
    }

    /// Inverse CDF for `t ∈ (0, mass)`. On a flat stretch of the CDF the
    /// leftmost point is returned.
    pub fn quantile(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t < self.mass) {
            return Err(Error::Range(format!(
                "quantile level {t} outside (0, {})",
                self.mass
            )));
        }
        let j = self.cdf.partition_point(|&c| c < t);
        Ok(self.invert_in_cell(j, t))
    }

    /// Quantile with `t` clamped to `[0, mass]`; `t = 0` maps to `-R`.
    pub(crate) fn quantile_clamped(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return self.grid.node(0);
        }
        if t >= self.mass {
            let j = self.cdf.partition_point(|&c| c < self.mass);
            return self.grid.node(j.min(self.grid.len() - 1));
        }
        let j = self.cdf.partition_point(|&c| c < t);
        self.invert_in_cell(j, t)
    }

    /// Quantiles of a nondecreasing sequence of levels in one sweep.
    pub(crate) fn quantiles_sorted(&self, levels: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(levels.len());
        let mut j = 0usize;
        let n = self.grid.len();
        for &t in levels {
            if !(t > 0.0) {
                out.push(self.grid.node(0));
                continue;
            }
            let t = t.min(self.mass);
            while j < n && self.cdf[j] < t {
                j += 1;
            }
            if j >= n {
                out.push(self.grid.node(n - 1));
                continue;
            }
            out.push(self.invert_in_cell(j, t));
        }
        out
    }

    /// `j` is the first node with `cdf[j] >= t > 0`.
    fn invert_in_cell(&self, j: usize, t: f64) -> f64 {
        if self.cdf[j] == t || j == 0 {
            return self.grid.node(j);
        }
        let i = j - 1;
        let dx = self.grid.dx();
        let (a, b) = (self.values[i], self.values[i + 1]);
        let delta = (t - self.cdf[i]) / dx;
        // a s + (b - a) s² / 2 = delta, solved in the cancellation-free form
        let disc = (a * a + 2.0 * (b - a) * delta).max(0.0);
        let denom = a + disc.sqrt();
        let s = if denom > 0.0 {
            2.0 * delta / denom
        } else {
            1.0
        };
        self.grid.node(i) + dx * s.clamp(0.0, 1.0)
    }

    /// Two-column CSV `x,f` with a header row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,f")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.16e},{:.16e}", self.grid.node(i), v)?;
        }
        Ok(())
    }
}

/// Cone constants `0 < c ≤ 1 ≤ C` of `P_{c,C} = { g : c m ≤ g ≤ C m }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ConeBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower <= 1.0 && upper >= 1.0 && upper.is_finite()) {
            return Err(Error::Config(format!(
                "cone bounds must satisfy 0 < c <= 1 <= C, got c = {lower}, C = {upper}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// True when `measured` lies inside `self` up to a relative tolerance.
    pub fn contains(&self, measured: &ConeBounds, rel_tol: f64) -> bool {
        measured.lower >= self.lower * (1.0 - rel_tol)
            && measured.upper <= self.upper * (1.0 + rel_tol)
    }
}

/// Measured ratio range of `f / m`, with cells where `m` vanished.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeMeasurement {
    pub bounds: ConeBounds,
    pub excluded: Vec<usize>,
}

/// `(min f/m, max f/m)` over the nodes where `m > 0`.
pub fn cone_measure(f: &GridDensity, m: &GridDensity) -> Result<ConeMeasurement> {
    if f.grid() != m.grid() {
        return Err(Error::Input(
            "cone_measure: densities live on different grids".into(),
        ));
    }
    let mut lower = f64::INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let mut excluded = Vec::new();
    for (i, (&fv, &mv)) in f.values().iter().zip(m.values()).enumerate() {
        if mv <= 0.0 {
            excluded.push(i);
            continue;
        }
        let ratio = fv / mv;
        lower = lower.min(ratio);
        upper = upper.max(ratio);
    }
    if excluded.len() == f.values().len() {
        return Err(Error::Domain(
            "reference density vanishes everywhere".into(),
        ));
    }
    if !excluded.is_empty() {
        log::warn!("cone_measure: {} cells with m = 0 excluded", excluded.len());
    }
    Ok(ConeMeasurement {
        bounds: ConeBounds { lower, upper },
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace(grid: Grid) -> GridDensity {
        GridDensity::from_fn(grid, |x| 0.5 * (-x.abs()).exp()).unwrap()
    }

    #[test]
    fn grid_is_symmetric() {
        let g = Grid::new(3.0, 61).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.node(i), -g.node(g.len() - 1 - i));
        }
        assert_eq!(g.node(30), 0.0);
        assert!((g.dx() - 0.1).abs() < 1e-15);
        assert!(Grid::new(1.0, 10).is_err());
        assert!(Grid::new(-1.0, 11).is_err());
    }

    #[test]
    fn quadrature_basics() {
        let g = Grid::new(1.0, 11).unwrap();
        assert!((quadrature(&[1.0; 11], &g).unwrap() - 2.0).abs() < 1e-15);
        assert!(quadrature(&g.nodes(), &g).unwrap().abs() < 1e-15);
        let mut bad = vec![1.0; 11];
        bad[3] = f64::NAN;
        assert!(matches!(quadrature(&bad, &g), Err(Error::Data(_))));
    }

    #[test]
    fn quadrature_sech() {
        // ∫_{-15}^{15} sech = 2 (atan e^15 - atan e^-15)
        let g = Grid::new(15.0, 3001).unwrap();
        let exact = 2.0 * ((15.0f64).exp().atan() - (-15.0f64).exp().atan());
        let q = quadrature(&g.sample(|x| 1.0 / x.cosh()), &g).unwrap();
        assert!((q - exact).abs() < 1e-10 * exact, "{q} vs {exact}");
    }

    #[test]
    fn uniform_cdf_and_quantile() {
        let g = Grid::new(1.0, 101).unwrap();
        let u = GridDensity::new(g, vec![0.5; 101]).unwrap();
        assert!((u.cdf()[50] - 0.5).abs() < 1e-14);
        for (i, c) in u.cdf().iter().enumerate() {
            assert!((c - 0.5 * (g.node(i) + 1.0)).abs() < 1e-13);
        }
        assert!((u.quantile(0.25).unwrap() + 0.5).abs() < 1e-13);
        assert!(u.quantile(0.0).is_err());
        assert!(u.quantile(u.mass()).is_err());
        assert!(u.quantile(1.5).is_err());
    }

    #[test]
    fn symmetric_density_has_half_mass_at_origin() {
        let g = Grid::new(4.0, 81).unwrap();
        let f = GridDensity::unnormalized(g, g.sample(|x| 3.0 * (-x * x).exp())).unwrap();
        assert!((f.cdf()[40] - f.mass() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn laplace_cdf_and_quantile_closed_form() {
        let g = Grid::new(20.0, 40001).unwrap();
        let f = laplace(g);
        for i in (0..20001).step_by(997) {
            let x = g.node(i);
            assert!((f.cdf()[i] - 0.5 * x.exp()).abs() < 1e-8, "x = {x}");
        }
        let q = f.quantile(0.25).unwrap();
        assert!((q - 0.5f64.ln()).abs() < 1e-6, "{q}");
    }

    #[test]
    fn flat_stretch_returns_leftmost_point() {
        let g = Grid::new(2.0, 5).unwrap(); // nodes -2,-1,0,1,2
        let f = GridDensity::unnormalized(g, vec![1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        // CDF: 0, 1, 1.5, 1.5, 2.0 -> level 1.5 is attained on [0, 1]
        assert_eq!(f.quantile(1.5).unwrap(), 0.0);
    }

    #[test]
    fn cdf_at_inverts_quantile() {
        let g = Grid::new(5.0, 201).unwrap();
        let f = GridDensity::from_fn(g, |x| {
            (-(x - 0.3) * (x - 0.3)).exp() * (1.0 + 0.3 * x.sin())
        })
        .unwrap();
        for k in 1..100 {
            let t = k as f64 / 100.0;
            let x = f.quantile(t).unwrap();
            assert!((f.cdf_at(x) - t).abs() < 1e-12);
        }
        let levels: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let sweep = f.quantiles_sorted(&levels);
        for (t, q) in levels.iter().zip(&sweep).skip(1).take(99) {
            assert!((f.quantile(*t).unwrap() - q).abs() < 1e-13);
        }
    }

    #[test]
    fn cone_measure_identity_and_tilt() {
        let g = Grid::new(10.0, 401).unwrap();
        let m = GridDensity::from_fn(g, |x| 1.0 / (std::f64::consts::PI * x.cosh())).unwrap();
        let same = cone_measure(&m, &m).unwrap();
        assert_eq!(
            same.bounds,
            ConeBounds {
                lower: 1.0,
                upper: 1.0
            }
        );

        // direct min/max scan oracle
        let raw: Vec<f64> = (0..g.len())
            .map(|i| m.values()[i] * (1.0 + 0.5 * g.node(i).sin()))
            .collect();
        let z = quadrature(&raw, &g).unwrap();
        let f = GridDensity::new(g, raw.clone()).unwrap();
        let b = cone_measure(&f, &m).unwrap().bounds;
        let ratios: Vec<f64> = raw.iter().zip(m.values()).map(|(a, b)| a / b / z).collect();
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((b.lower - lo).abs() < 1e-12 && (b.upper - hi).abs() < 1e-12);
        assert!(b.lower >= 0.5 / z - 1e-12 && b.upper <= 1.5 / z + 1e-12);
    }

    #[test]
    fn cone_measure_doubled_half_line() {
        let g = Grid::new(10.0, 401).unwrap();
        let m = GridDensity::from_fn(g, |x| 0.5 * (-x.abs()).exp()).unwrap();
        let raw: Vec<f64> = (0..g.len())
            .map(|i| {
                if g.node(i) > 0.0 {
                    2.0 * m.values()[i]
                } else {
                    m.values()[i]
                }
            })
            .collect();
        let scale = 1.0 / quadrature(&raw, &g).unwrap();
        let f = GridDensity::new(g, raw).unwrap();
        let b = cone_measure(&f, &m).unwrap().bounds;
        assert!(b.upper >= 2.0 * scale - 1e-12);
        assert!((b.lower - scale).abs() < 1e-12);
    }

    #[test]
    fn cone_measure_excludes_zero_reference_cells() {
        let g = Grid::new(1.0, 5).unwrap();
        let m = GridDensity::new(g, vec![0.0, 0.5, 0.5, 0.5, 0.0]).unwrap();
        let f = GridDensity::new(g, vec![0.1, 0.5, 0.5, 0.5, 0.1]).unwrap();
        let c = cone_measure(&f, &m).unwrap();
        assert_eq!(c.excluded, vec![0, 4]);
    }

    #[test]
    fn renormalizes_outside_tolerance() {
        let g = Grid::new(1.0, 11).unwrap();
        let f = GridDensity::new(g, vec![1.0; 11]).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-15);
        assert!(GridDensity::new(g, vec![-1.0; 11]).is_err());
    }

    #[test]
    fn csv_export_has_header() {
        let g = Grid::new(1.0, 3).unwrap();
        let f = GridDensity::new(g, vec![0.5; 3]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,f\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
