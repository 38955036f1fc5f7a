//! Explicit conservative finite-volume integration of
//! `∂ₜf = -r ∂ₓ(f ∂ₓ(ρ / f^{r+1}))` with zero-flux ends.
//!
//! Nodes carry trapezoid control volumes (`dx`, or `dx/2` at the two ends),
//! so the update telescopes and the quadrature mass is conserved exactly.
//! The mass flux is `J = r f ∂ₓp` with pressure `p = ρ / f^{r+1}`.

use std::io::{self, Write};

use crate::density::{cone_measure, ConeBounds, Grid, GridDensity};
use crate::functional::{dissipation, equilibrium_energy, l2_gap};
use crate::ot1d::w2_distance;
use crate::potential::{build_equilibrium, EquilibriumModel, PotentialSpec};
use crate::{Error, Result};

pub const DEFAULT_SAFETY: f64 = 0.4;
pub const MAX_HALVINGS: u32 = 30;
/// Relative slack before a cone exit is recorded.
pub const CONE_TOLERANCE: f64 = 1e-3;
/// Largest fraction of the initial mass a truncation may discard.
pub const MAX_TRUNCATED_MASS: f64 = 0.1;

/// Face interpolation of `f` in the flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaceMean {
    #[default]
    Arithmetic,
    Harmonic,
}

impl FaceMean {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            FaceMean::Arithmetic => 0.5 * (a + b),
            FaceMean::Harmonic => 2.0 * a * b / (a + b),
        }
    }
}

/// Precomputed per-model data for the pressure and the update.
struct Kernel<'a> {
    model: &'a EquilibriumModel,
    inv_weight: Vec<f64>,
    /// `r + 1` when it is a small integer.
    int_power: Option<i32>,
    face_mean: FaceMean,
}

impl<'a> Kernel<'a> {
    fn new(model: &'a EquilibriumModel, face_mean: FaceMean) -> Self {
        let grid = model.grid();
        let r1 = model.r() + 1.0;
        let int_power = (r1.fract() == 0.0 && r1 <= 16.0).then_some(r1 as i32);
        Self {
            model,
            inv_weight: (0..grid.len()).map(|i| 1.0 / grid.weight(i)).collect(),
            int_power,
            face_mean,
        }
    }

    /// `p = γ^{-(r+1)} (m/f)^{r+1}`; avoids forming `ρ`, which underflows first.
    fn pressure(&self, f: &[f64], p: &mut [f64]) {
        let m = self.model.m().values();
        let scale = self.model.pressure_scale();
        // constant exponents unroll to multiplications; a runtime powi does not
        fn fill(f: &[f64], m: &[f64], p: &mut [f64], power: impl Fn(f64) -> f64) {
            for ((pi, fi), mi) in p.iter_mut().zip(f).zip(m) {
                *pi = power(mi / fi);
            }
        }
        match self.int_power {
            Some(1) => fill(f, m, p, |w| scale * w),
            Some(2) => fill(f, m, p, |w| scale * w * w),
            Some(3) => fill(f, m, p, |w| scale * w * w * w),
            Some(4) => fill(f, m, p, |w| {
                let w2 = w * w;
                scale * w2 * w2
            }),
            Some(k) => fill(f, m, p, |w| scale * w.powi(k)),
            None => {
                let r1 = self.model.r() + 1.0;
                fill(f, m, p, |w| scale * w.powf(r1))
            }
        }
    }

    /// Interior faces `J_{i+1/2}`, `i = 0..n-1`; boundary faces are zero.
    fn flux(&self, f: &[f64], p: &[f64], j: &mut [f64]) {
        let c = self.model.r() / self.model.grid().dx();
        for i in 0..j.len() {
            j[i] = c * self.face_mean.apply(f[i], f[i + 1]) * (p[i + 1] - p[i]);
        }
    }

    /// `f - dt ΔJ / w` into `out`; false if any value is not positive.
    fn update(&self, f: &[f64], j: &[f64], dt: f64, out: &mut [f64]) -> bool {
        let n = f.len();
        out[0] = f[0] - dt * j[0] * self.inv_weight[0];
        let mut positive = out[0] > 0.0;
        for i in 1..n - 1 {
            out[i] = f[i] - dt * (j[i] - j[i - 1]) * self.inv_weight[i];
            positive &= out[i] > 0.0;
        }
        out[n - 1] = f[n - 1] + dt * j[n - 2] * self.inv_weight[n - 1];
        positive && out[n - 1] > 0.0
    }

    fn dt(&self, p: &[f64], safety: f64) -> f64 {
        let r = self.model.r();
        let dx = self.model.grid().dx();
        let max_d = p.iter().fold(0.0f64, |a, &b| a.max(b)) * r * (r + 1.0);
        safety * dx * dx / (2.0 * max_d)
    }
}

fn check_state(f: &[f64], model: &EquilibriumModel) -> Result<()> {
    if f.len() != model.grid().len() {
        return Err(Error::Input("state and model grids differ".into()));
    }
    match f.iter().position(|v| !(*v > 0.0)) {
        Some(i) => Err(Error::Domain(format!("nonpositive density at node {i}"))),
        None => Ok(()),
    }
}

/// All `n + 1` face fluxes, including the two zero boundary faces.
pub fn flux(f: &GridDensity, model: &EquilibriumModel, face_mean: FaceMean) -> Result<Vec<f64>> {
    check_state(f.values(), model)?;
    let kernel = Kernel::new(model, face_mean);
    let n = f.values().len();
    let mut p = vec![0.0; n];
    kernel.pressure(f.values(), &mut p);
    let mut j = vec![0.0; n + 1];
    kernel.flux(f.values(), &p, &mut j[1..n]);
    Ok(j)
}

/// `safety dx² / (2 max D)` with `D_i = r (r+1) ρ_i / f_i^{r+1}`.
pub fn adaptive_dt(f: &GridDensity, model: &EquilibriumModel, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::Config(format!(
            "solver.safety must lie in (0, 1], got {safety}"
        )));
    }
    check_state(f.values(), model)?;
    let kernel = Kernel::new(model, FaceMean::Arithmetic);
    let mut p = vec![0.0; f.values().len()];
    kernel.pressure(f.values(), &mut p);
    Ok(kernel.dt(&p, safety))
}

/// Semi-discrete energy rate: `dF/dt = -r² Σ f_face (Δp)² / dx`.
pub fn scheme_dissipation(
    f: &GridDensity,
    model: &EquilibriumModel,
    face_mean: FaceMean,
) -> Result<f64> {
    check_state(f.values(), model)?;
    let kernel = Kernel::new(model, face_mean);
    let n = f.values().len();
    let mut p = vec![0.0; n];
    kernel.pressure(f.values(), &mut p);
    let r = model.r();
    let dx = model.grid().dx();
    Ok((0..n - 1)
        .map(|i| {
            let d = p[i + 1] - p[i];
            r * r * face_mean.apply(f.values()[i], f.values()[i + 1]) * d * d / dx
        })
        .sum())
}

/// Time, density and the running range of `u = f/m`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub f: Vec<f64>,
    pub dt_last: f64,
    pub step_count: u64,
    /// `(min u, max u)` over the whole history.
    pub cone_history: (f64, f64),
}

impl FlowState {
    pub fn new(f: &GridDensity, model: &EquilibriumModel) -> Result<Self> {
        check_state(f.values(), model)?;
        let (lo, hi) = u_range(f.values(), model);
        Ok(Self {
            t: 0.0,
            f: f.values().to_vec(),
            dt_last: 0.0,
            step_count: 0,
            cone_history: (lo, hi),
        })
    }

    pub fn density(&self, grid: Grid) -> Result<GridDensity> {
        GridDensity::unnormalized(grid, self.f.clone())
    }
}

fn u_range(f: &[f64], model: &EquilibriumModel) -> (f64, f64) {
    f.iter()
        .zip(model.m().values())
        .map(|(a, b)| a / b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
            (lo.min(u), hi.max(u))
        })
}

/// Scratch space for repeated steps.
struct Stepper<'a> {
    kernel: Kernel<'a>,
    p: Vec<f64>,
    j: Vec<f64>,
    next: Vec<f64>,
    halvings: u64,
    max_p: f64,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a EquilibriumModel, face_mean: FaceMean) -> Self {
        let n = model.grid().len();
        Self {
            kernel: Kernel::new(model, face_mean),
            p: vec![0.0; n],
            j: vec![0.0; n - 1],
            next: vec![0.0; n],
            halvings: 0,
            max_p: 0.0,
        }
    }

    /// Pressure, flux and `max p` at `f` in one sweep; returns `F_ρ[f]`.
    fn prepare(&mut self, f: &[f64]) -> f64 {
        self.kernel.pressure(f, &mut self.p);
        let grid = self.kernel.model.grid();
        let c = self.kernel.model.r() / grid.dx();
        let mean = self.kernel.face_mean;
        let n = f.len();
        let (p, j) = (&self.p, &mut self.j);
        // four partial sums so the reductions pipeline
        let mut acc = [0.0f64; 4];
        let mut top = [0.0f64; 4];
        let body = &p[1..n - 1];
        let fb = &f[1..n - 1];
        let chunks = body.len() / 4;
        for c in 0..chunks {
            for l in 0..4 {
                let k = 4 * c + l;
                acc[l] += body[k] * fb[k];
                top[l] = if body[k] > top[l] { body[k] } else { top[l] };
            }
        }
        for k in 4 * chunks..body.len() {
            acc[0] += body[k] * fb[k];
            top[0] = if body[k] > top[0] { body[k] } else { top[0] };
        }
        let energy = grid.dx() * ((acc[0] + acc[1]) + (acc[2] + acc[3]))
            + 0.5 * grid.dx() * (p[0] * f[0] + p[n - 1] * f[n - 1]);
        let max_p = top.iter().fold(p[0].max(p[n - 1]), |a, &b| a.max(b));
        match mean {
            FaceMean::Arithmetic => {
                for i in 0..n - 1 {
                    j[i] = 0.5 * c * (f[i] + f[i + 1]) * (p[i + 1] - p[i]);
                }
            }
            FaceMean::Harmonic => {
                for i in 0..n - 1 {
                    j[i] = c * mean.apply(f[i], f[i + 1]) * (p[i + 1] - p[i]);
                }
            }
        }
        self.max_p = max_p;
        energy
    }

    fn stable_dt(&self, safety: f64) -> f64 {
        let r = self.kernel.model.r();
        let dx = self.kernel.model.grid().dx();
        safety * dx * dx / (2.0 * r * (r + 1.0) * self.max_p)
    }

    /// Advances `f` in place by at most `dt`; returns the step taken.
    fn advance(&mut self, f: &mut Vec<f64>, t: f64, dt: f64) -> Result<f64> {
        let mut dt = dt;
        for halving in 0..=MAX_HALVINGS {
            if self.kernel.update(f, &self.j, dt, &mut self.next) {
                std::mem::swap(f, &mut self.next);
                return Ok(dt);
            }
            if halving == MAX_HALVINGS {
                break;
            }
            self.halvings += 1;
            dt *= 0.5;
        }
        Err(Error::Stiffness {
            t,
            halvings: MAX_HALVINGS,
        })
    }
}

/// One explicit step of size `dt` (halved on positivity loss).
pub fn step(
    state: &FlowState,
    dt: f64,
    model: &EquilibriumModel,
    face_mean: FaceMean,
) -> Result<FlowState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Input(format!(
            "time step must be positive, got {dt}"
        )));
    }
    check_state(&state.f, model)?;
    let mut stepper = Stepper::new(model, face_mean);
    stepper.prepare(&state.f);
    let mut f = state.f.clone();
    let taken = stepper.advance(&mut f, state.t, dt)?;
    let (lo, hi) = u_range(&f, model);
    Ok(FlowState {
        t: state.t + taken,
        f,
        dt_last: taken,
        step_count: state.step_count + 1,
        cone_history: (state.cone_history.0.min(lo), state.cone_history.1.max(hi)),
    })
}

/// Run parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub t_end: f64,
    /// Diagnostic cadence in simulated time.
    pub diag_every: f64,
    pub safety: f64,
    pub face_mean: FaceMean,
    /// Keep the density at every diagnostic time.
    pub keep_densities: bool,
    /// Evaluate `W₂(f, m)` at diagnostic times.
    pub track_w2: bool,
}

impl RunConfig {
    pub fn new(t_end: f64, diag_every: f64) -> Self {
        Self {
            t_end,
            diag_every,
            safety: DEFAULT_SAFETY,
            face_mean: FaceMean::Arithmetic,
            keep_densities: false,
            track_w2: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!(
                "run.t_end must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.diag_every > 0.0 && self.diag_every <= self.t_end) {
            return Err(Error::Config(format!(
                "run.diag_every must lie in (0, t_end], got {}",
                self.diag_every
            )));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!(
                "solver.safety must lie in (0, 1], got {}",
                self.safety
            )));
        }
        Ok(())
    }
}

/// One row of the trajectory log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub f_value: f64,
    pub f_gap: f64,
    pub i_value: f64,
    pub l2sq: f64,
    pub w2_to_m: f64,
    pub mass: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub dt: f64,
}

/// A diagnostic time at which `u` left the initial cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeWarning {
    pub t: f64,
    pub u_min: f64,
    pub u_max: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub snapshots: Vec<Snapshot>,
    /// Densities at the snapshot times, when requested.
    pub densities: Vec<Vec<f64>>,
    pub initial_cone: ConeBounds,
    pub cone_warnings: Vec<ConeWarning>,
    /// `max_k (F_{k+1} - F_k)` over accepted steps (negative when strictly
    /// decreasing).
    pub max_energy_increase: f64,
    pub steps: u64,
    pub halvings: u64,
    pub final_state: FlowState,
}

pub const TRAJECTORY_HEADER: &str = "t,F,F_gap,I,L2sq,W2_to_m,mass,u_min,u_max,dt";

impl Trajectory {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{TRAJECTORY_HEADER}")?;
        for s in &self.snapshots {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t,
                s.f_value,
                s.f_gap,
                s.i_value,
                s.l2sq,
                s.w2_to_m,
                s.mass,
                s.u_min,
                s.u_max,
                s.dt
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("trajectory has the initial snapshot")
    }
}

fn snapshot(
    f: &[f64],
    t: f64,
    dt: f64,
    model: &EquilibriumModel,
    f_m: f64,
    track_w2: bool,
) -> Result<Snapshot> {
    let density = GridDensity::unnormalized(*model.grid(), f.to_vec())?;
    let (u_min, u_max) = u_range(f, model);
    let f_value = crate::functional::free_energy(&density, model)?;
    let w2_to_m = if track_w2 {
        let unit = GridDensity::unnormalized(
            *model.grid(),
            f.iter().map(|v| v / density.mass()).collect(),
        )?;
        w2_distance(&unit, model.m())?
    } else {
        f64::NAN
    };
    Ok(Snapshot {
        t,
        f_value,
        f_gap: f_value - f_m,
        i_value: dissipation(&density, model)?,
        l2sq: l2_gap(&density, model)?,
        w2_to_m,
        mass: density.mass(),
        u_min,
        u_max,
        dt,
    })
}

/// Integrates from `f0` to `t_end`, landing exactly on every diagnostic
/// time `k · diag_every`. The initial datum is rescaled to unit mass.
pub fn run(f0: &GridDensity, model: &EquilibriumModel, config: &RunConfig) -> Result<Trajectory> {
    config.validate()?;
    if f0.grid() != model.grid() {
        return Err(Error::Input(
            "initial datum and model live on different grids".into(),
        ));
    }
    let grid = *model.grid();
    let mut f: Vec<f64> = f0.values().iter().map(|v| v / f0.mass()).collect();
    check_state(&f, model)?;
    let initial = GridDensity::unnormalized(grid, f.clone())?;
    let measured = cone_measure(&initial, model.m())?.bounds;
    let initial_cone = ConeBounds::new(measured.lower.min(1.0), measured.upper.max(1.0))?;
    let f_m = equilibrium_energy(model);

    let mut stepper = Stepper::new(model, config.face_mean);
    let mut snapshots = vec![snapshot(&f, 0.0, 0.0, model, f_m, config.track_w2)?];
    let mut densities = if config.keep_densities {
        vec![f.clone()]
    } else {
        Vec::new()
    };
    let mut cone_warnings = Vec::new();
    let n_diag = (config.t_end / config.diag_every).ceil().max(1.0) as u64;
    let diag_time = |k: u64| (k as f64 * config.diag_every).min(config.t_end);

    let (mut lo, mut hi) = (measured.lower, measured.upper);
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut dt_last = 0.0;
    let mut max_increase = f64::NEG_INFINITY;
    let mut energy = stepper.prepare(&f);
    for k in 1..=n_diag {
        let target = diag_time(k);
        while t < target {
            let dt_stable = stepper.stable_dt(config.safety);
            let remaining = target - t;
            // absorb a sliver below 1e-9 of a step into this one
            let dt = if remaining <= dt_stable * (1.0 + 1e-9) {
                remaining
            } else {
                dt_stable
            };
            let taken = stepper.advance(&mut f, t, dt)?;
            t = if taken == remaining {
                target
            } else {
                t + taken
            };
            steps += 1;
            dt_last = taken;
            let next_energy = stepper.prepare(&f);
            max_increase = max_increase.max(next_energy - energy);
            energy = next_energy;
        }
        let snap = snapshot(&f, target, dt_last, model, f_m, config.track_w2)?;
        lo = lo.min(snap.u_min);
        hi = hi.max(snap.u_max);
        if snap.u_min < initial_cone.lower * (1.0 - CONE_TOLERANCE)
            || snap.u_max > initial_cone.upper * (1.0 + CONE_TOLERANCE)
        {
            log::warn!(
                "t = {target}: u in [{}, {}] left the initial cone",
                snap.u_min,
                snap.u_max
            );
            cone_warnings.push(ConeWarning {
                t: target,
                u_min: snap.u_min,
                u_max: snap.u_max,
            });
        }
        snapshots.push(snap);
        if config.keep_densities {
            densities.push(f.clone());
        }
    }
    log::info!("run finished: {steps} steps, {} halvings", stepper.halvings);
    Ok(Trajectory {
        grid,
        snapshots,
        densities,
        initial_cone,
        cone_warnings,
        max_energy_increase: max_increase,
        steps,
        halvings: stepper.halvings,
        final_state: FlowState {
            t,
            f,
            dt_last,
            step_count: steps,
            cone_history: (lo, hi),
        },
    })
}

/// Approximating problem on `[-k, k]`: `V_k = a_k V` with `m_k = e^{-V_k}`
/// of unit mass, and `f_0^k = b_k f_0` restricted. `k` is rounded to a
/// whole number of ambient cells so the truncated grid is a sub-grid.
#[derive(Debug, Clone)]
pub struct TruncationScheme {
    pub k: f64,
    pub a_k: f64,
    pub b_k: f64,
    pub cone: ConeBounds,
    pub model: EquilibriumModel,
    pub f0: GridDensity,
}

/// `log ∫_{-k}^{k} e^{-a V}` by the trapezoid rule, stably.
fn log_mass(potential: &[f64], grid: &Grid, a: f64) -> f64 {
    let top = potential
        .iter()
        .map(|v| -a * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = potential
        .iter()
        .enumerate()
        .map(|(i, v)| grid.weight(i) * (-a * v - top).exp())
        .sum();
    top + sum.ln()
}

pub fn setup_truncation(
    spec: &PotentialSpec,
    f0: &GridDensity,
    k: f64,
) -> Result<TruncationScheme> {
    let ambient = *f0.grid();
    if !(k > 0.0 && k <= ambient.half_width() * (1.0 + 1e-12)) {
        return Err(Error::Config(format!(
            "truncation radius {k} must lie in (0, R = {}]",
            ambient.half_width()
        )));
    }
    let half_cells = ((k / ambient.dx()).round() as usize).clamp(1, (ambient.len() - 1) / 2);
    let k = half_cells as f64 * ambient.dx();
    let offset = (ambient.len() - 1) / 2 - half_cells;
    let outside = f0.mass() - (f0.cdf_at(k) - f0.cdf_at(-k));
    if outside > MAX_TRUNCATED_MASS * f0.mass() {
        return Err(Error::Truncation(format!(
            "{:.1}% of the initial mass lies outside [-{k}, {k}]",
            100.0 * outside / f0.mass()
        )));
    }
    let log_gamma = build_equilibrium(spec, &ambient)?.log_gamma();
    let grid = Grid::new(k, 2 * half_cells + 1)?;
    let potential: Vec<f64> = grid.sample(|x| spec.eval(x).value - log_gamma);

    // a ↦ log mass is convex and vanishes at a_k; bracket it around 1
    let g = |a: f64| log_mass(&potential, &grid, a);
    let g1 = g(1.0);
    let a_k = if g1 == 0.0 {
        1.0
    } else {
        let mut step = 1e-3;
        let mut other = 1.0;
        let direction = if g1 < 0.0 { -1.0 } else { 1.0 };
        let mut found = false;
        for _ in 0..60 {
            other = 1.0 + direction * step;
            if other <= 0.0 {
                other = 1e-12;
            }
            if g(other).signum() != g1.signum() {
                found = true;
                break;
            }
            step *= 2.0;
        }
        if !found {
            return Err(Error::Truncation(format!(
                "no potential normalization found on [-{k}, {k}]"
            )));
        }
        let (mut lo, mut hi) = if other < 1.0 {
            (other, 1.0)
        } else {
            (1.0, other)
        };
        let g_lo = g(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid).signum() == g_lo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let model = build_equilibrium(&spec.affine(a_k, -a_k * log_gamma), &grid)?;
    let restricted =
        GridDensity::unnormalized(grid, f0.values()[offset..offset + grid.len()].to_vec())?;
    let b_k = 1.0 / restricted.mass();
    let f0k =
        GridDensity::unnormalized(grid, restricted.values().iter().map(|v| v * b_k).collect())?;
    let cone = cone_measure(&f0k, model.m())?.bounds;
    Ok(TruncationScheme {
        k,
        a_k,
        b_k,
        cone,
        model,
        f0: f0k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(n: usize) -> EquilibriumModel {
        build_equilibrium(
            &PotentialSpec::log_cosh(2.0).unwrap(),
            &Grid::new(15.0, n).unwrap(),
        )
        .unwrap()
    }

    fn tilted(model: &EquilibriumModel) -> GridDensity {
        let g = *model.grid();
        let vals = (0..g.len())
            .map(|i| model.m().values()[i] * (1.0 + 0.4 * (g.node(i) / 2.0).tanh()))
            .collect();
        GridDensity::new(g, vals).unwrap()
    }

    #[test]
    fn equilibrium_has_zero_flux_and_is_fixed() {
        let model = model(401);
        let j = flux(model.m(), &model, FaceMean::Arithmetic).unwrap();
        // p is constant up to rounding in e^{-(r+1)V}
        assert!(j.iter().all(|v| v.abs() < 1e-12));
        assert_eq!((j[0], j[j.len() - 1]), (0.0, 0.0));
        let state = FlowState::new(model.m(), &model).unwrap();
        let dt = adaptive_dt(model.m(), &model, 1.0).unwrap();
        let next = step(&state, dt, &model, FaceMean::Arithmetic).unwrap();
        let err = next
            .f
            .iter()
            .zip(model.m().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14, "{err}");
    }

    #[test]
    fn flux_restores_a_right_tilt() {
        let model = model(801);
        let f = tilted(&model);
        let j = flux(&f, &model, FaceMean::Arithmetic).unwrap();
        // face at x = 0: excess on the right flows left
        let mid = j.len() / 2;
        assert!(j[mid] < 0.0, "{}", j[mid]);
        // fine-grid oracle: J = r f ∂ₓp at the same point
        let x_face = model.grid().node(mid - 1) + 0.5 * model.grid().dx();
        assert!(x_face.abs() < model.grid().dx());
        let fine = model_fine_flux(&model, x_face);
        assert!(
            ((j[mid] - fine) / fine).abs() < 1e-3,
            "{} vs {fine}",
            j[mid]
        );
    }

    /// `r f ∂ₓ(ρ/f^{r+1})` at `x` for the tilted datum, by a tiny central
    /// difference of the closed form.
    fn model_fine_flux(model: &EquilibriumModel, x: f64) -> f64 {
        let g = *model.grid();
        let z = GridDensity::unnormalized(
            g,
            (0..g.len())
                .map(|i| model.m().values()[i] * (1.0 + 0.4 * (g.node(i) / 2.0).tanh()))
                .collect(),
        )
        .unwrap()
        .mass();
        let r = model.r();
        let f = |x: f64| model.density_at(x) * (1.0 + 0.4 * (x / 2.0).tanh()) / z;
        let p = |x: f64| model.rho_derivs(x).0 / f(x).powf(r + 1.0);
        let h = 1e-5;
        r * f(x) * (p(x + h) - p(x - h)) / (2.0 * h)
    }

    #[test]
    fn mass_is_conserved_by_steps() {
        let model = model(401);
        let mut state = FlowState::new(&tilted(&model), &model).unwrap();
        let g = *model.grid();
        let mass = |f: &[f64]| (0..f.len()).map(|i| g.weight(i) * f[i]).sum::<f64>();
        let m0 = mass(&state.f);
        for _ in 0..50 {
            let dt = adaptive_dt(&state.density(g).unwrap(), &model, DEFAULT_SAFETY).unwrap();
            let next = step(&state, dt, &model, FaceMean::Arithmetic).unwrap();
            assert!((mass(&next.f) - mass(&state.f)).abs() <= 1e-13);
            state = next;
        }
        assert!((mass(&state.f) - m0).abs() < 1e-13);
    }

    #[test]
    fn two_half_steps_match_one_step_to_second_order() {
        let model = model(401);
        let f = tilted(&model);
        let state = FlowState::new(&f, &model).unwrap();
        let dt0 = adaptive_dt(&f, &model, DEFAULT_SAFETY).unwrap();
        let diff = |dt: f64| {
            let one = step(&state, dt, &model, FaceMean::Arithmetic).unwrap();
            let half = step(&state, dt / 2.0, &model, FaceMean::Arithmetic).unwrap();
            let two = step(&half, dt / 2.0, &model, FaceMean::Arithmetic).unwrap();
            one.f
                .iter()
                .zip(&two.f)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (d1, d2) = (diff(dt0), diff(dt0 / 2.0));
        let order = (d1 / d2).log2();
        assert!((order - 2.0).abs() < 0.1, "{order}");
    }

    #[test]
    fn dt_quarters_when_n_doubles() {
        let coarse = model(1001);
        let fine = model(2001);
        let a = adaptive_dt(coarse.m(), &coarse, DEFAULT_SAFETY).unwrap();
        let b = adaptive_dt(fine.m(), &fine, DEFAULT_SAFETY).unwrap();
        assert!((a / b - 4.0).abs() < 1e-6, "{}", a / b);
        // at f = m the pressure is γ^{-(r+1)} everywhere
        let dx = coarse.grid().dx();
        let expected = DEFAULT_SAFETY * dx * dx / (2.0 * 6.0 * coarse.pressure_scale());
        assert!(((a - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn harmonic_and_arithmetic_faces_agree() {
        let check = |n: usize| {
            let model = model(n);
            let f = tilted(&model);
            let a = flux(&f, &model, FaceMean::Arithmetic).unwrap();
            let h = flux(&f, &model, FaceMean::Harmonic).unwrap();
            a.iter()
                .zip(&h)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let ratio = check(401) / check(801);
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn energy_rate_matches_scheme_dissipation() {
        let model = model(401);
        let f = tilted(&model);
        let rate = scheme_dissipation(&f, &model, FaceMean::Arithmetic).unwrap();
        let state = FlowState::new(&f, &model).unwrap();
        let f0 = crate::functional::free_energy(&f, &model).unwrap();
        let dt0 = adaptive_dt(&f, &model, DEFAULT_SAFETY).unwrap();
        let quotient = |dt: f64| {
            let next = step(&state, dt, &model, FaceMean::Arithmetic).unwrap();
            let g = next.density(*model.grid()).unwrap();
            (crate::functional::free_energy(&g, &model).unwrap() - f0) / dt
        };
        let (q1, q2, q3) = (quotient(dt0), quotient(dt0 / 2.0), quotient(dt0 / 4.0));
        let order = ((q1 - q2) / (q2 - q3)).log2();
        assert!(order > 0.9, "{order}");
        let extrapolated = 2.0 * q3 - q2;
        assert!(
            ((extrapolated + rate) / rate).abs() < 1e-6,
            "{extrapolated} vs {rate}"
        );
        let continuous = dissipation(&f, &model).unwrap();
        assert!(((rate - continuous) / continuous).abs() < 1e-2);
    }

    #[test]
    fn run_from_equilibrium_is_constant() {
        let model = model(201);
        let traj = run(model.m(), &model, &RunConfig::new(0.05, 0.01)).unwrap();
        assert_eq!(traj.snapshots.len(), 6);
        for s in &traj.snapshots {
            assert!(s.f_gap.abs() < 1e-12 && s.l2sq < 1e-24);
        }
        assert!((traj.last().t - 0.05).abs() < 1e-15);
    }

    #[test]
    fn run_decreases_energy() {
        let model = model(201);
        let traj = run(&tilted(&model), &model, &RunConfig::new(0.5, 0.05)).unwrap();
        assert!(traj.max_energy_increase <= 1e-10);
        assert!(traj.snapshots.windows(2).all(|w| w[1].f_gap < w[0].f_gap));
        assert!(traj.snapshots.windows(2).all(|w| w[1].l2sq < w[0].l2sq));
        assert!((traj.last().mass - 1.0).abs() < 1e-12);
        assert!(traj.cone_warnings.is_empty());
        for (k, s) in traj.snapshots.iter().enumerate() {
            assert!((s.t - (k as f64 * 0.05).min(0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_run_config_is_rejected() {
        let model = model(201);
        assert!(matches!(
            run(model.m(), &model, &RunConfig::new(-1.0, 0.1)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            run(model.m(), &model, &RunConfig::new(1.0, 2.0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_width_truncation_is_identity() {
        let model = model(1001);
        let f = tilted(&model);
        let t = setup_truncation(model.spec(), &f, 15.0).unwrap();
        assert!((t.a_k - 1.0).abs() < 1e-10, "{}", t.a_k);
        assert!((t.b_k - 1.0).abs() < 1e-10, "{}", t.b_k);
    }

    #[test]
    fn truncation_constants_tend_to_one() {
        let model = model(2001);
        let tr: Vec<TruncationScheme> = [10.0, 12.0, 15.0]
            .iter()
            .map(|&k| setup_truncation(model.spec(), model.m(), k).unwrap())
            .collect();
        for w in tr.windows(2) {
            assert!((w[0].a_k - 1.0).abs() > (w[1].a_k - 1.0).abs());
            assert!((w[0].b_k - 1.0).abs() > (w[1].b_k - 1.0).abs());
        }
        // f0 = m: b_k is the reciprocal of the mass of m on [-k, k]
        let k = tr[0].k;
        assert!((k - 10.0).abs() <= model.grid().dx() / 2.0);
        let inside = model.m().cdf_at(k) - model.m().cdf_at(-k);
        assert!((tr[0].b_k - 1.0 / inside).abs() < 1e-12);
        assert!((tr[0].model.m().mass() - 1.0).abs() < 1e-12);
        assert!((tr[0].f0.mass() - 1.0).abs() < 1e-12);
        assert!(setup_truncation(model.spec(), model.m(), 0.1).is_err());
    }
}
