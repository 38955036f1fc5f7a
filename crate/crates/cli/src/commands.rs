//! The four subcommands. Each returns an outcome whose `failures` name every
//! failed audit; numerical errors surface as [`CliError::Failure`].

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use ufd_core::density::{cone_measure, ConeBounds, Grid, GridDensity};
use ufd_core::functional::{poincare_muckenhoupt, poincare_spectral};
use ufd_core::ot1d::{brute_force_w2, enumerate_assignment_cost, w2_atomic, AtomicMeasure};
use ufd_core::potential::{build_equilibrium, EquilibriumModel, PotentialSpec};
use ufd_core::solver::{run, setup_truncation, RunConfig, Trajectory};
use ufd_core::verify::{
    audit_density, fit_trajectory, gronwall_report, random_cone_density, random_test_function,
    sample_rng, write_reports_csv, AuditSetup, ConstantsLedger, DecayFit, DensityAudit,
    InequalityReport, TolClass,
};

use crate::config::{Config, InitialKind};
use crate::error::{CliError, CliResult};
use crate::output::{num, write_csv, write_metadata, write_text};
use crate::svg;

/// Largest energy increase tolerated over one accepted step.
pub const ENERGY_SLACK: f64 = 1e-10;
/// Largest `|mass - 1|` tolerated at any diagnostic time.
pub const MASS_SLACK: f64 = 1e-12;

/// The evolution problem after the optional truncation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: EquilibriumModel,
    pub f0: GridDensity,
    pub target: ConeBounds,
    /// `(k, a_k, b_k)`.
    pub truncation: Option<(f64, f64, f64)>,
}

pub fn initial_density(config: &Config, model: &EquilibriumModel) -> CliResult<GridDensity> {
    let grid = *model.grid();
    let p = &config.initial.params;
    let at = |i: usize, default: f64| p.get(i).copied().unwrap_or(default);
    let m = |x: f64| model.density_at(x);
    let density = match config.initial.kind {
        InitialKind::Tilt => {
            let (a, w) = (at(0, 0.4), at(1, 2.0));
            if !(w > 0.0) {
                return Err(CliError::Config(format!(
                    "initial.params: tilt width must be positive, got {w}"
                )));
            }
            GridDensity::from_fn(grid, |x| m(x) * (1.0 + a * (x / w).tanh()))
        }
        InitialKind::Bimodal => {
            let (s, w, a) = (at(0, 3.0), at(1, 1.0), at(2, 0.5));
            if !(w > 0.0) {
                return Err(CliError::Config(format!(
                    "initial.params: bimodal width must be positive, got {w}"
                )));
            }
            let bump = |y: f64| (-0.5 * (y / w).powi(2)).exp();
            GridDensity::from_fn(grid, |x| m(x) * (a * (bump(x - s) + bump(x + s))).exp())
        }
        InitialKind::Translate => {
            let h = at(0, 0.5);
            GridDensity::from_fn(grid, |x| m(x - h))
        }
        InitialKind::File => {
            let path = config.initial.path.as_ref().expect("validated");
            read_density(path, &grid)
        }
    };
    density.map_err(|e| match e {
        ufd_core::Error::Config(msg) => CliError::Config(format!("initial: {msg}")),
        other => CliError::Config(format!("initial: {other}")),
    })
}

/// `x,f` rows on exactly the configured grid; `#` lines and a header skipped.
fn read_density(path: &Path, grid: &Grid) -> ufd_core::Result<GridDensity> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ufd_core::Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::with_capacity(grid.len());
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('x') {
            continue;
        }
        let bad = || {
            ufd_core::Error::Config(format!(
                "{}:{}: expected `x,f`",
                path.display(),
                line_no + 1
            ))
        };
        let (x, f) = line.split_once(',').ok_or_else(bad)?;
        let (x, f): (f64, f64) = (
            x.trim().parse().map_err(|_| bad())?,
            f.trim().parse().map_err(|_| bad())?,
        );
        let i = values.len();
        if i >= grid.len() || (x - grid.node(i)).abs() > 1e-9 * grid.half_width().max(1.0) {
            return Err(ufd_core::Error::Config(format!(
                "{}:{}: node x = {x} does not match the configured grid",
                path.display(),
                line_no + 1
            )));
        }
        values.push(f);
    }
    if values.len() != grid.len() {
        return Err(ufd_core::Error::Config(format!(
            "{}: {} rows for a grid of {} nodes",
            path.display(),
            values.len(),
            grid.len()
        )));
    }
    let raw = GridDensity::unnormalized(*grid, values)?;
    let mass = raw.mass();
    GridDensity::unnormalized(
        *grid,
        raw.into_values().into_iter().map(|v| v / mass).collect(),
    )
}

pub fn build_problem(config: &Config) -> CliResult<Problem> {
    let spec: PotentialSpec = config.potential_spec()?;
    let model = build_equilibrium(&spec, &config.grid()?)?;
    let target = config.cone()?;
    let f0 = initial_density(config, &model)?;
    let measured = cone_measure(&f0, model.m())?.bounds;
    if !(measured.lower >= target.lower && measured.upper <= target.upper) {
        return Err(CliError::Failure(format!(
            "initial_cone check failed: f0/m spans [{:.6}, {:.6}], outside [c, C] = [{}, {}]",
            measured.lower, measured.upper, target.lower, target.upper
        )));
    }
    match &config.truncation {
        None => Ok(Problem {
            model,
            f0,
            target,
            truncation: None,
        }),
        Some(t) => {
            let scheme = setup_truncation(&spec, &f0, t.k)?;
            Ok(Problem {
                model: scheme.model,
                f0: scheme.f0,
                target,
                truncation: Some((scheme.k, scheme.a_k, scheme.b_k)),
            })
        }
    }
}

fn audit_all(
    densities: &[GridDensity],
    model: &EquilibriumModel,
    setup: &AuditSetup,
    seed: u64,
) -> CliResult<Vec<DensityAudit>> {
    densities
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = sample_rng(seed, i as u64);
            let phi = random_test_function(&mut rng, model.grid());
            audit_density(f, model, setup, &phi)
                .map_err(|e| CliError::Failure(format!("audit of density {i}: {e}")))
        })
        .collect()
}

fn failures(reports: &[InequalityReport]) -> Vec<String> {
    reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} (lhs {:.6e} > rhs {:.6e})", r.name, r.lhs, r.rhs))
        .collect()
}

/// Worst report per name, in first-seen order.
fn worst_by_name(reports: &[InequalityReport]) -> Vec<InequalityReport> {
    let mut names: Vec<&str> = Vec::new();
    for r in reports {
        if !names.contains(&r.name.as_str()) {
            names.push(&r.name);
        }
    }
    names
        .iter()
        .filter_map(|n| {
            let family: Vec<InequalityReport> =
                reports.iter().filter(|r| r.name == *n).cloned().collect();
            InequalityReport::worst_of(&family)
        })
        .collect()
}

fn write_ledger(
    dir: &Path,
    config: &Config,
    ledger: &ConstantsLedger,
    extra: &[(&str, f64)],
) -> CliResult<()> {
    let mut text = Vec::new();
    ledger.write_text(&mut text)?;
    for (k, v) in extra {
        writeln!(text, "{k}={}", num(*v))?;
    }
    write_metadata(&mut text, Some(config))?;
    write_text(
        &dir.join("ledger.txt"),
        &String::from_utf8(text).expect("ascii"),
    )?;
    write_csv(&dir.join("ledger.csv"), Some(config), |w| {
        ledger.write_csv(&mut *w)?;
        for (k, v) in extra {
            writeln!(w, "{k},{}", num(*v))?;
        }
        Ok(())
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub ledger: ConstantsLedger,
    pub fit: Option<DecayFit>,
    pub reports: Vec<InequalityReport>,
    pub truncation: Option<(f64, f64, f64)>,
    pub steps: u64,
    pub max_energy_increase: f64,
    pub max_mass_error: f64,
    pub failures: Vec<String>,
}

/// Evolves the configured datum, fits the decay, audits every stored
/// density and writes `trajectory.csv`, `reports.csv`, `fit.csv`, the
/// ledger, the initial and final densities and two SVG plots.
pub fn cmd_run(config: &Config, out: &Path) -> CliResult<RunOutcome> {
    let problem = build_problem(config)?;
    let model = &problem.model;
    let mut run_config = RunConfig::new(config.solver.t_end, config.solver.diag_every);
    run_config.safety = config.solver.safety;
    run_config.keep_densities = true;
    let trajectory: Trajectory = run(&problem.f0, model, &run_config)?;
    for w in &trajectory.cone_warnings {
        log::warn!(
            "t = {}: f/m in [{}, {}] left the initial cone",
            w.t,
            w.u_min,
            w.u_max
        );
    }

    let mut fails = Vec::new();
    let fit = match fit_trajectory(&trajectory) {
        Ok(fit) if fit.rate > 0.0 => Some(fit),
        Ok(fit) => {
            fails.push(format!("decay_fit (rate {} is not positive)", fit.rate));
            Some(fit)
        }
        Err(e) => {
            fails.push(format!("decay_fit ({e})"));
            None
        }
    };

    let setup = AuditSetup::new(model, problem.target)?;
    let densities = trajectory
        .densities
        .iter()
        .map(|f| GridDensity::unnormalized(*model.grid(), f.clone()))
        .collect::<ufd_core::Result<Vec<_>>>()?;
    let audits = audit_all(&densities, model, &setup, config.verify.seed)?;
    let mut ledger = ConstantsLedger::from_setup(&setup, model.r())?;
    ledger.absorb(&audits);
    if let Some(fit) = &fit {
        ledger = ledger.with_fit(fit);
    }

    let all: Vec<InequalityReport> = audits
        .iter()
        .flat_map(|a| a.reports.iter().cloned())
        .collect();
    let mut reports = worst_by_name(&all);
    reports.extend(gronwall_report(&trajectory, ledger.k_epe));
    let max_mass_error = trajectory
        .snapshots
        .iter()
        .map(|s| (s.mass - 1.0).abs())
        .fold(0.0, f64::max);
    reports.push(InequalityReport::new(
        "energy_monotone",
        trajectory.max_energy_increase,
        ENERGY_SLACK,
        TolClass::Analytic,
    ));
    reports.push(InequalityReport::new(
        "mass",
        max_mass_error,
        MASS_SLACK,
        TolClass::Analytic,
    ));
    reports.retain(|r| config.verify.enabled(&r.name));
    fails.extend(failures(&reports));

    std::fs::create_dir_all(out)?;
    write_csv(&out.join("trajectory.csv"), Some(config), |w| {
        trajectory.write_csv(w)
    })?;
    write_csv(&out.join("reports.csv"), Some(config), |w| {
        write_reports_csv(&reports, w)
    })?;
    write_csv(&out.join("fit.csv"), Some(config), |w| {
        writeln!(w, "A_fit,a_fit,points")?;
        if let Some(f) = &fit {
            writeln!(w, "{},{},{}", num(f.amplitude), num(f.rate), f.points)?;
        }
        Ok(())
    })?;
    write_csv(&out.join("initial.csv"), Some(config), |w| {
        problem.f0.write_csv(w)
    })?;
    let last = densities.last().expect("the initial density is stored");
    write_csv(&out.join("final.csv"), Some(config), |w| last.write_csv(w))?;
    let mut extra = vec![
        ("steps", trajectory.steps as f64),
        ("max_energy_increase", trajectory.max_energy_increase),
        ("max_mass_error", max_mass_error),
    ];
    if let Some((k, a, b)) = problem.truncation {
        extra.extend([("k", k), ("a_k", a), ("b_k", b)]);
    }
    write_ledger(out, config, &ledger, &extra)?;
    let t: Vec<f64> = trajectory.snapshots.iter().map(|s| s.t).collect();
    let l2: Vec<f64> = trajectory.snapshots.iter().map(|s| s.l2sq).collect();
    write_text(
        &out.join("decay.svg"),
        &svg::decay_plot(&t, &l2, fit.map(|f| (f.amplitude, f.rate))),
    )?;
    write_text(&out.join("slack.svg"), &svg::slack_panel(&reports))?;

    Ok(RunOutcome {
        ledger,
        fit,
        reports,
        truncation: problem.truncation,
        steps: trajectory.steps,
        max_energy_increase: trajectory.max_energy_increase,
        max_mass_error,
        failures: fails,
    })
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub ledger: ConstantsLedger,
    /// One row per density and check, named `check@index`.
    pub reports: Vec<InequalityReport>,
    /// The local inequality at exponent `2r + 1`, recorded separately.
    pub statement_reports: Vec<InequalityReport>,
    pub failures: Vec<String>,
}

/// Audits `random_audit_count` seeded cone densities; writes `reports.csv`,
/// `statement_reports.csv`, the ledger and the slack panel.
pub fn cmd_verify(config: &Config, out: &Path) -> CliResult<VerifyOutcome> {
    let spec = config.potential_spec()?;
    let model = build_equilibrium(&spec, &config.grid()?)?;
    let cone = config.cone()?;
    let setup = AuditSetup::new(&model, cone)?;
    let seed = config.verify.seed;
    let audits: Vec<DensityAudit> = (0..config.verify.random_audit_count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let f = random_cone_density(&mut rng, &model, cone)?;
            let phi = random_test_function(&mut rng, model.grid());
            audit_density(&f, &model, &setup, &phi)
        })
        .collect::<ufd_core::Result<_>>()
        .map_err(|e| CliError::Failure(format!("audit: {e}")))?;
    let mut ledger = ConstantsLedger::from_setup(&setup, model.r())?;
    ledger.absorb(&audits);

    let tag = |i: usize, r: &InequalityReport| {
        let mut r = r.clone();
        r.name = format!("{}@{i}", r.name);
        r
    };
    let reports: Vec<InequalityReport> = audits
        .iter()
        .enumerate()
        .flat_map(|(i, a)| {
            a.reports
                .iter()
                .filter(|r| config.verify.enabled(&r.name))
                .map(move |r| tag(i, r))
        })
        .collect();
    let statement_reports: Vec<InequalityReport> = audits
        .iter()
        .enumerate()
        .map(|(i, a)| tag(i, &a.local_wi_statement))
        .collect();

    std::fs::create_dir_all(out)?;
    write_csv(&out.join("reports.csv"), Some(config), |w| {
        write_reports_csv(&reports, w)
    })?;
    write_csv(&out.join("statement_reports.csv"), Some(config), |w| {
        write_reports_csv(&statement_reports, w)
    })?;
    write_ledger(
        out,
        config,
        &ledger,
        &[("audited_densities", audits.len() as f64)],
    )?;
    let untagged: Vec<InequalityReport> = audits
        .iter()
        .flat_map(|a| a.reports.iter().cloned())
        .collect();
    write_text(
        &out.join("slack.svg"),
        &svg::slack_panel(&worst_by_name(&untagged)),
    )?;

    Ok(VerifyOutcome {
        ledger,
        failures: failures(&reports),
        reports,
        statement_reports,
    })
}

/// Atomic pairs in the W₂ oracle comparison.
pub const ORACLE_PAIRS: u64 = 50;
pub const ORACLE_MAX_ATOMS: usize = 32;
pub const ENUMERATION_MAX_ATOMS: usize = 8;
pub const ORACLE_TOL: f64 = 1e-10;

fn random_atoms(rng: &mut impl Rng, max: usize) -> AtomicMeasure {
    let n = rng.gen_range(1..=max);
    let points: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    AtomicMeasure::new(points, raw.iter().map(|w| w / total).collect()).expect("valid atoms")
}

/// Smallest positive root of `sin(kR) + 2k cos(kR)`, which gives the
/// Neumann gap `1/4 + k²` of the Laplace weight on `[-R, R]`.
pub fn laplace_gap(half_width: f64) -> f64 {
    let g = |k: f64| (k * half_width).sin() + 2.0 * k * (k * half_width).cos();
    let pi = std::f64::consts::PI;
    let (mut lo, mut hi) = (0.5 * pi / half_width, pi / half_width);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = 0.5 * (lo + hi);
    0.25 + k * k
}

/// Oracle self-tests: quantile W₂ against the coupling and enumeration
/// oracles, a single-atom pair, Poincaré brackets and a Laplace refinement
/// study. Writes `oracle.csv`.
pub fn cmd_oracle(seed: u64, out: &Path) -> CliResult<Vec<InequalityReport>> {
    let mut reports = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..ORACLE_PAIRS {
        let mut rng = sample_rng(seed, i);
        let a = random_atoms(&mut rng, ORACLE_MAX_ATOMS);
        let b = random_atoms(&mut rng, ORACLE_MAX_ATOMS);
        let q = w2_atomic(&a, &b)?;
        worst = worst.max((q * q - brute_force_w2(&a, &b)?).abs());
    }
    reports.push(InequalityReport::new(
        "w2_quantile_vs_coupling",
        worst,
        ORACLE_TOL,
        TolClass::Analytic,
    ));

    let mut worst = 0.0f64;
    for i in 0..ORACLE_PAIRS {
        let mut rng = sample_rng(seed, ORACLE_PAIRS + i);
        let n = rng.gen_range(1..=ENUMERATION_MAX_ATOMS);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let exact = enumerate_assignment_cost(&xs, &ys)?;
        let coupling = brute_force_w2(&AtomicMeasure::uniform(xs)?, &AtomicMeasure::uniform(ys)?)?;
        worst = worst.max((coupling - exact).abs());
    }
    reports.push(InequalityReport::new(
        "coupling_vs_enumeration",
        worst,
        ORACLE_TOL,
        TolClass::Analytic,
    ));

    let mut rng = sample_rng(seed, 2 * ORACLE_PAIRS);
    let (x, y) = (rng.gen_range(-5.0..5.0f64), rng.gen_range(-5.0..5.0f64));
    let q = w2_atomic(
        &AtomicMeasure::uniform(vec![x])?,
        &AtomicMeasure::uniform(vec![y])?,
    )?;
    reports.push(InequalityReport::new(
        "single_atom_pair",
        (q - (x - y).abs()).abs(),
        0.0,
        TolClass::Analytic,
    ));

    let grid = Grid::new(20.0, 2001)?;
    for spec in [
        PotentialSpec::log_cosh(2.0)?,
        PotentialSpec::smoothed_laplace(2.0)?,
        PotentialSpec::laplace(2.0)?,
    ] {
        let model = build_equilibrium(&spec, &grid)?;
        let c_p = poincare_spectral(&model)?;
        let b = poincare_muckenhoupt(&model)?;
        let name = spec.kind.name();
        reports.push(InequalityReport::new(
            format!("poincare_lower_{name}"),
            b.lower,
            c_p,
            TolClass::Analytic,
        ));
        reports.push(InequalityReport::new(
            format!("poincare_upper_{name}"),
            c_p,
            b.upper,
            TolClass::Analytic,
        ));
    }

    // spectral C_P of the Laplace weight against the exact truncated gap
    let exact = 1.0 / laplace_gap(20.0);
    let errors = [1001usize, 2001, 4001]
        .iter()
        .map(|&n| {
            let model = build_equilibrium(&PotentialSpec::laplace(2.0)?, &Grid::new(20.0, n)?)?;
            Ok((poincare_spectral(&model)? - exact).abs())
        })
        .collect::<ufd_core::Result<Vec<f64>>>()?;
    reports.push(InequalityReport::new(
        "laplace_refinement_monotone",
        errors[2],
        errors[0],
        TolClass::Analytic,
    ));
    reports.push(InequalityReport::new(
        "laplace_refinement",
        errors[2],
        1e-3 * exact,
        TolClass::Analytic,
    ));

    std::fs::create_dir_all(out)?;
    write_csv(&out.join("oracle.csv"), None, |w| {
        write_reports_csv(&reports, &mut *w)?;
        writeln!(w, "# seed={seed}")
    })?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub a_fit: f64,
    pub k_epe: f64,
    pub c_prime: f64,
    pub upper_prime: f64,
    pub a_k: Option<f64>,
    pub b_k: Option<f64>,
    pub passed: bool,
}

pub const SUMMARY_HEADER: &str = "value,a_fit,K_epe,c_prime,C_prime,a_k,b_k,pass";

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<String>,
}

pub fn parse_values(text: &str) -> CliResult<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Config(format!("--values: {s:?} is not a number")))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    if values.is_empty() {
        return Err(CliError::Config("--values: empty value list".into()));
    }
    Ok(values)
}

pub fn child_directory(out: &Path, param: &str, value: f64) -> PathBuf {
    out.join(format!("{param}={value}"))
}

/// Independent runs per value, concurrently, each with seed `seed + index`
/// and its own subdirectory; `summary.csv` lists the successful runs.
pub fn cmd_sweep(
    config: &Config,
    param: &str,
    values: &[f64],
    out: &Path,
) -> CliResult<SweepOutcome> {
    if values.is_empty() {
        return Err(CliError::Config("--values: empty value list".into()));
    }
    let children: Vec<Config> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = config.with_param(param, v)?;
            c.verify.seed = config.verify.seed.wrapping_add(i as u64);
            c.output.directory = child_directory(out, param, v);
            Ok(c)
        })
        .collect::<CliResult<_>>()?;
    let results: Vec<CliResult<RunOutcome>> = children
        .par_iter()
        .map(|c| cmd_run(c, &c.output.directory))
        .collect();

    let mut rows = Vec::new();
    let mut fails = Vec::new();
    for (&value, result) in values.iter().zip(results) {
        match result {
            Ok(o) => {
                fails.extend(o.failures.iter().map(|f| format!("{param}={value}: {f}")));
                rows.push(SweepRow {
                    value,
                    a_fit: o.fit.map_or(f64::NAN, |f| f.rate),
                    k_epe: o.ledger.k_epe,
                    c_prime: o.ledger.c_prime,
                    upper_prime: o.ledger.upper_prime,
                    a_k: o.truncation.map(|t| t.1),
                    b_k: o.truncation.map(|t| t.2),
                    passed: o.failures.is_empty(),
                });
            }
            Err(e) => fails.push(format!("{param}={value}: {e}")),
        }
    }
    let opt = |v: Option<f64>| v.map_or_else(String::new, num);
    write_csv(&out.join("summary.csv"), Some(config), |w| {
        writeln!(w, "{SUMMARY_HEADER}")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                num(r.value),
                num(r.a_fit),
                num(r.k_epe),
                num(r.c_prime),
                num(r.upper_prime),
                opt(r.a_k),
                opt(r.b_k),
                r.passed
            )?;
        }
        writeln!(w, "# param={param}")
    })?;
    Ok(SweepOutcome {
        rows,
        failures: fails,
    })
}
