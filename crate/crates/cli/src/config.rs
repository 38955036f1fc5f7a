//! JSON experiment configuration.
//!
//! Unknown fields are rejected; every validation message names the offending
//! field by its dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ufd_core::density::{ConeBounds, Grid};
use ufd_core::potential::{PotentialKind, PotentialSpec};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub potential: PotentialConfig,
    pub r: f64,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationConfig>,
    pub initial: InitialConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    /// Where results go; not part of the recorded configuration.
    #[serde(default, skip_serializing)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "R")]
    pub half_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    /// `m (1 + a tanh(x / w))`; params `[a, w]`.
    Tilt,
    /// `m exp(a (e^{-(x-s)²/2w²} + e^{-(x+s)²/2w²}))`; params `[s, w, a]`.
    Bimodal,
    /// `m(x - h)`; params `[h]`.
    Translate,
    /// Two-column `x,f` CSV on the configured grid.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub kind: InitialKind,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Target cone `c m ≤ f ≤ C m`.
    pub c: f64,
    #[serde(rename = "C")]
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub t_end: f64,
    pub diag_every: f64,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_safety() -> f64 {
    ufd_core::solver::DEFAULT_SAFETY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub epe: bool,
    pub hwi: bool,
    pub local_wi: bool,
    pub map_bounds: bool,
    pub geodesic_cone: bool,
    pub hessian_form: bool,
    pub gronwall: bool,
    pub random_audit_count: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            epe: true,
            hwi: true,
            local_wi: true,
            map_bounds: true,
            geodesic_cone: true,
            hessian_form: true,
            gronwall: true,
            random_audit_count: 100,
            seed: 42,
        }
    }
}

impl VerifyConfig {
    /// Whether the report family `name` is enabled.
    pub fn enabled(&self, name: &str) -> bool {
        match name {
            "epe" => self.epe,
            "hwi" => self.hwi,
            "local_wi" => self.local_wi,
            "geodesic_cone" => self.geodesic_cone,
            "hessian_form" => self.hessian_form,
            "gronwall" => self.gronwall,
            n if n.starts_with("map_") || n == "displacement" => self.map_bounds,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
        }
    }
}

/// Parameters accepted by `sweep`.
pub const SWEEP_PARAMS: [&str; 5] = ["r", "c", "C", "grid.n", "truncation.k"];

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl Config {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let config: Config = serde_json::from_str(text).map_err(|e| {
            CliError::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.potential_spec()?;
        let g = &self.grid;
        if !(g.half_width > 0.0 && g.half_width.is_finite()) {
            return Err(invalid(
                "grid.R",
                format!("must be positive, got {}", g.half_width),
            ));
        }
        if g.n < 3 || g.n.is_multiple_of(2) {
            return Err(invalid(
                "grid.n",
                format!("must be odd and at least 3, got {}", g.n),
            ));
        }
        if let Some(t) = &self.truncation {
            if !(t.k > 0.0 && t.k <= g.half_width) {
                return Err(invalid(
                    "truncation.k",
                    format!("must lie in (0, R], got {}", t.k),
                ));
            }
        }
        let i = &self.initial;
        if !(i.c > 0.0 && i.c < 1.0) {
            return Err(invalid(
                "initial.c",
                format!("must lie in (0, 1), got {}", i.c),
            ));
        }
        if !(i.upper > 1.0 && i.upper.is_finite()) {
            return Err(invalid(
                "initial.C",
                format!("must exceed 1, got {}", i.upper),
            ));
        }
        if i.params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("initial.params", "must be finite"));
        }
        let arity = match i.kind {
            InitialKind::Tilt => 0..=2,
            InitialKind::Bimodal => 0..=3,
            InitialKind::Translate => 0..=1,
            InitialKind::File => 0..=0,
        };
        if !arity.contains(&i.params.len()) {
            return Err(invalid(
                "initial.params",
                format!("{:?} takes at most {} parameters", i.kind, arity.end()),
            ));
        }
        if (i.kind == InitialKind::File) != i.path.is_some() {
            return Err(invalid(
                "initial.path",
                "required exactly when initial.kind is \"file\"",
            ));
        }
        let s = &self.solver;
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return Err(invalid(
                "solver.t_end",
                format!("must be positive, got {}", s.t_end),
            ));
        }
        if !(s.diag_every > 0.0 && s.diag_every <= s.t_end) {
            return Err(invalid(
                "solver.diag_every",
                format!("must lie in (0, t_end], got {}", s.diag_every),
            ));
        }
        if !(s.safety > 0.0 && s.safety <= 1.0) {
            return Err(invalid(
                "solver.safety",
                format!("must lie in (0, 1], got {}", s.safety),
            ));
        }
        Ok(())
    }

    pub fn potential_spec(&self) -> CliResult<PotentialSpec> {
        let kind = PotentialKind::parse(&self.potential.kind).ok_or_else(|| {
            invalid(
                "potential.kind",
                format!("unknown kind {:?}", self.potential.kind),
            )
        })?;
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid("r", format!("must be positive, got {}", self.r)));
        }
        Ok(PotentialSpec::new(
            kind,
            self.potential.params.clone(),
            self.r,
        )?)
    }

    pub fn grid(&self) -> CliResult<Grid> {
        Ok(Grid::new(self.grid.half_width, self.grid.n)?)
    }

    pub fn cone(&self) -> CliResult<ConeBounds> {
        Ok(ConeBounds::new(self.initial.c, self.initial.upper)?)
    }

    /// Compact JSON of the recorded configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy with one sweep parameter replaced.
    pub fn with_param(&self, name: &str, value: f64) -> CliResult<Self> {
        let mut c = self.clone();
        match name {
            "r" => c.r = value,
            "c" => c.initial.c = value,
            "C" => c.initial.upper = value,
            "grid.n" => {
                if !(value.fract() == 0.0 && value > 0.0) {
                    return Err(invalid(
                        "grid.n",
                        format!("must be a positive integer, got {value}"),
                    ));
                }
                c.grid.n = value as usize;
            }
            "truncation.k" => c.truncation = Some(TruncationConfig { k: value }),
            other => {
                return Err(CliError::Config(format!(
                    "--param: unknown parameter {other:?} (expected one of {SWEEP_PARAMS:?})"
                )))
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "potential": {"kind": "log-cosh"},
        "r": 2,
        "grid": {"R": 15, "n": 2001},
        "initial": {"kind": "tilt", "params": [0.4, 2], "c": 0.5, "C": 2},
        "solver": {"t_end": 6, "diag_every": 0.1}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.verify, VerifyConfig::default());
        assert_eq!(c.solver.safety, ufd_core::solver::DEFAULT_SAFETY);
        assert!(c.truncation.is_none());
    }

    #[test]
    fn even_n_names_the_field() {
        let text = MINIMAL.replace("2001", "2000");
        let err = Config::parse(&text).unwrap_err();
        assert!(
            matches!(err, CliError::Config(ref m) if m.contains("grid.n")),
            "{err}"
        );
    }

    #[test]
    fn unknown_fields_report_position() {
        let text = MINIMAL.replace("\"r\": 2", "\"r\": 2, \"rr\": 3");
        let err = Config::parse(&text).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("rr"), "{err}");
    }

    #[test]
    fn output_directory_does_not_enter_the_hash() {
        let mut a = Config::parse(MINIMAL).unwrap();
        let h = a.hash();
        a.output.directory = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), h);
        assert_eq!(
            Config::parse(&a.canonical_json()).unwrap().canonical_json(),
            a.canonical_json()
        );
        assert_ne!(a.with_param("r", 3.0).unwrap().hash(), h);
    }

    #[test]
    fn sweep_parameters_validate() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.with_param("grid.n", 4001.0).unwrap().grid.n, 4001);
        assert!(c.with_param("grid.n", 4000.0).is_err());
        assert!(c.with_param("c", 1.5).is_err());
        assert!(c.with_param("truncation.k", 20.0).is_err());
        assert!(c.with_param("safety", 0.1).is_err());
    }
}
