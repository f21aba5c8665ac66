//! Experiment configuration files.
//!
//! A config is a small TOML document with a handful of sections:
//!
//! ```toml
//! seed = 7
//! engine = "event"        # or "discrete" (needs `step`)
//! horizon = 1e7           # or target_level = 100.0
//!
//! [gps]
//! c = 1.0
//! phi1 = 0.5
//! phi2 = 0.5
//!
//! [class1]
//! family = "compound_poisson"
//! lambda = 0.0667
//! jobs = "pareto"
//! scale = 1.0
//! alpha = 1.5
//!
//! [class2]
//! family = "stable"
//! alpha = 1.5
//! beta = 1.0
//! mu = 0.3
//!
//! [levels]
//! min = 1.0
//! max = 100.0
//! per_decade = 10
//! ```
//!
//! Unknown keys are rejected and every field problem is reported at once.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::{classify, integer_index_warning, ModelSummary};
use crate::error::{Error, Result};
use crate::estimation::{horizon_for_level, LevelGrid, DEFAULT_BATCHES, MIN_BATCHES};
use crate::gps_sim::GpsConfig;
use crate::levy_inputs::{ClassInputSpec, CompoundPoissonSpec, JobDistribution, StableSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Event,
    Discrete,
}

impl EngineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "event" => Ok(EngineKind::Event),
            "discrete" => Ok(EngineKind::Discrete),
            other => Err(Error::Config(format!(
                "engine: expected `event` or `discrete`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Event => "event",
            EngineKind::Discrete => "discrete",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    TimeAverage,
    Regenerative,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub engine: Option<EngineKind>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    pub target_level: Option<f64>,
    pub burn_in: Option<f64>,
    pub replications: Option<u32>,
    pub batches: Option<usize>,
    pub estimator: Option<EstimatorKind>,
    pub gps: Option<RawGps>,
    pub class1: Option<RawClass>,
    pub class2: Option<RawClass>,
    pub levels: Option<RawLevels>,
    pub tandem: Option<RawTandem>,
    pub output: Option<RawOutput>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGps {
    pub c: Option<f64>,
    pub phi1: Option<f64>,
    pub phi2: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawClass {
    pub family: Option<String>,
    pub lambda: Option<f64>,
    pub jobs: Option<String>,
    pub scale: Option<f64>,
    pub alpha: Option<f64>,
    pub rate: Option<f64>,
    pub size: Option<f64>,
    pub beta: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLevels {
    pub values: Option<Vec<f64>>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub per_decade: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTandem {
    pub samples: Option<u64>,
    pub eps: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub csv: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub engine: Option<EngineKind>,
    pub levels: Option<Vec<f64>>,
    pub replications: Option<u32>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Engine {
    Event,
    Discrete { h: f64 },
}

impl Engine {
    pub fn kind(&self) -> EngineKind {
        match self {
            Engine::Event => EngineKind::Event,
            Engine::Discrete { .. } => EngineKind::Discrete,
        }
    }
}

pub const DEFAULT_TANDEM_SAMPLES: u64 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub cfg: GpsConfig,
    pub class1: ClassInputSpec,
    pub class2: ClassInputSpec,
    pub grid: LevelGrid,
    pub horizon: f64,
    pub burn_in: f64,
    pub replications: u32,
    pub batches: usize,
    pub seed: u64,
    pub engine: Engine,
    pub estimator: EstimatorKind,
    /// Grid step for stable paths in the tandem functional.
    pub step: Option<f64>,
    pub tandem_samples: u64,
    pub tandem_eps: f64,
    pub csv: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    /// Non-fatal findings, e.g. a parameterization on a regime boundary.
    pub warnings: Vec<String>,
    /// The file as read, after overrides; echoed into run manifests.
    pub raw: RawConfig,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_with(path, &Overrides::default())
}

pub fn parse_config_with(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(one_line(&e.to_string())))?;
    apply_overrides(&mut raw, overrides);
    build(raw)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn apply_overrides(raw: &mut RawConfig, o: &Overrides) {
    if let Some(seed) = o.seed {
        raw.seed = Some(seed);
    }
    if let Some(engine) = o.engine {
        raw.engine = Some(engine);
    }
    if let Some(levels) = &o.levels {
        raw.levels = Some(RawLevels {
            values: Some(levels.clone()),
            ..RawLevels::default()
        });
    }
    if let Some(r) = o.replications {
        raw.replications = Some(r);
    }
    if let Some(out) = &o.out {
        raw.output.get_or_insert_with(RawOutput::default).csv = Some(out.clone());
    }
}

/// Collects field-level problems so one pass reports all of them.
#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn push(&mut self, field: &str, msg: impl fmt::Display) {
        self.0.push(format!("{field}: {msg}"));
    }

    fn check<T>(&mut self, field: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(field, strip_param(&e));
                None
            }
        }
    }

    /// Like `check`, naming the field after the offending parameter.
    fn check_in<T>(&mut self, section: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(Error::Parameter { name, reason }) => {
                let key = name.rsplit('.').next().unwrap_or(name);
                self.push(&format!("{section}.{key}"), reason);
                None
            }
            Err(e) => {
                self.push(section, e);
                None
            }
        }
    }

    fn require<T: Copy>(&mut self, field: &str, v: Option<T>) -> Option<T> {
        if v.is_none() {
            self.push(field, "missing");
        }
        v
    }
}

fn strip_param(e: &Error) -> String {
    match e {
        Error::Parameter { reason, .. } => reason.clone(),
        other => other.to_string(),
    }
}

fn build_class(p: &mut Problems, name: &str, raw: Option<&RawClass>) -> Option<ClassInputSpec> {
    let Some(raw) = raw else {
        p.push(name, "section missing");
        return None;
    };
    let field = |f: &str| format!("{name}.{f}");
    let family = raw.family.as_deref().unwrap_or("");
    let unexpected = |p: &mut Problems, keys: &[(&str, bool)]| {
        for (k, present) in keys {
            if *present {
                p.push(&field(k), format!("not used by family `{family}`"));
            }
        }
    };
    match family {
        "compound_poisson" => {
            unexpected(p, &[("beta", raw.beta.is_some()), ("mu", raw.mu.is_some())]);
            let lambda = p.require(&field("lambda"), raw.lambda);
            let jobs = match raw.jobs.as_deref() {
                Some("pareto") => {
                    unexpected(p, &[("rate", raw.rate.is_some()), ("size", raw.size.is_some())]);
                    let scale = p.require(&field("scale"), raw.scale);
                    let alpha = p.require(&field("alpha"), raw.alpha);
                    match (scale, alpha) {
                        (Some(scale), Some(alpha)) => {
                            let j = JobDistribution::Pareto { scale, alpha };
                            p.check_in(name, j.validate()).map(|_| j)
                        }
                        _ => None,
                    }
                }
                Some("exponential") => {
                    unexpected(
                        p,
                        &[
                            ("scale", raw.scale.is_some()),
                            ("alpha", raw.alpha.is_some()),
                            ("size", raw.size.is_some()),
                        ],
                    );
                    let rate = p.require(&field("rate"), raw.rate)?;
                    let j = JobDistribution::Exponential { rate };
                    p.check_in(name, j.validate()).map(|_| j)
                }
                Some("deterministic") => {
                    unexpected(
                        p,
                        &[
                            ("scale", raw.scale.is_some()),
                            ("alpha", raw.alpha.is_some()),
                            ("rate", raw.rate.is_some()),
                        ],
                    );
                    let size = p.require(&field("size"), raw.size)?;
                    let j = JobDistribution::Deterministic { size };
                    p.check_in(name, j.validate()).map(|_| j)
                }
                Some(other) => {
                    p.push(
                        &field("jobs"),
                        format!("expected pareto, exponential or deterministic, got `{other}`"),
                    );
                    None
                }
                None => {
                    p.push(&field("jobs"), "missing");
                    None
                }
            };
            let spec = CompoundPoissonSpec {
                lambda: lambda?,
                jobs: jobs?,
            };
            p.check_in(name, spec.validate())
                .map(|_| ClassInputSpec::CompoundPoisson(spec))
        }
        "stable" => {
            unexpected(
                p,
                &[
                    ("lambda", raw.lambda.is_some()),
                    ("jobs", raw.jobs.is_some()),
                    ("scale", raw.scale.is_some()),
                    ("rate", raw.rate.is_some()),
                    ("size", raw.size.is_some()),
                ],
            );
            let alpha = p.require(&field("alpha"), raw.alpha);
            let beta = p.require(&field("beta"), raw.beta);
            let mu = p.require(&field("mu"), raw.mu);
            let spec = StableSpec {
                alpha: alpha?,
                beta: beta?,
                mu: mu?,
            };
            p.check_in(name, spec.validate()).map(|_| ClassInputSpec::Stable(spec))
        }
        "" => {
            p.push(&field("family"), "missing");
            None
        }
        other => {
            p.push(
                &field("family"),
                format!("expected compound_poisson or stable, got `{other}`"),
            );
            None
        }
    }
}

fn build_grid(p: &mut Problems, raw: Option<&RawLevels>) -> Option<LevelGrid> {
    let default = RawLevels::default();
    let raw = raw.unwrap_or(&default);
    if let Some(values) = &raw.values {
        if raw.min.is_some() || raw.max.is_some() || raw.per_decade.is_some() {
            p.push("levels", "give either `values` or `min`/`max`/`per_decade`, not both");
            return None;
        }
        return p.check("levels.values", LevelGrid::new(values.clone()));
    }
    let lo = raw.min.unwrap_or(1.0);
    let hi = raw.max.unwrap_or(100.0);
    let per = raw.per_decade.unwrap_or(10);
    p.check("levels", LevelGrid::geometric(lo, hi, per))
}

fn build(raw: RawConfig) -> Result<ExperimentConfig> {
    let mut p = Problems::default();
    let mut warnings = Vec::new();

    let gps = raw.gps.clone().unwrap_or_default();
    if raw.gps.is_none() {
        p.push("gps", "section missing");
    }
    let c = gps.c.unwrap_or(1.0);
    let cfg = match (gps.phi1, gps.phi2) {
        (None, None) if raw.gps.is_some() => {
            p.push("gps.phi1", "missing");
            None
        }
        (phi1, phi2) if raw.gps.is_some() => {
            let phi1 = phi1.unwrap_or_else(|| 1.0 - phi2.unwrap_or(0.5));
            let phi2 = phi2.unwrap_or(1.0 - phi1);
            let field = if (phi1 + phi2 - 1.0).abs() > 1e-12 {
                "gps.phi2"
            } else {
                "gps"
            };
            p.check(field, GpsConfig::new(c, phi1, phi2))
        }
        _ => None,
    };

    let class1 = build_class(&mut p, "class1", raw.class1.as_ref());
    let class2 = build_class(&mut p, "class2", raw.class2.as_ref());
    let grid = build_grid(&mut p, raw.levels.as_ref());

    let engine_kind = raw.engine.unwrap_or(EngineKind::Event);
    if let Some(step) = raw.step {
        if !(step > 0.0 && step.is_finite()) {
            p.push("step", format!("must be positive, got {step}"));
        }
    }
    let engine = match engine_kind {
        EngineKind::Event => {
            let cp = |c: &Option<ClassInputSpec>| matches!(c, Some(ClassInputSpec::CompoundPoisson(_)) | None);
            if !(cp(&class1) && cp(&class2)) {
                p.push(
                    "engine",
                    "the event engine needs compound Poisson inputs; use `discrete` for stable inputs",
                );
            }
            Some(Engine::Event)
        }
        EngineKind::Discrete => match raw.step {
            Some(h) => Some(Engine::Discrete { h }),
            None => {
                p.push("step", "required by the discrete engine");
                None
            }
        },
    };

    let estimator = raw.estimator.unwrap_or(EstimatorKind::TimeAverage);
    if estimator == EstimatorKind::Regenerative && engine_kind != EngineKind::Event {
        p.push("estimator", "the regenerative estimator needs the event engine");
    }

    let replications = raw.replications.unwrap_or(1);
    if replications == 0 {
        p.push("replications", "must be at least 1");
    }
    let batches = raw.batches.unwrap_or(DEFAULT_BATCHES);
    if batches < MIN_BATCHES {
        p.push("batches", format!("need at least {MIN_BATCHES}, got {batches}"));
    }

    let mut horizon = None;
    match (raw.horizon, raw.target_level) {
        (Some(_), Some(_)) => p.push("horizon", "give either `horizon` or `target_level`, not both"),
        (Some(h), None) => {
            if h > 0.0 && h.is_finite() {
                horizon = Some(h);
            } else {
                p.push("horizon", format!("must be positive, got {h}"));
            }
        }
        (None, target) => {
            if let (Some(cfg), Some(c1), Some(c2), Some(grid)) = (&cfg, &class1, &class2, &grid) {
                let u = target.unwrap_or(*grid.levels().last().expect("non-empty grid"));
                let mu = c1.mean_rate() + c2.mean_rate();
                horizon = p.check(
                    "target_level",
                    horizon_for_level(u, cfg.c(), mu).map_err(|_| {
                        Error::Config(format!(
                            "system is overloaded (mean rate {mu} >= capacity {}); set an explicit horizon",
                            cfg.c()
                        ))
                    }),
                );
            }
        }
    }

    let tandem = raw.tandem.clone().unwrap_or_default();
    let tandem_eps = tandem.eps.unwrap_or(0.0);
    if !tandem_eps.is_finite() {
        p.push("tandem.eps", "must be finite");
    }
    let tandem_samples = raw
        .replications
        .map(u64::from)
        .or(tandem.samples)
        .unwrap_or(DEFAULT_TANDEM_SAMPLES);

    if !p.0.is_empty() {
        return Err(Error::Config(p.0.join("; ")));
    }
    let (cfg, class1, class2, grid, horizon, engine) = (
        cfg.expect("checked"),
        class1.expect("checked"),
        class2.expect("checked"),
        grid.expect("checked"),
        horizon.expect("checked"),
        engine.expect("checked"),
    );

    let burn_in = match raw.burn_in {
        Some(b) if b >= 0.0 && b < horizon => b,
        Some(b) => return Err(Error::Config(format!("burn_in: must lie in [0, horizon), got {b}"))),
        None => crate::estimation::default_burn_in(horizon).min(0.5 * horizon),
    };

    // Simulation is defined on regime boundaries; only the asymptote is not.
    match ModelSummary::from_inputs(&class1, &class2) {
        Ok(s) => {
            if let Err(e) = classify(&cfg, &s) {
                warnings.push(format!("no asymptotic regime: {e}"));
            }
            if let Some(w) = integer_index_warning(&cfg, &s) {
                warnings.push(w);
            }
        }
        Err(e) => warnings.push(format!("no asymptotic regime: {e}")),
    }

    let output = raw.output.clone().unwrap_or_default();
    Ok(ExperimentConfig {
        cfg,
        class1,
        class2,
        grid,
        horizon,
        burn_in,
        replications,
        batches,
        seed: raw.seed.unwrap_or(0),
        engine,
        estimator,
        step: raw.step,
        tandem_samples,
        tandem_eps,
        csv: output.csv,
        trajectory: output.trajectory,
        warnings,
        raw,
    })
}

impl ExperimentConfig {
    /// Canonical TOML echo of the effective configuration.
    pub fn echo(&self) -> String {
        toml::to_string(&self.raw).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[gps]
phi1 = 0.5

[class1]
family = "compound_poisson"
lambda = 0.1
jobs = "pareto"
scale = 1.0
alpha = 1.5

[class2]
family = "compound_poisson"
lambda = 0.2
jobs = "exponential"
rate = 1.0
"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_config_str(MINIMAL, &Overrides::default()).unwrap();
        assert_eq!(cfg.cfg.c(), 1.0);
        assert_eq!(cfg.cfg.phi(1), 0.5);
        assert_eq!(cfg.engine, Engine::Event);
        assert_eq!(cfg.replications, 1);
        assert_eq!(cfg.batches, DEFAULT_BATCHES);
        assert_eq!(cfg.grid.len(), 21);
        assert!(cfg.horizon >= 1e4);
        // exponential class 2 has no power-law tail
        assert!(cfg.warnings.iter().any(|w| w.contains("no asymptotic regime")));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let text = MINIMAL.replace("phi1 = 0.5", "phi1 = 0.5\nphi2 = 0.6");
        let err = parse_config_str(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("gps.phi2"), "{err}");
    }

    #[test]
    fn tail_index_one_is_rejected() {
        let text = MINIMAL.replace("alpha = 1.5", "alpha = 1.0");
        let err = parse_config_str(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("class1.alpha"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("bogus = 3\n{MINIMAL}");
        assert!(matches!(
            parse_config_str(&text, &Overrides::default()),
            Err(Error::Config(_))
        ));
        let text = MINIMAL.replace("rate = 1.0", "rate = 1.0\ncolour = 2");
        assert!(parse_config_str(&text, &Overrides::default()).is_err());
    }

    #[test]
    fn all_field_errors_reported_together() {
        let text = MINIMAL
            .replace("lambda = 0.1", "lambda = -1.0")
            .replace("rate = 1.0", "rate = 0.0");
        let err = parse_config_str(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("class1.lambda") && err.contains("class2.rate"), "{err}");
        assert!(!err.contains('\n'));
    }

    #[test]
    fn boundary_is_a_warning_not_an_error() {
        // mu2 = 0.2 * 2.5 = 0.5 = phi2 c
        let text = MINIMAL.replace(
            "jobs = \"exponential\"\nrate = 1.0",
            "jobs = \"pareto\"\nscale = 1.5\nalpha = 2.5",
        );
        let cfg = parse_config_str(&text, &Overrides::default()).unwrap();
        assert!(
            cfg.warnings.iter().any(|w| w.contains("boundary")),
            "{:?}",
            cfg.warnings
        );
    }

    #[test]
    fn stable_inputs_need_the_discrete_engine() {
        let text = MINIMAL.replace(
            "family = \"compound_poisson\"\nlambda = 0.2\njobs = \"exponential\"\nrate = 1.0",
            "family = \"stable\"\nalpha = 1.5\nbeta = 1.0\nmu = 0.2",
        );
        let err = parse_config_str(&text, &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("engine"), "{err}");
        let o = Overrides {
            engine: Some(EngineKind::Discrete),
            ..Overrides::default()
        };
        assert!(parse_config_str(&text, &o).unwrap_err().to_string().contains("step"));
        let cfg = parse_config_str(&format!("step = 0.01\n{text}"), &o).unwrap();
        assert_eq!(cfg.engine, Engine::Discrete { h: 0.01 });
    }

    #[test]
    fn overrides_take_precedence() {
        let o = Overrides {
            seed: Some(99),
            levels: Some(vec![1.0, 2.0]),
            replications: Some(3),
            ..Overrides::default()
        };
        let cfg = parse_config_str(&format!("seed = 1\n{MINIMAL}"), &o).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.grid.levels(), &[1.0, 2.0]);
        assert_eq!(cfg.replications, 3);
        assert!(cfg.echo().contains("seed = 99"));
    }
}
