//! Configured experiments: run the engines, estimate, compare with the
//! asymptotes, and write CSV reports.

mod config;
mod report;
pub mod suite;

use std::fs::File;
use std::io::BufWriter;
use std::time::{Duration, Instant};

pub use config::{
    parse_config, parse_config_str, parse_config_with, Engine, EngineKind, EstimatorKind, ExperimentConfig, Overrides,
    RawConfig,
};
pub use report::{emit_csv, read_report_csv, write_report_csv, ReportRow, REPORT_CSV_HEADER};
pub use suite::{validate_suite, CriterionOutcome};

use crate::asymptotics::{classify, stable_tail_bounds, tail_asymptote_q1, tandem_tail, ModelSummary, Scenario};
use crate::error::{Error, Result};
use crate::estimation::{
    empirical_tail, estimate_tail_time_average, CycleStats, OccupancyAccumulator, RegenerationRecorder, TailEstimate,
    DEFAULT_CONFIDENCE,
};
use crate::gps_sim::{class_stream, simulate_discrete, simulate_event_driven, simulate_tandem_v_eps, TrajectoryWriter};
use crate::levy_inputs::{ClassInputSpec, RngStream};

/// Everything needed to rerun an experiment bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub seeds: Vec<u64>,
    pub engine: String,
    /// Effective configuration as TOML.
    pub parameters: String,
    pub version: &'static str,
    pub wall_clock: Duration,
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn start(x: &ExperimentConfig, seeds: Vec<u64>) -> Self {
        let engine = match x.engine {
            Engine::Event => "event".to_string(),
            Engine::Discrete { h } => format!("discrete(h={h})"),
        };
        Self {
            seeds,
            engine,
            parameters: x.echo(),
            version: env!("CARGO_PKG_VERSION"),
            wall_clock: Duration::ZERO,
            warnings: x.warnings.clone(),
        }
    }

    /// Commented header lines, one fact per line.
    pub fn render(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = format!(
            "# gps-lab {}\n# engine: {}\n# seeds: {}\n# wall_clock_s: {:.3}\n",
            self.version,
            self.engine,
            seeds.join(","),
            self.wall_clock.as_secs_f64()
        );
        for w in &self.warnings {
            s.push_str(&format!("# warning: {w}\n"));
        }
        s.push_str(&self.parameters);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub estimates: Vec<TailEstimate>,
    pub manifest: RunManifest,
    /// Set when a run failed part-way; `rows` then hold what was gathered.
    pub error: Option<String>,
}

/// Classified regime and asymptote for a configuration, when one applies.
pub fn regime_of(x: &ExperimentConfig) -> Option<(Scenario, ModelSummary)> {
    let s = ModelSummary::from_inputs(&x.class1, &x.class2).ok()?;
    classify(&x.cfg, &s).ok().map(|sc| (sc, s))
}

fn rows_from(estimates: &[TailEstimate], x: &ExperimentConfig) -> Vec<ReportRow> {
    let regime = regime_of(x);
    estimates
        .iter()
        .map(|e| {
            let asym = regime.and_then(|(sc, s)| tail_asymptote_q1(sc, &x.cfg, &s, e.u).ok().map(|f| (sc, f)));
            ReportRow::new(e, asym.map(|(sc, f)| (f, sc.tag().to_string())))
        })
        .collect()
}

fn cp_pair(
    x: &ExperimentConfig,
) -> Result<(
    &crate::levy_inputs::CompoundPoissonSpec,
    &crate::levy_inputs::CompoundPoissonSpec,
)> {
    match (&x.class1, &x.class2) {
        (ClassInputSpec::CompoundPoisson(a), ClassInputSpec::CompoundPoisson(b)) => Ok((a, b)),
        _ => Err(Error::Unsupported(
            "the event engine needs compound Poisson inputs".into(),
        )),
    }
}

enum Pooled {
    Occupancy(OccupancyAccumulator),
    Cycles(CycleStats),
}

/// One replication; the trajectory, if requested, is written for the first.
fn replicate(x: &ExperimentConfig, r: u32, seed: u64) -> (Pooled, Result<()>) {
    let fresh = || {
        OccupancyAccumulator::new(x.grid.clone(), 0, x.burn_in, x.horizon, x.batches)
            .expect("window validated with the config")
    };
    let mut writer = match (&x.trajectory, r) {
        (Some(path), 0) => match File::create(path) {
            Ok(f) => Some(TrajectoryWriter::new(BufWriter::new(f))),
            Err(e) => {
                return (Pooled::Occupancy(fresh()), Err(e.into()));
            }
        },
        _ => None,
    };
    let (pooled, result) = match (x.engine, x.estimator) {
        (Engine::Event, EstimatorKind::Regenerative) => {
            let mut rec = RegenerationRecorder::new(x.grid.clone(), 0);
            let res = cp_pair(x)
                .and_then(|(a, b)| simulate_event_driven(&x.cfg, a, b, x.horizon, seed, (&mut rec, &mut writer)))
                .map(|_| ());
            (Pooled::Cycles(rec.stats), res)
        }
        (Engine::Event, EstimatorKind::TimeAverage) => {
            let mut acc = fresh();
            let res = cp_pair(x)
                .and_then(|(a, b)| simulate_event_driven(&x.cfg, a, b, x.horizon, seed, (&mut acc, &mut writer)))
                .map(|_| ());
            (Pooled::Occupancy(acc), res)
        }
        (Engine::Discrete { h }, _) => {
            let mut acc = fresh();
            let steps = (x.horizon / h).ceil() as u64;
            let res =
                simulate_discrete(&x.cfg, &x.class1, &x.class2, h, steps, seed, (&mut acc, &mut writer)).map(|_| ());
            (Pooled::Occupancy(acc), res)
        }
    };
    let result = match (result, writer.map(TrajectoryWriter::finish)) {
        (Err(e), _) | (Ok(()), Some(Err(e))) => Err(e),
        _ => Ok(()),
    };
    (pooled, result)
}

/// Run all replications, pool them, estimate, and attach the asymptote.
/// Replication `r` uses seed `seed + r`.
pub fn run_experiment(x: &ExperimentConfig) -> ExperimentReport {
    let started = Instant::now();
    let seeds: Vec<u64> = (0..x.replications).map(|r| x.seed.wrapping_add(u64::from(r))).collect();
    let mut manifest = RunManifest::start(x, seeds.clone());
    let mut pooled: Option<Pooled> = None;
    let mut error = None;
    for (r, &seed) in seeds.iter().enumerate() {
        let (part, res) = replicate(x, r as u32, seed);
        let merged = match (&mut pooled, &part) {
            (None, _) => {
                pooled = Some(part);
                Ok(())
            }
            (Some(Pooled::Occupancy(a)), Pooled::Occupancy(b)) => a.merge(b),
            (Some(Pooled::Cycles(a)), Pooled::Cycles(b)) => a.merge(b),
            _ => unreachable!("one estimator per experiment"),
        };
        if let Err(e) = res.and(merged) {
            error = Some(format!("replication {r} (seed {seed}): {e}"));
            break;
        }
    }
    let estimates = match pooled {
        Some(Pooled::Occupancy(acc)) => estimate_tail_time_average(&acc),
        Some(Pooled::Cycles(stats)) => stats.estimate(&x.grid, DEFAULT_CONFIDENCE),
        None => Ok(Vec::new()),
    };
    let estimates = estimates.unwrap_or_else(|e| {
        error.get_or_insert_with(|| e.to_string());
        Vec::new()
    });
    manifest.wall_clock = started.elapsed();
    ExperimentReport {
        rows: rows_from(&estimates, x),
        estimates,
        manifest,
        error,
    }
}

/// Asymptote table row: `f_asym` and, where they apply, the two-sided
/// bracket for a stable class 2 with an overloaded class 1.
#[derive(Clone, Debug, PartialEq)]
pub struct AsymptoteRow {
    pub u: f64,
    pub f_asym: f64,
    pub bounds: Option<(f64, f64)>,
    pub scenario: Scenario,
}

pub const ASYMPTOTE_CSV_HEADER: &str = "u,f_asym,bound_low,bound_high,scenario";

pub fn asymptote_table(x: &ExperimentConfig) -> Result<Vec<AsymptoteRow>> {
    let s = ModelSummary::from_inputs(&x.class1, &x.class2)?;
    let scenario = classify(&x.cfg, &s)?;
    let bounds = stable_tail_bounds(&x.cfg, &s).ok();
    x.grid
        .levels()
        .iter()
        .map(|&u| {
            Ok(AsymptoteRow {
                u,
                f_asym: tail_asymptote_q1(scenario, &x.cfg, &s, u)?,
                bounds: bounds.map(|b| b.at(u)),
                scenario,
            })
        })
        .collect()
}

pub fn write_asymptote_csv<W: std::io::Write>(mut out: W, rows: &[AsymptoteRow]) -> Result<()> {
    use crate::estimation::format_significant as f6;
    writeln!(out, "{ASYMPTOTE_CSV_HEADER}")?;
    for r in rows {
        let (lo, hi) = r.bounds.map(|(a, b)| (f6(a, 6), f6(b, 6))).unwrap_or_default();
        writeln!(out, "{},{},{lo},{hi},{}", f6(r.u, 6), f6(r.f_asym, 6), r.scenario.tag())?;
    }
    Ok(())
}

/// Tail of the tandem difference `V^eps` from i.i.d. samples, against its
/// closed form. The sampling horizon is sized for the top grid level.
pub fn run_tandem(x: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    let s = ModelSummary::from_inputs(&x.class1, &x.class2)?;
    let u_top = *x.grid.levels().last().expect("non-empty grid");
    // fail early on parameters outside the tandem regime
    tandem_tail(u_top, x.tandem_eps, &x.cfg, &s)?;
    let step = match (&x.class2, x.step) {
        (ClassInputSpec::Stable(_), None) => {
            return Err(Error::Config(
                "step: required for a stable class-2 tandem sample".into(),
            ))
        }
        (_, step) => step.unwrap_or(0.0),
    };
    let mut rng: RngStream = class_stream(x.seed, 1);
    let mut samples = Vec::with_capacity(x.tandem_samples as usize);
    let mut error = None;
    for _ in 0..x.tandem_samples {
        match simulate_tandem_v_eps(&x.class2, &x.cfg, s.mu1, x.tandem_eps, u_top, step, &mut rng) {
            Ok(v) => samples.push(v.v),
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let estimates = if samples.is_empty() {
        Vec::new()
    } else {
        empirical_tail(&samples, &x.grid)?
    };
    let rows = estimates
        .iter()
        .map(|e| {
            let f = tandem_tail(e.u, x.tandem_eps, &x.cfg, &s).ok();
            ReportRow::new(e, f.map(|f| (f, "tandem".to_string())))
        })
        .collect();
    let mut manifest = RunManifest::start(x, vec![x.seed]);
    manifest.engine = "tandem".into();
    manifest.wall_clock = started.elapsed();
    Ok(ExperimentReport {
        rows,
        estimates,
        manifest,
        error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const M_M_1: &str = r#"
seed = 11
horizon = 2e5

[gps]
phi1 = 0.5

[class1]
family = "compound_poisson"
lambda = 0.5
jobs = "exponential"
rate = 1.0

[class2]
family = "compound_poisson"
lambda = 0.0
jobs = "exponential"
rate = 1.0

[levels]
values = [1.0, 2.0, 4.0]
"#;

    #[test]
    fn single_class_run_recovers_mm1_tail() {
        let x = parse_config_str(M_M_1, &Overrides::default()).unwrap();
        let rep = run_experiment(&x);
        assert!(rep.error.is_none(), "{:?}", rep.error);
        for row in &rep.rows {
            let truth = 0.5 * (-0.5 * row.u).exp();
            assert!(
                (row.p_hat - truth).abs() < 4.0 * (row.ci_high - row.ci_low).max(1e-3),
                "{row:?}"
            );
            assert!(row.f_asym.is_none() && row.ratio.is_none());
        }
    }

    #[test]
    fn replications_pool_and_are_deterministic() {
        let o = Overrides {
            replications: Some(2),
            ..Overrides::default()
        };
        let x = parse_config_str(M_M_1, &o).unwrap();
        let a = run_experiment(&x);
        let b = run_experiment(&x);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.manifest.seeds, vec![11, 12]);
        assert!(a.manifest.render().contains("seed = 11"));
    }

    #[test]
    fn regenerative_estimator_is_consistent_with_time_average() {
        let text = format!("estimator = \"regenerative\"\n{M_M_1}");
        let x = parse_config_str(&text, &Overrides::default()).unwrap();
        let rep = run_experiment(&x);
        assert!(rep.error.is_none(), "{:?}", rep.error);
        for row in &rep.rows {
            let truth = 0.5 * (-0.5 * row.u).exp();
            assert!(
                (row.p_hat - truth).abs() < 4.0 * (row.ci_high - row.ci_low).max(1e-3),
                "{row:?}"
            );
        }
    }
}
