//! Scenario classification and closed-form large-buffer asymptotics for the
//! class-1 workload of a two-class GPS queue.
//!
//! Every asymptote has the shape `P(Q1 > u) ~ K u^{1 - alpha}` with the tail
//! coefficients `k_i` (the constant slowly varying parts) supplied by
//! [`ModelSummary`]. The compound Poisson and stable evaluators recompute the
//! same constants from the raw input parameters along their own code path.

use std::fmt;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::gps_sim::GpsConfig;
use crate::levy_inputs::{ClassInputSpec, CompoundPoissonSpec, JobDistribution, StableSpec};

/// Relative tolerance under which a rate comparison counts as a tie.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSummary {
    pub mu1: f64,
    pub mu2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub k1: f64,
    pub k2: f64,
    /// Skewness of class 2 when it is an alpha-stable motion.
    pub beta2: Option<f64>,
    pub spectrally_positive2: bool,
}

impl ModelSummary {
    pub fn from_inputs(class1: &ClassInputSpec, class2: &ClassInputSpec) -> Result<Self> {
        class1.validate()?;
        class2.validate()?;
        let t1 = class1.heavy_tail().ok_or(Error::LightTail)?;
        let t2 = class2.heavy_tail().ok_or(Error::LightTail)?;
        Ok(Self {
            mu1: class1.mean_rate(),
            mu2: class2.mean_rate(),
            alpha1: t1.index,
            alpha2: t2.index,
            k1: t1.coefficient,
            k2: t2.coefficient,
            beta2: class2.stable_beta(),
            spectrally_positive2: class2.spectrally_positive(),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu1 + self.mu2
    }

    fn validate(&self) -> Result<()> {
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(a > 1.0 && a.is_finite()) {
                return Err(Error::param(name, format!("tail index must exceed 1, got {a}")));
            }
        }
        for (name, k) in [("k1", self.k1), ("k2", self.k2)] {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("tail coefficient must be positive, got {k}"),
                ));
            }
        }
        if !(self.mu1.is_finite() && self.mu2.is_finite()) {
            return Err(Error::param("mu", "mean rates must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// `mu2 > phi2 c`.
    SecondOverloaded,
    /// `mu2 < phi2 c`, `alpha1 < alpha2`.
    FirstHeavierSecondStable,
    /// `mu1 < phi1 c`, `mu2 < phi2 c`, `alpha2 < alpha1`.
    SecondHeavierBothStable,
    /// `mu1 > phi1 c`, `alpha2 < alpha1`, class 2 spectrally positive.
    FirstOverloadedSecondHeavier,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::SecondOverloaded,
        Scenario::FirstHeavierSecondStable,
        Scenario::SecondHeavierBothStable,
        Scenario::FirstOverloadedSecondHeavier,
    ];

    /// Case number 1..=4.
    pub fn number(self) -> u8 {
        match self {
            Scenario::SecondOverloaded => 1,
            Scenario::FirstHeavierSecondStable => 2,
            Scenario::SecondHeavierBothStable => 3,
            Scenario::FirstOverloadedSecondHeavier => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Scenario> {
        Scenario::ALL.into_iter().find(|s| s.number() == n)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::SecondOverloaded => "second-overloaded",
            Scenario::FirstHeavierSecondStable => "first-heavier-second-stable",
            Scenario::SecondHeavierBothStable => "second-heavier-both-stable",
            Scenario::FirstOverloadedSecondHeavier => "first-overloaded-second-heavier",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

fn is_integer(x: f64) -> bool {
    (x - x.round()).abs() <= BOUNDARY_TOL
}

fn cmp_rate(mean: f64, guaranteed: f64, capacity: f64) -> std::cmp::Ordering {
    if (mean - guaranteed).abs() <= BOUNDARY_TOL * capacity.max(1.0) {
        std::cmp::Ordering::Equal
    } else {
        mean.partial_cmp(&guaranteed).expect("finite rates")
    }
}

/// Rate and index relations that pick the regime, shared by every evaluator.
/// `check_integer_index` applies the `alpha2 not in N` hypothesis.
fn regime(
    cfg: &GpsConfig,
    mu1: f64,
    mu2: f64,
    alpha1: f64,
    alpha2: f64,
    spectrally_positive2: bool,
    check_integer_index: bool,
) -> Result<Scenario> {
    use std::cmp::Ordering::*;
    let c = cfg.c();
    if mu1 + mu2 >= c {
        return Err(Error::Overloaded {
            mean: mu1 + mu2,
            capacity: c,
        });
    }
    let (g1, g2) = cfg.guaranteed_rates();
    match cmp_rate(mu2, g2, c) {
        Equal => Err(Error::Boundary(format!("mu2 = phi2 c = {g2}"))),
        Greater => Ok(Scenario::SecondOverloaded),
        Less => {
            if (alpha1 - alpha2).abs() <= BOUNDARY_TOL {
                return Err(Error::EqualIndex(alpha1));
            }
            if alpha1 < alpha2 {
                return Ok(Scenario::FirstHeavierSecondStable);
            }
            match cmp_rate(mu1, g1, c) {
                Equal => Err(Error::Boundary(format!("mu1 = phi1 c = {g1}"))),
                Less => Ok(Scenario::SecondHeavierBothStable),
                Greater => {
                    if !spectrally_positive2 {
                        Err(Error::Unsupported(
                            "first queue overloaded with heavier second class requires a spectrally positive class-2 input".into(),
                        ))
                    } else if check_integer_index && is_integer(alpha2) {
                        Err(Error::Unsupported(format!(
                            "tandem asymptote requires a non-integer class-2 tail index, got {alpha2}"
                        )))
                    } else {
                        Ok(Scenario::FirstOverloadedSecondHeavier)
                    }
                }
            }
        }
    }
}

/// Assign the unique regime; every boundary raises rather than picking a side.
///
/// The non-integer `alpha2` hypothesis of the overloaded-first regime is
/// enforced for stable class-2 inputs only; compound Poisson inputs get a
/// warning through [`integer_index_warning`].
pub fn classify(cfg: &GpsConfig, s: &ModelSummary) -> Result<Scenario> {
    s.validate()?;
    regime(
        cfg,
        s.mu1,
        s.mu2,
        s.alpha1,
        s.alpha2,
        s.spectrally_positive2,
        s.beta2.is_some(),
    )
}

/// Warning for the compound Poisson route, which evaluates the
/// overloaded-first regime even at integer `alpha2`.
pub fn integer_index_warning(cfg: &GpsConfig, s: &ModelSummary) -> Option<String> {
    match classify(cfg, s) {
        Ok(Scenario::FirstOverloadedSecondHeavier) if s.beta2.is_none() && is_integer(s.alpha2) => Some(format!(
            "class-2 tail index {} is an integer; the tandem asymptote is only established for non-integer indices",
            s.alpha2
        )),
        _ => None,
    }
}

fn check_scenario(scenario: Scenario, cfg: &GpsConfig, s: &ModelSummary) -> Result<()> {
    let actual = classify(cfg, s)?;
    if actual != scenario {
        return Err(Error::InconsistentScenario {
            requested: scenario.to_string(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

fn positive_level(u: f64) -> Result<()> {
    if u > 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(Error::param("u", format!("level must be positive, got {u}")))
    }
}

/// Coefficient `K` of `P(Q1 > u) ~ K u^{1 - alpha}` for the given regime.
pub fn asymptote_coefficient(scenario: Scenario, cfg: &GpsConfig, s: &ModelSummary) -> Result<f64> {
    check_scenario(scenario, cfg, s)?;
    let c = cfg.c();
    let (g1, g2) = cfg.guaranteed_rates();
    let mu = s.mu();
    Ok(match scenario {
        Scenario::SecondOverloaded => s.k1 / ((g1 - s.mu1) * (s.alpha1 - 1.0)),
        Scenario::FirstHeavierSecondStable | Scenario::SecondHeavierBothStable => {
            reduced_load_coefficient(c, mu, s.alpha1, s.k1)
        }
        Scenario::FirstOverloadedSecondHeavier => {
            ((s.mu1 - g1) / (g2 - s.mu2)).powf(s.alpha2 - 1.0) * s.k2 / ((c - mu) * (s.alpha2 - 1.0))
        }
    })
}

/// Exponent `1 - alpha` of the decay in the given regime.
pub fn asymptote_exponent(scenario: Scenario, s: &ModelSummary) -> f64 {
    match scenario {
        Scenario::FirstOverloadedSecondHeavier => 1.0 - s.alpha2,
        _ => 1.0 - s.alpha1,
    }
}

/// Shared by the two reduced-load regimes: `k1 / ((c - mu)(alpha1 - 1))`.
fn reduced_load_coefficient(c: f64, mu: f64, alpha1: f64, k1: f64) -> f64 {
    k1 / ((c - mu) * (alpha1 - 1.0))
}

/// Asymptote `f1(u)` of `P(Q1 > u)`.
pub fn tail_asymptote_q1(scenario: Scenario, cfg: &GpsConfig, s: &ModelSummary, u: f64) -> Result<f64> {
    positive_level(u)?;
    let k = asymptote_coefficient(scenario, cfg, s)?;
    Ok(k * u.powf(asymptote_exponent(scenario, s)))
}

/// `c_alpha = (1 - alpha) / (2 Gamma(2 - alpha) cos(pi alpha / 2))`, the
/// constant in `P(Z(1) > x) ~ c_alpha (1 + beta) x^{-alpha}` for unit-scale
/// stable motions.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(Error::param(
            "alpha",
            format!("c_alpha needs alpha in (1, 2), got {alpha}"),
        ));
    }
    Ok((1.0 - alpha) / (2.0 * gamma(2.0 - alpha) * (std::f64::consts::PI * alpha / 2.0).cos()))
}

fn pareto_job_constant(spec: &CompoundPoissonSpec) -> Result<(f64, f64)> {
    spec.validate()?;
    match spec.jobs {
        JobDistribution::Pareto { scale, alpha } => Ok((alpha, scale.powf(alpha))),
        _ => Err(Error::LightTail),
    }
}

/// Compound Poisson evaluator: `lambda_i` times the job-tail constant `L_i`.
pub fn cp_asymptote(
    case: Scenario,
    cfg: &GpsConfig,
    class1: &CompoundPoissonSpec,
    class2: &CompoundPoissonSpec,
    u: f64,
) -> Result<f64> {
    positive_level(u)?;
    let (a1, l1) = pareto_job_constant(class1)?;
    let (a2, l2) = pareto_job_constant(class2)?;
    let (mu1, mu2) = (class1.mean_rate(), class2.mean_rate());
    let actual = regime(cfg, mu1, mu2, a1, a2, true, false)?;
    if actual != case {
        return Err(Error::InconsistentScenario {
            requested: case.to_string(),
            actual: actual.to_string(),
        });
    }
    let c = cfg.c();
    let (g1, g2) = cfg.guaranteed_rates();
    let mu = mu1 + mu2;
    Ok(match case {
        Scenario::SecondOverloaded => class1.lambda / (g1 - mu1) / (a1 - 1.0) * u.powf(1.0 - a1) * l1,
        Scenario::FirstHeavierSecondStable | Scenario::SecondHeavierBothStable => {
            class1.lambda / (c - mu) / (a1 - 1.0) * u.powf(1.0 - a1) * l1
        }
        Scenario::FirstOverloadedSecondHeavier => {
            class2.lambda / (c - mu) * ((mu1 - g1) / (g2 - mu2)).powf(a2 - 1.0) / (a2 - 1.0) * u.powf(1.0 - a2) * l2
        }
    })
}

/// Alpha-stable evaluator, both indices in (1, 2); case 4 needs `beta2 = 1`.
pub fn stable_asymptote(
    case: Scenario,
    cfg: &GpsConfig,
    class1: &StableSpec,
    class2: &StableSpec,
    u: f64,
) -> Result<f64> {
    positive_level(u)?;
    class1.validate()?;
    class2.validate()?;
    let (a1, a2) = (class1.alpha, class2.alpha);
    let ca1 = c_alpha(a1)?;
    let ca2 = c_alpha(a2)?;
    let actual = regime(cfg, class1.mu, class2.mu, a1, a2, class2.beta == 1.0, true)?;
    if actual != case {
        return Err(Error::InconsistentScenario {
            requested: case.to_string(),
            actual: actual.to_string(),
        });
    }
    let c = cfg.c();
    let (g1, g2) = cfg.guaranteed_rates();
    let (mu1, mu2) = (class1.mu, class2.mu);
    let mu = mu1 + mu2;
    Ok(match case {
        Scenario::SecondOverloaded => ca1 * (1.0 + class1.beta) / ((g1 - mu1) * (a1 - 1.0)) * u.powf(1.0 - a1),
        Scenario::FirstHeavierSecondStable | Scenario::SecondHeavierBothStable => {
            ca1 * (1.0 + class1.beta) / ((c - mu) * (a1 - 1.0)) * u.powf(1.0 - a1)
        }
        Scenario::FirstOverloadedSecondHeavier => {
            2.0 * ca2 / ((c - mu) * (a2 - 1.0)) * ((mu1 - g1) / (g2 - mu2)).powf(a2 - 1.0) * u.powf(1.0 - a2)
        }
    })
}

/// Lower and upper coefficients (multiplying `u^{1 - alpha2}`) bracketing
/// `P(Q1 > u)` when class 1 is overloaded, class 2 heavier, and class 2 a
/// stable motion of any skewness in (-1, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableTailBounds {
    pub lower: f64,
    pub upper: f64,
    pub exponent: f64,
}

impl StableTailBounds {
    pub fn at(&self, u: f64) -> (f64, f64) {
        let p = u.powf(self.exponent);
        (self.lower * p, self.upper * p)
    }
}

pub fn stable_tail_bounds(cfg: &GpsConfig, s: &ModelSummary) -> Result<StableTailBounds> {
    s.validate()?;
    let beta2 = s
        .beta2
        .ok_or_else(|| Error::Scenario("bounds apply to stable class-2 inputs".into()))?;
    if !(beta2 > -1.0 && beta2 <= 1.0) {
        return Err(Error::Scenario(format!("beta2 must lie in (-1, 1], got {beta2}")));
    }
    let c = cfg.c();
    let (g1, g2) = cfg.guaranteed_rates();
    let mu = s.mu();
    if mu >= c {
        return Err(Error::Overloaded { mean: mu, capacity: c });
    }
    if cmp_rate(s.mu1, g1, c) != std::cmp::Ordering::Greater {
        return Err(Error::Scenario(format!("bounds need mu1 > phi1 c ({} vs {g1})", s.mu1)));
    }
    if !(s.alpha2 < s.alpha1) || s.alpha2 >= 2.0 {
        return Err(Error::Scenario(format!(
            "bounds need alpha2 < alpha1 and alpha2 < 2 (got {}, {})",
            s.alpha2, s.alpha1
        )));
    }
    let ck = c_alpha(s.alpha2)? * (1.0 + beta2);
    let ratio = ((s.mu1 - g1) / g2).powf(s.alpha2 - 1.0);
    let base = ck / ((c - mu) * (s.alpha2 - 1.0));
    Ok(StableTailBounds {
        lower: base * ratio,
        upper: (base + ck / g2) * ratio,
        exponent: 1.0 - s.alpha2,
    })
}

/// Isolated single queue drained at rate `d`: `k / ((d - mu)(alpha - 1)) u^{1 - alpha}`.
pub fn isolated_tail_asymptote(u: f64, d: f64, mu: f64, alpha: f64, k: f64) -> Result<f64> {
    positive_level(u)?;
    if !(d > mu) {
        return Err(Error::UnstableQueue { rate: d, mean: mu });
    }
    Ok(k / ((d - mu) * (alpha - 1.0)) * u.powf(1.0 - alpha))
}

/// Tail of the supremum over a fixed finite window: asymptotically the
/// marginal tail of `Z(1)`, independent of the window and the drain.
pub fn finite_horizon_tail(u: f64, spec: &ClassInputSpec) -> Result<f64> {
    crate::levy_inputs::marginal_tail(spec, u)
}

/// Tail of the perturbed tandem difference `V^eps` (slow drain `c - mu1 - eps`).
pub fn tandem_tail(u: f64, eps: f64, cfg: &GpsConfig, s: &ModelSummary) -> Result<f64> {
    positive_level(u)?;
    s.validate()?;
    let c = cfg.c();
    let (g1, g2) = cfg.guaranteed_rates();
    let mu = s.mu();
    if mu >= c {
        return Err(Error::Overloaded { mean: mu, capacity: c });
    }
    if !(s.mu1 > g1) {
        return Err(Error::Scenario(format!(
            "tandem tail needs mu1 > phi1 c ({} vs {g1})",
            s.mu1
        )));
    }
    if !(s.mu2 < g2) {
        return Err(Error::Scenario(format!(
            "tandem tail needs mu2 < phi2 c ({} vs {g2})",
            s.mu2
        )));
    }
    let limit = (c - mu).min(s.mu1 - g1);
    if !(eps.abs() < limit) {
        return Err(Error::Scenario(format!("|eps| = {} must be below {limit}", eps.abs())));
    }
    if !s.spectrally_positive2 {
        return Err(Error::Scenario("class-2 input must be spectrally positive".into()));
    }
    if s.beta2.is_some() && is_integer(s.alpha2) {
        return Err(Error::Scenario(format!(
            "class-2 tail index must be non-integer, got {}",
            s.alpha2
        )));
    }
    Ok(
        ((s.mu1 - g1 + eps) / (g2 - s.mu2)).powf(s.alpha2 - 1.0) / ((c - mu - eps) * (s.alpha2 - 1.0))
            * u.powf(1.0 - s.alpha2)
            * s.k2,
    )
}
