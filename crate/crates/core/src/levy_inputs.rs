//! Levy input families feeding the two GPS classes.
//!
//! Two families are supported: compound Poisson processes (Poisson arrivals
//! carrying i.i.d. jobs) and alpha-stable Levy motions with unit scale. Both
//! expose the summary quantities the asymptotic evaluators need: the mean
//! rate, the tail index, and the constant tail coefficient `k` in
//! `P(Z(1) > u) ~ k u^{-alpha}`.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asymptotics::c_alpha;
use crate::error::{Error, Result};

/// Seeded, reproducible random stream. Distinct stream ids over the same
/// seed select non-overlapping ChaCha keystreams.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id);
        Self { seed, id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Derive an independent stream for a sub-task (e.g. one replication).
    pub fn substream(&self, offset: u64) -> RngStream {
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.id.rotate_left(32))
            ^ offset.wrapping_mul(0xD1B5_4A32_D192_ED03);
        RngStream::new(mixed, offset)
    }

    /// Uniform draw on the half-open interval (0, 1].
    #[inline]
    pub fn uniform_open_closed(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    /// Uniform draw on the open interval (0, 1).
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform_open_closed().ln() / rate
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Power-law tail `P(X > u) ~ coefficient * u^{-index}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeavyTail {
    pub index: f64,
    pub coefficient: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobDistribution {
    Pareto { scale: f64, alpha: f64 },
    Exponential { rate: f64 },
    Deterministic { size: f64 },
}

impl JobDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            JobDistribution::Pareto { scale, alpha } => {
                positive("pareto.scale", scale)?;
                if !(alpha > 1.0 && alpha.is_finite()) {
                    return Err(Error::param(
                        "pareto.alpha",
                        format!("tail index must exceed 1 (finite mean), got {alpha}"),
                    ));
                }
                Ok(())
            }
            JobDistribution::Exponential { rate } => positive("exponential.rate", rate),
            JobDistribution::Deterministic { size } => positive("deterministic.size", size),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            JobDistribution::Pareto { scale, alpha } => alpha * scale / (alpha - 1.0),
            JobDistribution::Exponential { rate } => 1.0 / rate,
            JobDistribution::Deterministic { size } => size,
        }
    }

    /// Tail of the job size itself; `None` for light-tailed distributions.
    pub fn heavy_tail(&self) -> Option<HeavyTail> {
        match *self {
            JobDistribution::Pareto { scale, alpha } => Some(HeavyTail {
                index: alpha,
                coefficient: scale.powf(alpha),
            }),
            _ => None,
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            JobDistribution::Pareto { scale, alpha } => pareto_from_uniform(scale, alpha, rng.uniform_open_closed()),
            JobDistribution::Exponential { rate } => rng.exponential(rate),
            JobDistribution::Deterministic { size } => size,
        }
    }
}

/// Inverse-CDF Pareto transform `x_m * u^{-1/alpha}` for `u` in (0, 1].
#[inline]
pub fn pareto_from_uniform(scale: f64, alpha: f64, u: f64) -> f64 {
    scale * u.powf(-1.0 / alpha)
}

pub fn sample_pareto(scale: f64, alpha: f64, rng: &mut RngStream) -> Result<f64> {
    JobDistribution::Pareto { scale, alpha }.validate()?;
    Ok(pareto_from_uniform(scale, alpha, rng.uniform_open_closed()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompoundPoissonSpec {
    pub lambda: f64,
    pub jobs: JobDistribution,
}

impl CompoundPoissonSpec {
    pub fn new(lambda: f64, jobs: JobDistribution) -> Result<Self> {
        let spec = Self { lambda, jobs };
        spec.validate()?;
        Ok(spec)
    }

    /// `lambda = 0` is allowed and describes a silent class.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(
                "lambda",
                format!("must be non-negative and finite, got {}", self.lambda),
            ));
        }
        self.jobs.validate()
    }

    pub fn mean_rate(&self) -> f64 {
        self.lambda * self.jobs.mean()
    }

    /// Arrival stream on `[0, horizon)`.
    pub fn arrivals(&self, horizon: f64, rng: RngStream) -> CpArrivalStream {
        CpArrivalStream {
            spec: *self,
            rng,
            t: 0.0,
            horizon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub size: f64,
}

/// Lazily generated compound Poisson arrivals, strictly increasing in time.
#[derive(Clone, Debug)]
pub struct CpArrivalStream {
    spec: CompoundPoissonSpec,
    rng: RngStream,
    t: f64,
    horizon: f64,
}

impl CpArrivalStream {
    /// Hand back the generator, positioned after the draws consumed so far.
    pub fn into_rng(self) -> RngStream {
        self.rng
    }
}

impl Iterator for CpArrivalStream {
    type Item = Arrival;

    #[inline]
    fn next(&mut self) -> Option<Arrival> {
        if self.spec.lambda == 0.0 {
            return None;
        }
        loop {
            let gap = self.rng.exponential(self.spec.lambda);
            let next = self.t + gap;
            if next >= self.horizon {
                self.t = self.horizon;
                return None;
            }
            if next > self.t {
                self.t = next;
                let size = self.spec.jobs.sample(&mut self.rng);
                return Some(Arrival { time: next, size });
            }
            // gap underflowed against t; redraw to keep times strictly increasing
        }
    }
}

pub fn cp_arrivals(spec: &CompoundPoissonSpec, horizon: f64, rng: RngStream) -> Result<Vec<Arrival>> {
    spec.validate()?;
    positive("horizon", horizon)?;
    Ok(spec.arrivals(horizon, rng).collect())
}

/// Alpha-stable Levy motion with unit scale: `log E e^{i theta Z(1)} =
/// -|theta|^alpha (1 - i beta sign(theta) tan(pi alpha / 2)) + i mu theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableSpec {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

impl StableSpec {
    pub fn new(alpha: f64, beta: f64, mu: f64) -> Result<Self> {
        let spec = Self { alpha, beta, mu };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::param(
                "stable.alpha",
                format!("stability index must lie in (1, 2], got {}", self.alpha),
            ));
        }
        if !(self.beta > -1.0 && self.beta <= 1.0) {
            return Err(Error::param(
                "stable.beta",
                format!("skewness must lie in (-1, 1], got {}", self.beta),
            ));
        }
        if !self.mu.is_finite() {
            return Err(Error::param("stable.mu", "drift must be finite"));
        }
        Ok(())
    }

    pub fn spectrally_positive(&self) -> bool {
        self.beta == 1.0 && self.alpha < 2.0
    }

    pub fn sampler(&self) -> StableSampler {
        StableSampler::new(*self)
    }
}

/// Chambers-Mallows-Stuck sampler with the skewness constants precomputed.
#[derive(Clone, Copy, Debug)]
pub struct StableSampler {
    spec: StableSpec,
    shift_b: f64,
    scale_s: f64,
    inv_alpha: f64,
    exponent: f64,
}

impl StableSampler {
    pub fn new(spec: StableSpec) -> Self {
        let alpha = spec.alpha;
        let bt = spec.beta * (PI * alpha / 2.0).tan();
        Self {
            spec,
            shift_b: bt.atan() / alpha,
            scale_s: (1.0 + bt * bt).powf(1.0 / (2.0 * alpha)),
            inv_alpha: 1.0 / alpha,
            exponent: (1.0 - alpha) / alpha,
        }
    }

    /// Standard stable(alpha, beta, scale 1, shift 0) variate.
    #[inline]
    pub fn standard(&self, rng: &mut RngStream) -> f64 {
        let v = PI * (rng.uniform_open() - 0.5);
        let w = -rng.uniform_open_closed().ln();
        let a = self.spec.alpha;
        let avb = a * (v + self.shift_b);
        let cos_v = v.cos();
        self.scale_s * avb.sin() / cos_v.powf(self.inv_alpha) * ((v - avb).cos() / w).powf(self.exponent)
    }

    /// Increment of the motion over a step of length `h >= 0`.
    #[inline]
    pub fn increment(&self, h: f64, rng: &mut RngStream) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        self.spec.mu * h + h.powf(self.inv_alpha) * self.standard(rng)
    }
}

pub fn sample_stable_increment(spec: &StableSpec, h: f64, rng: &mut RngStream) -> Result<f64> {
    spec.validate()?;
    if !(h >= 0.0) {
        return Err(Error::param("h", format!("time step must be non-negative, got {h}")));
    }
    Ok(spec.sampler().increment(h, rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ClassInputSpec {
    CompoundPoisson(CompoundPoissonSpec),
    Stable(StableSpec),
}

impl ClassInputSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClassInputSpec::CompoundPoisson(cp) => cp.validate(),
            ClassInputSpec::Stable(st) => st.validate(),
        }
    }

    pub fn mean_rate(&self) -> f64 {
        match self {
            ClassInputSpec::CompoundPoisson(cp) => cp.mean_rate(),
            ClassInputSpec::Stable(st) => st.mu,
        }
    }

    /// `None` for light-tailed jobs and for the Gaussian case alpha = 2.
    pub fn heavy_tail(&self) -> Option<HeavyTail> {
        match self {
            ClassInputSpec::CompoundPoisson(cp) if cp.lambda == 0.0 => None,
            ClassInputSpec::CompoundPoisson(cp) => cp.jobs.heavy_tail().map(|t| HeavyTail {
                index: t.index,
                coefficient: cp.lambda * t.coefficient,
            }),
            ClassInputSpec::Stable(st) if st.alpha < 2.0 => Some(HeavyTail {
                index: st.alpha,
                coefficient: c_alpha(st.alpha).ok()? * (1.0 + st.beta),
            }),
            ClassInputSpec::Stable(_) => None,
        }
    }

    pub fn tail_index(&self) -> Result<f64> {
        self.heavy_tail().map(|t| t.index).ok_or(Error::LightTail)
    }

    pub fn tail_coefficient(&self) -> Result<f64> {
        self.heavy_tail().map(|t| t.coefficient).ok_or(Error::LightTail)
    }

    pub fn spectrally_positive(&self) -> bool {
        match self {
            ClassInputSpec::CompoundPoisson(_) => true,
            ClassInputSpec::Stable(st) => st.spectrally_positive(),
        }
    }

    pub fn stable_beta(&self) -> Option<f64> {
        match self {
            ClassInputSpec::Stable(st) => Some(st.beta),
            ClassInputSpec::CompoundPoisson(_) => None,
        }
    }
}

/// Power-law asymptote of `P(Z(1) > u)`.
pub fn marginal_tail(spec: &ClassInputSpec, u: f64) -> Result<f64> {
    spec.validate()?;
    positive("u", u)?;
    let tail = spec.heavy_tail().ok_or(Error::LightTail)?;
    Ok(tail.coefficient * u.powf(-tail.index))
}

/// Per-step input increments for the discrete-time engine. Compound Poisson
/// arrivals inside `[k h, (k+1) h)` are lumped into step `k`, so two engines
/// driven by the same stream see identical arrivals.
#[derive(Clone, Debug)]
pub enum IncrementStream {
    CompoundPoisson {
        arrivals: CpArrivalStream,
        pending: Option<Arrival>,
        h: f64,
        step: u64,
    },
    Stable {
        sampler: StableSampler,
        rng: RngStream,
        h: f64,
    },
}

impl IncrementStream {
    pub fn new(spec: &ClassInputSpec, h: f64, steps: u64, rng: RngStream) -> Self {
        match spec {
            ClassInputSpec::CompoundPoisson(cp) => {
                let mut arrivals = cp.arrivals(h * steps as f64, rng);
                let pending = arrivals.next();
                IncrementStream::CompoundPoisson {
                    arrivals,
                    pending,
                    h,
                    step: 0,
                }
            }
            ClassInputSpec::Stable(st) => IncrementStream::Stable {
                sampler: st.sampler(),
                rng,
                h,
            },
        }
    }

    #[inline]
    pub fn next_increment(&mut self) -> f64 {
        match self {
            IncrementStream::CompoundPoisson {
                arrivals,
                pending,
                h,
                step,
            } => {
                *step += 1;
                let end = *h * *step as f64;
                let mut total = 0.0;
                while let Some(a) = *pending {
                    if a.time >= end {
                        break;
                    }
                    total += a.size;
                    *pending = arrivals.next();
                }
                total
            }
            IncrementStream::Stable { sampler, rng, h } => sampler.increment(*h, rng),
        }
    }
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive and finite, got {value}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pareto_inverse_cdf_hand_values() {
        assert_relative_eq!(pareto_from_uniform(1.0, 1.5, 0.25), 0.25f64.powf(-2.0 / 3.0));
        assert_relative_eq!(pareto_from_uniform(1.0, 1.5, 0.25), 2.519842, epsilon = 1e-6);
        assert_eq!(pareto_from_uniform(1.0, 1.5, 1.0), 1.0);
    }

    #[test]
    fn pareto_rejects_bad_parameters() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_pareto(1.0, 1.0, &mut rng).is_err());
        assert!(sample_pareto(0.0, 1.5, &mut rng).is_err());
        assert!(sample_pareto(-1.0, 2.5, &mut rng).is_err());
    }

    #[test]
    fn pareto_empirical_mean() {
        // alpha = 2.5 keeps the variance finite so the check is tight
        let mut rng = RngStream::new(11, 0);
        let n = 400_000;
        let mean: f64 = (0..n).map(|_| sample_pareto(1.0, 2.5, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert_relative_eq!(mean, 2.5 / 1.5, max_relative = 0.01);
    }

    #[test]
    fn arrival_count_follows_rate() {
        let spec = CompoundPoissonSpec::new(0.1, JobDistribution::Pareto { scale: 1.0, alpha: 1.5 }).unwrap();
        let arr = cp_arrivals(&spec, 1e6, RngStream::new(5, 1)).unwrap();
        let n = arr.len() as f64;
        assert!((n - 1e5).abs() / 1e5 < 0.01, "count {n}");
        assert!(arr.windows(2).all(|w| w[0].time < w[1].time));
        assert!(arr.iter().all(|a| a.time > 0.0 && a.time < 1e6 && a.size >= 1.0));
        // heavy-tailed mean converges slowly; 10^5 draws of Pareto(1, 1.5) land within ~5%
        let mean = arr.iter().map(|a| a.size).sum::<f64>() / n;
        assert!((mean - 3.0).abs() < 0.3, "mean job size {mean}");
    }

    #[test]
    fn vanishing_window_has_no_arrivals() {
        let spec = CompoundPoissonSpec::new(1.0, JobDistribution::Deterministic { size: 1.0 }).unwrap();
        let arr = cp_arrivals(&spec, 1e-12, RngStream::new(3, 0)).unwrap();
        assert!(arr.is_empty());
        assert!(cp_arrivals(&spec, 0.0, RngStream::new(3, 0)).is_err());
        assert!(cp_arrivals(&spec, -1.0, RngStream::new(3, 0)).is_err());
    }

    #[test]
    fn same_stream_reproduces_draws() {
        let spec = StableSpec::new(1.5, 1.0, 0.2).unwrap();
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let mut c = RngStream::new(42, 8);
        let xs: Vec<f64> = (0..100)
            .map(|_| sample_stable_increment(&spec, 0.5, &mut a).unwrap())
            .collect();
        let ys: Vec<f64> = (0..100)
            .map(|_| sample_stable_increment(&spec, 0.5, &mut b).unwrap())
            .collect();
        let zs: Vec<f64> = (0..100)
            .map(|_| sample_stable_increment(&spec, 0.5, &mut c).unwrap())
            .collect();
        assert_eq!(
            xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            ys.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(xs, zs);
    }

    #[test]
    fn stable_increment_edge_cases() {
        let spec = StableSpec::new(1.7, 0.0, 0.4).unwrap();
        let mut rng = RngStream::new(1, 1);
        assert_eq!(sample_stable_increment(&spec, 0.0, &mut rng).unwrap(), 0.0);
        assert!(sample_stable_increment(&spec, -0.1, &mut rng).is_err());
        assert!(StableSpec::new(1.0, 0.0, 0.0).is_err());
        assert!(StableSpec::new(1.5, -1.0, 0.0).is_err());
        assert!(StableSpec::new(2.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn spectral_positivity_flag() {
        assert!(StableSpec::new(1.5, 1.0, 0.0).unwrap().spectrally_positive());
        assert!(!StableSpec::new(1.5, 0.9, 0.0).unwrap().spectrally_positive());
        assert!(!StableSpec::new(2.0, 1.0, 0.0).unwrap().spectrally_positive());
    }

    #[test]
    fn marginal_tail_values() {
        let cp = ClassInputSpec::CompoundPoisson(
            CompoundPoissonSpec::new(0.1, JobDistribution::Pareto { scale: 1.0, alpha: 1.5 }).unwrap(),
        );
        assert_relative_eq!(marginal_tail(&cp, 100.0).unwrap(), 1.0e-4, max_relative = 1e-12);
        let st = ClassInputSpec::Stable(StableSpec::new(1.5, 1.0, 0.0).unwrap());
        assert_relative_eq!(marginal_tail(&st, 1.0).unwrap(), 0.398942, epsilon = 1e-6);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let v = marginal_tail(&st, 10f64.powi(k)).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-25);
        assert!(marginal_tail(&st, 0.0).is_err());
        let light = ClassInputSpec::CompoundPoisson(
            CompoundPoissonSpec::new(1.0, JobDistribution::Exponential { rate: 1.0 }).unwrap(),
        );
        assert_eq!(marginal_tail(&light, 1.0), Err(Error::LightTail));
    }

    #[test]
    fn mean_rates() {
        let cp = ClassInputSpec::CompoundPoisson(CompoundPoissonSpec {
            lambda: 0.1,
            jobs: JobDistribution::Pareto { scale: 1.0, alpha: 1.5 },
        });
        assert_relative_eq!(cp.mean_rate(), 0.3, epsilon = 1e-15);
        assert_eq!(cp.tail_index().unwrap(), 1.5);
        let st = ClassInputSpec::Stable(StableSpec {
            alpha: 1.7,
            beta: 0.0,
            mu: 0.4,
        });
        assert_eq!(st.mean_rate(), 0.4);
        assert_eq!(st.tail_index().unwrap(), 1.7);
        let det = ClassInputSpec::CompoundPoisson(CompoundPoissonSpec {
            lambda: 2.0,
            jobs: JobDistribution::Deterministic { size: 0.25 },
        });
        assert_eq!(det.mean_rate(), 0.5);
    }

    #[test]
    fn increment_stream_lumps_arrivals_by_step() {
        let spec = CompoundPoissonSpec::new(3.0, JobDistribution::Exponential { rate: 2.0 }).unwrap();
        let h = 0.25;
        let steps = 4000;
        let arrivals: Vec<_> = spec.arrivals(h * steps as f64, RngStream::new(9, 2)).collect();
        let mut stream = IncrementStream::new(&ClassInputSpec::CompoundPoisson(spec), h, steps, RngStream::new(9, 2));
        let mut expected = vec![0.0; steps as usize];
        for a in &arrivals {
            expected[(a.time / h).floor() as usize] += a.size;
        }
        for e in expected {
            assert_relative_eq!(stream.next_increment(), e, epsilon = 1e-12);
        }
    }
}
