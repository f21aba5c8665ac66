//! Stationary tail estimation from simulated paths.
//!
//! Three estimators share the [`TailEstimate`] record: the time average of an
//! exact piecewise-linear path (batch-means intervals), the regenerative
//! ratio estimator over empty-system cycles (delta-method intervals), and the
//! empirical tail of i.i.d. samples (Wilson intervals).

use std::fmt;
use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gps_sim::{PathObserver, Segment, SystemState};
use crate::levy_inputs::{ClassInputSpec, RngStream};

pub const DEFAULT_BATCHES: usize = 32;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
pub const MIN_BATCHES: usize = 10;
pub const MIN_CYCLES: u64 = 30;

const HORIZON_FLOOR: f64 = 1e4;
const HORIZON_MULTIPLIER: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelGrid {
    levels: Vec<f64>,
}

impl LevelGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::param("levels", "grid is empty"));
        }
        if levels.iter().any(|&u| !(u > 0.0 && u.is_finite())) {
            return Err(Error::param("levels", "levels must be positive and finite"));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("levels", "levels must be strictly increasing"));
        }
        Ok(Self { levels })
    }

    /// Geometric grid from `lo` to `hi` inclusive, `per_decade` points per factor 10.
    pub fn geometric(lo: f64, hi: f64, per_decade: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo) || per_decade == 0 {
            return Err(Error::param(
                "levels",
                format!("bad geometric grid [{lo}, {hi}] x {per_decade}"),
            ));
        }
        let n = ((hi / lo).log10() * per_decade as f64).round() as usize;
        let ratio = (hi / lo).powf(1.0 / n.max(1) as f64);
        let levels = (0..=n)
            .map(|i| if i == n { hi } else { lo * ratio.powi(i as i32) })
            .collect();
        Self::new(levels)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateMethod {
    TimeAverage,
    Regenerative,
    Empirical,
}

impl EstimateMethod {
    pub fn tag(self) -> &'static str {
        match self {
            EstimateMethod::TimeAverage => "time-average",
            EstimateMethod::Regenerative => "regenerative",
            EstimateMethod::Empirical => "empirical",
        }
    }
}

impl fmt::Display for EstimateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailEstimate {
    pub u: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: EstimateMethod,
    /// Batches, cycles, or samples behind the estimate.
    pub n_effective: u64,
}

impl TailEstimate {
    fn new(u: f64, p_hat: f64, half_width: f64, method: EstimateMethod, n_effective: u64) -> Self {
        let p_hat = p_hat.clamp(0.0, 1.0);
        Self {
            u,
            p_hat,
            ci_low: (p_hat - half_width).clamp(0.0, p_hat),
            ci_high: (p_hat + half_width).clamp(p_hat, 1.0),
            method,
            n_effective,
        }
    }

    /// A known probability, as a zero-width estimate.
    pub fn exact(u: f64, p: f64) -> Self {
        Self::new(u, p, 0.0, EstimateMethod::Empirical, 0)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn overlaps(&self, other: &TailEstimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

fn z_value(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::param(
            "confidence",
            format!("must lie in (0, 1), got {confidence}"),
        ));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + 0.5 * confidence))
}

/// Time spent strictly above `u` by the segment restricted to `[a, b]`.
#[inline]
fn sojourn_above(seg: &Segment, a: f64, b: f64, u: f64) -> f64 {
    let len = b - a;
    if len <= 0.0 {
        return 0.0;
    }
    let qa = seg.q_at(a);
    if seg.slope == 0.0 {
        return if qa > u { len } else { 0.0 };
    }
    // crossing time measured from a
    let cross = (u - qa) / seg.slope;
    if seg.slope < 0.0 {
        cross.clamp(0.0, len)
    } else {
        (len - cross).clamp(0.0, len)
    }
}

/// Exact sojourn time above `u` of a whole linear segment.
pub fn segment_time_above(seg: &Segment, u: f64) -> f64 {
    sojourn_above(seg, seg.t_start, seg.t_end, u)
}

/// Per-level time spent above each grid level by one queue, split into equal
/// batches over `[burn_in, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyAccumulator {
    grid: LevelGrid,
    queue: usize,
    burn_in: f64,
    horizon: f64,
    batches: usize,
    batch_len: f64,
    /// `above[b * m + l]`: time above level `l` inside batch `b`.
    above: Vec<f64>,
    /// Time above each level over the whole run, burn-in included.
    above_total: Vec<f64>,
    observed: f64,
}

/// Burn-in policy: 5% of the horizon, at least 1000 time units.
pub fn default_burn_in(horizon: f64) -> f64 {
    (0.05 * horizon).max(1e3)
}

impl OccupancyAccumulator {
    pub fn new(grid: LevelGrid, queue: usize, burn_in: f64, horizon: f64, batches: usize) -> Result<Self> {
        if queue > 1 {
            return Err(Error::param("queue", "queue index must be 0 or 1"));
        }
        if !(burn_in >= 0.0 && horizon > burn_in) {
            return Err(Error::Estimation(format!(
                "no observation window after burn-in {burn_in} within horizon {horizon}"
            )));
        }
        if batches == 0 {
            return Err(Error::param("batches", "need at least one batch"));
        }
        let m = grid.len();
        Ok(Self {
            queue,
            burn_in,
            horizon,
            batches,
            batch_len: (horizon - burn_in) / batches as f64,
            above: vec![0.0; m * batches],
            above_total: vec![0.0; m],
            observed: 0.0,
            grid,
        })
    }

    pub fn grid(&self) -> &LevelGrid {
        &self.grid
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in
    }

    pub fn observed(&self) -> f64 {
        self.observed
    }

    /// Time above each level over everything observed so far.
    pub fn total_time_above(&self) -> &[f64] {
        &self.above_total
    }

    fn batch_of(&self, t: f64) -> usize {
        (((t - self.burn_in) / self.batch_len) as usize).min(self.batches - 1)
    }

    fn add_piece(&mut self, seg: &Segment, a: f64, b: f64, batch: Option<usize>) {
        let top = seg.q_at(a).max(seg.q_at(b));
        let m = self.grid.len();
        for l in 0..m {
            let u = self.grid.levels[l];
            if u >= top {
                break;
            }
            let dt = sojourn_above(seg, a, b, u);
            self.above_total[l] += dt;
            if let Some(bi) = batch {
                self.above[bi * m + l] += dt;
            }
        }
    }

    /// Add the exact time the segment spends above every level.
    pub fn accumulate_segment(&mut self, seg: &Segment) {
        let a = seg.t_start.max(0.0);
        let b = seg.t_end.min(self.horizon);
        if b <= a {
            return;
        }
        self.observed += b - a;
        if a < self.burn_in {
            let cut = b.min(self.burn_in);
            self.add_piece(seg, a, cut, None);
            if b <= self.burn_in {
                return;
            }
        }
        let mut start = a.max(self.burn_in);
        while start < b {
            let bi = self.batch_of(start);
            let batch_end = if bi + 1 == self.batches {
                b
            } else {
                self.burn_in + (bi + 1) as f64 * self.batch_len
            };
            let end = batch_end.min(b);
            if end <= start {
                // rounding left start on a boundary
                self.add_piece(seg, start, b, Some(bi));
                break;
            }
            self.add_piece(seg, start, end, Some(bi));
            start = end;
        }
    }

    /// Add a point observation standing for the `weight` time units ending at `t`.
    pub fn accumulate_sample(&mut self, t: f64, q: f64, weight: f64) {
        let mid = t - 0.5 * weight;
        if mid < 0.0 || mid > self.horizon {
            return;
        }
        self.observed += weight;
        let batch = (mid >= self.burn_in).then(|| self.batch_of(mid));
        let m = self.grid.len();
        for l in 0..m {
            if self.grid.levels[l] >= q {
                break;
            }
            self.above_total[l] += weight;
            if let Some(bi) = batch {
                self.above[bi * m + l] += weight;
            }
        }
    }

    /// Pool another replication with the same grid, window, and batching.
    /// Pooling is order-independent.
    pub fn merge(&mut self, other: &OccupancyAccumulator) -> Result<()> {
        if self.grid != other.grid
            || self.batches != other.batches
            || self.burn_in != other.burn_in
            || self.horizon != other.horizon
            || self.queue != other.queue
        {
            return Err(Error::Estimation(
                "cannot merge accumulators with different layouts".into(),
            ));
        }
        for (x, y) in self.above.iter_mut().zip(&other.above) {
            *x += y;
        }
        for (x, y) in self.above_total.iter_mut().zip(&other.above_total) {
            *x += y;
        }
        self.observed += other.observed;
        Ok(())
    }

    fn replications(&self) -> f64 {
        (self.observed / self.horizon).round().max(1.0)
    }
}

impl PathObserver for OccupancyAccumulator {
    fn segment(&mut self, queue: usize, seg: &Segment) {
        if queue == self.queue {
            self.accumulate_segment(seg);
        }
    }

    fn sample(&mut self, state: &SystemState, weight: f64) {
        self.accumulate_sample(state.t, state.q[self.queue], weight);
    }
}

/// Time-average tail estimate with batch-means intervals at the default
/// confidence.
pub fn estimate_tail_time_average(acc: &OccupancyAccumulator) -> Result<Vec<TailEstimate>> {
    estimate_tail_time_average_at(acc, DEFAULT_CONFIDENCE)
}

pub fn estimate_tail_time_average_at(acc: &OccupancyAccumulator, confidence: f64) -> Result<Vec<TailEstimate>> {
    let window = acc.horizon - acc.burn_in;
    let expected = acc.observed - acc.burn_in * acc.replications();
    if !(window > 0.0) || expected < 0.5 * window {
        return Err(Error::Estimation(format!(
            "insufficient observation after burn-in ({expected} of {window} time units)"
        )));
    }
    let m = acc.grid.len();
    let norm = acc.batch_len * acc.replications();
    let mut out = Vec::with_capacity(m);
    for l in 0..m {
        let series: Vec<f64> = (0..acc.batches).map(|b| acc.above[b * m + l] / norm).collect();
        let p_hat = series.iter().sum::<f64>() / series.len() as f64;
        let half = if acc.batches >= MIN_BATCHES {
            let (lo, hi) = batch_means_ci(&series, confidence)?;
            0.5 * (hi - lo)
        } else {
            f64::INFINITY
        };
        out.push(TailEstimate::new(
            acc.grid.levels[l],
            p_hat,
            half,
            EstimateMethod::TimeAverage,
            acc.batches as u64,
        ));
    }
    // p_hat is monotone by construction; enforce it against rounding in the sums
    for l in 1..m {
        if out[l].p_hat > out[l - 1].p_hat {
            let p = out[l - 1].p_hat;
            out[l].p_hat = p;
            out[l].ci_low = out[l].ci_low.min(p);
            out[l].ci_high = out[l].ci_high.max(p);
        }
    }
    Ok(out)
}

/// Normal-approximation interval for the mean of batch averages.
pub fn batch_means_ci(series: &[f64], confidence: f64) -> Result<(f64, f64)> {
    let n = series.len();
    if n < MIN_BATCHES {
        return Err(Error::Estimation(format!(
            "need at least {MIN_BATCHES} batches, got {n}"
        )));
    }
    let z = z_value(confidence)?;
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half = z * (var / n as f64).sqrt();
    Ok((mean - half, mean + half))
}

/// One regeneration cycle: its length and the time spent above each level.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub length: f64,
    pub above: Vec<f64>,
}

/// Running sums for the ratio estimator, O(levels) memory.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleStats {
    n: u64,
    sum_len: f64,
    sum_len2: f64,
    sum_y: Vec<f64>,
    sum_y2: Vec<f64>,
    sum_ylen: Vec<f64>,
}

impl CycleStats {
    pub fn new(levels: usize) -> Self {
        Self {
            n: 0,
            sum_len: 0.0,
            sum_len2: 0.0,
            sum_y: vec![0.0; levels],
            sum_y2: vec![0.0; levels],
            sum_ylen: vec![0.0; levels],
        }
    }

    pub fn push(&mut self, length: f64, above: &[f64]) {
        self.n += 1;
        self.sum_len += length;
        self.sum_len2 += length * length;
        for (l, &y) in above.iter().enumerate() {
            self.sum_y[l] += y;
            self.sum_y2[l] += y * y;
            self.sum_ylen[l] += y * length;
        }
    }

    pub fn cycles(&self) -> u64 {
        self.n
    }

    /// Pool cycles from an independent replication.
    pub fn merge(&mut self, other: &CycleStats) -> Result<()> {
        if self.sum_y.len() != other.sum_y.len() {
            return Err(Error::Estimation(
                "cannot merge cycle statistics over different grids".into(),
            ));
        }
        self.n += other.n;
        self.sum_len += other.sum_len;
        self.sum_len2 += other.sum_len2;
        for l in 0..self.sum_y.len() {
            self.sum_y[l] += other.sum_y[l];
            self.sum_y2[l] += other.sum_y2[l];
            self.sum_ylen[l] += other.sum_ylen[l];
        }
        Ok(())
    }

    pub fn estimate(&self, grid: &LevelGrid, confidence: f64) -> Result<Vec<TailEstimate>> {
        if self.n < MIN_CYCLES {
            return Err(Error::Estimation(format!(
                "only {} completed regeneration cycles (need {MIN_CYCLES}); the system may be overloaded, use the time-average estimator on a regenerating queue",
                self.n
            )));
        }
        let z = z_value(confidence)?;
        let n = self.n as f64;
        let mean_len = self.sum_len / n;
        let mut prev = 1.0f64;
        Ok(grid
            .levels()
            .iter()
            .enumerate()
            .map(|(l, &u)| {
                let r = (self.sum_y[l] / self.sum_len).min(prev);
                prev = r;
                let ss = self.sum_y2[l] - 2.0 * r * self.sum_ylen[l] + r * r * self.sum_len2;
                let s = (ss.max(0.0) / (n - 1.0)).sqrt();
                TailEstimate::new(
                    u,
                    r,
                    z * s / (mean_len * n.sqrt()),
                    EstimateMethod::Regenerative,
                    self.n,
                )
            })
            .collect())
    }
}

/// Ratio estimator over completed cycles with a delta-method interval.
pub fn regenerative_estimate(cycles: &[CycleRecord], grid: &LevelGrid) -> Result<Vec<TailEstimate>> {
    let m = grid.len();
    if cycles.iter().any(|c| c.above.len() != m) {
        return Err(Error::Estimation("cycle record does not match grid".into()));
    }
    if (cycles.len() as u64) < MIN_CYCLES {
        return Err(Error::Estimation(format!(
            "only {} completed regeneration cycles (need {MIN_CYCLES})",
            cycles.len()
        )));
    }
    // two-pass residuals for the exact variance
    let z = z_value(DEFAULT_CONFIDENCE)?;
    let n = cycles.len() as f64;
    let total_len: f64 = cycles.iter().map(|c| c.length).sum();
    let mean_len = total_len / n;
    let mut prev = 1.0f64;
    Ok((0..m)
        .map(|l| {
            let r = (cycles.iter().map(|c| c.above[l]).sum::<f64>() / total_len).min(prev);
            prev = r;
            let ss: f64 = cycles.iter().map(|c| (c.above[l] - r * c.length).powi(2)).sum();
            let s = (ss / (n - 1.0)).sqrt();
            TailEstimate::new(
                grid.levels()[l],
                r,
                z * s / (mean_len * n.sqrt()),
                EstimateMethod::Regenerative,
                cycles.len() as u64,
            )
        })
        .collect())
}

/// Splits the path of one queue at arrivals that find the whole system empty.
#[derive(Clone, Debug)]
pub struct RegenerationRecorder {
    grid: LevelGrid,
    queue: usize,
    start: Option<f64>,
    current: Vec<f64>,
    pub stats: CycleStats,
}

impl RegenerationRecorder {
    pub fn new(grid: LevelGrid, queue: usize) -> Self {
        let m = grid.len();
        Self {
            grid,
            queue,
            start: None,
            current: vec![0.0; m],
            stats: CycleStats::new(m),
        }
    }

    pub fn estimate(&self) -> Result<Vec<TailEstimate>> {
        self.stats.estimate(&self.grid, DEFAULT_CONFIDENCE)
    }
}

impl PathObserver for RegenerationRecorder {
    fn segment(&mut self, queue: usize, seg: &Segment) {
        if queue != self.queue || self.start.is_none() {
            return;
        }
        let top = seg.q_start.max(seg.q_end());
        for (l, &u) in self.grid.levels.iter().enumerate() {
            if u >= top {
                break;
            }
            self.current[l] += segment_time_above(seg, u);
        }
    }

    fn arrival(&mut self, before: &SystemState, _class: usize, _size: f64) {
        if before.total() > 0.0 {
            return;
        }
        if let Some(s) = self.start {
            self.stats.push(before.t - s, &self.current);
            self.current.iter_mut().for_each(|x| *x = 0.0);
        }
        self.start = Some(before.t);
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Estimation("no samples".into()));
    }
    let z = z_value(confidence)?;
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

/// Fraction of samples strictly above each level, with Wilson intervals.
pub fn empirical_tail(samples: &[f64], grid: &LevelGrid) -> Result<Vec<TailEstimate>> {
    if samples.is_empty() {
        return Err(Error::Estimation("empirical tail needs at least one sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as u64;
    grid.levels()
        .iter()
        .map(|&u| {
            let k = n - sorted.partition_point(|&x| x <= u) as u64;
            let (lo, hi) = wilson_interval(k, n, DEFAULT_CONFIDENCE)?;
            let p = k as f64 / n as f64;
            Ok(TailEstimate {
                u,
                p_hat: p,
                ci_low: lo.min(p),
                ci_high: hi.max(p),
                method: EstimateMethod::Empirical,
                n_effective: n,
            })
        })
        .collect()
}

/// Truncation horizon `max(1e4, 10 u ln(1 + u) / (d - mu))` for suprema of a
/// path drifting down at rate `d - mu`; grows faster than `u`.
pub fn horizon_for_level(u: f64, d: f64, mu: f64) -> Result<f64> {
    if !(d > mu) {
        return Err(Error::UnstableQueue { rate: d, mean: mu });
    }
    if !(u >= 0.0 && u.is_finite()) {
        return Err(Error::param("u", format!("level must be non-negative, got {u}")));
    }
    Ok(HORIZON_FLOOR.max(HORIZON_MULTIPLIER / (d - mu) * u * (1.0 + u).ln()))
}

/// Inputs to the two-sided bracket
/// `P(V^{-eps} > u + x) P(dual <= x) <= P(Q1 > u) <= P(V^{eps} > (1 - delta) u) + P(Q1^{mu1 + eps} > delta u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SandwichInputs {
    pub p_q1: TailEstimate,
    pub p_v_minus: TailEstimate,
    pub p_dual_le_x: f64,
    pub p_v_plus: TailEstimate,
    pub p_q1_iso: TailEstimate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SandwichReport {
    pub u: f64,
    /// Smallest plausible lower side (CI low ends).
    pub lower_side: f64,
    /// Largest plausible upper side (CI high ends).
    pub upper_side: f64,
    /// `ci_high(Q1) - lower_side`; non-negative when the lower inequality holds.
    pub lower_margin: f64,
    /// `upper_side - ci_low(Q1)`; non-negative when the upper inequality holds.
    pub upper_margin: f64,
    pub pass: bool,
}

pub fn sandwich_check(inp: &SandwichInputs) -> SandwichReport {
    let lower_side = inp.p_v_minus.ci_low * inp.p_dual_le_x;
    let upper_side = inp.p_v_plus.ci_high + inp.p_q1_iso.ci_high;
    let lower_margin = inp.p_q1.ci_high - lower_side;
    let upper_margin = upper_side - inp.p_q1.ci_low;
    SandwichReport {
        u: inp.p_q1.u,
        lower_side,
        upper_side,
        lower_margin,
        upper_margin,
        pass: lower_margin >= 0.0 && upper_margin >= 0.0,
    }
}

/// Geometric observation times from `t0` to `t1`, `per_decade` per factor 10.
pub fn geometric_times(t0: f64, t1: f64, per_decade: usize) -> Result<Vec<f64>> {
    Ok(LevelGrid::geometric(t0, t1, per_decade)?.levels)
}

/// `Q^lambda(t) = sup_{0 <= s <= t} {Z(t) - Z(s) - lambda (t - s)}` at the
/// requested times: the input reflected at drain `lambda > mean` from an
/// empty start.
pub fn reflected_path_samples(
    spec: &ClassInputSpec,
    lambda: f64,
    times: &[f64],
    step: f64,
    rng: &mut RngStream,
) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let mean = spec.mean_rate();
    if !(lambda > mean) {
        return Err(Error::param(
            "lambda",
            format!("drift diagnostic needs drain above the mean rate ({lambda} vs {mean})"),
        ));
    }
    if times.windows(2).any(|w| w[0] > w[1]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Input("observation times must be sorted and non-negative".into()));
    }
    let Some(&end) = times.last() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(times.len());
    let mut pending = times.iter().peekable();
    match spec {
        ClassInputSpec::CompoundPoisson(cp) => {
            let (mut t, mut w) = (0.0, 0.0);
            let mut stream = cp.arrivals(end + f64::EPSILON * end, rng.clone());
            for a in stream.by_ref() {
                while let Some(&&s) = pending.peek() {
                    if s >= a.time {
                        break;
                    }
                    out.push((s, (w - lambda * (s - t)).max(0.0)));
                    pending.next();
                }
                w = (w - lambda * (a.time - t)).max(0.0) + a.size;
                t = a.time;
            }
            for &s in pending {
                out.push((s, (w - lambda * (s - t)).max(0.0)));
            }
            *rng = stream.into_rng();
        }
        ClassInputSpec::Stable(st) => {
            if !(step > 0.0) {
                return Err(Error::param("step", "stable paths need a positive grid step"));
            }
            let sampler = st.sampler();
            let (mut t, mut w) = (0.0, 0.0);
            for &s in times {
                while t + step <= s + 1e-12 * step {
                    w = (w + sampler.increment(step, rng) - lambda * step).max(0.0);
                    t += step;
                }
                out.push((s, w));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    pub t0: f64,
    /// `max_{t >= t0 10^k} Q(t)/t` for each decade index `k`.
    pub envelope: Vec<f64>,
    /// Geometric-mean decrease of the envelope per decade.
    pub decay_per_decade: f64,
    pub max_ratio: f64,
    /// Set when the envelope shrinks by less than a factor 2 per decade.
    pub non_decaying: bool,
}

/// Checks that `Q(t)/t` dies out: the tail envelope of the ratio must fall by
/// at least a factor 2 per decade of `t`, on geometric average.
pub fn drift_diagnostic(samples: &[(f64, f64)], t0: f64) -> Result<DriftReport> {
    if !(t0 > 0.0) {
        return Err(Error::param("t0", "start time must be positive"));
    }
    let kept: Vec<(f64, f64)> = samples.iter().copied().filter(|&(t, _)| t >= t0).collect();
    let Some(t_max) = kept.iter().map(|&(t, _)| t).reduce(f64::max) else {
        return Err(Error::Estimation(format!("no samples at or after t0 = {t0}")));
    };
    let decades = (t_max / t0).log10().floor() as usize;
    if decades == 0 {
        return Err(Error::Estimation("samples span less than one decade after t0".into()));
    }
    let envelope: Vec<f64> = (0..=decades)
        .map(|k| {
            let from = t0 * 10f64.powi(k as i32);
            kept.iter()
                .filter(|&&(t, _)| t >= from * (1.0 - 1e-12))
                .map(|&(t, q)| q / t)
                .fold(0.0, f64::max)
        })
        .collect();
    let first = envelope[0];
    let last = envelope[decades];
    let decay = if first == 0.0 || last == 0.0 {
        f64::INFINITY
    } else {
        (first / last).powf(1.0 / decades as f64)
    };
    Ok(DriftReport {
        t0,
        max_ratio: first,
        envelope,
        decay_per_decade: decay,
        non_decaying: decay < 2.0,
    })
}

/// Workload after each step of `W_k = max(W_{k-1} + x_k, 0)`, from `W_0 = 0`.
pub fn lindley_recursion(increments: &[f64]) -> Vec<f64> {
    let mut w = 0.0f64;
    increments
        .iter()
        .map(|&x| {
            w = (w + x).max(0.0);
            w
        })
        .collect()
}

/// `max_{0 <= j <= n} sum_{i > j} x_i`: the supremum of the time-reversed
/// walk, by brute force. Equal in law and pathwise (after reversal) to the
/// last Lindley value.
pub fn reversed_suffix_maximum(increments: &[f64]) -> f64 {
    (0..=increments.len())
        .map(|j| increments[j..].iter().sum::<f64>())
        .fold(0.0, f64::max)
}

/// Kolmogorov-Smirnov distance between the sample and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Estimation("no samples".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    Ok(xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    }))
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // the alternating series converges slowly here and the value is 1 to
        // double precision
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Critical distance of the one-sample test at `level` for `n` samples, with
/// the Stephens small-sample correction.
pub fn ks_critical_value(n: usize, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) || n == 0 {
        return Err(Error::param(
            "level",
            format!("need 0 < level < 1 and n > 0, got {level}, {n}"),
        ));
    }
    let (mut lo, mut hi) = (0.2, 5.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rn = (n as f64).sqrt();
    Ok(0.5 * (lo + hi) / (rn + 0.12 + 0.11 / rn))
}

/// Decimal rendering rounded to `digits` significant digits, no exponent.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1) as i32;
    let mut exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(exp - digits + 1);
    let rounded = (x / scale).round() * scale;
    if rounded.abs() >= 10f64.powi(exp + 1) {
        exp += 1;
    }
    let decimals = (digits - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, rounded)
}

pub const ESTIMATE_CSV_HEADER: &str = "u,p_hat,ci_low,ci_high,method,n_effective";

pub fn write_estimates_csv<W: Write>(mut out: W, estimates: &[TailEstimate]) -> Result<()> {
    writeln!(out, "{ESTIMATE_CSV_HEADER}")?;
    for e in estimates {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            format_significant(e.u, 6),
            format_significant(e.p_hat, 6),
            format_significant(e.ci_low, 6),
            format_significant(e.ci_high, 6),
            e.method,
            e.n_effective
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seg(t0: f64, t1: f64, q0: f64, slope: f64) -> Segment {
        Segment {
            t_start: t0,
            t_end: t1,
            q_start: q0,
            slope,
        }
    }

    #[test]
    fn segment_sojourn_examples() {
        assert_eq!(segment_time_above(&seg(0.0, 4.0, 2.0, -0.5), 1.0), 2.0);
        assert_eq!(segment_time_above(&seg(0.0, 4.0, 2.0, -0.5), 3.0), 0.0);
        assert_eq!(segment_time_above(&seg(0.0, 7.0, 5.0, 0.0), 4.0), 7.0);
        assert_eq!(segment_time_above(&seg(0.0, 4.0, 0.0, 1.0), 1.0), 3.0);
    }

    #[test]
    fn accumulator_splits_across_batches_and_burn_in() {
        let grid = LevelGrid::new(vec![1.0, 3.0]).unwrap();
        let mut acc = OccupancyAccumulator::new(grid, 0, 2.0, 12.0, 10).unwrap();
        acc.accumulate_segment(&seg(0.0, 8.0, 4.0, -0.5));
        acc.accumulate_segment(&seg(8.0, 12.0, 0.0, 0.0));
        assert_relative_eq!(acc.total_time_above()[0], 6.0);
        assert_relative_eq!(acc.total_time_above()[1], 2.0);
        let est = estimate_tail_time_average(&acc).unwrap();
        // after burn-in the path sits above 1 on [2, 6): 4 of 10 time units
        assert_relative_eq!(est[0].p_hat, 0.4, epsilon = 1e-12);
        assert_relative_eq!(est[1].p_hat, 0.0, epsilon = 1e-12);
        assert!(est[0].ci_low <= est[0].p_hat && est[0].p_hat <= est[0].ci_high);
    }

    #[test]
    fn exact_sojourns_match_fine_riemann_sum() {
        // sawtooth: jump to 3 every 4 time units, drain at slope -1
        let grid = LevelGrid::new(vec![0.5, 1.0, 2.5]).unwrap();
        let mut exact = OccupancyAccumulator::new(grid.clone(), 0, 0.0, 40.0, 10).unwrap();
        let mut riemann = exact.clone();
        let mut segs = Vec::new();
        for k in 0..10 {
            let t = 4.0 * k as f64;
            segs.push(seg(t, t + 3.0, 3.0, -1.0));
            segs.push(seg(t + 3.0, t + 4.0, 0.0, 0.0));
        }
        for s in &segs {
            exact.accumulate_segment(s);
        }
        let h = 1e-3;
        let n = (40.0 / h) as usize;
        for i in 1..=n {
            let t = i as f64 * h;
            let mid = t - 0.5 * h;
            let s = segs.iter().find(|s| s.t_start <= mid && mid < s.t_end).unwrap();
            riemann.accumulate_sample(t, s.q_at(mid), h);
        }
        for l in 0..3 {
            let e = exact.total_time_above()[l];
            let r = riemann.total_time_above()[l];
            // midpoint rule errs by at most one step per level crossing
            assert!((e - r).abs() <= 10.0 * h, "level {l}: {e} vs {r}");
        }
        assert_relative_eq!(exact.total_time_above()[0], 25.0, epsilon = 1e-9);
        assert_relative_eq!(exact.total_time_above()[2], 5.0, epsilon = 1e-9);
    }

    #[test]
    fn cycle_stats_merge_is_pooling() {
        let mut a = CycleStats::new(1);
        let mut b = CycleStats::new(1);
        let mut all = CycleStats::new(1);
        for k in 0..40 {
            let (len, y) = (1.0 + (k % 3) as f64, 0.1 * (k % 5) as f64);
            if k % 2 == 0 {
                a.push(len, &[y])
            } else {
                b.push(len, &[y])
            }
            all.push(len, &[y]);
        }
        a.merge(&b).unwrap();
        assert_eq!(a.cycles(), 40);
        let grid = LevelGrid::new(vec![1.0]).unwrap();
        let (x, y) = (a.estimate(&grid, 0.95).unwrap(), all.estimate(&grid, 0.95).unwrap());
        assert_relative_eq!(x[0].p_hat, y[0].p_hat, epsilon = 1e-12);
        assert_relative_eq!(x[0].ci_high, y[0].ci_high, epsilon = 1e-12);
        assert!(a.merge(&CycleStats::new(2)).is_err());
    }

    #[test]
    fn kolmogorov_quantiles() {
        // tabulated asymptotic critical values
        assert_relative_eq!(kolmogorov_survival(1.3581), 0.05, epsilon = 1e-4);
        assert_relative_eq!(kolmogorov_survival(1.6276), 0.01, epsilon = 1e-4);
        let n = 1_000_000;
        assert_relative_eq!(
            ks_critical_value(n, 0.01).unwrap() * (n as f64).sqrt(),
            1.6276,
            epsilon = 1e-3
        );
        let d = ks_statistic(&[0.5], |x| x).unwrap();
        assert_relative_eq!(d, 0.5);
        let uniform: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert_relative_eq!(ks_statistic(&uniform, |x| x).unwrap(), 0.0005, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn lindley_matches_reversed_suffix_maximum(xs in proptest::collection::vec(-5.0f64..5.0, 10)) {
            let w = lindley_recursion(&xs);
            let brute = reversed_suffix_maximum(&xs);
            proptest::prop_assert!((w[9] - brute).abs() <= 1e-9 * (1.0 + brute.abs()));
            proptest::prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn insufficient_window_is_an_error() {
        let grid = LevelGrid::new(vec![1.0]).unwrap();
        assert!(OccupancyAccumulator::new(grid.clone(), 0, 10.0, 10.0, 32).is_err());
        let acc = OccupancyAccumulator::new(grid, 0, 1.0, 10.0, 32).unwrap();
        assert!(matches!(estimate_tail_time_average(&acc), Err(Error::Estimation(_))));
    }

    #[test]
    fn zero_input_gives_zero_tail() {
        let grid = LevelGrid::geometric(0.1, 10.0, 10).unwrap();
        let mut acc = OccupancyAccumulator::new(grid, 0, 0.0, 100.0, 32).unwrap();
        acc.accumulate_segment(&seg(0.0, 100.0, 0.0, 0.0));
        for e in estimate_tail_time_average(&acc).unwrap() {
            assert_eq!(e.p_hat, 0.0);
            assert_eq!(e.ci_high, 0.0);
        }
    }

    #[test]
    fn batch_means_examples() {
        assert_eq!(batch_means_ci(&[2.5; 12], 0.95).unwrap(), (2.5, 2.5));
        assert!(batch_means_ci(&[1.0; 9], 0.95).is_err());
        // N(0, sigma^2) batch averages: width ~ 2 z sigma / sqrt(n)
        let mut rng = RngStream::new(99, 0);
        let sigma = 3.0;
        let n = 400;
        let series: Vec<f64> = (0..n)
            .map(|_| {
                let u1 = rng.uniform_open();
                let u2 = rng.uniform_open();
                sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let (lo, hi) = batch_means_ci(&series, 0.95).unwrap();
        let expected = 2.0 * 1.959964 * sigma / (n as f64).sqrt();
        assert!(((hi - lo) / expected - 1.0).abs() < 0.2);
    }

    #[test]
    fn regenerative_identical_cycles() {
        let grid = LevelGrid::new(vec![0.5, 1.0, 2.0]).unwrap();
        let cycles = vec![
            CycleRecord {
                length: 4.0,
                above: vec![2.0, 1.0, 0.0],
            };
            40
        ];
        let est = regenerative_estimate(&cycles, &grid).unwrap();
        assert_relative_eq!(est[0].p_hat, 0.5, epsilon = 1e-15);
        assert_relative_eq!(est[1].p_hat, 0.25, epsilon = 1e-15);
        assert_eq!(est[2].p_hat, 0.0);
        for e in &est {
            assert!(e.ci_high - e.ci_low < 1e-12);
        }
        assert!(regenerative_estimate(&cycles[..29], &grid).is_err());
        // streaming sums agree with the two-pass records
        let mut stats = CycleStats::new(3);
        for c in &cycles {
            stats.push(c.length, &c.above);
        }
        let streamed = stats.estimate(&grid, DEFAULT_CONFIDENCE).unwrap();
        for (a, b) in est.iter().zip(&streamed) {
            assert_relative_eq!(a.p_hat, b.p_hat, epsilon = 1e-15);
        }
    }

    #[test]
    fn empirical_examples() {
        let grid = LevelGrid::new(vec![0.5, 2.5, 4.0]).unwrap();
        let est = empirical_tail(&[1.0, 2.0, 3.0, 4.0], &grid).unwrap();
        assert_eq!(est[0].p_hat, 1.0);
        assert_eq!(est[1].p_hat, 0.5);
        assert_eq!(est[2].p_hat, 0.0);
        assert!(est.iter().all(|e| e.ci_low <= e.p_hat && e.p_hat <= e.ci_high));
        assert!(empirical_tail(&[], &grid).is_err());
    }

    #[test]
    fn horizon_policy() {
        // 20 * 100 * ln(101) = 9230.3 stays under the floor
        assert_relative_eq!(20.0 * 100.0 * 101f64.ln(), 9230.3, epsilon = 0.1);
        assert_eq!(horizon_for_level(100.0, 1.0, 0.5).unwrap(), 1e4);
        let big = horizon_for_level(1e4, 1.0, 0.5).unwrap();
        assert_relative_eq!(big, 20.0 * 1e4 * 10001f64.ln());
        let mut prev = 0.0;
        for k in 3..12 {
            let u = 10f64.powi(k);
            let ratio = horizon_for_level(u, 1.0, 0.5).unwrap() / u;
            assert!(ratio > prev);
            prev = ratio;
        }
        assert!(matches!(
            horizon_for_level(1.0, 0.5, 0.5),
            Err(Error::UnstableQueue { .. })
        ));
    }

    #[test]
    fn sandwich_examples() {
        let est = |p: f64| TailEstimate::exact(1.0, p);
        let r = sandwich_check(&SandwichInputs {
            p_q1: est(0.012),
            p_v_minus: est(0.01),
            p_dual_le_x: 0.9,
            p_v_plus: est(0.015),
            p_q1_iso: est(0.001),
        });
        assert!(r.pass);
        assert_relative_eq!(r.lower_side, 0.009);
        assert_relative_eq!(r.upper_side, 0.016);
        let r = sandwich_check(&SandwichInputs {
            p_q1: est(0.0),
            p_v_minus: est(0.3),
            p_dual_le_x: 0.0,
            p_v_plus: est(0.0),
            p_q1_iso: est(0.0),
        });
        assert!(r.pass);
        let r = sandwich_check(&SandwichInputs {
            p_q1: est(0.05),
            p_v_minus: est(0.01),
            p_dual_le_x: 0.9,
            p_v_plus: est(0.015),
            p_q1_iso: est(0.001),
        });
        assert!(!r.pass);
    }

    #[test]
    fn drift_flags_deterministic_linear_growth() {
        // deterministic input at rate mu2 reflected at lambda < mu2 grows linearly
        let (mu2, lambda) = (0.5, 0.3);
        let times = geometric_times(10.0, 1e5, 10).unwrap();
        let samples: Vec<_> = times.iter().map(|&t| (t, (mu2 - lambda) * t)).collect();
        let r = drift_diagnostic(&samples, 10.0).unwrap();
        assert!(r.non_decaying);
        assert_relative_eq!(r.decay_per_decade, 1.0, epsilon = 1e-12);
        assert!(matches!(drift_diagnostic(&samples, 1e6), Err(Error::Estimation(_))));
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(0.0, 6), "0");
        assert_eq!(format_significant(1.0, 6), "1.00000");
        assert_eq!(format_significant(0.18393972, 6), "0.183940");
        assert_eq!(format_significant(1234567.8, 6), "1234570");
        assert_eq!(format_significant(9.9999996, 6), "10.0000");
        assert_eq!(format_significant(-0.000123456789, 6), "-0.000123457");
        assert_eq!(format_significant(2.5e-9, 6), "0.00000000250000");
    }

    #[test]
    fn geometric_grid_shape() {
        let g = LevelGrid::geometric(1.0, 100.0, 10).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g.levels()[0], 1.0);
        assert_eq!(g.levels()[20], 100.0);
        assert_relative_eq!(g.levels()[10], 10.0, epsilon = 1e-12);
        assert!(LevelGrid::new(vec![1.0, 1.0]).is_err());
        assert!(LevelGrid::new(vec![-1.0, 1.0]).is_err());
    }
}
