//! Agent-vs-human scoring: A2C deltas, directional alignment, Bayesian
//! alignment probability, correlation, behavioral modes and the cross-run
//! bootstrap.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{journey_stats, JourneyStats, SessionLog, Termination, TerminationReason};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no logs to evaluate")]
    EmptyInput,
    #[error("no shop has a nonzero human delta")]
    NoEvaluableShops,
    #[error("shop {0} has a zero human delta")]
    ZeroHumanDelta(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least {min} Monte-Carlo samples required, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("runs do not cover the same shops and themes: {0}")]
    ShopMismatch(String),
    #[error("agent {index} is {control} in control but {treatment} in treatment")]
    UnpairedLogs { index: usize, control: String, treatment: String },
    #[error("invalid counts: {successes} successes out of {n}")]
    InvalidCounts { successes: u64, n: u64 },
    #[error("bootstrap needs at least one iteration and one size")]
    EmptyBootstrap,
}

pub const MIN_MC_SAMPLES: usize = 10_000;

/// Binomial outcome counts for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub successes: u64,
    pub n: u64,
}

impl Counts {
    pub fn new(successes: u64, n: u64) -> Result<Self, EvalError> {
        if n == 0 || successes > n {
            return Err(EvalError::InvalidCounts { successes, n });
        }
        Ok(Self { successes, n })
    }

    pub fn from_logs(logs: &[SessionLog]) -> Result<Self, EvalError> {
        Self::new(logs.iter().filter(|l| l.a2c).count() as u64, logs.len() as u64)
    }

    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmPair {
    pub control: Counts,
    pub treatment: Counts,
}

impl ArmPair {
    pub fn delta(&self) -> f64 {
        self.treatment.rate() - self.control.rate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShopResult {
    pub shop_id: String,
    /// Human A2C change, treatment minus control.
    pub human_delta: f64,
    pub agent_control: Counts,
    pub agent_treatment: Counts,
    pub per_cluster: BTreeMap<usize, ArmPair>,
}

impl ShopResult {
    pub fn agent_delta(&self) -> f64 {
        self.agent_treatment.rate() - self.agent_control.rate()
    }

    /// Counts from paired control/treatment logs.
    pub fn from_logs(
        shop_id: &str,
        human_delta: f64,
        control: &[SessionLog],
        treatment: &[SessionLog],
    ) -> Result<Self, EvalError> {
        let mut per_cluster = BTreeMap::new();
        let by_cluster = |logs: &[SessionLog]| {
            let mut m: BTreeMap<usize, (u64, u64)> = BTreeMap::new();
            for l in logs {
                let e = m.entry(l.cluster_id).or_default();
                e.0 += u64::from(l.a2c);
                e.1 += 1;
            }
            m
        };
        let (c, t) = (by_cluster(control), by_cluster(treatment));
        for (cluster, &(cs, cn)) in &c {
            if let Some(&(ts, tn)) = t.get(cluster) {
                per_cluster.insert(*cluster, ArmPair { control: Counts::new(cs, cn)?, treatment: Counts::new(ts, tn)? });
            }
        }
        Ok(Self {
            shop_id: shop_id.to_string(),
            human_delta,
            agent_control: Counts::from_logs(control)?,
            agent_treatment: Counts::from_logs(treatment)?,
            per_cluster,
        })
    }
}

pub fn a2c_rate(logs: &[SessionLog]) -> Result<f64, EvalError> {
    if logs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(logs.iter().filter(|l| l.a2c).count() as f64 / logs.len() as f64)
}

fn same_sign(agent: f64, human: f64) -> bool {
    agent != 0.0 && human != 0.0 && agent.signum() == human.signum()
}

/// Percentage of shops (nonzero human delta only) whose agent delta has the
/// human delta's sign. A zero agent delta is misaligned.
pub fn alignment_rate(shops: &[ShopResult]) -> Result<f64, EvalError> {
    let evaluable: Vec<&ShopResult> = shops.iter().filter(|s| s.human_delta != 0.0).collect();
    if evaluable.is_empty() {
        return Err(EvalError::NoEvaluableShops);
    }
    let aligned = evaluable.iter().filter(|s| same_sign(s.agent_delta(), s.human_delta)).count();
    Ok(100.0 * aligned as f64 / evaluable.len() as f64)
}

/// Monte-Carlo posterior probability that the agent effect points the same
/// way as the human one, under independent Beta(1,1)-prior binomial models.
pub fn alignment_probability(shop: &ShopResult, mc_samples: usize, seed: u64) -> Result<f64, EvalError> {
    if shop.human_delta == 0.0 {
        return Err(EvalError::ZeroHumanDelta(shop.shop_id.clone()));
    }
    if mc_samples < MIN_MC_SAMPLES {
        return Err(EvalError::TooFewSamples { min: MIN_MC_SAMPLES, got: mc_samples });
    }
    let posterior = |c: Counts| {
        Beta::new(1.0 + c.successes as f64, 1.0 + (c.n - c.successes) as f64).expect("shape parameters are >= 1")
    };
    let (bc, bt) = (posterior(shop.agent_control), posterior(shop.agent_treatment));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = 0usize;
    for _ in 0..mc_samples {
        let pc = bc.sample(&mut rng);
        let pt = bt.sample(&mut rng);
        if (shop.human_delta > 0.0 && pt > pc) || (shop.human_delta < 0.0 && pc > pt) {
            wins += 1;
        }
    }
    Ok(wins as f64 / mc_samples as f64)
}

/// Product-moment correlation. `Ok(None)` when either side has zero
/// variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Ok(None);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    pearson(&ranks(xs), &ranks(ys))
}

/// Slope of the least-squares line `y = a + b x`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Ok(None);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Ok(None);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(Some(sxy / sxx))
}

/// Two-sided 99% normal critical value.
pub const Z_99: f64 = 2.575_829_303_548_901;
/// One-sided 1% normal critical value.
pub const Z_ONE_SIDED_01: f64 = 2.326_347_874_040_841;

/// Pooled two-proportion z statistic for treatment minus control.
pub fn two_proportion_z(pair: &ArmPair) -> Option<f64> {
    let (c, t) = (pair.control, pair.treatment);
    let pooled = (c.successes + t.successes) as f64 / (c.n + t.n) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / c.n as f64 + 1.0 / t.n as f64)).sqrt();
    (se > 0.0).then(|| pair.delta() / se)
}

/// Half-width of the 99% band for a null difference of two rates.
pub fn null_noise_band(pair: &ArmPair) -> f64 {
    let (c, t) = (pair.control, pair.treatment);
    let pooled = (c.successes + t.successes) as f64 / (c.n + t.n) as f64;
    Z_99 * (pooled * (1.0 - pooled) * (1.0 / c.n as f64 + 1.0 / t.n as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BehavioralMode {
    ProductNotFound,
    NoA2CDecision,
    FailedToAdd,
    StuckInLoop,
    PriceRejection,
    ThemeExit,
    Other,
}

impl BehavioralMode {
    pub const ALL: [BehavioralMode; 7] = [
        BehavioralMode::ProductNotFound,
        BehavioralMode::NoA2CDecision,
        BehavioralMode::FailedToAdd,
        BehavioralMode::StuckInLoop,
        BehavioralMode::PriceRejection,
        BehavioralMode::ThemeExit,
        BehavioralMode::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BehavioralMode::ProductNotFound => "Product Not Found",
            BehavioralMode::NoA2CDecision => "No A2C Decision",
            BehavioralMode::FailedToAdd => "Failed to Add",
            BehavioralMode::StuckInLoop => "Stuck in Loop",
            BehavioralMode::PriceRejection => "Price Rejection",
            BehavioralMode::ThemeExit => "Theme Exit",
            BehavioralMode::Other => "Other",
        }
    }
}

fn cart_add_failed(log: &SessionLog) -> bool {
    log.entries.iter().any(|e| e.error.as_deref().is_some_and(|m| m.starts_with("out_of_stock")))
}

/// Why a session ended without the outcome, first matching rule wins.
pub fn classify_behavior(log: &SessionLog) -> BehavioralMode {
    let ended = |r: TerminationReason| log.termination == Termination::AgentTerminated { reason: r };
    if log.termination == Termination::LoopGuard {
        BehavioralMode::StuckInLoop
    } else if log.exited_store {
        BehavioralMode::ThemeExit
    } else if ended(TerminationReason::PriceTooHigh) {
        BehavioralMode::PriceRejection
    } else if cart_add_failed(log) {
        BehavioralMode::FailedToAdd
    } else if ended(TerminationReason::NoSuitableProduct) {
        BehavioralMode::ProductNotFound
    } else if ended(TerminationReason::NoA2CDecision) {
        BehavioralMode::NoA2CDecision
    } else {
        BehavioralMode::Other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralDistribution {
    /// Agents whose outcome differs between themes.
    pub differing_agents: usize,
    pub counts: BTreeMap<BehavioralMode, usize>,
    pub shares: BTreeMap<BehavioralMode, f64>,
    /// Set when no agent's outcome changed; counts and shares are empty.
    pub no_differing_agents: bool,
}

impl BehavioralDistribution {
    pub fn share(&self, mode: BehavioralMode) -> f64 {
        self.shares.get(&mode).copied().unwrap_or(0.0)
    }
}

/// Classifies the non-A2C side of every agent whose A2C outcome differs
/// between the two themes. Logs are paired by position.
pub fn behavioral_distribution(
    control: &[SessionLog],
    treatment: &[SessionLog],
) -> Result<BehavioralDistribution, EvalError> {
    if control.len() != treatment.len() {
        return Err(EvalError::LengthMismatch(control.len(), treatment.len()));
    }
    let mut counts: BTreeMap<BehavioralMode, usize> = BTreeMap::new();
    let mut differing = 0;
    for (i, (c, t)) in control.iter().zip(treatment).enumerate() {
        if c.profile_id != t.profile_id {
            return Err(EvalError::UnpairedLogs { index: i, control: c.profile_id.clone(), treatment: t.profile_id.clone() });
        }
        if c.a2c == t.a2c {
            continue;
        }
        differing += 1;
        let loser = if c.a2c { t } else { c };
        *counts.entry(classify_behavior(loser)).or_default() += 1;
    }
    let shares = counts.iter().map(|(m, &n)| (*m, n as f64 / differing as f64)).collect();
    Ok(BehavioralDistribution { differing_agents: differing, counts, shares, no_differing_agents: differing == 0 })
}

/// Per-agent A2C outcomes of one run, keyed by shop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmOutcomes {
    pub control: Vec<bool>,
    pub treatment: Vec<bool>,
}

impl ArmOutcomes {
    pub fn from_logs(control: &[SessionLog], treatment: &[SessionLog]) -> Self {
        Self { control: control.iter().map(|l| l.a2c).collect(), treatment: treatment.iter().map(|l| l.a2c).collect() }
    }
}

pub type RunOutcomes = BTreeMap<String, ArmOutcomes>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Summary {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: percentile(&v, 0.5),
        p10: percentile(&v, 0.1),
        p90: percentile(&v, 0.9),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub size: usize,
    /// Share of shops whose two resampled deltas have the same nonzero sign.
    pub sign_alignment: Summary,
    /// Cross-run correlation of per-shop deltas; `None` if never defined.
    pub correlation: Option<Summary>,
    pub correlation_undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub sizes: Vec<usize>,
    pub rows: Vec<BootstrapRow>,
    pub iterations: usize,
    pub seed: u64,
}

/// Sample rate of `size` draws with replacement from `outcomes`. Only the
/// success count matters, so this draws it directly from Binomial(size, p).
fn resample_rate(outcomes: &[bool], size: usize, rng: &mut ChaCha8Rng) -> f64 {
    let p = outcomes.iter().filter(|&&a| a).count() as f64 / outcomes.len() as f64;
    let k = Binomial::new(size as u64, p).expect("p in [0, 1]").sample(rng);
    k as f64 / size as f64
}

/// Cross-run self-consistency of per-shop deltas at each agent count.
pub fn bootstrap_analysis(
    run1: &RunOutcomes,
    run2: &RunOutcomes,
    sizes: &[usize],
    iterations: usize,
    seed: u64,
) -> Result<BootstrapReport, EvalError> {
    if iterations == 0 || sizes.is_empty() || sizes.contains(&0) {
        return Err(EvalError::EmptyBootstrap);
    }
    if run1.keys().ne(run2.keys()) {
        return Err(EvalError::ShopMismatch("shop sets differ".into()));
    }
    if run1.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    for (shop, arms) in run1.iter().chain(run2) {
        if arms.control.is_empty() || arms.treatment.is_empty() {
            return Err(EvalError::ShopMismatch(format!("shop {shop} is missing a theme")));
        }
    }
    let rows = sizes
        .iter()
        .map(|&size| {
            let draws: Vec<(f64, Option<f64>)> = (0..iterations)
                .into_par_iter()
                .map(|it| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[size as u64, it as u64]));
                    let mut d1 = Vec::with_capacity(run1.len());
                    let mut d2 = Vec::with_capacity(run1.len());
                    for (a, b) in run1.values().zip(run2.values()) {
                        d1.push(resample_rate(&a.treatment, size, &mut rng) - resample_rate(&a.control, size, &mut rng));
                        d2.push(resample_rate(&b.treatment, size, &mut rng) - resample_rate(&b.control, size, &mut rng));
                    }
                    let agree = d1.iter().zip(&d2).filter(|(x, y)| same_sign(**x, **y)).count();
                    let corr = pearson(&d1, &d2).expect("equal lengths");
                    (agree as f64 / d1.len() as f64, corr)
                })
                .collect();
            let signs: Vec<f64> = draws.iter().map(|d| d.0).collect();
            let corrs: Vec<f64> = draws.iter().filter_map(|d| d.1).collect();
            BootstrapRow {
                size,
                sign_alignment: summarize(&signs).expect("iterations >= 1"),
                correlation: summarize(&corrs),
                correlation_undefined: iterations - corrs.len(),
            }
        })
        .collect();
    Ok(BootstrapReport { sizes: sizes.to_vec(), rows, iterations, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mc_samples: 100_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub alignment_rate: f64,
    pub alignment_probability: f64,
    pub pearson: Option<f64>,
    pub per_cluster_pearson: BTreeMap<usize, Option<f64>>,
    pub shops_evaluated: usize,
    pub shops_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShopReport {
    pub shop_id: String,
    pub human_delta: f64,
    pub agent_delta: f64,
    pub agent_control_rate: f64,
    pub agent_treatment_rate: f64,
    /// `None` for shops excluded by a zero human delta.
    pub alignment_prob: Option<f64>,
    /// Half-width of the 99% null band around zero.
    pub noise_band: f64,
    pub within_noise: bool,
    pub behavioral_distribution: Option<BehavioralDistribution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metrics: Metrics,
    pub per_shop: Vec<ShopReport>,
    pub scatter: Vec<ScatterPoint>,
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub journey: Option<JourneyStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapReport>,
}

/// Control and treatment logs of one shop, paired by agent index.
#[derive(Debug, Clone, PartialEq)]
pub struct ShopLogs {
    pub shop_id: String,
    pub human_delta: f64,
    pub control: Vec<SessionLog>,
    pub treatment: Vec<SessionLog>,
}

/// Aggregate metrics and plot data from per-shop counts.
pub fn evaluate_results(
    results: &[ShopResult],
    distributions: &BTreeMap<String, BehavioralDistribution>,
    config: &EvalConfig,
) -> Result<EvaluationReport, EvalError> {
    let alignment_rate = alignment_rate(results)?;
    let evaluable: Vec<&ShopResult> = results.iter().filter(|s| s.human_delta != 0.0).collect();
    let probs: Vec<f64> = evaluable
        .par_iter()
        .map(|s| alignment_probability(s, config.mc_samples, derive_seed(config.seed, &[crate::seed::hash_str(&s.shop_id)])))
        .collect::<Result<_, _>>()?;
    let xs: Vec<f64> = evaluable.iter().map(|s| s.agent_delta()).collect();
    let ys: Vec<f64> = evaluable.iter().map(|s| s.human_delta).collect();

    let clusters: std::collections::BTreeSet<usize> =
        evaluable.iter().flat_map(|s| s.per_cluster.keys().copied()).collect();
    let mut per_cluster_pearson = BTreeMap::new();
    for c in clusters {
        let (cx, cy): (Vec<f64>, Vec<f64>) =
            evaluable.iter().filter_map(|s| s.per_cluster.get(&c).map(|p| (p.delta(), s.human_delta))).unzip();
        per_cluster_pearson.insert(c, pearson(&cx, &cy)?);
    }

    let mut prob_iter = probs.iter();
    let per_shop = results
        .iter()
        .map(|s| {
            let pair = ArmPair { control: s.agent_control, treatment: s.agent_treatment };
            let band = null_noise_band(&pair);
            ShopReport {
                shop_id: s.shop_id.clone(),
                human_delta: s.human_delta,
                agent_delta: s.agent_delta(),
                agent_control_rate: s.agent_control.rate(),
                agent_treatment_rate: s.agent_treatment.rate(),
                alignment_prob: if s.human_delta != 0.0 { prob_iter.next().copied() } else { None },
                noise_band: band,
                within_noise: s.agent_delta().abs() <= band,
                behavioral_distribution: distributions.get(&s.shop_id).cloned(),
            }
        })
        .collect();

    Ok(EvaluationReport {
        metrics: Metrics {
            alignment_rate,
            alignment_probability: probs.iter().sum::<f64>() / probs.len() as f64,
            pearson: pearson(&xs, &ys)?,
            per_cluster_pearson,
            shops_evaluated: evaluable.len(),
            shops_excluded: results.len() - evaluable.len(),
        },
        per_shop,
        scatter: xs.iter().zip(&ys).map(|(&x, &y)| ScatterPoint { x, y }).collect(),
        slope: least_squares_slope(&xs, &ys)?,
        journey: None,
        bootstrap: None,
    })
}

pub fn evaluate(shops: &[ShopLogs], config: &EvalConfig) -> Result<EvaluationReport, EvalError> {
    if shops.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut results = Vec::with_capacity(shops.len());
    let mut dists = BTreeMap::new();
    for s in shops {
        results.push(ShopResult::from_logs(&s.shop_id, s.human_delta, &s.control, &s.treatment)?);
        dists.insert(s.shop_id.clone(), behavioral_distribution(&s.control, &s.treatment)?);
    }
    let mut report = evaluate_results(&results, &dists, config)?;
    let all: Vec<SessionLog> = shops.iter().flat_map(|s| s.control.iter().chain(&s.treatment).cloned()).collect();
    report.journey = journey_stats(&all).ok();
    Ok(report)
}

#[cfg(test)]
mod tests;
