//! Censoring-aware metrics, sampled time estimates, the region occlusion
//! sweep and the synthetic coverage check.

use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::data::{FeatureBag, SurvivalRecord, TimeNormalizer};
use crate::error::{Error, Result};
use crate::generator::{lower_median, Generator};
use crate::losses::{sl_loss, SlPair};
use crate::parallel;
use crate::rng::{self, stream, Rng};
use crate::synth::Truth;
use crate::tensors::BagTensors;

/// One patient for the concordance index: higher `risk` means an earlier
/// expected event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub t: f64,
    pub delta: u8,
    pub risk: f64,
}

/// Pair tallies behind a concordance index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub comparable: u64,
    pub concordant: u64,
    pub tied: u64,
}

impl PairCounts {
    pub fn c_index(&self) -> Result<f64> {
        if self.comparable == 0 {
            return Err(Error::CIndexUndefined);
        }
        Ok((self.concordant as f64 + 0.5 * self.tied as f64) / self.comparable as f64)
    }
}

/// Fenwick tree of counts over risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn insert(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Number of inserted ranks strictly below `rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut total = 0;
        while i > 0 {
            total += self.0[i];
            i -= i & i.wrapping_neg();
        }
        total
    }
}

/// Harrell's pair counts in O(n log n). A pair (i, j) is comparable when
/// `t_i < t_j` and patient i had the event; it is concordant when
/// `risk_i > risk_j`, tied when the risks are equal.
pub fn pair_counts(records: &[RiskRecord]) -> PairCounts {
    let mut risks: Vec<f64> = records.iter().map(|r| r.risk).collect();
    risks.sort_by(f64::total_cmp);
    risks.dedup_by(|a, b| a.total_cmp(b).is_eq());
    let rank = |r: f64| risks.partition_point(|x| x.total_cmp(&r).is_lt());

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].t.total_cmp(&records[a].t));

    let mut later = Fenwick::new(risks.len());
    let mut n_later = 0u64;
    let mut counts = PairCounts::default();
    let mut start = 0;
    while start < order.len() {
        let t = records[order[start]].t;
        let end = start + order[start..].iter().take_while(|&&i| records[i].t.total_cmp(&t).is_eq()).count();
        for &i in &order[start..end] {
            if records[i].delta == 0 {
                let k = rank(records[i].risk);
                let lower = later.below(k);
                counts.comparable += n_later;
                counts.concordant += lower;
                counts.tied += later.below(k + 1) - lower;
            }
        }
        for &i in &order[start..end] {
            later.insert(rank(records[i].risk));
            n_later += 1;
        }
        start = end;
    }
    counts
}

pub fn c_index(records: &[RiskRecord]) -> Result<f64> {
    pair_counts(records).c_index()
}

/// Sampled-estimate error on medians; same form as the supervision loss.
pub fn mae(pairs: &[SlPair]) -> f64 {
    sl_loss(pairs)
}

/// Anything that can draw normalized time estimates for a bag.
pub trait TimeEstimator: Sync {
    fn draw_times(&self, bag: &FeatureBag, n_draws: usize, rng: &mut Rng) -> Result<Vec<f64>>;
}

impl TimeEstimator for Generator {
    fn draw_times(&self, bag: &FeatureBag, n_draws: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        let tensors = BagTensors::new(bag)?;
        Ok(self.estimate_time(&tensors, n_draws, rng)?.draws)
    }
}

/// Samples the generating law of a synthetic cohort, normalized like the labels.
pub struct OracleEstimator<'a> {
    pub truth: &'a Truth,
    pub normalizer: TimeNormalizer,
}

impl TimeEstimator for OracleEstimator<'_> {
    fn draw_times(&self, bag: &FeatureBag, n_draws: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        (0..n_draws)
            .map(|_| Ok(self.normalizer.apply(self.truth.sample(&bag.patient_id, rng)?)))
            .collect()
    }
}

/// A bag with its label, for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub bag: &'a FeatureBag,
    pub record: SurvivalRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEstimate {
    pub patient_id: String,
    pub draws: Vec<f64>,
    pub median: f64,
    pub t: f64,
    pub delta: u8,
}

impl PatientEstimate {
    pub fn risk_record(&self) -> RiskRecord {
        RiskRecord {
            t: self.t,
            delta: self.delta,
            risk: -self.median,
        }
    }

    pub fn sl_pair(&self) -> SlPair {
        SlPair::new(self.median, self.t, self.delta)
    }
}

/// Draws `n_draws` estimates per patient. Patient `i` always uses the
/// stream `(seed, EVAL, i)`, so results do not depend on thread count.
pub fn predict<E: TimeEstimator + ?Sized>(est: &E, items: &[EvalItem<'_>], n_draws: usize, seed: u64) -> Result<Vec<PatientEstimate>> {
    if n_draws == 0 {
        return Err(Error::Config("n_draws must be at least 1".into()));
    }
    parallel::map_range(items.len(), |i| {
        let item = &items[i];
        let mut rng = rng::rng_for(seed, &[stream::EVAL, i as u64]);
        let draws = est.draw_times(item.bag, n_draws, &mut rng)?;
        Ok(PatientEstimate {
            patient_id: item.bag.patient_id.clone(),
            median: lower_median(&draws),
            draws,
            t: item.record.t,
            delta: item.record.delta,
        })
    })
    .into_iter()
    .collect()
}

pub fn c_index_of(estimates: &[PatientEstimate]) -> Result<f64> {
    let records: Vec<RiskRecord> = estimates.iter().map(PatientEstimate::risk_record).collect();
    c_index(&records)
}

pub fn mae_of(estimates: &[PatientEstimate]) -> f64 {
    let pairs: Vec<SlPair> = estimates.iter().map(PatientEstimate::sl_pair).collect();
    mae(&pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionPoint {
    pub mask_ratio: f64,
    pub c_index: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub seed: u64,
    pub n_draws: usize,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub c_index: f64,
    pub mae: f64,
    pub patients: Vec<PatientEstimate>,
    pub occlusion: Vec<OcclusionPoint>,
    /// Interval coverage of the true times, when a truth sidecar was given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    pub metadata: EvalMeta,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn evaluate<E: TimeEstimator + ?Sized>(est: &E, items: &[EvalItem<'_>], n_draws: usize, seed: u64) -> Result<EvalReport> {
    let patients = predict(est, items, n_draws, seed)?;
    Ok(EvalReport {
        c_index: c_index_of(&patients)?,
        mae: mae_of(&patients),
        patients,
        occlusion: Vec::new(),
        coverage: None,
        metadata: EvalMeta {
            seed,
            n_draws,
            checkpoint: None,
        },
    })
}

/// Regions left after masking a fraction `ratio` of `n_regions`:
/// `⌈(1 − ratio)·n_regions⌉`, at least one.
pub fn regions_kept(n_regions: usize, ratio: f64) -> usize {
    // Tolerance absorbs products like (1 - 0.99) * 100 = 1.0000000000000009.
    let exact = (1.0 - ratio) * n_regions as f64;
    ((exact - 1e-9).ceil().max(1.0) as usize).min(n_regions)
}

/// Drops whole regions at random so that [`regions_kept`] remain; kept
/// regions stay in their original order.
pub fn occlude_bag(bag: &FeatureBag, ratio: f64, rng: &mut Rng) -> FeatureBag {
    let n = bag.n_regions();
    let k = regions_kept(n, ratio);
    if k == n {
        return bag.clone();
    }
    let mut keep = index::sample(rng, n, k).into_vec();
    keep.sort_unstable();
    bag.keep_regions(&keep)
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    match ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        Some(r) => Err(Error::Config(format!("mask ratio {r} outside [0, 1)"))),
        None => Ok(()),
    }
}

/// C-index and MAE after region occlusion at each ratio. Masks for ratio
/// `k` and patient `i` come from `(seed, OCCLUDE, k, i)`; estimate draws
/// reuse the unmasked streams, so ratio 0 reproduces [`evaluate`] exactly.
pub fn occlusion_sweep<E: TimeEstimator + ?Sized>(
    est: &E,
    items: &[EvalItem<'_>],
    ratios: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<OcclusionPoint>> {
    check_ratios(ratios)?;
    ratios
        .iter()
        .enumerate()
        .map(|(k, &ratio)| {
            let bags = parallel::map_range(items.len(), |i| {
                let mut rng = rng::rng_for(seed, &[stream::OCCLUDE, k as u64, i as u64]);
                occlude_bag(items[i].bag, ratio, &mut rng)
            });
            let occluded: Vec<EvalItem<'_>> = bags
                .iter()
                .zip(items)
                .map(|(bag, item)| EvalItem { bag, record: item.record })
                .collect();
            let estimates = predict(est, &occluded, n_draws, seed)?;
            Ok(OcclusionPoint {
                mask_ratio: ratio,
                c_index: c_index_of(&estimates)?,
                mae: mae_of(&estimates),
            })
        })
        .collect()
}

pub fn write_occlusion_csv(points: &[OcclusionPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of patients whose true event time (normalized) falls inside
/// the empirical `[probs.0, probs.1]` quantile interval of the draws.
pub fn coverage_check<E: TimeEstimator + ?Sized>(
    est: &E,
    bags: &[&FeatureBag],
    truth: Option<&Truth>,
    normalizer: &TimeNormalizer,
    probs: (f64, f64),
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    let truth = truth.ok_or(Error::MissingTruth)?;
    let (lo, hi) = probs;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!("invalid coverage probabilities ({lo}, {hi})")));
    }
    if bags.is_empty() || n_draws == 0 {
        return Err(Error::Config("coverage needs at least one bag and one draw".into()));
    }
    let inside = parallel::map_range(bags.len(), |i| -> Result<bool> {
        let bag = bags[i];
        let target = normalizer.apply(truth.patient(&bag.patient_id)?.t_star);
        let mut rng = rng::rng_for(seed, &[stream::EVAL, i as u64]);
        let mut data = Data::new(est.draw_times(bag, n_draws, &mut rng)?);
        Ok(data.quantile(lo) <= target && target <= data.quantile(hi))
    })
    .into_iter()
    .collect::<Result<Vec<bool>>>()?;
    Ok(inside.iter().filter(|&&b| b).count() as f64 / bags.len() as f64)
}

/// Adds `N(0, sd²)` to every valid patch feature. A feature-space stand-in
/// for image-level corruption.
pub fn perturb_features(bag: &FeatureBag, sd: f64, rng: &mut Rng) -> FeatureBag {
    let mut out = bag.clone();
    for (mut row, &valid) in out.features.rows_mut().into_iter().zip(&bag.valid) {
        if valid {
            row.mapv_inplace(|x| x + (sd * rng.sample::<f64, _>(StandardNormal)) as f32);
        }
    }
    out
}
