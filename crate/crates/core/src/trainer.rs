//! Alternating discriminator/generator training with gradient accumulation,
//! k-fold cycling of unlabeled bags, early stopping and plateau decay.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureBag, SurvivalRecord};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{lower_median, Generator, GeneratorConfig};
use crate::losses::{self, LossWeights, SlPair};
use crate::nn::{Adam, ParamGrads, ParamStore, Tape};
use crate::parallel;
use crate::rng::{self, stream};
use crate::tensors::BagTensors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub patience: usize,
    pub warmup: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_patience: usize,
    pub k_folds_unlabeled: usize,
    pub seed: u64,
    /// Draws per validation bag when computing the early-stopping metric.
    pub n_val_draws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 1,
            grad_accum: 16,
            patience: 30,
            warmup: 5,
            lr_g: 8e-5,
            lr_d: 8e-5,
            optimizer: OptimizerKind::Adam,
            weight_decay: 5e-4,
            lr_decay_factor: 0.5,
            lr_decay_patience: 10,
            k_folds_unlabeled: 1,
            seed: 0,
            n_val_draws: 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("grad_accum", self.grad_accum),
            ("patience", self.patience),
            ("lr_decay_patience", self.lr_decay_patience),
            ("k_folds_unlabeled", self.k_folds_unlabeled),
            ("n_val_draws", self.n_val_draws),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr_decay_factor must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Samples per optimizer step.
    pub fn window(&self) -> usize {
        self.batch_size * self.grad_accum
    }
}

/// Generator and discriminator trained together.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl ModelBundle {
    pub fn new(g: GeneratorConfig, d: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if g.feature_dim != d.feature_dim {
            return Err(Error::Config(format!(
                "generator expects {} features, discriminator {}",
                g.feature_dim, d.feature_dim
            )));
        }
        Ok(ModelBundle {
            generator: Generator::new(g, &mut rng::rng_for(seed, &[stream::INIT_GENERATOR]))?,
            discriminator: Discriminator::new(d, &mut rng::rng_for(seed, &[stream::INIT_DISCRIMINATOR]))?,
        })
    }
}

/// A training or validation bag; `record` is `None` for unlabeled bags.
#[derive(Debug, Clone)]
pub struct Sample {
    pub patient_id: String,
    pub tensors: BagTensors,
    pub record: Option<SurvivalRecord>,
}

impl Sample {
    pub fn labeled(bag: &FeatureBag, record: SurvivalRecord) -> Result<Self> {
        Ok(Sample {
            patient_id: bag.patient_id.clone(),
            tensors: BagTensors::new(bag)?,
            record: Some(record),
        })
    }

    pub fn unlabeled(bag: &FeatureBag) -> Result<Self> {
        Ok(Sample {
            patient_id: bag.patient_id.clone(),
            tensors: BagTensors::new(bag)?,
            record: None,
        })
    }

    /// Whether this sample supplies a real (bag, time) pair to the discriminator.
    fn real_time(&self) -> Option<f64> {
        self.record.filter(|r| !r.is_censored()).map(|r| r.t)
    }
}

pub struct Optimizers {
    pub g: Adam,
    pub d: Adam,
}

impl Optimizers {
    pub fn new(bundle: &ModelBundle, cfg: &TrainConfig) -> Self {
        Optimizers {
            g: Adam::new(&bundle.generator.params, cfg.lr_g, cfg.weight_decay),
            d: Adam::new(&bundle.discriminator.params, cfg.lr_d, cfg.weight_decay),
        }
    }
}

/// Parameter fingerprints around one phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseHashes {
    pub g_before: u64,
    pub g_after: u64,
    pub d_before: u64,
    pub d_after: u64,
}

fn hashes(before: (u64, u64), bundle: &ModelBundle) -> PhaseHashes {
    PhaseHashes {
        g_before: before.0,
        g_after: bundle.generator.params.fingerprint(),
        d_before: before.1,
        d_after: bundle.discriminator.params.fingerprint(),
    }
}

fn fingerprints(bundle: &ModelBundle) -> (u64, u64) {
    (bundle.generator.params.fingerprint(), bundle.discriminator.params.fingerprint())
}

/// Bookkeeping for one accumulation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub n_samples: usize,
    /// `None` when the discriminator phase was skipped (no adversarial term).
    pub d_loss: Option<f64>,
    pub g_adv: Option<f64>,
    /// `None` when no labeled sample was in the window.
    pub g_sl: Option<f64>,
    pub d_stepped: bool,
    pub g_stepped: bool,
    /// Patients whose real (bag, time) pair entered the discriminator loss.
    pub real_pair_ids: Vec<String>,
    /// Discriminator scores that entered its loss, in window order.
    pub real_scores: Vec<f64>,
    pub fake_scores: Vec<f64>,
    /// Patients whose label entered the supervision loss.
    pub sl_ids: Vec<String>,
    pub d_phase: Option<PhaseHashes>,
    pub g_phase: PhaseHashes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_sl: f64,
    pub d_steps: usize,
    pub g_steps: usize,
    /// Patients in training order.
    pub order: Vec<String>,
    pub windows: Vec<WindowStats>,
}

fn non_finite(epoch: usize, window: usize, detail: impl Into<String>) -> Error {
    Error::NonFiniteLoss {
        epoch,
        window,
        detail: detail.into(),
    }
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

struct DPhaseOutput {
    loss: f64,
    real_pair_ids: Vec<String>,
    real: Vec<f64>,
    fake: Vec<f64>,
}

struct DForward<'a> {
    tape: Tape<'a>,
    real: Option<(crate::nn::Var, f64)>,
    fake: (crate::nn::Var, f64),
}

fn d_phase(
    bundle: &mut ModelBundle,
    opt: &mut Adam,
    window: &[&Sample],
    base: &[u64],
    epoch: usize,
    window_idx: usize,
) -> Result<DPhaseOutput> {
    let (g, d) = (&bundle.generator, &bundle.discriminator);
    let forwards: Vec<DForward<'_>> = parallel::map_range(window.len(), |i| {
        let sample = window[i];
        let mut rng = rng::rng_for(base[i], &[stream::D_PHASE]);
        let t_fake = g.sample_time(&g.encode_value(&sample.tensors), &mut rng);
        let mut tape = Tape::new();
        let x_emb = d.region_embed(&mut tape, &sample.tensors);
        let real = sample.real_time().map(|t| {
            let t = tape.scalar_constant(t);
            let y = d.fuse(&mut tape, x_emb, t);
            (y, tape.scalar(y))
        });
        let t = tape.scalar_constant(t_fake);
        let y = d.fuse(&mut tape, x_emb, t);
        let fake = (y, tape.scalar(y));
        DForward { tape, real, fake }
    });
    let real: Vec<f64> = forwards.iter().filter_map(|f| f.real.map(|r| r.1)).collect();
    let fake: Vec<f64> = forwards.iter().map(|f| f.fake.1).collect();
    let loss = losses::d_loss(&real, &fake);
    if !loss.is_finite() {
        return Err(non_finite(epoch, window_idx, format!("d_loss = {loss}")));
    }
    let (g_real, g_fake) = losses::d_loss_grads(&real, &fake);
    let mut real_idx = 0;
    let mut seeds = Vec::with_capacity(window.len());
    for (i, f) in forwards.iter().enumerate() {
        let mut s = vec![(f.fake.0, scalar(g_fake[i]))];
        if let Some((y, _)) = f.real {
            s.push((y, scalar(g_real[real_idx])));
            real_idx += 1;
        }
        seeds.push(s);
    }
    let per_sample = parallel::map_range(window.len(), |i| forwards[i].tape.backward_multi(seeds[i].clone()).into_store(&d.params));
    let mut grads = ParamGrads::zeros_like(&d.params);
    for g in per_sample {
        grads.merge_owned(g);
    }
    if !grads.all_finite() {
        return Err(non_finite(epoch, window_idx, "discriminator gradient"));
    }
    let ids = window
        .iter()
        .filter(|s| s.real_time().is_some())
        .map(|s| s.patient_id.clone())
        .collect();
    drop(forwards);
    opt.step(&mut bundle.discriminator.params, &grads);
    Ok(DPhaseOutput {
        loss,
        real_pair_ids: ids,
        real,
        fake,
    })
}

struct GForward<'a> {
    tape: Tape<'a>,
    t_hat: (crate::nn::Var, f64),
    fake: Option<(crate::nn::Var, f64)>,
}

fn g_phase(
    bundle: &mut ModelBundle,
    opt: &mut Adam,
    window: &[&Sample],
    base: &[u64],
    weights: LossWeights,
    epoch: usize,
    window_idx: usize,
) -> Result<(Option<f64>, Option<f64>, Vec<String>)> {
    let (g, d) = (&bundle.generator, &bundle.discriminator);
    let adversarial = weights.is_adversarial();
    let forwards: Vec<GForward<'_>> = parallel::map_range(window.len(), |i| {
        let sample = window[i];
        let mut rng = rng::rng_for(base[i], &[stream::G_PHASE]);
        let noise = g.draw_noise(&mut rng);
        let mut tape = Tape::new();
        let z = g.encode(&mut tape, &sample.tensors);
        let t_hat = g.head(&mut tape, z, &noise);
        let t_val = tape.scalar(t_hat);
        let fake = adversarial.then(|| {
            let x_emb = tape.constant(d.region_embed_value(&sample.tensors));
            let y = d.fuse(&mut tape, x_emb, t_hat);
            (y, tape.scalar(y))
        });
        GForward {
            tape,
            t_hat: (t_hat, t_val),
            fake,
        }
    });

    let mut seeds: Vec<Vec<(crate::nn::Var, Array2<f64>)>> = vec![Vec::new(); window.len()];
    let mut adv = None;
    if adversarial {
        let fake: Vec<f64> = forwards.iter().map(|f| f.fake.expect("adversarial forward").1).collect();
        let loss = losses::g_adv_loss(&fake);
        if !loss.is_finite() {
            return Err(non_finite(epoch, window_idx, format!("g_adv = {loss}")));
        }
        for ((s, f), gr) in seeds.iter_mut().zip(&forwards).zip(losses::g_adv_loss_grads(&fake)) {
            s.push((f.fake.expect("adversarial forward").0, scalar(weights.lambda_adv * gr)));
        }
        adv = Some(loss);
    }

    let labeled: Vec<usize> = (0..window.len()).filter(|&i| window[i].record.is_some()).collect();
    let mut sl = None;
    if !labeled.is_empty() && weights.lambda_sl > 0.0 {
        let pairs: Vec<SlPair> = labeled
            .iter()
            .map(|&i| {
                let r = window[i].record.expect("labeled sample");
                SlPair::new(forwards[i].t_hat.1, r.t, r.delta)
            })
            .collect();
        let loss = losses::sl_loss(&pairs);
        if !loss.is_finite() {
            return Err(non_finite(epoch, window_idx, format!("g_sl = {loss}")));
        }
        for (&i, gr) in labeled.iter().zip(losses::sl_loss_grads(&pairs)) {
            seeds[i].push((forwards[i].t_hat.0, scalar(weights.lambda_sl * gr)));
        }
        sl = Some(loss);
    }
    let sl_ids = if sl.is_some() {
        labeled.iter().map(|&i| window[i].patient_id.clone()).collect()
    } else {
        Vec::new()
    };

    let per_sample = parallel::map_range(window.len(), |i| forwards[i].tape.backward_multi(seeds[i].clone()).into_store(&g.params));
    let mut grads = ParamGrads::zeros_like(&g.params);
    for gr in per_sample {
        grads.merge_owned(gr);
    }
    if !grads.all_finite() {
        return Err(non_finite(epoch, window_idx, "generator gradient"));
    }
    drop(forwards);
    opt.step(&mut bundle.generator.params, &grads);
    Ok((adv, sl, sl_ids))
}

/// One accumulation window: a discriminator step on the window, then a
/// generator step scored by the updated discriminator. `base` holds one
/// derived seed per sample. The discriminator phase is skipped when the
/// adversarial weight is zero.
fn train_window(
    bundle: &mut ModelBundle,
    opts: &mut Optimizers,
    window: &[&Sample],
    base: &[u64],
    weights: LossWeights,
    epoch: usize,
    window_idx: usize,
) -> Result<WindowStats> {
    let (mut d_out, mut d_hashes) = (None, None);
    if weights.is_adversarial() {
        let before = fingerprints(bundle);
        d_out = Some(d_phase(bundle, &mut opts.d, window, base, epoch, window_idx)?);
        d_hashes = Some(hashes(before, bundle));
    }
    let before = fingerprints(bundle);
    let (g_adv, g_sl, sl_ids) = g_phase(bundle, &mut opts.g, window, base, weights, epoch, window_idx)?;
    Ok(WindowStats {
        n_samples: window.len(),
        d_loss: d_out.as_ref().map(|d| d.loss),
        g_adv,
        g_sl,
        d_stepped: d_hashes.is_some(),
        g_stepped: true,
        real_pair_ids: d_out.as_mut().map(|d| std::mem::take(&mut d.real_pair_ids)).unwrap_or_default(),
        real_scores: d_out.as_mut().map(|d| std::mem::take(&mut d.real)).unwrap_or_default(),
        fake_scores: d_out.map(|d| d.fake).unwrap_or_default(),
        sl_ids,
        d_phase: d_hashes,
        g_phase: hashes(before, bundle),
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// One epoch over `samples` in a shuffled order. Steps both models once
/// per `batch_size × grad_accum` samples; a shorter final window is
/// stepped on its own.
pub fn train_epoch(
    bundle: &mut ModelBundle,
    opts: &mut Optimizers,
    samples: &[&Sample],
    cfg: &TrainConfig,
    weights: LossWeights,
    epoch: usize,
) -> Result<EpochStats> {
    if samples.is_empty() {
        return Err(Error::NoLabeledRecords);
    }
    let mut order: Vec<&Sample> = samples.to_vec();
    order.shuffle(&mut rng::rng_for(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
    let mut windows = Vec::new();
    for (w, chunk) in order.chunks(cfg.window()).enumerate() {
        let base: Vec<u64> = (0..chunk.len())
            .map(|i| rng::derive_seed(cfg.seed, &[epoch as u64, (w * cfg.window() + i) as u64]))
            .collect();
        windows.push(train_window(bundle, opts, chunk, &base, weights, epoch, w)?);
    }
    Ok(EpochStats {
        epoch,
        d_loss: mean_of(windows.iter().filter_map(|w| w.d_loss)),
        g_adv: mean_of(windows.iter().filter_map(|w| w.g_adv)),
        g_sl: mean_of(windows.iter().filter_map(|w| w.g_sl)),
        d_steps: windows.iter().filter(|w| w.d_stepped).count(),
        g_steps: windows.iter().filter(|w| w.g_stepped).count(),
        order: order.iter().map(|s| s.patient_id.clone()).collect(),
        windows,
    })
}

/// Supervision loss of median estimates over labeled samples.
pub fn validation_loss(generator: &Generator, samples: &[Sample], n_draws: usize, seed: u64) -> Result<f64> {
    let pairs = parallel::map_range(samples.len(), |i| -> Result<Option<SlPair>> {
        let Some(r) = samples[i].record else { return Ok(None) };
        let mut rng = rng::rng_for(seed, &[stream::EVAL, i as u64]);
        let est = generator.estimate_time(&samples[i].tensors, n_draws, &mut rng)?;
        Ok(Some(SlPair::new(lower_median(&est.draws), r.t, r.delta)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(losses::sl_loss(&pairs.into_iter().flatten().collect::<Vec<_>>()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopDecision {
    Continue,
    Stop,
    DecayLr,
}

/// Early-stopping bookkeeping plus the best parameters seen so far.
#[derive(Debug, Clone, Default)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val: Option<f64>,
    pub best_epoch: Option<usize>,
    pub since_improvement: usize,
    pub best_params: Option<(ParamStore, ParamStore)>,
}

/// Records `val_loss` for the epoch `state.epoch` and decides what to do
/// next. Epochs before `warmup` are not tracked.
pub fn early_stop_check(state: &mut TrainState, val_loss: f64, cfg: &TrainConfig) -> StopDecision {
    if state.epoch < cfg.warmup {
        return StopDecision::Continue;
    }
    if state.best_val.is_none_or(|best| val_loss < best) {
        state.best_val = Some(val_loss);
        state.best_epoch = Some(state.epoch);
        state.since_improvement = 0;
        return StopDecision::Continue;
    }
    state.since_improvement += 1;
    if state.since_improvement >= cfg.patience {
        StopDecision::Stop
    } else if state.since_improvement.is_multiple_of(cfg.lr_decay_patience) {
        StopDecision::DecayLr
    } else {
        StopDecision::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_sl: f64,
    pub val_sl: f64,
    pub lr_g: f64,
}

pub fn write_history_csv(rows: &[HistoryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the best validation epoch (the last epoch when no
    /// epoch after warm-up was tracked).
    pub bundle: ModelBundle,
    pub best_epoch: Option<usize>,
    pub history: Vec<HistoryRow>,
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
    /// Number of epochs each unlabeled fold was used in.
    pub fold_usage: Vec<usize>,
    /// Number of epochs each unlabeled sample (input order) was used in.
    pub unlabeled_usage: Vec<usize>,
}

/// Splits `n` items into `k` shuffled folds whose sizes differ by at most one.
pub fn unlabeled_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n > 0 && k > n {
        return Err(Error::FoldSizeZero { folds: k, available: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_for(seed, &[stream::UNLABELED_SPLIT]));
    Ok((0..k).map(|f| idx[f * n / k..(f + 1) * n / k].to_vec()).collect())
}

fn run_epochs<'s>(
    mut bundle: ModelBundle,
    validation: &[Sample],
    cfg: &TrainConfig,
    weights: LossWeights,
    mut epoch_samples: impl FnMut(usize) -> Vec<&'s Sample>,
) -> Result<FitResult> {
    cfg.validate()?;
    weights.validate()?;
    let mut opts = Optimizers::new(&bundle, cfg);
    let mut state = TrainState::default();
    let mut history = Vec::new();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let samples = epoch_samples(epoch);
        let stats = train_epoch(&mut bundle, &mut opts, &samples, cfg, weights, epoch)?;
        let val_sl = if validation.is_empty() {
            f64::NAN
        } else {
            validation_loss(&bundle.generator, validation, cfg.n_val_draws, cfg.seed)?
        };
        history.push(HistoryRow {
            epoch,
            d_loss: stats.d_loss,
            g_adv: stats.g_adv,
            g_sl: stats.g_sl,
            val_sl,
            lr_g: opts.g.lr,
        });
        epochs.push(stats);
        if validation.is_empty() {
            continue;
        }
        state.epoch = epoch;
        match early_stop_check(&mut state, val_sl, cfg) {
            StopDecision::Continue => {
                if state.best_epoch == Some(epoch) {
                    state.best_params = Some((bundle.generator.params.clone(), bundle.discriminator.params.clone()));
                }
            }
            StopDecision::DecayLr => opts.g.lr *= cfg.lr_decay_factor,
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    if let Some((g, d)) = state.best_params.take() {
        bundle.generator.params = g;
        bundle.discriminator.params = d;
    }
    Ok(FitResult {
        bundle,
        best_epoch: state.best_epoch,
        history,
        epochs,
        stopped_early,
        fold_usage: Vec::new(),
        unlabeled_usage: Vec::new(),
    })
}

/// Fully supervised training on labeled samples.
pub fn fit_supervised(
    bundle: ModelBundle,
    labeled: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    weights: LossWeights,
) -> Result<FitResult> {
    if labeled.is_empty() {
        return Err(Error::NoLabeledRecords);
    }
    let all: Vec<&Sample> = labeled.iter().collect();
    run_epochs(bundle, validation, cfg, weights, |_| all.clone())
}

/// Semi-supervised training: the unlabeled pool is split once into
/// `k_folds_unlabeled` folds and epoch `T` trains on every labeled sample
/// plus fold `T mod k`.
pub fn fit(
    bundle: ModelBundle,
    labeled: &[Sample],
    unlabeled: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
    weights: LossWeights,
) -> Result<FitResult> {
    if labeled.is_empty() {
        return Err(Error::NoLabeledRecords);
    }
    if let Some(s) = unlabeled.iter().find(|s| s.record.is_some()) {
        return Err(Error::Config(format!("unlabeled pool holds labeled sample {}", s.patient_id)));
    }
    let k = cfg.k_folds_unlabeled;
    let folds = unlabeled_folds(unlabeled.len(), k, cfg.seed)?;
    let mut fold_usage = vec![0; k];
    let mut unlabeled_usage = vec![0; unlabeled.len()];
    let mut result = run_epochs(bundle, validation, cfg, weights, |epoch| {
        let f = epoch % k;
        fold_usage[f] += 1;
        let mut samples: Vec<&Sample> = labeled.iter().collect();
        for &i in &folds[f] {
            unlabeled_usage[i] += 1;
            samples.push(&unlabeled[i]);
        }
        samples
    })?;
    result.fold_usage = fold_usage;
    result.unlabeled_usage = unlabeled_usage;
    Ok(result)
}

/// Splits training positions into (labeled, unlabeled) keeping
/// `round(ratio · n)` labels, at least one.
pub fn mask_labels(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("labeled ratio {ratio} outside (0, 1]")));
    }
    if n == 0 {
        return Err(Error::NoLabeledRecords);
    }
    let keep = ((ratio * n as f64).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_for(seed, &[stream::LABEL_MASK]));
    let (mut labeled, mut unlabeled) = (idx[..keep].to_vec(), idx[keep..].to_vec());
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok((labeled, unlabeled))
}
