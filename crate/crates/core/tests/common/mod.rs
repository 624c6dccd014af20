#![allow(dead_code)]

use advmil::data::{make_cv_splits, normalize_times_from, split_fold, CohortManifest, FeatureBag, FoldSplit};
use advmil::discriminator::DiscriminatorConfig;
use advmil::eval::{EvalItem, RiskRecord};
use advmil::generator::{EncoderConfig, EncoderKind, GeneratorConfig};
use advmil::rng::Rng;
use advmil::synth::{generate, SynthCohort, SynthSpec};
use advmil::trainer::Sample;
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

/// O(n²) pair enumeration: (comparable, concordant, tied).
pub fn brute_force_counts(records: &[RiskRecord]) -> (u64, u64, u64) {
    let (mut comparable, mut concordant, mut tied) = (0, 0, 0);
    for a in records {
        for b in records {
            if a.t < b.t && a.delta == 0 {
                comparable += 1;
                if a.risk > b.risk {
                    concordant += 1;
                } else if a.risk == b.risk {
                    tied += 1;
                }
            }
        }
    }
    (comparable, concordant, tied)
}

pub fn brute_force_c_index(records: &[RiskRecord]) -> Option<f64> {
    let (n, c, t) = brute_force_counts(records);
    (n > 0).then(|| (c as f64 + 0.5 * t as f64) / n as f64)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// A bag of `regions` regions of `s` patches each with standard normal features.
pub fn random_bag(id: &str, regions: usize, s: usize, c: usize, rng: &mut Rng) -> FeatureBag {
    let m = regions * s;
    FeatureBag {
        patient_id: id.into(),
        features: Array2::from_shape_fn((m, c), |_| rng.sample::<f32, _>(StandardNormal)),
        coords: (0..m as i32).map(|j| [j / 4, j % 4]).collect(),
        region_ids: (0..m).map(|j| j / s).collect(),
        valid: vec![true; m],
        patches_per_region: s,
    }
}

pub fn small_generator(c: usize, kind: EncoderKind) -> GeneratorConfig {
    GeneratorConfig {
        encoder: EncoderConfig {
            kind,
            out_dim: 24,
            attention_hidden: 16,
        },
        head_hidden: 16,
        ..GeneratorConfig::new(c)
    }
}

pub fn small_discriminator(c: usize) -> DiscriminatorConfig {
    DiscriminatorConfig {
        patch_hidden: 24,
        embed_dim: 16,
        attention_hidden: 16,
        ..DiscriminatorConfig::new(c)
    }
}

/// A synthetic cohort with cross-validation folds and times normalized on
/// the training part of `fold`.
pub struct Prepared {
    pub cohort: SynthCohort,
    pub manifest: CohortManifest,
    pub split: FoldSplit,
}

impl Prepared {
    pub fn new(spec: &SynthSpec, fold: usize) -> Self {
        let cohort = generate(spec).unwrap();
        let manifest = make_cv_splits(cohort.manifest.clone(), spec.seed).unwrap();
        let split = split_fold(&manifest, fold, spec.seed).unwrap();
        let manifest = normalize_times_from(manifest, &split.train).unwrap();
        Prepared { cohort, manifest, split }
    }

    pub fn samples(&self, idx: &[usize]) -> Vec<Sample> {
        idx.iter()
            .map(|&i| Sample::labeled(&self.cohort.bags[i], self.manifest.entries[i].record().unwrap()).unwrap())
            .collect()
    }

    pub fn unlabeled(&self, idx: &[usize]) -> Vec<Sample> {
        idx.iter().map(|&i| Sample::unlabeled(&self.cohort.bags[i]).unwrap()).collect()
    }

    pub fn items(&self, idx: &[usize]) -> Vec<EvalItem<'_>> {
        idx.iter()
            .map(|&i| EvalItem {
                bag: &self.cohort.bags[i],
                record: self.manifest.entries[i].record().unwrap(),
            })
            .collect()
    }
}

/// Prints one result line and fails the test when `ok` is false.
pub fn verdict(criterion: u32, name: &str, ok: bool, detail: &str) {
    println!("{} criterion {criterion:>2} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {criterion} ({name}) failed: {detail}");
}
