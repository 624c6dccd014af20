//! Synthetic cohorts with a known conditional time-to-event law.
//!
//! Each patient has a latent vector `u ~ N(0, I)` in the first `signal_dim`
//! feature dimensions; every patch carries `u` plus Gaussian jitter, the
//! remaining dimensions are pure noise. With `ū` the mean of the signal
//! dimensions over the bag's patches, the log-odds of the event time are
//! `η = signal_scale · w·ū` for a fixed unit vector `w`, and
//!
//! ```text
//! t_event = time_scale · logistic(η + noise_sd · ε),  ε ~ N(0, 1)
//! ```
//!
//! so every quantile of the law is available in closed form. Censoring
//! times are uniform on `[0, H]`, independent of the features, with `H`
//! chosen so the expected censoring fraction matches `censor_rate`.

use std::collections::HashMap;
use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{CohortManifest, FeatureBag, ManifestEntry, BAG_EXTENSION};
use crate::error::{Error, Result};
use crate::parallel;
use crate::patching::{build_bag, PatchGrid};
use crate::rng::{self, stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_patients: usize,
    /// Patches per bag.
    pub m: usize,
    /// Feature dimension.
    pub c: usize,
    /// Patches per region; must be a perfect square.
    pub s: usize,
    pub signal_dim: usize,
    /// Standard deviation of the log-odds noise of the time law.
    pub noise_sd: f64,
    pub censor_rate: f64,
    pub seed: u64,
    /// Per-patch jitter around the latent vector.
    pub patch_jitter: f64,
    pub signal_scale: f64,
    /// Raw time units corresponding to logistic output 1.
    pub time_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_patients: 200,
            m: 64,
            c: 32,
            s: 16,
            signal_dim: 4,
            noise_sd: 0.3,
            censor_rate: 0.3,
            seed: 1,
            patch_jitter: 1.0,
            signal_scale: 2.0,
            time_scale: 1000.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.n_patients == 0 || self.m == 0 || self.c == 0 || self.s == 0 {
            return bad("sizes must be positive");
        }
        if !self.m.is_multiple_of(self.s) {
            return bad("m must be a multiple of s");
        }
        if self.eta() * self.eta() != self.s {
            return bad("s must be a perfect square");
        }
        if self.signal_dim == 0 || self.signal_dim > self.c {
            return bad("signal_dim must be in 1..=c");
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return bad("censor_rate must be in [0, 1)");
        }
        if !(self.noise_sd >= 0.0 && self.patch_jitter >= 0.0 && self.time_scale > 0.0) {
            return bad("noise_sd and patch_jitter must be nonnegative, time_scale positive");
        }
        Ok(())
    }

    fn eta(&self) -> usize {
        (self.s as f64).sqrt().round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    /// Log-odds location η of the time law.
    pub logit: f64,
    /// Median of the law, raw units.
    pub location: f64,
    /// Realised event time before censoring, raw units.
    pub t_star: f64,
    /// Censoring time, raw units (infinite when uncensored by design).
    pub censor_time: Option<f64>,
}

/// Generating parameters of a synthetic cohort, persisted as a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SynthSpec,
    pub weights: Vec<f64>,
    pub noise_law: String,
    pub censor_horizon: Option<f64>,
    pub patients: Vec<PatientTruth>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Truth {
    fn new(spec: SynthSpec, weights: Vec<f64>, censor_horizon: Option<f64>, patients: Vec<PatientTruth>) -> Self {
        let mut truth = Truth {
            spec,
            weights,
            noise_law: "logit-normal".into(),
            censor_horizon,
            patients,
            index: HashMap::new(),
        };
        truth.reindex();
        truth
    }

    fn reindex(&mut self) {
        self.index = self
            .patients
            .iter()
            .enumerate()
            .map(|(i, p)| (p.patient_id.clone(), i))
            .collect();
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut truth: Truth = serde_json::from_str(text)?;
        truth.reindex();
        Ok(truth)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn patient(&self, patient_id: &str) -> Result<&PatientTruth> {
        self.index
            .get(patient_id)
            .map(|&i| &self.patients[i])
            .ok_or_else(|| Error::UnknownPatient(patient_id.to_string()))
    }

    fn time_of_logit(&self, z: f64) -> f64 {
        self.spec.time_scale * crate::nn::sigmoid(z)
    }

    /// Exact quantiles (raw units) of the patient's event-time law.
    pub fn true_quantiles(&self, patient_id: &str, probs: &[f64]) -> Result<Vec<f64>> {
        let p = self.patient(patient_id)?;
        if let Some(bad) = probs.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(Error::Config(format!("probability {bad} outside [0, 1]")));
        }
        if self.spec.noise_sd == 0.0 {
            return Ok(vec![p.location; probs.len()]);
        }
        let std_normal = Normal::standard();
        Ok(probs
            .iter()
            .map(|&q| self.time_of_logit(p.logit + self.spec.noise_sd * std_normal.inverse_cdf(q)))
            .collect())
    }

    /// One draw (raw units) from the patient's event-time law.
    pub fn sample(&self, patient_id: &str, rng: &mut Rng) -> Result<f64> {
        let p = self.patient(patient_id)?;
        let eps: f64 = rng.sample(StandardNormal);
        Ok(self.time_of_logit(p.logit + self.spec.noise_sd * eps))
    }
}

/// A generated cohort: bags, a manifest pointing at `bags/<id>.amb`, and the truth sidecar.
#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub bags: Vec<FeatureBag>,
    pub manifest: CohortManifest,
    pub truth: Truth,
}

struct PatientDraw {
    bag: FeatureBag,
    logit: f64,
    t_star: f64,
    censor_u: f64,
}

fn unit_weights(spec: &SynthSpec) -> Vec<f64> {
    let mut rng = rng::rng_for(spec.seed, &[stream::SYNTH, u64::MAX]);
    loop {
        let w: Vec<f64> = (0..spec.signal_dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return w.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn grid_coords(spec: &SynthSpec) -> Vec<[i32; 2]> {
    let eta = spec.eta() as i32;
    let n_regions = (spec.m / spec.s) as i32;
    let regions_per_row = (f64::from(n_regions)).sqrt().ceil() as i32;
    (0..n_regions)
        .flat_map(|r| {
            let (rr, rc) = (r / regions_per_row, r % regions_per_row);
            (0..eta).flat_map(move |i| (0..eta).map(move |j| [rr * eta + i, rc * eta + j]))
        })
        .collect()
}

/// Mean of the first `k` feature dimensions over valid patches.
pub fn mean_signal(bag: &FeatureBag, k: usize) -> Vec<f64> {
    let mut acc = vec![0.0; k];
    let mut n = 0usize;
    for (j, &v) in bag.valid.iter().enumerate() {
        if v {
            n += 1;
            for (a, &x) in acc.iter_mut().zip(bag.row(j).iter().take(k)) {
                *a += f64::from(x);
            }
        }
    }
    acc.into_iter().map(|a| a / n.max(1) as f64).collect()
}

fn draw_patient(spec: &SynthSpec, weights: &[f64], coords: &[[i32; 2]], i: usize) -> Result<PatientDraw> {
    let mut rng = rng::rng_for(spec.seed, &[stream::SYNTH, i as u64]);
    let k = spec.signal_dim;
    let latent: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let mut features = Array2::<f32>::zeros((spec.m, spec.c));
    for mut row in features.rows_mut() {
        for (d, x) in row.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *x = if d < k { latent[d] + spec.patch_jitter * z } else { z } as f32;
        }
    }
    let grid = PatchGrid::new(coords.to_vec()).with_eta(spec.eta());
    let bag = build_bag(&format!("synth-{i:04}"), &grid, &features)?;
    let signal = mean_signal(&bag, k);
    let logit = spec.signal_scale * signal.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>();
    let eps: f64 = rng.sample(StandardNormal);
    let t_star = spec.time_scale * crate::nn::sigmoid(logit + spec.noise_sd * eps);
    let censor_u = rng.random::<f64>();
    Ok(PatientDraw {
        bag,
        logit,
        t_star,
        censor_u,
    })
}

/// Horizon `H` with `mean(min(T, H)) / H = rate`, i.e. the expected
/// fraction censored by `U(0, H)` censoring equals `rate`.
fn censor_horizon(times: &[f64], rate: f64) -> f64 {
    let frac = |h: f64| times.iter().map(|&t| t.min(h)).sum::<f64>() / (h * times.len() as f64);
    let t_max = times.iter().copied().fold(0.0, f64::max);
    // frac is 1 on (0, min T] and decreases to 0 as H grows.
    let (mut lo, mut hi) = (1e-12, t_max.max(1e-12));
    while frac(hi) > rate {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCohort> {
    spec.validate()?;
    let weights = unit_weights(spec);
    let coords = grid_coords(spec);
    let draws = parallel::map_range(spec.n_patients, |i| draw_patient(spec, &weights, &coords, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let horizon = (spec.censor_rate > 0.0).then(|| {
        let times: Vec<f64> = draws.iter().map(|d| d.t_star).collect();
        censor_horizon(&times, spec.censor_rate)
    });

    let mut entries = Vec::with_capacity(draws.len());
    let mut patients = Vec::with_capacity(draws.len());
    let mut bags = Vec::with_capacity(draws.len());
    for d in draws {
        let censor_time = horizon.map(|h| d.censor_u * h);
        let (t_raw, delta) = match censor_time {
            Some(c) if c < d.t_star => (c, 1),
            _ => (d.t_star, 0),
        };
        let id = d.bag.patient_id.clone();
        entries.push(ManifestEntry {
            patient_id: id.clone(),
            bag_path: PathBuf::from("bags").join(format!("{id}.{BAG_EXTENSION}")),
            t_raw: Some(t_raw),
            delta: Some(delta),
            fold: None,
            t: None,
        });
        patients.push(PatientTruth {
            patient_id: id,
            logit: d.logit,
            location: spec.time_scale * crate::nn::sigmoid(d.logit),
            t_star: d.t_star,
            censor_time,
        });
        bags.push(d.bag);
    }
    Ok(SynthCohort {
        bags,
        manifest: CohortManifest { entries, t_max: None },
        truth: Truth::new(*spec, weights, horizon, patients),
    })
}
