//! Conditional generator: a MIL encoder that pools a bag into one vector,
//! followed by a two-layer MLP whose layer inputs can receive additive
//! noise. Sampling the noise repeatedly yields draws from the implied
//! time-to-event distribution.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{GatedAttention, Linear, ParamStore, Tape, Var};
use crate::rng::Rng;
use crate::tensors::BagTensors;

pub const DEFAULT_ENCODER_DIM: usize = 384;
pub const DEFAULT_HEAD_HIDDEN: usize = 128;
pub const DEFAULT_ATTENTION_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Gated attention over patch embeddings (ABMIL-style).
    Attention,
    /// Pool within each region, then attend over region vectors.
    Cluster,
    /// One self-attention block over region-mean tokens, then mean pooling.
    Sequence,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(EncoderKind::Attention),
            "cluster" => Ok(EncoderKind::Cluster),
            "sequence" => Ok(EncoderKind::Sequence),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub out_dim: usize,
    pub attention_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Sequence,
            out_dim: DEFAULT_ENCODER_DIM,
            attention_hidden: DEFAULT_ATTENTION_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    /// U(0, 1)
    Uniform01,
    /// N(0, 1)
    Gaussian01,
}

/// Which of the two head layers receive noise, written as two bits
/// (`"01"`, `"10"`, `"11"`, or `"00"` for none).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseCode {
    pub layer1: bool,
    pub layer2: bool,
}

impl NoiseCode {
    pub const NONE: NoiseCode = NoiseCode {
        layer1: false,
        layer2: false,
    };

    pub fn is_none(&self) -> bool {
        !self.layer1 && !self.layer2
    }
}

impl fmt::Display for NoiseCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", u8::from(self.layer1), u8::from(self.layer2))
    }
}

impl FromStr for NoiseCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits: Vec<char> = s.chars().filter(|c| *c != '-').collect();
        let bit = |c: char| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Config(format!("invalid noise code {s:?}"))),
        };
        match bits.as_slice() {
            [a, b] => Ok(NoiseCode {
                layer1: bit(*a)?,
                layer2: bit(*b)?,
            }),
            _ => Err(Error::Config(format!("invalid noise code {s:?}"))),
        }
    }
}

impl Serialize for NoiseCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for NoiseCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub code: NoiseCode,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            family: NoiseFamily::Uniform01,
            code: NoiseCode {
                layer1: false,
                layer2: true,
            },
        }
    }
}

impl NoiseSpec {
    fn vector(&self, dim: usize, rng: &mut Rng) -> Array2<f64> {
        match self.family {
            NoiseFamily::Uniform01 => Array2::from_shape_simple_fn((1, dim), || rng.random::<f64>()),
            NoiseFamily::Gaussian01 => Array2::from_shape_simple_fn((1, dim), || rng.sample(StandardNormal)),
        }
    }
}

/// Concrete noise vectors for one forward pass of the head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseDraw {
    pub layer1: Option<Array2<f64>>,
    pub layer2: Option<Array2<f64>>,
}

impl NoiseDraw {
    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub feature_dim: usize,
    pub encoder: EncoderConfig,
    pub noise: NoiseSpec,
    pub head_hidden: usize,
}

impl GeneratorConfig {
    pub fn new(feature_dim: usize) -> Self {
        GeneratorConfig {
            feature_dim,
            encoder: EncoderConfig::default(),
            noise: NoiseSpec::default(),
            head_hidden: DEFAULT_HEAD_HIDDEN,
        }
    }

    pub fn with_kind(mut self, kind: EncoderKind) -> Self {
        self.encoder.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.encoder.out_dim == 0 || self.head_hidden == 0 || self.encoder.attention_hidden == 0 {
            return Err(Error::Config("generator dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Encoder {
    Attention {
        embed: Linear,
        pool: GatedAttention,
    },
    Cluster {
        embed: Linear,
        region_fc: Linear,
        pool: GatedAttention,
    },
    Sequence {
        embed: Linear,
        query: Linear,
        key: Linear,
        value: Linear,
        output: Linear,
        ffn_in: Linear,
        ffn_out: Linear,
    },
}

/// Generator parameters plus the layer layout that addresses them.
#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub head1: Linear,
    pub head2: Linear,
}

/// All draws for one bag plus their median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEstimate {
    pub median: f64,
    pub draws: Vec<f64>,
}

/// Median as the lower of the two middle values for even lengths.
pub fn lower_median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of no values");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(sorted.len() - 1) / 2]
}

impl Generator {
    pub fn new(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let c = config.feature_dim;
        let d = config.encoder.out_dim;
        let ha = config.encoder.attention_hidden;
        let p = &mut params;
        let encoder = match config.encoder.kind {
            EncoderKind::Attention => Encoder::Attention {
                embed: Linear::new(p, "encoder.embed", c, d, rng),
                pool: GatedAttention::new(p, "encoder.pool", d, ha, rng),
            },
            EncoderKind::Cluster => Encoder::Cluster {
                embed: Linear::new(p, "encoder.embed", c, d, rng),
                region_fc: Linear::new(p, "encoder.region_fc", d, d, rng),
                pool: GatedAttention::new(p, "encoder.pool", d, ha, rng),
            },
            EncoderKind::Sequence => Encoder::Sequence {
                embed: Linear::new(p, "encoder.embed", c, d, rng),
                query: Linear::new(p, "encoder.query", d, d, rng),
                key: Linear::new(p, "encoder.key", d, d, rng),
                value: Linear::new(p, "encoder.value", d, d, rng),
                output: Linear::new(p, "encoder.output", d, d, rng),
                ffn_in: Linear::new(p, "encoder.ffn_in", d, d, rng),
                ffn_out: Linear::new(p, "encoder.ffn_out", d, d, rng),
            },
        };
        let head1 = Linear::new(p, "head.layer1", d, config.head_hidden, rng);
        let head2 = Linear::new(p, "head.layer2", config.head_hidden, 1, rng);
        Ok(Generator {
            config,
            params,
            encoder,
            head1,
            head2,
        })
    }

    /// Bag-level vector (1×out_dim) on `tape`.
    pub fn encode<'a>(&'a self, tape: &mut Tape<'a>, bag: &BagTensors) -> Var {
        let p = &self.params;
        match self.encoder {
            Encoder::Attention { embed, pool } => {
                let x = tape.constant(bag.valid_features.clone());
                let h = embed.forward(tape, p, x);
                let h = tape.relu(h);
                pool.forward(tape, p, h)
            }
            Encoder::Cluster { embed, region_fc, pool } => {
                let x = tape.constant(bag.features.clone());
                let h = embed.forward(tape, p, x);
                let h = tape.relu(h);
                let pool_op = tape.constant(bag.region_pool.clone());
                let regions = tape.matmul(pool_op, h);
                let regions = region_fc.forward(tape, p, regions);
                let regions = tape.relu(regions);
                pool.forward(tape, p, regions)
            }
            Encoder::Sequence {
                embed,
                query,
                key,
                value,
                output,
                ffn_in,
                ffn_out,
            } => {
                let tokens = tape.constant(bag.region_means());
                let e = embed.forward(tape, p, tokens);
                let e = tape.relu(e);
                let q = query.forward(tape, p, e);
                let k = key.forward(tape, p, e);
                let v = value.forward(tape, p, e);
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt);
                let scores = tape.scale(scores, 1.0 / (self.config.encoder.out_dim as f64).sqrt());
                let attn = tape.softmax_rows(scores);
                let mixed = tape.matmul(attn, v);
                let mixed = output.forward(tape, p, mixed);
                let h = tape.add(e, mixed);
                let f = ffn_in.forward(tape, p, h);
                let f = tape.relu(f);
                let f = ffn_out.forward(tape, p, f);
                let h = tape.add(h, f);
                tape.mean_rows(h)
            }
        }
    }

    /// Noise-injected head producing t̂ ∈ (0, 1) as a 1×1 node.
    pub fn head<'a>(&'a self, tape: &mut Tape<'a>, bag_vector: Var, noise: &NoiseDraw) -> Var {
        let p = &self.params;
        let mut x = bag_vector;
        if let Some(n) = &noise.layer1 {
            let n = tape.constant(n.clone());
            x = tape.add(x, n);
        }
        let h = self.head1.forward(tape, p, x);
        let mut h = tape.relu(h);
        if let Some(n) = &noise.layer2 {
            let n = tape.constant(n.clone());
            h = tape.add(h, n);
        }
        let y = self.head2.forward(tape, p, h);
        tape.sigmoid(y)
    }

    /// Fresh noise vectors for the layers enabled by the noise code.
    pub fn draw_noise(&self, rng: &mut Rng) -> NoiseDraw {
        let spec = self.config.noise;
        NoiseDraw {
            layer1: spec.code.layer1.then(|| spec.vector(self.config.encoder.out_dim, rng)),
            layer2: spec.code.layer2.then(|| spec.vector(self.config.head_hidden, rng)),
        }
    }

    pub fn encode_value(&self, bag: &BagTensors) -> Array2<f64> {
        let mut tape = Tape::new();
        let z = self.encode(&mut tape, bag);
        tape.value(z).clone()
    }

    /// Head output for an explicit noise draw.
    pub fn head_value(&self, bag_vector: &Array2<f64>, noise: &NoiseDraw) -> f64 {
        let mut tape = Tape::new();
        let z = tape.constant(bag_vector.clone());
        let t = self.head(&mut tape, z, noise);
        tape.scalar(t)
    }

    /// One sampled t̂ for a precomputed bag vector.
    pub fn sample_time(&self, bag_vector: &Array2<f64>, rng: &mut Rng) -> f64 {
        let noise = self.draw_noise(rng);
        self.head_value(bag_vector, &noise)
    }

    /// `n_draws` samples for one bag (the encoder runs once) and their median.
    pub fn estimate_time(&self, bag: &BagTensors, n_draws: usize, rng: &mut Rng) -> Result<TimeEstimate> {
        if n_draws == 0 {
            return Err(Error::Config("n_draws must be at least 1".into()));
        }
        let z = self.encode_value(bag);
        let draws: Vec<f64> = (0..n_draws).map(|_| self.sample_time(&z, rng)).collect();
        Ok(TimeEstimate {
            median: lower_median(&draws),
            draws,
        })
    }
}
