//! Region-level instance projection discriminator.
//!
//! Patches are embedded by a per-patch MLP and averaged within each region
//! (`v_τ`). The time is embedded by a two-layer MLP (`t_emb`). The score is
//! `sigmoid(mean_τ ⟨v_τ, t_emb⟩ + ψ(gap(X_emb)))` where `gap` is gated
//! attention pooling over regions and `ψ` a linear layer.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, GatedAttention, Linear, ParamStore, Tape, Var};
use crate::rng::Rng;
use crate::tensors::BagTensors;

pub const DEFAULT_EMBED_DIM: usize = 128;
pub const DEFAULT_PATCH_HIDDEN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    /// Inner products per region, then averaged.
    Rlip,
    /// Ablation baseline: one inner product with the pooled bag vector.
    WsiProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub feature_dim: usize,
    pub patch_hidden: usize,
    pub embed_dim: usize,
    pub attention_hidden: usize,
    pub projection: ProjectionKind,
}

impl DiscriminatorConfig {
    pub fn new(feature_dim: usize) -> Self {
        DiscriminatorConfig {
            feature_dim,
            patch_hidden: DEFAULT_PATCH_HIDDEN,
            embed_dim: DEFAULT_EMBED_DIM,
            attention_hidden: DEFAULT_EMBED_DIM,
            projection: ProjectionKind::Rlip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.feature_dim, self.patch_hidden, self.embed_dim, self.attention_hidden].contains(&0) {
            return Err(Error::Config("discriminator dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub params: ParamStore,
    /// Per-patch MLP c → hidden → d.
    pub patch1: Linear,
    pub patch2: Linear,
    /// Time MLP 1 → d → d.
    pub time1: Linear,
    pub time2: Linear,
    pub gap: GatedAttention,
    pub psi: Linear,
}

/// The pieces of one discriminator evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuseOutput {
    pub y_fusion: f64,
    pub y_region: f64,
    pub y_d: f64,
}

/// Analytic size and cost of one discriminator forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCost {
    pub n_params: usize,
    pub n_macs: usize,
    pub layers: Vec<LayerCost>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub n_params: usize,
    pub n_macs: usize,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::new();
        let (c, h, d) = (config.feature_dim, config.patch_hidden, config.embed_dim);
        Ok(Discriminator {
            patch1: Linear::new(&mut p, "region_embed.layer1", c, h, rng),
            patch2: Linear::new(&mut p, "region_embed.layer2", h, d, rng),
            time1: Linear::new(&mut p, "time_embed.layer1", 1, d, rng),
            time2: Linear::new(&mut p, "time_embed.layer2", d, d, rng),
            gap: GatedAttention::new(&mut p, "gap", d, config.attention_hidden, rng),
            psi: Linear::new(&mut p, "psi", d, 1, rng),
            config,
            params: p,
        })
    }

    /// Region embeddings X_emb (regions × d).
    pub fn region_embed<'a>(&'a self, tape: &mut Tape<'a>, bag: &BagTensors) -> Var {
        let p = &self.params;
        let x = tape.constant(bag.features.clone());
        let h = self.patch1.forward(tape, p, x);
        let h = tape.relu(h);
        let e = self.patch2.forward(tape, p, h);
        let pool = tape.constant(bag.region_pool.clone());
        tape.matmul(pool, e)
    }

    /// Time embedding t_emb (1 × d) for a 1×1 time node.
    pub fn time_embed<'a>(&'a self, tape: &mut Tape<'a>, t: Var) -> Var {
        let p = &self.params;
        let h = self.time1.forward(tape, p, t);
        let h = tape.relu(h);
        self.time2.forward(tape, p, h)
    }

    /// Returns `(y_fusion, y_region, y_d)` nodes.
    pub fn fuse_parts<'a>(&'a self, tape: &mut Tape<'a>, x_emb: Var, t: Var) -> (Var, Var, Var) {
        let p = &self.params;
        let t_emb = self.time_embed(tape, t);
        let t_col = tape.transpose(t_emb);
        let (y_fusion, y_region) = match self.config.projection {
            ProjectionKind::Rlip => {
                let per_region = tape.matmul(x_emb, t_col);
                let y_fusion = tape.mean_rows(per_region);
                let pooled = self.gap.forward(tape, p, x_emb);
                (y_fusion, self.psi.forward(tape, p, pooled))
            }
            ProjectionKind::WsiProjection => {
                let pooled = self.gap.forward(tape, p, x_emb);
                let y_fusion = tape.matmul(pooled, t_col);
                (y_fusion, self.psi.forward(tape, p, pooled))
            }
        };
        let logit = tape.add(y_fusion, y_region);
        (y_fusion, y_region, tape.sigmoid(logit))
    }

    /// y_D node.
    pub fn fuse<'a>(&'a self, tape: &mut Tape<'a>, x_emb: Var, t: Var) -> Var {
        self.fuse_parts(tape, x_emb, t).2
    }

    pub fn region_embed_value(&self, bag: &BagTensors) -> Array2<f64> {
        let mut tape = Tape::new();
        let e = self.region_embed(&mut tape, bag);
        tape.value(e).clone()
    }

    pub fn fuse_value(&self, x_emb: &Array2<f64>, t: f64) -> FuseOutput {
        let mut tape = Tape::new();
        let x = tape.constant(x_emb.clone());
        let t = tape.scalar_constant(t);
        let (f, r, y) = self.fuse_parts(&mut tape, x, t);
        let out = FuseOutput {
            y_fusion: tape.scalar(f),
            y_region: tape.scalar(r),
            y_d: tape.scalar(y),
        };
        debug_assert!((out.y_d - sigmoid(out.y_fusion + out.y_region)).abs() < 1e-12);
        out
    }

    /// Score of the pair (bag, t).
    pub fn score(&self, bag: &BagTensors, t: f64) -> f64 {
        self.fuse_value(&self.region_embed_value(bag), t).y_d
    }

    pub fn cost(&self, n_patches: usize, patches_per_region: usize) -> ModelCost {
        count_params_and_macs(&self.config, n_patches, patches_per_region)
    }
}

/// Trainable parameters and multiply–accumulates for one forward pass over
/// a bag of `n_patches` patches grouped `patches_per_region` to a region.
/// Pooling averages count one MAC per accumulated element.
pub fn count_params_and_macs(cfg: &DiscriminatorConfig, n_patches: usize, patches_per_region: usize) -> ModelCost {
    let (c, h, d, ha) = (cfg.feature_dim, cfg.patch_hidden, cfg.embed_dim, cfg.attention_hidden);
    let regions = n_patches / patches_per_region.max(1);
    let linear = |name: &str, i: usize, o: usize, rows: usize| LayerCost {
        name: name.into(),
        n_params: i * o + o,
        n_macs: rows * i * o,
    };
    let fusion_macs = match cfg.projection {
        ProjectionKind::Rlip => regions * d,
        ProjectionKind::WsiProjection => d,
    };
    let layers = vec![
        linear("region_embed.layer1", c, h, n_patches),
        linear("region_embed.layer2", h, d, n_patches),
        LayerCost {
            name: "region_embed.pool".into(),
            n_params: 0,
            n_macs: n_patches * d,
        },
        linear("time_embed.layer1", 1, d, 1),
        linear("time_embed.layer2", d, d, 1),
        linear("gap.attn_v", d, ha, regions),
        linear("gap.attn_u", d, ha, regions),
        linear("gap.attn_w", ha, 1, regions),
        LayerCost {
            name: "gap.gate_and_sum".into(),
            n_params: 0,
            n_macs: regions * ha + regions * d,
        },
        LayerCost {
            name: "fusion".into(),
            n_params: 0,
            n_macs: fusion_macs,
        },
        linear("psi", d, 1, 1),
    ];
    ModelCost {
        n_params: layers.iter().map(|l| l.n_params).sum(),
        n_macs: layers.iter().map(|l| l.n_macs).sum(),
        layers,
    }
}
