//! Per-modality input projection and the pooling-mixer encoder.
//!
//! Each layer computes
//!
//! ```text
//! F̄ = Norm(F + Pool(F))
//! F̃ = Norm(F̄ + FFN(F̄))
//! ```
//!
//! with stride-1 average pooling (window 3 by default) as the token mixer.
//! Video and text are encoded by separate weights and never see each other.

use rand::Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{add_positions, residual_norm, Ctx, Ffn, LayerNorm, Linear, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Video,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Text => "text",
        }
    }
}

/// Raw extractor features for one modality, `[L × dim]`, with a padding mask
/// (`true` = real token).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub modality: Modality,
    pub values: Tensor,
    pub pad_mask: Vec<bool>,
}

impl FeatureSequence {
    pub fn new(modality: Modality, values: Tensor, pad_mask: Vec<bool>) -> Result<Self> {
        if values.shape().len() != 2 || values.rows() != pad_mask.len() {
            return Err(Error::Shape {
                op: "feature_sequence",
                lhs: values.shape().to_vec(),
                rhs: vec![pad_mask.len()],
            });
        }
        if !pad_mask.iter().any(|&m| m) {
            return Err(Error::data(format!("{} sequence has no real tokens", modality.name())));
        }
        Ok(FeatureSequence {
            modality,
            values,
            pad_mask,
        })
    }

    /// Unpadded sequence: every token is real.
    pub fn dense(modality: Modality, values: Tensor) -> Result<Self> {
        let n = values.rows();
        Self::new(modality, values, vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.pad_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pad_mask.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// A sequence living on the tape in the shared hidden width.
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub values: Var,
    pub pad_mask: Vec<bool>,
}

/// Dropout → Linear → ReLU → Linear → Norm, mapping extractor width to `d`.
#[derive(Clone, Debug)]
pub struct Projection {
    pub l1: Linear,
    pub l2: Linear,
    pub norm: LayerNorm,
    pub input_dropout: f64,
}

impl Projection {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, d: usize, input_dropout: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Projection {
            l1: Linear::new(store, &format!("{name}.l1"), in_dim, d, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), d, d, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), d)?,
            input_dropout,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let x = ctx.dropout(x, self.input_dropout)?;
        let h = self.l1.forward(ctx, x)?;
        let h = ctx.tape.relu(h)?;
        let h = self.l2.forward(ctx, h)?;
        self.norm.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub struct PoolEncoderLayer {
    pub norm1: LayerNorm,
    pub ffn: Ffn,
    pub norm2: LayerNorm,
    pub window: usize,
    pub subtract: bool,
    pub dropout: f64,
    pub drop_path: f64,
}

impl PoolEncoderLayer {
    pub fn forward(&self, ctx: &mut Ctx, x: Var, mask: &[bool]) -> Result<Var> {
        let mut mixed = ctx.tape.avg_pool_1d(x, self.window, Some(mask))?;
        if self.subtract {
            mixed = ctx.tape.sub(mixed, x)?;
        }
        let mixed = ctx.drop_path(mixed, self.drop_path)?;
        let s = ctx.tape.add(x, mixed)?;
        let bar = self.norm1.forward(ctx, s)?;
        let f = self.ffn.forward(ctx, bar)?;
        residual_norm(ctx, &self.norm2, bar, f, self.dropout, self.drop_path)
    }
}

/// Projection plus a stack of pooling layers for one modality.
#[derive(Clone, Debug)]
pub struct UniModalEncoder {
    pub modality: Modality,
    pub in_dim: usize,
    pub hidden: usize,
    pub projection: Projection,
    pub layers: Vec<PoolEncoderLayer>,
    pub positions: Option<ParamId>,
}

pub struct EncoderSettings {
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub layers: usize,
    pub window: usize,
    pub subtract: bool,
    pub input_dropout: f64,
    pub dropout: f64,
    pub drop_path: f64,
    /// Positional table rows when encoder positions are on.
    pub positions: Option<usize>,
}

impl UniModalEncoder {
    pub fn new(
        store: &mut ParamStore,
        modality: Modality,
        in_dim: usize,
        s: &EncoderSettings,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let base = format!("encoder.{}", modality.name());
        let projection = Projection::new(store, &format!("{base}.proj"), in_dim, s.hidden, s.input_dropout, rng)?;
        let mut layers = Vec::with_capacity(s.layers);
        for i in 0..s.layers {
            let name = format!("{base}.layers.{i}");
            layers.push(PoolEncoderLayer {
                norm1: LayerNorm::new(store, &format!("{name}.norm1"), s.hidden)?,
                ffn: Ffn::new(store, &format!("{name}.ffn"), s.hidden, s.ffn_hidden, s.dropout, rng)?,
                norm2: LayerNorm::new(store, &format!("{name}.norm2"), s.hidden)?,
                window: s.window,
                subtract: s.subtract,
                dropout: s.dropout,
                drop_path: s.drop_path,
            });
        }
        let positions = match s.positions {
            Some(rows) => Some(store.add(format!("{base}.pos"), crate::nn::normal(&[rows, s.hidden], 0.02, rng))?),
            None => None,
        };
        Ok(UniModalEncoder {
            modality,
            in_dim,
            hidden: s.hidden,
            projection,
            layers,
            positions,
        })
    }

    pub fn project(&self, ctx: &mut Ctx, raw: &FeatureSequence) -> Result<EncodedSequence> {
        if raw.dim() != self.in_dim {
            return Err(Error::config(format!(
                "{} features have width {}, projection expects {}",
                self.modality.name(),
                raw.dim(),
                self.in_dim
            )));
        }
        let x = ctx.constant(raw.values.clone())?;
        Ok(EncodedSequence {
            values: self.projection.forward(ctx, x)?,
            pad_mask: raw.pad_mask.clone(),
        })
    }

    pub fn encode(&self, ctx: &mut Ctx, x: EncodedSequence) -> Result<EncodedSequence> {
        let width = ctx.tape.value(x.values).cols();
        if width != self.hidden {
            return Err(Error::config(format!("encoder expects width {}, got {width}", self.hidden)));
        }
        let mut h = x.values;
        if let Some(pos) = self.positions {
            h = add_positions(ctx, h, pos)?;
        }
        for layer in &self.layers {
            h = layer.forward(ctx, h, &x.pad_mask)?;
        }
        Ok(EncodedSequence {
            values: h,
            pad_mask: x.pad_mask,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, raw: &FeatureSequence) -> Result<EncodedSequence> {
        let p = self.project(ctx, raw)?;
        self.encode(ctx, p)
    }
}
