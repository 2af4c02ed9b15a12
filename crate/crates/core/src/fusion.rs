//! Cross-modal interaction between the encoded video and text.
//!
//! One block runs four steps:
//!
//! 1. cross-attention, video clips querying text tokens, then an FFN → `F̄_vt`;
//! 2. self-attention over `F̄_vt` (global context);
//! 3. concatenate local and global features along channels (`L_v × 2d`) and
//!    average each channel pair back to `d` → `F̃_vt`;
//! 4. cross-attention with `F̃_vt` as query and the video as key/value → `F_vt`.
//!
//! Every sublayer is post-norm residual. Learned positions are added to the
//! query and key inputs of every attention layer, and to the value inputs
//! too when `PositionTables::on_values` is set. Text padding is masked out in
//! step 1.

use rand::Rng;

use crate::autodiff::Var;
use crate::encoder::EncodedSequence;
use crate::error::{Error, Result};
use crate::nn::{add_positions, residual_norm, Ctx, Ffn, LayerNorm, MultiHeadAttention, ParamId, ParamStore};

/// Video-length joint moment/highlight features.
#[derive(Clone, Debug)]
pub struct JointRepresentation {
    pub values: Var,
    pub pad_mask: Vec<bool>,
}

/// Shared learnable position tables for the attention layers.
#[derive(Clone, Copy, Debug)]
pub struct PositionTables {
    pub video: ParamId,
    pub text: ParamId,
    pub on_values: bool,
}

impl PositionTables {
    /// Value input matching a position-augmented key input `keyed` built from `raw`.
    pub fn value(&self, raw: Var, keyed: Var) -> Var {
        if self.on_values {
            keyed
        } else {
            raw
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionBlock {
    pub text_attn: MultiHeadAttention,
    pub text_attn_norm: LayerNorm,
    pub ffn: Ffn,
    pub ffn_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub self_attn_norm: LayerNorm,
    pub video_attn: MultiHeadAttention,
    pub video_attn_norm: LayerNorm,
    pub dropout: f64,
    pub drop_path: f64,
    pub residual_from_video: bool,
}

pub struct FusionSettings {
    pub hidden: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub dropout: f64,
    pub drop_path: f64,
    pub residual_from_video: bool,
}

impl FusionBlock {
    pub fn new(store: &mut ParamStore, name: &str, s: &FusionSettings, rng: &mut impl Rng) -> Result<Self> {
        let d = s.hidden;
        Ok(FusionBlock {
            text_attn: MultiHeadAttention::new(store, &format!("{name}.text_attn"), d, s.heads, rng)?,
            text_attn_norm: LayerNorm::new(store, &format!("{name}.text_attn_norm"), d)?,
            ffn: Ffn::new(store, &format!("{name}.ffn"), d, s.ffn_hidden, s.dropout, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d)?,
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, s.heads, rng)?,
            self_attn_norm: LayerNorm::new(store, &format!("{name}.self_attn_norm"), d)?,
            video_attn: MultiHeadAttention::new(store, &format!("{name}.video_attn"), d, s.heads, rng)?,
            video_attn_norm: LayerNorm::new(store, &format!("{name}.video_attn_norm"), d)?,
            dropout: s.dropout,
            drop_path: s.drop_path,
            residual_from_video: s.residual_from_video,
        })
    }

    /// Step 1: text-conditioned clip features `F̄_vt`.
    pub fn text_conditioned(&self, ctx: &mut Ctx, video: &EncodedSequence, text: &EncodedSequence, pos: PositionTables) -> Result<Var> {
        let q = add_positions(ctx, video.values, pos.video)?;
        let k = add_positions(ctx, text.values, pos.text)?;
        let v = pos.value(text.values, k);
        let a = self.text_attn.forward(ctx, q, k, v, Some(&text.pad_mask))?;
        let x = residual_norm(ctx, &self.text_attn_norm, video.values, a, self.dropout, self.drop_path)?;
        let f = self.ffn.forward(ctx, x)?;
        residual_norm(ctx, &self.ffn_norm, x, f, self.dropout, self.drop_path)
    }

    /// Steps 2–3: self-attention for global context, then the channel-pair
    /// mean of `cat(local, global)`.
    pub fn aggregate(&self, ctx: &mut Ctx, local: Var, mask: &[bool], pos: PositionTables) -> Result<Var> {
        let qk = add_positions(ctx, local, pos.video)?;
        let s = self.self_attn.forward(ctx, qk, qk, pos.value(local, qk), Some(mask))?;
        let global = residual_norm(ctx, &self.self_attn_norm, local, s, self.dropout, self.drop_path)?;
        concat_pool(ctx, local, global)
    }

    pub fn forward(&self, ctx: &mut Ctx, video: &EncodedSequence, text: &EncodedSequence, pos: PositionTables) -> Result<JointRepresentation> {
        let (dv, dt) = (ctx.tape.value(video.values).cols(), ctx.tape.value(text.values).cols());
        if dv != dt {
            return Err(Error::config(format!("fusion inputs differ in width: video {dv}, text {dt}")));
        }
        let local = self.text_conditioned(ctx, video, text, pos)?;
        let agg = self.aggregate(ctx, local, &video.pad_mask, pos)?;
        let q = add_positions(ctx, agg, pos.video)?;
        let k = add_positions(ctx, video.values, pos.video)?;
        let a = self.video_attn.forward(ctx, q, k, pos.value(video.values, k), Some(&video.pad_mask))?;
        let residual = if self.residual_from_video { video.values } else { agg };
        let out = residual_norm(ctx, &self.video_attn_norm, residual, a, self.dropout, self.drop_path)?;
        Ok(JointRepresentation {
            values: out,
            pad_mask: video.pad_mask.clone(),
        })
    }
}

/// `Pool(cat(a, b))` over the channel axis: `(a + b) / 2` per channel.
pub fn concat_pool(ctx: &mut Ctx, a: Var, b: Var) -> Result<Var> {
    let cat = ctx.tape.concat_cols(&[a, b])?;
    ctx.tape.fold_halves_mean(cat)
}

/// Single video→text cross-attention layer; stands in for the interaction
/// module when it is ablated.
#[derive(Clone, Debug)]
pub struct SimpleFusion {
    pub attn: MultiHeadAttention,
    pub norm: LayerNorm,
    pub dropout: f64,
    pub drop_path: f64,
}

impl SimpleFusion {
    pub fn new(store: &mut ParamStore, name: &str, s: &FusionSettings, rng: &mut impl Rng) -> Result<Self> {
        Ok(SimpleFusion {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), s.hidden, s.heads, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), s.hidden)?,
            dropout: s.dropout,
            drop_path: s.drop_path,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, video: &EncodedSequence, text: &EncodedSequence, pos: PositionTables) -> Result<JointRepresentation> {
        let q = add_positions(ctx, video.values, pos.video)?;
        let k = add_positions(ctx, text.values, pos.text)?;
        let a = self.attn.forward(ctx, q, k, pos.value(text.values, k), Some(&text.pad_mask))?;
        let out = residual_norm(ctx, &self.norm, video.values, a, self.dropout, self.drop_path)?;
        Ok(JointRepresentation {
            values: out,
            pad_mask: video.pad_mask.clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Full(Vec<FusionBlock>),
    Simple(SimpleFusion),
}

impl Fusion {
    pub fn forward(&self, ctx: &mut Ctx, video: &EncodedSequence, text: &EncodedSequence, pos: PositionTables) -> Result<JointRepresentation> {
        match self {
            Fusion::Full(blocks) => {
                let mut v = video.clone();
                let mut joint = None;
                for b in blocks {
                    let j = b.forward(ctx, &v, text, pos)?;
                    v = EncodedSequence {
                        values: j.values,
                        pad_mask: j.pad_mask.clone(),
                    };
                    joint = Some(j);
                }
                joint.ok_or_else(|| Error::config("fusion enabled with zero blocks"))
            }
            Fusion::Simple(s) => s.forward(ctx, video, text, pos),
        }
    }
}
