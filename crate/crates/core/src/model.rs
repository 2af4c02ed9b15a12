//! The full model: per-modality encoders, cross-modal interaction, moment
//! decoder and prediction heads, with module switches for ablations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::config::ModelConfig;
use crate::decoder::{Decoder, DecoderSettings, MomentDecoder, MomentOutputs, PredictionHeads, QueryReadout};
use crate::encoder::{EncoderSettings, FeatureSequence, Modality, UniModalEncoder};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionBlock, FusionSettings, JointRepresentation, PositionTables, SimpleFusion};
use crate::nn::{normal, Ctx, ParamStore};
use crate::span::MomentSpan;

/// Model output for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub spans: Vec<MomentSpan>,
    pub fg_prob: Vec<f64>,
    /// Sigmoid saliency per real clip, in clip order.
    pub saliency: Vec<f64>,
}

impl PredictionSet {
    /// Query indices by descending foreground probability, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.fg_prob.len()).collect();
        idx.sort_by(|&a, &b| self.fg_prob[b].total_cmp(&self.fg_prob[a]).then(a.cmp(&b)));
        idx
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[L_v × 1]` saliency logits, padded rows included.
    pub saliency_logits: Var,
    pub moments: MomentOutputs,
    /// Head outputs of the earlier decoder layers (filled when `aux_loss` is on).
    pub aux: Vec<MomentOutputs>,
    pub video_mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct MhDetr {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub video_encoder: UniModalEncoder,
    pub text_encoder: UniModalEncoder,
    pub fusion: Fusion,
    pub decoder: Decoder,
    pub heads: PredictionHeads,
    pub positions: PositionTables,
}

impl MhDetr {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let c = config;
        let d = c.hidden;
        let enc = |dropout_in: f64, rows: usize| EncoderSettings {
            hidden: d,
            ffn_hidden: c.ffn_width(),
            layers: if c.use_encoder { c.enc_layers } else { 0 },
            window: c.pool_window,
            subtract: c.pool_subtract,
            input_dropout: dropout_in,
            dropout: c.dropout,
            drop_path: c.drop_path,
            positions: c.encoder_positions.then_some(rows),
        };
        let video_encoder = UniModalEncoder::new(&mut params, Modality::Video, c.video_dim, &enc(c.video_input_dropout, c.max_video_len), &mut rng)?;
        let text_encoder = UniModalEncoder::new(&mut params, Modality::Text, c.text_dim, &enc(c.text_input_dropout, c.max_text_len), &mut rng)?;
        let positions = PositionTables {
            video: params.add("pos.video", normal(&[c.max_video_len, d], c.position_init_std, &mut rng))?,
            text: params.add("pos.text", normal(&[c.max_text_len, d], c.position_init_std, &mut rng))?,
            on_values: c.positions_on_values,
        };
        let fs = FusionSettings {
            hidden: d,
            heads: c.heads,
            ffn_hidden: c.ffn_width(),
            dropout: c.dropout,
            drop_path: c.drop_path,
            residual_from_video: c.fusion_residual_from_video,
        };
        let fusion = if c.use_fusion && c.fusion_layers > 0 {
            Fusion::Full(
                (0..c.fusion_layers)
                    .map(|i| FusionBlock::new(&mut params, &format!("fusion.blocks.{i}"), &fs, &mut rng))
                    .collect::<Result<_>>()?,
            )
        } else {
            Fusion::Simple(SimpleFusion::new(&mut params, "fusion.simple", &fs, &mut rng)?)
        };
        let ds = DecoderSettings {
            hidden: d,
            heads: c.heads,
            ffn_hidden: c.ffn_width(),
            layers: c.dec_layers,
            num_queries: c.num_queries,
            dropout: c.dropout,
            drop_path: c.drop_path,
        };
        let decoder = if c.use_decoder {
            Decoder::Full(MomentDecoder::new(&mut params, "decoder", &ds, &mut rng)?)
        } else {
            Decoder::Readout(QueryReadout::new(&mut params, "decoder.readout", &ds, &mut rng)?)
        };
        let heads = PredictionHeads::new(&mut params, "heads", d, &mut rng)?;
        Ok(MhDetr {
            config: config.clone(),
            params,
            video_encoder,
            text_encoder,
            fusion,
            decoder,
            heads,
            positions,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Rounds every weight to 32-bit precision (inference storage mode).
    pub fn round_to_f32(&mut self) {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let t = self.params.get(id).round_to_f32();
            *self.params.get_mut(id) = t;
        }
    }

    fn check_input(&self, video: &FeatureSequence, text: &FeatureSequence) -> Result<()> {
        if video.modality != Modality::Video || text.modality != Modality::Text {
            return Err(Error::config("forward expects (video, text) sequences"));
        }
        if video.len() > self.config.max_video_len {
            return Err(Error::config(format!("video length {} exceeds max_video_len {}", video.len(), self.config.max_video_len)));
        }
        if text.len() > self.config.max_text_len {
            return Err(Error::config(format!("text length {} exceeds max_text_len {}", text.len(), self.config.max_text_len)));
        }
        Ok(())
    }

    pub fn joint(&self, ctx: &mut Ctx, video: &FeatureSequence, text: &FeatureSequence) -> Result<JointRepresentation> {
        self.check_input(video, text)?;
        let v = self.video_encoder.forward(ctx, video)?;
        let t = self.text_encoder.forward(ctx, text)?;
        self.fusion.forward(ctx, &v, &t, self.positions)
    }

    /// Builds the graph for one sample in the given context.
    pub fn forward(&self, ctx: &mut Ctx, video: &FeatureSequence, text: &FeatureSequence) -> Result<ForwardOutput> {
        let joint = self.joint(ctx, video, text)?;
        let saliency_logits = self.heads.saliency_logits(ctx, &joint)?;
        let feats = self.decoder.forward(ctx, &joint, &self.positions)?;
        let (last, earlier) = feats.split_last().expect("decoder yields at least one layer");
        let moments = self.heads.moments(ctx, *last)?;
        let aux = if self.config.aux_loss {
            earlier.iter().map(|&f| self.heads.moments(ctx, f)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(ForwardOutput {
            saliency_logits,
            moments,
            aux,
            video_mask: joint.pad_mask,
        })
    }

    /// Eval-mode inference for one sample.
    pub fn predict(&self, video: &FeatureSequence, text: &FeatureSequence) -> Result<PredictionSet> {
        let mut ctx = Ctx::eval(&self.params);
        let out = self.forward(&mut ctx, video, text)?;
        Ok(read_predictions(&ctx, &out))
    }
}

/// Extracts plain values from a finished forward pass.
pub fn read_predictions(ctx: &Ctx, out: &ForwardOutput) -> PredictionSet {
    let spans_t = ctx.tape.value(out.moments.spans);
    let logp = ctx.tape.value(out.moments.class_logp);
    let sal = ctx.tape.value(out.saliency_logits);
    PredictionSet {
        spans: (0..spans_t.rows()).map(|i| MomentSpan::new(spans_t.at(i, 0), spans_t.at(i, 1))).collect(),
        fg_prob: (0..logp.rows()).map(|i| logp.at(i, 0).exp()).collect(),
        saliency: sal
            .data()
            .iter()
            .zip(&out.video_mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| 1.0 / (1.0 + (-x).exp()))
            .collect(),
    }
}
