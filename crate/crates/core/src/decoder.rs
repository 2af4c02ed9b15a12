//! Moment decoder over learnable queries and the three prediction heads.
//!
//! Decoder layers follow the DETR layout: the target starts at zero, the
//! query embeddings act as positional terms for self- and cross-attention,
//! and the joint features get the video position table on their keys (and
//! values, when positions go on values).

use rand::Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::fusion::{JointRepresentation, PositionTables};
use crate::nn::{add_positions, normal, residual_norm, Ctx, Ffn, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
    pub norm3: LayerNorm,
    pub dropout: f64,
    pub drop_path: f64,
}

pub struct DecoderSettings {
    pub hidden: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub layers: usize,
    pub num_queries: usize,
    pub dropout: f64,
    pub drop_path: f64,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, s: &DecoderSettings, rng: &mut impl Rng) -> Result<Self> {
        let d = s.hidden;
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, s.heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, s.heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d)?,
            ffn: Ffn::new(store, &format!("{name}.ffn"), d, s.ffn_hidden, s.dropout, rng)?,
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d)?,
            dropout: s.dropout,
            drop_path: s.drop_path,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, tgt: Var, query_pos: Var, memory: Var, memory_keys: Var, mask: &[bool]) -> Result<Var> {
        let qk = ctx.tape.add(tgt, query_pos)?;
        let a = self.self_attn.forward(ctx, qk, qk, tgt, None)?;
        let tgt = residual_norm(ctx, &self.norm1, tgt, a, self.dropout, self.drop_path)?;
        let q = ctx.tape.add(tgt, query_pos)?;
        let c = self.cross_attn.forward(ctx, q, memory_keys, memory, Some(mask))?;
        let tgt = residual_norm(ctx, &self.norm2, tgt, c, self.dropout, self.drop_path)?;
        let f = self.ffn.forward(ctx, tgt)?;
        residual_norm(ctx, &self.norm3, tgt, f, self.dropout, self.drop_path)
    }
}

#[derive(Clone, Debug)]
pub struct MomentDecoder {
    pub queries: ParamId,
    pub layers: Vec<DecoderLayer>,
}

impl MomentDecoder {
    pub fn new(store: &mut ParamStore, name: &str, s: &DecoderSettings, rng: &mut impl Rng) -> Result<Self> {
        let queries = store.add(format!("{name}.queries"), normal(&[s.num_queries, s.hidden], 1.0, rng))?;
        let layers = (0..s.layers)
            .map(|i| DecoderLayer::new(store, &format!("{name}.layers.{i}"), s, rng))
            .collect::<Result<_>>()?;
        Ok(MomentDecoder { queries, layers })
    }

    /// Output of every layer in order; the last entry is the moment features.
    pub fn forward(&self, ctx: &mut Ctx, joint: &JointRepresentation, pos: &PositionTables) -> Result<Vec<Var>> {
        let query_pos = ctx.p(self.queries)?;
        let shape = ctx.tape.shape(query_pos).to_vec();
        let mut tgt = ctx.constant(Tensor::zeros(&shape))?;
        let keys = add_positions(ctx, joint.values, pos.video)?;
        let memory = pos.value(joint.values, keys);
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            tgt = layer.forward(ctx, tgt, query_pos, memory, keys, &joint.pad_mask)?;
            outs.push(tgt);
        }
        Ok(outs)
    }
}

/// One cross-attention read of the joint features by the moment queries;
/// stands in for the decoder when it is ablated.
#[derive(Clone, Debug)]
pub struct QueryReadout {
    pub queries: ParamId,
    pub attn: MultiHeadAttention,
    pub norm: LayerNorm,
    pub dropout: f64,
}

impl QueryReadout {
    pub fn new(store: &mut ParamStore, name: &str, s: &DecoderSettings, rng: &mut impl Rng) -> Result<Self> {
        Ok(QueryReadout {
            queries: store.add(format!("{name}.queries"), normal(&[s.num_queries, s.hidden], 1.0, rng))?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), s.hidden, s.heads, rng)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), s.hidden)?,
            dropout: s.dropout,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, joint: &JointRepresentation, pos: &PositionTables) -> Result<Vec<Var>> {
        let q = ctx.p(self.queries)?;
        let keys = add_positions(ctx, joint.values, pos.video)?;
        let a = self.attn.forward(ctx, q, keys, pos.value(joint.values, keys), Some(&joint.pad_mask))?;
        Ok(vec![residual_norm(ctx, &self.norm, q, a, self.dropout, 0.0)?])
    }
}

#[derive(Clone, Debug)]
pub enum Decoder {
    Full(MomentDecoder),
    Readout(QueryReadout),
}

impl Decoder {
    pub fn forward(&self, ctx: &mut Ctx, joint: &JointRepresentation, pos: &PositionTables) -> Result<Vec<Var>> {
        match self {
            Decoder::Full(d) => d.forward(ctx, joint, pos),
            Decoder::Readout(r) => r.forward(ctx, joint, pos),
        }
    }

    pub fn queries(&self) -> ParamId {
        match self {
            Decoder::Full(d) => d.queries,
            Decoder::Readout(r) => r.queries,
        }
    }
}

/// Span and class outputs for one set of moment features.
#[derive(Clone, Copy, Debug)]
pub struct MomentOutputs {
    /// `[L_m × 2]` normalized (start, end), sigmoid range.
    pub spans: Var,
    /// `[L_m × 2]` log-probabilities; column 0 is foreground.
    pub class_logp: Var,
}

#[derive(Clone, Debug)]
pub struct PredictionHeads {
    pub saliency: Linear,
    pub span: Linear,
    pub class: Linear,
}

impl PredictionHeads {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(PredictionHeads {
            saliency: Linear::new(store, &format!("{name}.saliency"), d, 1, rng)?,
            span: Linear::new(store, &format!("{name}.span"), d, 2, rng)?,
            class: Linear::new(store, &format!("{name}.class"), d, 2, rng)?,
        })
    }

    /// `[L_v × 1]` unbounded saliency logits.
    pub fn saliency_logits(&self, ctx: &mut Ctx, joint: &JointRepresentation) -> Result<Var> {
        self.saliency.forward(ctx, joint.values)
    }

    pub fn moments(&self, ctx: &mut Ctx, feats: Var) -> Result<MomentOutputs> {
        let raw = self.span.forward(ctx, feats)?;
        let spans = ctx.tape.sigmoid(raw)?;
        let logits = self.class.forward(ctx, feats)?;
        let class_logp = ctx.tape.log_softmax(logits)?;
        Ok(MomentOutputs { spans, class_logp })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn settings() -> DecoderSettings {
        DecoderSettings {
            hidden: 8,
            heads: 2,
            ffn_hidden: 16,
            layers: 2,
            num_queries: 4,
            dropout: 0.1,
            drop_path: 0.1,
        }
    }

    fn setup() -> (ParamStore, MomentDecoder, PredictionHeads, PositionTables, ChaCha8Rng) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dec = MomentDecoder::new(&mut store, "dec", &settings(), &mut rng).unwrap();
        let heads = PredictionHeads::new(&mut store, "heads", 8, &mut rng).unwrap();
        let pos = PositionTables {
            video: store.add("pv", normal(&[12, 8], 0.5, &mut rng)).unwrap(),
            text: store.add("pt", normal(&[4, 8], 0.5, &mut rng)).unwrap(),
            on_values: false,
        };
        (store, dec, heads, pos, rng)
    }

    fn joint(ctx: &mut Ctx, rng: &mut ChaCha8Rng, len: usize) -> JointRepresentation {
        JointRepresentation {
            values: ctx.constant(normal(&[len, 8], 1.0, rng)).unwrap(),
            pad_mask: vec![true; len],
        }
    }

    #[test]
    fn decoder_output_shape() {
        let (store, dec, _, pos, mut rng) = setup();
        let mut ctx = Ctx::eval(&store);
        let j = joint(&mut ctx, &mut rng, 9);
        let outs = dec.forward(&mut ctx, &j, &pos).unwrap();
        assert_eq!(outs.len(), 2);
        assert_eq!(ctx.tape.shape(*outs.last().unwrap()), &[4, 8]);
    }

    #[test]
    fn zero_span_weights_give_sigmoid_of_bias() {
        let (mut store, dec, heads, pos, mut rng) = setup();
        *store.get_mut(heads.span.weight) = Tensor::zeros(&[8, 2]);
        *store.get_mut(heads.span.bias) = Tensor::new(vec![2], vec![0.3, -1.2]).unwrap();
        let mut ctx = Ctx::eval(&store);
        let j = joint(&mut ctx, &mut rng, 6);
        let feats = *dec.forward(&mut ctx, &j, &pos).unwrap().last().unwrap();
        let out = heads.moments(&mut ctx, feats).unwrap();
        let spans = ctx.tape.value(out.spans);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for r in 0..4 {
            assert!((spans.at(r, 0) - sig(0.3)).abs() < 1e-15);
            assert!((spans.at(r, 1) - sig(-1.2)).abs() < 1e-15);
        }
    }

    #[test]
    fn class_probabilities_sum_to_one() {
        let (store, dec, heads, pos, mut rng) = setup();
        let mut ctx = Ctx::eval(&store);
        let j = joint(&mut ctx, &mut rng, 5);
        let feats = *dec.forward(&mut ctx, &j, &pos).unwrap().last().unwrap();
        let out = heads.moments(&mut ctx, feats).unwrap();
        let lp = ctx.tape.value(out.class_logp);
        for r in 0..4 {
            assert!((lp.at(r, 0).exp() + lp.at(r, 1).exp() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn query_permutation_permutes_outputs() {
        let (mut store, dec, heads, pos, mut rng) = setup();
        let mut ctx = Ctx::eval(&store);
        let jt = normal(&[7, 8], 1.0, &mut rng);
        let j = JointRepresentation {
            values: ctx.constant(jt.clone()).unwrap(),
            pad_mask: vec![true; 7],
        };
        let feats = *dec.forward(&mut ctx, &j, &pos).unwrap().last().unwrap();
        let out = heads.moments(&mut ctx, feats).unwrap();
        let a = ctx.tape.value(out.spans).clone();

        let perm = [2, 0, 3, 1];
        let q = store.get(dec.queries).clone();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| q.row(i).to_vec()).collect();
        *store.get_mut(dec.queries) = Tensor::from_rows(&rows).unwrap();
        let mut ctx = Ctx::eval(&store);
        let j = JointRepresentation {
            values: ctx.constant(jt).unwrap(),
            pad_mask: vec![true; 7],
        };
        let feats = *dec.forward(&mut ctx, &j, &pos).unwrap().last().unwrap();
        let out = heads.moments(&mut ctx, feats).unwrap();
        let b = ctx.tape.value(out.spans).clone();
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((b.at(new, c) - a.at(old, c)).abs() <= 1e-12);
            }
        }
    }
}
