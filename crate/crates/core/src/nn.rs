//! Parameter storage, the forward context, and the layers shared by every
//! model stage (linear, layer norm, FFN, multi-head attention).

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, keyed by module path (e.g. `fusion.ca1.q.weight`).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Per-pass state: the tape, parameter bindings, train/eval mode and the
/// dropout RNG. One context per forward pass.
pub struct Ctx<'a> {
    pub tape: Tape,
    params: &'a ParamStore,
    bound: Vec<Option<Var>>,
    train: bool,
    track_grads: bool,
    rng: ChaCha8Rng,
}

impl<'a> Ctx<'a> {
    /// Training context: dropout active, gradients tracked for every parameter.
    pub fn train(params: &'a ParamStore, rng: ChaCha8Rng) -> Self {
        Self::build(params, true, true, rng)
    }

    /// Evaluation context: dropout off and no gradient bookkeeping.
    pub fn eval(params: &'a ParamStore) -> Self {
        use rand::SeedableRng;
        Self::build(params, false, false, ChaCha8Rng::seed_from_u64(0))
    }

    /// Dropout off but gradients tracked; used by gradient checking.
    pub fn deterministic_with_grads(params: &'a ParamStore) -> Self {
        use rand::SeedableRng;
        Self::build(params, false, true, ChaCha8Rng::seed_from_u64(0))
    }

    fn build(params: &'a ParamStore, train: bool, track_grads: bool, rng: ChaCha8Rng) -> Self {
        Ctx {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            train,
            track_grads,
            rng,
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Binds a parameter onto the tape on first use.
    pub fn p(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let v = self.tape.leaf(self.params.get(id).clone(), self.track_grads)?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.tape.constant(t)
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.train {
            return Ok(x);
        }
        self.tape.dropout(x, p, &mut self.rng)
    }

    pub fn drop_path(&mut self, x: Var, p: f64) -> Result<Var> {
        if !self.train {
            return Ok(x);
        }
        self.tape.drop_path(x, p, &mut self.rng)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradient of every parameter that took part in the pass.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, b)| {
                let v = (*b)?;
                let g = self.tape.grad(v)?;
                Some((ParamId(i), g.to_vec()))
            })
            .collect()
    }
}

/// Glorot-uniform matrix `[fan_in, fan_out]`.
pub fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("valid range");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches")
}

pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

/// `y = x·W + b`, with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), xavier(in_dim, out_dim, rng))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let cols = ctx.tape.value(x).cols();
        if cols != self.in_dim {
            return Err(Error::config(format!(
                "linear layer expects width {}, got {cols}",
                self.in_dim
            )));
        }
        let w = ctx.p(self.weight)?;
        let b = ctx.p(self.bias)?;
        let y = ctx.tape.matmul(x, w)?;
        ctx.tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[dim]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let g = ctx.p(self.gamma)?;
        let b = ctx.p(self.beta)?;
        ctx.tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Linear → ReLU → Dropout → Linear.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub l1: Linear,
    pub l2: Linear,
    pub dropout: f64,
}

impl Ffn {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, dropout: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Ffn {
            l1: Linear::new(store, &format!("{name}.l1"), dim, hidden, rng)?,
            l2: Linear::new(store, &format!("{name}.l2"), hidden, dim, rng)?,
            dropout,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let h = self.l1.forward(ctx, x)?;
        let h = ctx.tape.relu(h)?;
        let h = ctx.dropout(h, self.dropout)?;
        self.l2.forward(ctx, h)
    }
}

/// Scaled dot-product attention with `heads` heads and four projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "hidden size {dim} is not divisible by {heads} attention heads"
            )));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    /// `query [Lq×d]`, `key`/`value [Lk×d]`; positional terms are expected to
    /// be added to `query` and `key` by the caller. `key_mask[j] == false`
    /// excludes key `j`.
    pub fn forward(&self, ctx: &mut Ctx, query: Var, key: Var, value: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let q = self.q.forward(ctx, query)?;
        let k = self.k.forward(ctx, key)?;
        let v = self.v.forward(ctx, value)?;
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = ctx.tape.slice_cols(q, h * dh, dh)?;
            let kh = ctx.tape.slice_cols(k, h * dh, dh)?;
            let vh = ctx.tape.slice_cols(v, h * dh, dh)?;
            let scores = ctx.tape.matmul_t(qh, kh)?;
            let scores = ctx.tape.scale(scores, scale)?;
            let attn = ctx.tape.softmax(scores, key_mask)?;
            outs.push(ctx.tape.matmul(attn, vh)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { ctx.tape.concat_cols(&outs)? };
        self.o.forward(ctx, merged)
    }
}

/// Post-norm residual: `Norm(x + DropPath(Dropout(branch)))`.
pub fn residual_norm(ctx: &mut Ctx, norm: &LayerNorm, x: Var, branch: Var, dropout: f64, drop_path: f64) -> Result<Var> {
    let b = ctx.dropout(branch, dropout)?;
    let b = ctx.drop_path(b, drop_path)?;
    let s = ctx.tape.add(x, b)?;
    norm.forward(ctx, s)
}

/// Adds rows `[0, len)` of a positional table to `x [len×d]`.
pub fn add_positions(ctx: &mut Ctx, x: Var, table: ParamId) -> Result<Var> {
    let len = ctx.tape.value(x).rows();
    let max = ctx.params().get(table).rows();
    if len > max {
        return Err(Error::config(format!(
            "sequence length {len} exceeds positional table size {max}"
        )));
    }
    let t = ctx.p(table)?;
    let pos = ctx.tape.slice_rows(t, 0, len)?;
    ctx.tape.add(x, pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn heads_must_divide_dim() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            MultiHeadAttention::new(&mut store, "a", 10, 3, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_key_attention_returns_projected_value() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mha = MultiHeadAttention::new(&mut store, "a", 8, 2, &mut rng).unwrap();
        let mut ctx = Ctx::eval(&store);
        let q = ctx.constant(normal(&[5, 8], 1.0, &mut rng)).unwrap();
        let kv = ctx.constant(normal(&[1, 8], 1.0, &mut rng)).unwrap();
        let out = mha.forward(&mut ctx, q, kv, kv, None).unwrap();
        let v = mha.v.forward(&mut ctx, kv).unwrap();
        let expect = mha.o.forward(&mut ctx, v).unwrap();
        let expect = ctx.tape.value(expect).row(0).to_vec();
        let got = ctx.tape.value(out).clone();
        for r in 0..5 {
            for (a, b) in got.row(r).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_keys_with_identity_projections_average_values() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut rng).unwrap();
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        for lin in [&mha.q, &mha.k, &mha.v, &mha.o] {
            *store.get_mut(lin.weight) = eye.clone();
        }
        let mut ctx = Ctx::eval(&store);
        let q = ctx.constant(normal(&[3, 4], 1.0, &mut rng)).unwrap();
        let k = ctx.constant(Tensor::ones(&[5, 4])).unwrap();
        let vals = normal(&[5, 4], 1.0, &mut rng);
        let mean: Vec<f64> = (0..4).map(|c| (0..5).map(|r| vals.at(r, c)).sum::<f64>() / 5.0).collect();
        let v = ctx.constant(vals).unwrap();
        let out = mha.forward(&mut ctx, q, k, v, None).unwrap();
        for r in 0..3 {
            for (a, b) in ctx.tape.value(out).row(r).iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_param_names_rejected() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::zeros(&[1])).unwrap();
        assert!(store.add("x", Tensor::zeros(&[1])).is_err());
    }
}
