//! Deterministic synthetic moment/highlight data.
//!
//! A fixed "world" is drawn from the seed: a video map `W` (`d_v × k`), a text
//! map `U` (`d_t × k`) and a highlight offset `b` (`d_v`). Sample `i` uses its
//! own stream `(seed, i)`, so a dataset of `n` samples is a prefix of one
//! with more. Per sample:
//!
//! * query code `q ~ N(0, I_k)`;
//! * 1..=`max_moments` disjoint integer-clip moments (gap ≥ 1 clip);
//! * in-moment clip `W·q + b + ε`, other clips `W·r + ε` with fresh `r ~ N(0, I_k)`;
//! * text tokens `U·q + ε`;
//! * `ε ~ N(0, noise_std²)`; ratings 4 inside moments, 0 outside.
//!
//! Features are rounded to float32 so the in-memory samples equal what the
//! FPK1 files hold.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::annotations::AnnotationRecord;
use super::AnnotatedSample;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub video_len: usize,
    pub text_len: usize,
    pub video_dim: usize,
    pub text_dim: usize,
    pub code_dim: usize,
    pub max_moments: usize,
    pub noise_std: f64,
    pub clip_len: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 64,
            video_len: 32,
            text_len: 8,
            video_dim: 64,
            text_dim: 64,
            code_dim: 16,
            max_moments: 2,
            noise_std: 0.1,
            clip_len: 2.0,
            seed: 7,
        }
    }
}

pub const HIGHLIGHT_RATING: i64 = 4;
const PLACEMENT_TRIES: usize = 1000;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.video_len == 0 || self.text_len == 0 {
            return Err(Error::config("synthetic spec needs positive sample count and lengths"));
        }
        if self.video_dim == 0 || self.text_dim == 0 || self.code_dim == 0 || self.max_moments == 0 {
            return Err(Error::config("synthetic spec needs positive dimensions and max_moments"));
        }
        if !(self.noise_std >= 0.0) || !(self.clip_len > 0.0) {
            return Err(Error::config("noise_std must be >= 0 and clip_len > 0"));
        }
        Ok(())
    }
}

struct World {
    w: Tensor,
    u: Tensor,
    b: Vec<f64>,
}

fn gaussian(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let d = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn apply(m: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Places `k` disjoint `[start, end]` clip ranges with at least one free clip
/// between neighbours, sorted by start.
fn place_moments(k: usize, len: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    let min_len = 2.min(len);
    let max_len = (len / (k + 1)).max(min_len);
    let mut placed: Vec<(usize, usize)> = Vec::with_capacity(k);
    let mut tries = 0;
    while placed.len() < k {
        tries += 1;
        if tries > PLACEMENT_TRIES {
            return Err(Error::data(format!("cannot place {k} disjoint moments in {len} clips")));
        }
        let l = rng.random_range(min_len..=max_len);
        let s = rng.random_range(0..=len - l);
        let e = s + l - 1;
        if placed.iter().all(|&(a, b)| e + 1 < a || b + 1 < s) {
            placed.push((s, e));
        }
    }
    placed.sort_unstable();
    Ok(placed)
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<AnnotatedSample>> {
    spec.validate()?;
    let mut wr = stream(spec.seed, &[u64::MAX]);
    let scale = 1.0 / (spec.code_dim as f64).sqrt();
    let world = World {
        w: Tensor::new(vec![spec.video_dim, spec.code_dim], gaussian(spec.video_dim * spec.code_dim, scale, &mut wr))?,
        u: Tensor::new(vec![spec.text_dim, spec.code_dim], gaussian(spec.text_dim * spec.code_dim, scale, &mut wr))?,
        b: gaussian(spec.video_dim, 1.0, &mut wr),
    };
    (0..spec.n_samples).map(|i| sample(spec, &world, i)).collect()
}

fn sample(spec: &SyntheticSpec, world: &World, i: usize) -> Result<AnnotatedSample> {
    let mut rng = stream(spec.seed, &[i as u64]);
    let q = gaussian(spec.code_dim, 1.0, &mut rng);
    let k = rng.random_range(1..=spec.max_moments);
    let moments = place_moments(k, spec.video_len, &mut rng)?;
    let inside = |c: usize| moments.iter().any(|&(s, e)| s <= c && c <= e);

    let wq = apply(&world.w, &q);
    let mut video = Vec::with_capacity(spec.video_len * spec.video_dim);
    for c in 0..spec.video_len {
        let base = if inside(c) {
            wq.iter().zip(&world.b).map(|(a, b)| a + b).collect()
        } else {
            apply(&world.w, &gaussian(spec.code_dim, 1.0, &mut rng))
        };
        let eps = gaussian(spec.video_dim, spec.noise_std, &mut rng);
        video.extend(base.iter().zip(&eps).map(|(a, e)| a + e));
    }
    let uq = apply(&world.u, &q);
    let mut text = Vec::with_capacity(spec.text_len * spec.text_dim);
    for _ in 0..spec.text_len {
        let eps = gaussian(spec.text_dim, spec.noise_std, &mut rng);
        text.extend(uq.iter().zip(&eps).map(|(a, e)| a + e));
    }
    let duration = spec.video_len as f64 * spec.clip_len;
    let record = AnnotationRecord {
        qid: format!("syn{i:05}"),
        vid: format!("vid{i:05}"),
        query: format!("synthetic query {i}"),
        duration,
        relevant_windows: moments
            .iter()
            .map(|&(s, e)| [s as f64 * spec.clip_len, (e + 1) as f64 * spec.clip_len])
            .collect(),
        saliency_ratings: (0..spec.video_len).map(|c| if inside(c) { HIGHLIGHT_RATING } else { 0 }).collect(),
    };
    AnnotatedSample::from_parts(
        record,
        spec.clip_len,
        HIGHLIGHT_RATING,
        Tensor::new(vec![spec.video_len, spec.video_dim], video)?.round_to_f32(),
        Tensor::new(vec![spec.text_len, spec.text_dim], text)?.round_to_f32(),
    )
}
