//! Right-padding of variable-length samples into a common shape.

use crate::encoder::{FeatureSequence, Modality};
use crate::error::Result;
use crate::tensor::Tensor;

use super::AnnotatedSample;

/// Model inputs of one batch member, padded to the batch maxima.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedSample {
    pub video: FeatureSequence,
    pub text: FeatureSequence,
}

/// Keeps the first `max_len` tokens.
pub fn truncate(seq: &FeatureSequence, max_len: usize) -> Result<FeatureSequence> {
    if seq.len() <= max_len {
        return Ok(seq.clone());
    }
    FeatureSequence::new(seq.modality, seq.values.slice_rows(0, max_len)?, seq.pad_mask[..max_len].to_vec())
}

fn pad_to(seq: &FeatureSequence, len: usize, modality: Modality) -> Result<FeatureSequence> {
    let dim = seq.dim();
    let mut data = seq.values.data().to_vec();
    data.resize(len * dim, 0.0);
    let mut mask = seq.pad_mask.clone();
    mask.resize(len, false);
    FeatureSequence::new(modality, Tensor::new(vec![len, dim], data)?, mask)
}

pub fn pad_batch(samples: &[&AnnotatedSample], max_text_len: usize) -> Result<Vec<PaddedSample>> {
    let texts: Vec<FeatureSequence> = samples.iter().map(|s| truncate(&s.text, max_text_len)).collect::<Result<_>>()?;
    let lv = samples.iter().map(|s| s.video.len()).max().unwrap_or(0);
    let lt = texts.iter().map(|t| t.len()).max().unwrap_or(0);
    samples
        .iter()
        .zip(&texts)
        .map(|(s, t)| {
            Ok(PaddedSample {
                video: pad_to(&s.video, lv, Modality::Video)?,
                text: pad_to(t, lt, Modality::Text)?,
            })
        })
        .collect()
}
