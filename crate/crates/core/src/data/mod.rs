//! Dataset layout, loading and writing.
//!
//! A dataset directory holds `annotations.jsonl`, `video_feats/<vid>.fpk`
//! (`L_v × d_v`) and `text_feats/<qid>.fpk` (`L_t × d_t`).

pub mod annotations;
pub mod batch;
pub mod fpk;
pub mod synthetic;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::DataConfig;
use crate::encoder::{FeatureSequence, Modality};
use crate::error::{Error, Result};
use crate::loss::GroundTruth;
use crate::metrics::EvalTarget;
use crate::model::PredictionSet;
use crate::tensor::Tensor;
use annotations::{num_clips, AnnotationRecord};

pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const VIDEO_DIR: &str = "video_feats";
pub const TEXT_DIR: &str = "text_feats";

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedSample {
    pub record: AnnotationRecord,
    pub clip_len: f64,
    pub video: FeatureSequence,
    pub text: FeatureSequence,
    pub gt: GroundTruth,
}

impl AnnotatedSample {
    pub fn from_parts(record: AnnotationRecord, clip_len: f64, threshold: i64, video: Tensor, text: Tensor) -> Result<Self> {
        record.validate(clip_len)?;
        let lv = num_clips(record.duration, clip_len);
        if video.rows() != lv {
            return Err(Error::data(format!(
                "qid {}: video features have {} clips, duration implies {lv}",
                record.qid,
                video.rows()
            )));
        }
        let gt = GroundTruth {
            moments: record.normalized_moments(),
            saliency_labels: record.saliency_labels(threshold),
        };
        Ok(AnnotatedSample {
            video: FeatureSequence::dense(Modality::Video, video)?,
            text: FeatureSequence::dense(Modality::Text, text)?,
            gt,
            clip_len,
            record,
        })
    }

    pub fn qid(&self) -> &str {
        &self.record.qid
    }

    pub fn duration(&self) -> f64 {
        self.record.duration
    }

    pub fn eval_target(&self) -> EvalTarget {
        EvalTarget {
            moments: self.gt.moments.clone(),
            saliency_labels: self.gt.saliency_labels.clone(),
        }
    }
}

fn feature_path(dir: &Path, sub: &str, id: &str) -> PathBuf {
    dir.join(sub).join(format!("{id}.fpk"))
}

pub fn load_dataset(dir: &Path, cfg: &DataConfig) -> Result<Vec<AnnotatedSample>> {
    let records = annotations::load_annotations(&dir.join(ANNOTATIONS), cfg.clip_len)?;
    records
        .into_iter()
        .map(|r| {
            let video = fpk::read(&feature_path(dir, VIDEO_DIR, &r.vid))?;
            let text = fpk::read(&feature_path(dir, TEXT_DIR, &r.qid))?;
            if video.shape().len() != 2 || text.shape().len() != 2 {
                return Err(Error::data(format!("qid {}: feature files must be 2-D", r.qid)));
            }
            AnnotatedSample::from_parts(r, cfg.clip_len, cfg.saliency_threshold, video, text)
        })
        .collect()
}

pub fn write_dataset(dir: &Path, samples: &[AnnotatedSample]) -> Result<()> {
    std::fs::create_dir_all(dir.join(VIDEO_DIR))?;
    std::fs::create_dir_all(dir.join(TEXT_DIR))?;
    let records: Vec<AnnotationRecord> = samples.iter().map(|s| s.record.clone()).collect();
    annotations::write_annotations(&dir.join(ANNOTATIONS), &records)?;
    for s in samples {
        fpk::write(&feature_path(dir, VIDEO_DIR, &s.record.vid), &s.video.values, fpk::Dtype::F32)?;
        fpk::write(&feature_path(dir, TEXT_DIR, &s.record.qid), &s.text.values, fpk::Dtype::F32)?;
    }
    Ok(())
}

/// SHA-256 over the annotation file and every feature file, in sorted
/// relative-path order, each prefixed by its path.
pub fn content_hash(dir: &Path) -> Result<String> {
    let mut files = vec![PathBuf::from(ANNOTATIONS)];
    for sub in [VIDEO_DIR, TEXT_DIR] {
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir.join(sub))?
            .map(|e| e.map(|e| Path::new(sub).join(e.file_name())))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        files.extend(names);
    }
    let mut h = Sha256::new();
    for f in files {
        h.update(f.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(dir.join(&f))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// One line of prediction output; spans in seconds, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub qid: String,
    /// `[start_sec, end_sec, score]`.
    pub spans: Vec<[f64; 3]>,
    pub saliency: Vec<f64>,
}

impl PredictionRecord {
    pub fn new(qid: &str, duration: f64, p: &PredictionSet) -> Self {
        let spans = p
            .ranking()
            .into_iter()
            .map(|i| {
                let (s, e) = p.spans[i].clamped().to_seconds(duration);
                [s, e, p.fg_prob[i]]
            })
            .collect();
        PredictionRecord {
            qid: qid.to_string(),
            spans,
            saliency: p.saliency.clone(),
        }
    }
}

pub fn write_predictions(path: &Path, recs: &[PredictionRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in recs {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}
