//! Configuration shared by the model, losses, data pipeline and trainer.
//!
//! Every section deserializes with defaults, so a config file only needs the
//! keys it overrides. `Config::default()` is the full-scale setting
//! (d = 256, layers 1/1/4, ten moment queries, 2816/512-dim inputs).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub video_dim: usize,
    pub text_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    /// FFN hidden width; `None` means `4 * hidden`.
    pub ffn_hidden: Option<usize>,
    pub enc_layers: usize,
    pub fusion_layers: usize,
    pub dec_layers: usize,
    pub num_queries: usize,
    pub max_video_len: usize,
    pub max_text_len: usize,
    pub pool_window: usize,
    /// Token mixer computes `Pool(F) - F` instead of `Pool(F)`.
    pub pool_subtract: bool,
    /// Add learned positions before the pooling encoder.
    pub encoder_positions: bool,
    /// Final fusion residual taken from the video features rather than the query path.
    pub fusion_residual_from_video: bool,
    /// Std of the normal init of the learned position tables.
    pub position_init_std: f64,
    /// Positions also enter the value inputs of attention, not only queries and keys.
    pub positions_on_values: bool,
    pub dropout: f64,
    pub drop_path: f64,
    pub video_input_dropout: f64,
    pub text_input_dropout: f64,
    pub aux_loss: bool,
    pub use_encoder: bool,
    pub use_fusion: bool,
    pub use_decoder: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            video_dim: 2816,
            text_dim: 512,
            hidden: 256,
            heads: 8,
            ffn_hidden: None,
            enc_layers: 1,
            fusion_layers: 1,
            dec_layers: 4,
            num_queries: 10,
            max_video_len: 75,
            max_text_len: 32,
            pool_window: 3,
            pool_subtract: false,
            encoder_positions: false,
            fusion_residual_from_video: false,
            position_init_std: 1.0,
            positions_on_values: true,
            dropout: 0.1,
            drop_path: 0.1,
            video_input_dropout: 0.5,
            text_input_dropout: 0.3,
            aux_loss: false,
            use_encoder: true,
            use_fusion: true,
            use_decoder: true,
            init_seed: 2023,
        }
    }
}

impl ModelConfig {
    pub fn ffn_width(&self) -> usize {
        self.ffn_hidden.unwrap_or(4 * self.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.pool_window.is_multiple_of(2) {
            return Err(Error::config("pool_window must be odd"));
        }
        if self.num_queries == 0 || self.video_dim == 0 || self.text_dim == 0 {
            return Err(Error::config("num_queries and input widths must be positive"));
        }
        if !(self.position_init_std >= 0.0 && self.position_init_std.is_finite()) {
            return Err(Error::config("position_init_std must be finite and >= 0"));
        }
        if self.use_decoder && self.dec_layers == 0 {
            return Err(Error::config("decoder enabled with zero layers"));
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("drop_path", self.drop_path),
            ("video_input_dropout", self.video_input_dropout),
            ("text_input_dropout", self.text_input_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Digest of the architecture-defining fields; checkpoints refuse to
    /// load into a model whose hash differs.
    pub fn arch_hash(&self) -> String {
        let arch = serde_json::json!({
            "video_dim": self.video_dim,
            "text_dim": self.text_dim,
            "hidden": self.hidden,
            "heads": self.heads,
            "ffn": self.ffn_width(),
            "enc_layers": self.enc_layers,
            "fusion_layers": self.fusion_layers,
            "dec_layers": self.dec_layers,
            "num_queries": self.num_queries,
            "max_video_len": self.max_video_len,
            "max_text_len": self.max_text_len,
            "use_encoder": self.use_encoder,
            "use_fusion": self.use_fusion,
            "use_decoder": self.use_decoder,
        });
        hex::encode(Sha256::digest(arch.to_string().as_bytes()))
    }
}

/// Loss weights and per-term switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_bce: f64,
    pub lambda_rank: f64,
    pub lambda_l1: f64,
    pub lambda_iou: f64,
    pub lambda_cls: f64,
    pub saliency_pos_weight: f64,
    pub fg_weight: f64,
    pub rank_margin: f64,
    pub use_bce: bool,
    pub use_rank: bool,
    pub use_l1: bool,
    pub use_iou: bool,
    pub use_cls: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_bce: 1.0,
            lambda_rank: 0.1,
            lambda_l1: 10.0,
            lambda_iou: 1.0,
            lambda_cls: 4.0,
            saliency_pos_weight: 5.0,
            fg_weight: 10.0,
            rank_margin: 0.2,
            use_bce: true,
            use_rank: true,
            use_l1: true,
            use_iou: true,
            use_cls: true,
        }
    }
}

impl LossConfig {
    pub fn any_moment_loss(&self) -> bool {
        self.use_cls || self.use_l1 || self.use_iou
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early once this many optimizer steps ran.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub clip_grad_norm: Option<f64>,
    pub warmup_steps: u64,
    /// Fraction of the dataset held out for per-epoch evaluation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 200,
            max_steps: None,
            seed: 2023,
            clip_grad_norm: None,
            warmup_steps: 0,
            val_fraction: 0.15,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 || self.batch_size == 0 {
            return Err(Error::config("weight_decay must be >= 0 and batch_size > 0"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub clip_len: f64,
    /// Clips rated at or above this value count as highlights.
    pub saliency_threshold: i64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            clip_len: 2.0,
            saliency_threshold: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

/// Module switches of the five module-ablation rows.
pub fn module_ablation(row: usize) -> Option<(bool, bool, bool)> {
    // (encoder, fusion, decoder)
    match row {
        1 => Some((true, false, false)),
        2 => Some((true, true, false)),
        3 => Some((true, false, true)),
        4 => Some((false, true, true)),
        5 => Some((true, true, true)),
        _ => None,
    }
}

/// Loss switches of the seven loss-ablation rows.
pub fn loss_ablation(row: usize) -> Option<[bool; 5]> {
    // [cls, l1, iou, bce, rank]
    match row {
        1 => Some([false, false, false, true, true]),
        2 => Some([true, true, true, false, false]),
        3 => Some([true, false, true, true, true]),
        4 => Some([true, true, false, true, true]),
        5 => Some([true, true, true, false, true]),
        6 => Some([true, true, true, true, false]),
        7 => Some([true, true, true, true, true]),
        _ => None,
    }
}

impl Config {
    pub fn apply_module_ablation(&mut self, row: usize) -> Result<()> {
        let (e, f, d) = module_ablation(row).ok_or_else(|| Error::config(format!("no module ablation row {row}")))?;
        self.model.use_encoder = e;
        self.model.use_fusion = f;
        self.model.use_decoder = d;
        Ok(())
    }

    pub fn apply_loss_ablation(&mut self, row: usize) -> Result<()> {
        let [cls, l1, iou, bce, rank] =
            loss_ablation(row).ok_or_else(|| Error::config(format!("no loss ablation row {row}")))?;
        self.loss.use_cls = cls;
        self.loss.use_l1 = l1;
        self.loss.use_iou = iou;
        self.loss.use_bce = bce;
        self.loss.use_rank = rank;
        Ok(())
    }
}
