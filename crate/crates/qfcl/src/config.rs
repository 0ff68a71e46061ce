//! Flat TOML run configuration.
//!
//! Every key is optional; an empty file yields the defaults below. Unknown
//! keys are rejected.
//!
//! | key | default |
//! |-----|---------|
//! | `mode` | `"qfcl"` (`"ce_only"` for the baseline) |
//! | `learning_rate` | 1e-5 for qfcl, 3e-5 for ce_only |
//! | `adam_beta1`, `adam_beta2`, `adam_eps` | 0.9, 0.999, 1e-8 |
//! | `batch_size`, `epochs`, `seed`, `grad_clip_norm` | 16, 20, 0, 1.0 |
//! | `tau`, `queue_size`, `n_h`, `alpha`, `beta`, `momentum` | 0.07, 4096, 64, 1.0, 0.5, 0.999 |
//! | `d_model`, `n_heads`, `n_enc_layers`, `n_dec_layers`, `d_ff` | 64, 4, 2, 2, 128 |
//! | `max_len`, `dropout_rate`, `min_freq` | 48, 0.1, 1 |
//! | `pair_count`, `min_distractors`, `max_distractors`, `subject_prob` | 2000, 1, 3, 0.5 |
//! | `focus_phrases`, `templates`, `distractors` | built-in synthetic lists |
//! | `analysis_seed`, `analysis_n_h` | 0, 8 |

use std::path::Path;

use qfcl_core::contrast::ContrastiveConfig;
use qfcl_core::nn::ModelConfig;
use qfcl_core::textcore::SynthConfig;
use qfcl_core::trainer::{Mode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Option<Mode>,
    pub learning_rate: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub grad_clip_norm: Option<f64>,

    pub tau: Option<f64>,
    pub queue_size: Option<usize>,
    pub n_h: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub momentum: Option<f64>,

    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_enc_layers: Option<usize>,
    pub n_dec_layers: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_len: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub min_freq: Option<usize>,

    pub pair_count: Option<usize>,
    pub focus_phrases: Option<Vec<String>>,
    pub templates: Option<Vec<String>>,
    pub distractors: Option<Vec<String>>,
    pub min_distractors: Option<usize>,
    pub max_distractors: Option<usize>,
    pub subject_prob: Option<f64>,

    pub analysis_seed: Option<u64>,
    pub analysis_n_h: Option<usize>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub n_h: Option<usize>,
}

/// Fully resolved settings. `model.vocab_size` stays 0 until a vocabulary
/// has been built.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub min_freq: usize,
    pub analysis_seed: u64,
    pub analysis_n_h: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        ConfigFile::default()
            .resolve(Overrides::default())
            .expect("defaults are valid")
    }
}

fn out_of_range(key: &str, value: impl std::fmt::Display, bound: &str) -> Error {
    Error::Config(format!("{key} = {value} is out of range: must be {bound}"))
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(out_of_range(key, v, "> 0"))
    }
}

fn non_negative(key: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(out_of_range(key, v, ">= 0"))
    }
}

fn unit_open(key: &str, v: f64) -> Result<f64> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(out_of_range(key, v, "in [0, 1)"))
    }
}

fn unit_closed(key: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(out_of_range(key, v, "in [0, 1]"))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<usize> {
    if v >= min {
        Ok(v)
    } else {
        Err(out_of_range(key, v, &format!(">= {min}")))
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn resolve(&self, o: Overrides) -> Result<RunConfig> {
        let mode = o.mode.or(self.mode).unwrap_or(Mode::Qfcl);
        let cd = ContrastiveConfig::default();
        let contrastive = ContrastiveConfig {
            tau: positive("tau", self.tau.unwrap_or(cd.tau))?,
            queue_size: at_least("queue_size", self.queue_size.unwrap_or(cd.queue_size), 1)?,
            n_h: o.n_h.or(self.n_h).unwrap_or(cd.n_h),
            alpha: non_negative("alpha", self.alpha.unwrap_or(cd.alpha))?,
            beta: non_negative("beta", self.beta.unwrap_or(cd.beta))?,
            momentum: unit_closed("momentum", self.momentum.unwrap_or(cd.momentum))?,
        };
        let td = TrainConfig::new(mode);
        let train = TrainConfig {
            learning_rate: positive("learning_rate", self.learning_rate.unwrap_or(td.learning_rate))?,
            adam_beta1: unit_open("adam_beta1", self.adam_beta1.unwrap_or(td.adam_beta1))?,
            adam_beta2: unit_open("adam_beta2", self.adam_beta2.unwrap_or(td.adam_beta2))?,
            adam_eps: positive("adam_eps", self.adam_eps.unwrap_or(td.adam_eps))?,
            batch_size: at_least("batch_size", self.batch_size.unwrap_or(td.batch_size), 1)?,
            epochs: self.epochs.unwrap_or(td.epochs),
            seed: o.seed.or(self.seed).unwrap_or(td.seed),
            grad_clip_norm: positive("grad_clip_norm", self.grad_clip_norm.unwrap_or(td.grad_clip_norm))?,
            contrastive,
            mode,
        };
        if mode == Mode::Qfcl && train.batch_size > train.contrastive.queue_size {
            return Err(out_of_range(
                "queue_size",
                train.contrastive.queue_size,
                &format!(">= batch_size ({})", train.batch_size),
            ));
        }

        let max_len = at_least("max_len", self.max_len.unwrap_or(48), 2)?;
        let d_model = at_least("d_model", self.d_model.unwrap_or(64), 1)?;
        let n_heads = at_least("n_heads", self.n_heads.unwrap_or(4), 1)?;
        if d_model % n_heads != 0 {
            return Err(out_of_range("n_heads", n_heads, &format!("a divisor of d_model ({d_model})")));
        }
        let model = ModelConfig {
            vocab_size: 0,
            d_model,
            n_heads,
            n_enc_layers: at_least("n_enc_layers", self.n_enc_layers.unwrap_or(2), 1)?,
            n_dec_layers: at_least("n_dec_layers", self.n_dec_layers.unwrap_or(2), 1)?,
            d_ff: at_least("d_ff", self.d_ff.unwrap_or(128), 1)?,
            max_len,
            dropout_rate: unit_open("dropout_rate", self.dropout_rate.unwrap_or(0.1))?,
        };

        let sd = SynthConfig::default();
        let synth = SynthConfig {
            pair_count: at_least("pair_count", self.pair_count.unwrap_or(sd.pair_count), 1)?,
            focus_phrases: self.focus_phrases.clone().unwrap_or(sd.focus_phrases),
            templates: self.templates.clone().unwrap_or(sd.templates),
            distractors: self.distractors.clone().unwrap_or(sd.distractors),
            min_distractors: self.min_distractors.unwrap_or(sd.min_distractors),
            max_distractors: self.max_distractors.unwrap_or(sd.max_distractors),
            subject_prob: unit_closed("subject_prob", self.subject_prob.unwrap_or(sd.subject_prob))?,
            max_len,
        };
        if synth.min_distractors > synth.max_distractors {
            return Err(out_of_range(
                "min_distractors",
                synth.min_distractors,
                &format!("<= max_distractors ({})", synth.max_distractors),
            ));
        }
        Ok(RunConfig {
            train,
            model,
            synth,
            min_freq: at_least("min_freq", self.min_freq.unwrap_or(1), 1)?,
            analysis_seed: self.analysis_seed.unwrap_or(0),
            analysis_n_h: self.analysis_n_h.unwrap_or(8),
        })
    }
}

/// Reads and resolves `path`; `None` means all defaults.
pub fn load_config(path: Option<&Path>, overrides: Overrides) -> Result<RunConfig> {
    let file = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ConfigFile::parse(&text)?
        }
        None => ConfigFile::default(),
    };
    file.resolve(overrides)
}

impl RunConfig {
    /// Stable pretty JSON used for manifests and hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
