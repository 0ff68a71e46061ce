//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "QFCLCKPT"  u32 version=1  u32 header_len  header (JSON)
//! repeated:   u32 name_len  name  u64 payload_len  payload
//! ```
//!
//! The header holds the model shape, the id-ordered vocabulary, run metadata
//! and the section names in file order. Sections:
//!
//! * `model`: query parameters as a tensor list
//! * `key_encoder`: momentum encoder parameters as a tensor list
//! * `queue`: `u64 capacity, u64 count, u64 width`, then `f64` entries oldest first
//! * `optimizer`: `u64 t, u64 step`, then the `m` and `v` tensor lists
//!
//! A tensor list is `u32 count` followed by `u32 path_len, path, u32 rows,
//! u32 cols, f32 data` per tensor. Inference checkpoints carry `model` only;
//! readers that only need the model skip the other sections.

use std::path::Path;

use qfcl_core::contrast::{MemoryQueue, MomentumPair};
use qfcl_core::nn::{ModelConfig, ModelParams, Representation};
use qfcl_core::tensor::Matrix;
use qfcl_core::textcore::Vocab;
use qfcl_core::trainer::{Adam, Mode, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"QFCLCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub mode: Mode,
    pub seed: u64,
    pub dtype: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    vocab: Vec<String>,
    meta: CheckpointMeta,
    sections: Vec<String>,
}

/// Momentum encoder, queue and optimizer moments needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState {
    pub key: ModelParams<f32>,
    pub queue: MemoryQueue,
    pub adam_t: u64,
    pub adam_m: Vec<Matrix<f32>>,
    pub adam_v: Vec<Matrix<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocab,
    pub meta: CheckpointMeta,
    pub model: ModelParams<f32>,
    pub resume: Option<ResumeState>,
}

impl Checkpoint {
    /// Model-only checkpoint.
    pub fn inference(vocab: &Vocab, state: &TrainState<f32>, cfg: &TrainConfig) -> Self {
        Checkpoint {
            vocab: vocab.clone(),
            meta: meta_of(state, cfg),
            model: state.params().clone(),
            resume: None,
        }
    }

    /// Checkpoint carrying everything needed to continue training.
    pub fn full(vocab: &Vocab, state: &TrainState<f32>, cfg: &TrainConfig) -> Self {
        Checkpoint {
            resume: Some(ResumeState {
                key: state.pair.key.clone(),
                queue: state.queue.clone(),
                adam_t: state.adam.t,
                adam_m: state.adam.m.clone(),
                adam_v: state.adam.v.clone(),
            }),
            ..Checkpoint::inference(vocab, state, cfg)
        }
    }

    /// Rebuilds the training state. Without resume sections this starts a
    /// fresh momentum encoder, queue and optimizer from the stored model.
    pub fn into_train_state(self, cfg: &TrainConfig) -> TrainState<f32> {
        let mut state = TrainState::new(self.model, cfg);
        state.step = self.meta.step;
        state.epoch = self.meta.epoch;
        if let Some(r) = self.resume {
            state.pair = MomentumPair {
                query: state.pair.query,
                key: r.key,
                m: cfg.contrastive.momentum,
            };
            state.queue = r.queue;
            state.adam = Adam {
                t: r.adam_t,
                m: r.adam_m,
                v: r.adam_v,
                ..state.adam
            };
        }
        state
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<(&str, Vec<u8>)> = vec![("model", tensor_list(self.model.named()))];
        if let Some(r) = &self.resume {
            sections.push(("key_encoder", tensor_list(r.key.named())));
            sections.push(("queue", queue_bytes(&r.queue)));
            let mut opt = Vec::new();
            opt.extend(r.adam_t.to_le_bytes());
            opt.extend(self.meta.step.to_le_bytes());
            let paths = self.model.paths();
            opt.extend(tensor_list(paths.iter().map(String::as_str).zip(&r.adam_m)));
            opt.extend(tensor_list(paths.iter().map(String::as_str).zip(&r.adam_v)));
            sections.push(("optimizer", opt));
        }
        let header = Header {
            model: self.model.config().clone(),
            vocab: self.vocab.tokens().to_vec(),
            meta: self.meta.clone(),
            sections: sections.iter().map(|(n, _)| n.to_string()).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((header.len() as u32).to_le_bytes());
        out.extend(header);
        for (name, payload) in sections {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
            out.extend((payload.len() as u64).to_le_bytes());
            out.extend(payload);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parses a checkpoint. With `model_only` the resume sections are skipped
    /// without being decoded.
    pub fn from_bytes(bytes: &[u8], model_only: bool, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8).map_err(&bad)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.u32().map_err(&bad)? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen).map_err(&bad)?).map_err(|e| bad(format!("header: {e}")))?;
        let cfg = header.model;
        cfg.validate().map_err(|e| bad(e.to_string()))?;
        let vocab = Vocab::from_tokens(header.vocab).ok_or_else(|| bad("invalid vocabulary".into()))?;
        if vocab.len() != cfg.vocab_size {
            return Err(bad(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                cfg.vocab_size
            )));
        }

        let mut model = None;
        let (mut key, mut queue, mut opt) = (None, None, None);
        for expected in &header.sections {
            let nlen = r.u32().map_err(&bad)? as usize;
            let name = std::str::from_utf8(r.take(nlen).map_err(&bad)?)
                .map_err(|_| bad("section name is not utf-8".into()))?;
            if name != expected {
                return Err(bad(format!("section {name:?} where {expected:?} was listed")));
            }
            let plen = r.u64().map_err(&bad)? as usize;
            let payload = r.take(plen).map_err(&bad)?;
            let mut s = Reader { buf: payload, pos: 0 };
            match name {
                "model" => {
                    let named = s.tensor_list().map_err(&bad)?;
                    model = Some(ModelParams::from_named(&cfg, named).map_err(|e| bad(e.to_string()))?);
                }
                _ if model_only => {}
                "key_encoder" => {
                    let named = s.tensor_list().map_err(&bad)?;
                    key = Some(ModelParams::from_named(&cfg, named).map_err(|e| bad(e.to_string()))?);
                }
                "queue" => queue = Some(s.queue(cfg.d_model).map_err(&bad)?),
                "optimizer" => {
                    let t = s.u64().map_err(&bad)?;
                    let _step = s.u64().map_err(&bad)?;
                    let m = s.tensor_list().map_err(&bad)?;
                    let v = s.tensor_list().map_err(&bad)?;
                    opt = Some((t, m, v));
                }
                other => return Err(bad(format!("unknown section {other:?}"))),
            }
            if !model_only && s.pos != payload.len() {
                return Err(bad(format!("trailing bytes in section {name:?}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after last section".into()));
        }
        let model: ModelParams<f32> = model.ok_or_else(|| bad("missing model section".into()))?;
        if !model.is_full() {
            return Err(bad("model section holds only an encoder".into()));
        }
        let resume = match (key, queue, opt) {
            (Some(key), Some(queue), Some((t, m, v))) => {
                let shapes_match = |list: &[(String, Matrix<f32>)]| {
                    list.len() == model.len()
                        && list
                            .iter()
                            .zip(model.named())
                            .all(|((p, a), (q, b))| p == q && a.shape() == b.shape())
                };
                if !shapes_match(&m) || !shapes_match(&v) {
                    return Err(bad("optimizer moments do not match the model".into()));
                }
                Some(ResumeState {
                    key,
                    queue,
                    adam_t: t,
                    adam_m: m.into_iter().map(|(_, x)| x).collect(),
                    adam_v: v.into_iter().map(|(_, x)| x).collect(),
                })
            }
            (None, None, None) => None,
            _ if model_only => None,
            _ => return Err(bad("incomplete resume sections".into())),
        };
        Ok(Checkpoint {
            vocab,
            meta: header.meta,
            model,
            resume,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, false, path)
    }

    /// Loads vocabulary, metadata and model, ignoring any resume sections.
    pub fn load_model(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, true, path)
    }
}

fn meta_of(state: &TrainState<f32>, cfg: &TrainConfig) -> CheckpointMeta {
    CheckpointMeta {
        epoch: state.epoch,
        step: state.step,
        mode: cfg.mode,
        seed: cfg.seed,
        dtype: "f32".into(),
    }
}

fn tensor_list<'a>(items: impl Iterator<Item = (&'a str, &'a Matrix<f32>)>) -> Vec<u8> {
    let items: Vec<_> = items.collect();
    let mut out = Vec::new();
    out.extend((items.len() as u32).to_le_bytes());
    for (path, m) in items {
        out.extend((path.len() as u32).to_le_bytes());
        out.extend(path.as_bytes());
        out.extend((m.rows() as u32).to_le_bytes());
        out.extend((m.cols() as u32).to_le_bytes());
        for v in m.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

fn queue_bytes(q: &MemoryQueue) -> Vec<u8> {
    let width = q.iter().next().map_or(0, Representation::dim);
    let mut out = Vec::new();
    out.extend((q.capacity() as u64).to_le_bytes());
    out.extend((q.len() as u64).to_le_bytes());
    out.extend((width as u64).to_le_bytes());
    for e in q.iter() {
        for v in &e.vector {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor_list(&mut self) -> std::result::Result<Vec<(String, Matrix<f32>)>, String> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let plen = self.u32()? as usize;
            let path = String::from_utf8(self.take(plen)?.to_vec()).map_err(|_| "tensor path is not utf-8")?;
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            let bytes = self.take(rows.checked_mul(cols).and_then(|c| c.checked_mul(4)).ok_or("tensor too large")?)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push((path, Matrix::from_vec(rows, cols, data)));
        }
        Ok(out)
    }

    fn queue(&mut self, d_model: usize) -> std::result::Result<MemoryQueue, String> {
        let capacity = self.u64()? as usize;
        let count = self.u64()? as usize;
        let width = self.u64()? as usize;
        if count > capacity || (count > 0 && width != d_model) {
            return Err(format!("queue holds {count} entries of width {width}, capacity {capacity}"));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let bytes = self.take(width.checked_mul(8).ok_or("queue too large")?)?;
            let v = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Representation::new(v));
        }
        let mut q = MemoryQueue::new(capacity);
        q.step(entries).map_err(|e| e.to_string())?;
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qfcl_core::textcore::{build_vocab, QAPair};

    fn state() -> (Vocab, TrainConfig, TrainState<f32>) {
        let vocab = build_vocab(&[QAPair::new("knee pain", "what causes knee pain?")], 1);
        let mut mc = ModelConfig::small(vocab.len(), 16);
        mc.d_model = 8;
        mc.n_heads = 2;
        mc.d_ff = 16;
        let cfg = TrainConfig::new(Mode::Qfcl);
        let mut st = TrainState::new(ModelParams::init(&mc, 3).unwrap(), &cfg);
        st.queue
            .step(vec![Representation::new(vec![0.5; 8]), Representation::new(vec![-1.25; 8])])
            .unwrap();
        st.adam.t = 7;
        st.adam.m[0].data_mut()[0] = 0.25;
        st.step = 7;
        st.epoch = 1;
        (vocab, cfg, st)
    }

    #[test]
    fn full_round_trip() {
        let (vocab, cfg, st) = state();
        let ck = Checkpoint::full(&vocab, &st, &cfg);
        let p = Path::new("mem");
        let back = Checkpoint::from_bytes(&ck.to_bytes(), false, p).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.into_train_state(&cfg), st);
    }

    #[test]
    fn model_only_reader_skips_resume_sections() {
        let (vocab, cfg, st) = state();
        let full = Checkpoint::full(&vocab, &st, &cfg).to_bytes();
        let slim = Checkpoint::inference(&vocab, &st, &cfg).to_bytes();
        assert!(slim.len() < full.len());
        let p = Path::new("mem");
        let a = Checkpoint::from_bytes(&full, true, p).unwrap();
        let b = Checkpoint::from_bytes(&slim, true, p).unwrap();
        assert_eq!(a, b);
        assert!(a.resume.is_none());
    }

    #[test]
    fn rejects_corruption() {
        let (vocab, cfg, st) = state();
        let bytes = Checkpoint::full(&vocab, &st, &cfg).to_bytes();
        let p = Path::new("mem");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, false, p), Err(Error::Format { .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], false, p).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, false, p).is_err());
    }
}
