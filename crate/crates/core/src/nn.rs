//! A small pre-norm encoder-decoder transformer.
//!
//! Parameters live in a flat list addressed by stable paths. The token
//! embedding (`embed.tok`) is shared by encoder and decoder; the output
//! projection is separate. The encoder parameters form a prefix of the list,
//! which is what the momentum key encoder copies.
//!
//! Forward passes are recorded on an autodiff [`Tape`] through a [`Binder`].
//! The value-level helpers ([`encode`], [`decode_teacher_forced`],
//! [`generate`]) run the same code with every parameter bound as a constant
//! and dropout off.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{log_sum_exp, AttentionMask, AutodiffError, Tape, Var};
use crate::tensor::{sinusoidal_positions, Matrix, Scalar};
use crate::textcore::{TokenSequence, BOS, EOS, PAD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// d_model 64, 4 heads, 2+2 layers, d_ff 128.
    pub fn small(vocab_size: usize, max_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_ff: 128,
            max_len,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.into()));
        if self.vocab_size <= EOS as usize {
            return bad("vocab_size must cover the reserved tokens");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("d_model, n_heads and d_ff must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return bad("need at least one encoder and one decoder layer");
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of parameter tensors belonging to the encoder (embedding included).
    pub fn encoder_tensors(&self) -> usize {
        1 + ENC_STRIDE * self.n_enc_layers + 2
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty sequence")]
    Empty,
    #[error("token id {id} outside a vocabulary of {vocab}")]
    BadToken { id: u32, vocab: usize },
    #[error("decoder input must begin with BOS")]
    MissingBos,
    #[error("parameter {path}: {msg}")]
    Param { path: String, msg: String },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Sentence representation in double precision regardless of model precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pub vector: Vec<f64>,
}

impl Representation {
    pub fn new(vector: Vec<f64>) -> Self {
        Representation { vector }
    }

    pub fn from_values<T: Scalar>(values: &[T]) -> Self {
        Representation::new(values.iter().map(|v| Scalar::to_f64(*v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_finite(&self) -> bool {
        self.vector.iter().all(|v| v.is_finite())
    }
}

const ENC_STRIDE: usize = 16;
const DEC_STRIDE: usize = 26;
const ATTN: [&str; 8] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"];

#[derive(Clone, Copy)]
enum Init {
    Uniform(f64),
    Ones,
    Zeros,
}

fn specs(c: &ModelConfig) -> Vec<(String, usize, usize, Init)> {
    let d = c.d_model;
    let lin = |fan_in: usize| Init::Uniform(Float::sqrt(3.0 / fan_in as f64));
    let mut out = vec![(String::from("embed.tok"), c.vocab_size, d, lin(d))];
    let ln = |out: &mut Vec<_>, p: &str| {
        out.push((format!("{p}.g"), 1, d, Init::Ones));
        out.push((format!("{p}.b"), 1, d, Init::Zeros));
    };
    let attn = |out: &mut Vec<_>, p: &str| {
        for name in ATTN {
            if name.starts_with('w') {
                out.push((format!("{p}.{name}"), d, d, lin(d)));
            } else {
                out.push((format!("{p}.{name}"), 1, d, Init::Zeros));
            }
        }
    };
    let ff = |out: &mut Vec<_>, p: &str| {
        out.push((format!("{p}.w1"), d, c.d_ff, lin(d)));
        out.push((format!("{p}.b1"), 1, c.d_ff, Init::Zeros));
        out.push((format!("{p}.w2"), c.d_ff, d, lin(c.d_ff)));
        out.push((format!("{p}.b2"), 1, d, Init::Zeros));
    };
    for l in 0..c.n_enc_layers {
        ln(&mut out, &format!("enc.{l}.ln1"));
        attn(&mut out, &format!("enc.{l}.attn"));
        ln(&mut out, &format!("enc.{l}.ln2"));
        ff(&mut out, &format!("enc.{l}.ff"));
    }
    ln(&mut out, "enc.ln_f");
    for l in 0..c.n_dec_layers {
        ln(&mut out, &format!("dec.{l}.ln1"));
        attn(&mut out, &format!("dec.{l}.self"));
        ln(&mut out, &format!("dec.{l}.ln2"));
        attn(&mut out, &format!("dec.{l}.cross"));
        ln(&mut out, &format!("dec.{l}.ln3"));
        ff(&mut out, &format!("dec.{l}.ff"));
    }
    ln(&mut out, "dec.ln_f");
    out.push((String::from("out.w"), d, c.vocab_size, lin(d)));
    out.push((String::from("out.b"), 1, c.vocab_size, Init::Zeros));
    out
}

/// Model weights, or just the encoder prefix of them (key encoder).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    paths: Vec<String>,
    values: Vec<Matrix<T>>,
    positions: Matrix<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut paths = Vec::new();
        let mut values = Vec::new();
        for (path, rows, cols, init) in specs(config) {
            let data = (0..rows * cols)
                .map(|_| match init {
                    Init::Uniform(a) => T::from_f64(rng.gen_range(-a..a)),
                    Init::Ones => T::one(),
                    Init::Zeros => T::zero(),
                })
                .collect();
            paths.push(path);
            values.push(Matrix::from_vec(rows, cols, data));
        }
        Ok(ModelParams {
            positions: sinusoidal_positions(config.max_len, config.d_model),
            config: config.clone(),
            paths,
            values,
        })
    }

    /// Rebuilds from named tensors. Accepts the full list or the encoder prefix,
    /// in canonical order, with shapes matching `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Matrix<T>)>) -> Result<Self, NnError> {
        config.validate()?;
        let specs = specs(config);
        if named.len() != specs.len() && named.len() != config.encoder_tensors() {
            return Err(NnError::Param {
                path: String::from("*"),
                msg: format!("expected {} or {} tensors, got {}", specs.len(), config.encoder_tensors(), named.len()),
            });
        }
        let mut paths = Vec::with_capacity(named.len());
        let mut values = Vec::with_capacity(named.len());
        for ((path, m), (want, rows, cols, _)) in named.into_iter().zip(specs) {
            if path != want {
                return Err(NnError::Param {
                    path,
                    msg: format!("expected {want}"),
                });
            }
            if m.shape() != (rows, cols) {
                return Err(NnError::Param {
                    path,
                    msg: format!("shape {:?}, expected {:?}", m.shape(), (rows, cols)),
                });
            }
            if !m.is_finite() {
                return Err(NnError::Param {
                    path,
                    msg: String::from("non-finite value"),
                });
            }
            paths.push(path);
            values.push(m);
        }
        Ok(ModelParams {
            positions: sinusoidal_positions(config.max_len, config.d_model),
            config: config.clone(),
            paths,
            values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when the decoder and output projection are present.
    pub fn is_full(&self) -> bool {
        self.values.len() > self.config.encoder_tensors()
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    pub fn values(&self) -> &[Matrix<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.values
    }

    pub fn get(&self, path: &str) -> Option<&Matrix<T>> {
        self.paths.iter().position(|p| p == path).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Matrix<T>> {
        let i = self.paths.iter().position(|p| p == path)?;
        Some(&mut self.values[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.paths.iter().map(String::as_str).zip(&self.values)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Copy of the encoder prefix.
    pub fn encoder(&self) -> Self {
        let n = self.config.encoder_tensors();
        ModelParams {
            config: self.config.clone(),
            paths: self.paths[..n].to_vec(),
            values: self.values[..n].to_vec(),
            positions: self.positions.clone(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            paths: self.paths.clone(),
            values: self.values.iter().map(|m| m.map(|v| U::from_f64(Scalar::to_f64(v)))).collect(),
            positions: sinusoidal_positions(self.config.max_len, self.config.d_model),
        }
    }

    fn check_input(&self, seq: &TokenSequence) -> Result<(), NnError> {
        if seq.is_empty() {
            return Err(NnError::Empty);
        }
        if seq.len() > self.config.max_len {
            return Err(NnError::TooLong {
                len: seq.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&id) = seq.ids().iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(NnError::BadToken {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }
}

/// Encoder outputs recorded on a tape.
#[derive(Clone, Debug)]
pub struct EncoderOut {
    pub states: Var,
    pub pooled: Var,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct DecoderOut {
    pub states: Var,
    pub pooled: Var,
}

/// Binds parameters onto one tape, each at most once.
pub struct Binder<'p, T> {
    params: &'p ModelParams<T>,
    vars: Vec<Option<Var>>,
    trainable: bool,
    offset: usize,
}

impl<'p, T: Scalar> Binder<'p, T> {
    /// Parameters become tape parameters; gradients are reported by tensor index.
    pub fn trainable(params: &'p ModelParams<T>) -> Self {
        Self::trainable_at(params, 0)
    }

    /// Like `trainable`, with gradient slots starting at `offset` so two
    /// parameter sets can share one tape.
    pub fn trainable_at(params: &'p ModelParams<T>, offset: usize) -> Self {
        Binder {
            params,
            vars: vec![None; params.len()],
            trainable: true,
            offset,
        }
    }

    /// Parameters become constants.
    pub fn frozen(params: &'p ModelParams<T>) -> Self {
        Binder {
            params,
            vars: vec![None; params.len()],
            trainable: false,
            offset: 0,
        }
    }

    fn p(&mut self, tape: &mut Tape<T>, idx: usize) -> Var {
        if let Some(v) = self.vars[idx] {
            return v;
        }
        let m = self.params.values[idx].clone();
        let v = if self.trainable {
            tape.param(self.offset + idx, m)
        } else {
            tape.constant(m)
        };
        self.vars[idx] = Some(v);
        v
    }

    fn embed(
        &mut self,
        tape: &mut Tape<T>,
        ids: &[u32],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Var {
        let d = self.params.config.d_model;
        let table = self.p(tape, 0);
        let x = tape.gather(table, ids.iter().map(|&i| i as usize).collect());
        let x = tape.scale(x, T::from_f64(Float::sqrt(d as f64)));
        let pos = Matrix::from_vec(
            ids.len(),
            d,
            self.params.positions.data()[..ids.len() * d].to_vec(),
        );
        let pos = tape.constant(pos);
        let x = tape.add(x, pos);
        self.dropout(tape, x, rng)
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        let rate = self.params.config.dropout_rate;
        let Some(rng) = rng.as_deref_mut() else {
            return x;
        };
        if rate == 0.0 {
            return x;
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let n = tape.value(x).data().len();
        let mask = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        tape.mul_const(x, mask)
    }

    fn layer_norm(&mut self, tape: &mut Tape<T>, x: Var, base: usize) -> Var {
        let g = self.p(tape, base);
        let b = self.p(tape, base + 1);
        tape.layer_norm(x, g, b)
    }

    fn linear(&mut self, tape: &mut Tape<T>, x: Var, w: usize, b: usize) -> Var {
        let wv = self.p(tape, w);
        let bv = self.p(tape, b);
        let y = tape.matmul(x, wv);
        tape.add_row(y, bv)
    }

    /// Multi-head attention with parameters `base..base + 8`.
    fn attention(
        &mut self,
        tape: &mut Tape<T>,
        q_in: Var,
        kv_in: Var,
        base: usize,
        mask: &AttentionMask,
    ) -> Var {
        let heads = self.params.config.n_heads;
        let dh = self.params.config.head_dim();
        let q = self.linear(tape, q_in, base, base + 1);
        let k = self.linear(tape, kv_in, base + 2, base + 3);
        let v = self.linear(tape, kv_in, base + 4, base + 5);
        let scale = T::from_f64(1.0 / Float::sqrt(dh as f64));
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.col_slice(q, h * dh, dh),
                    tape.col_slice(k, h * dh, dh),
                    tape.col_slice(v, h * dh, dh),
                )
            };
            let scores = tape.matmul_bt(qh, kh);
            let w = tape.masked_softmax(scores, scale, mask);
            outs.push(tape.matmul(w, vh));
        }
        let cat = if heads == 1 { outs[0] } else { tape.concat_cols(outs) };
        self.linear(tape, cat, base + 6, base + 7)
    }

    fn feed_forward(&mut self, tape: &mut Tape<T>, x: Var, base: usize) -> Var {
        let h = self.linear(tape, x, base, base + 1);
        let h = tape.gelu(h);
        self.linear(tape, h, base + 2, base + 3)
    }

    /// Encodes `input`; `rng` enables dropout.
    pub fn encode(
        &mut self,
        tape: &mut Tape<T>,
        input: &TokenSequence,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncoderOut, NnError> {
        self.params.check_input(input)?;
        let cfg = &self.params.config;
        let (layers, ln_f) = (cfg.n_enc_layers, 1 + ENC_STRIDE * cfg.n_enc_layers);
        let mask = key_mask(input.mask());
        let mut x = self.embed(tape, input.ids(), &mut rng);
        for l in 0..layers {
            let base = 1 + ENC_STRIDE * l;
            let h = self.layer_norm(tape, x, base);
            let a = self.attention(tape, h, h, base + 2, &mask);
            let a = self.dropout(tape, a, &mut rng);
            x = tape.add(x, a);
            let h = self.layer_norm(tape, x, base + 10);
            let f = self.feed_forward(tape, h, base + 12);
            let f = self.dropout(tape, f, &mut rng);
            x = tape.add(x, f);
        }
        let states = self.layer_norm(tape, x, ln_f);
        let pooled = tape.mean_rows(states, valid_rows(input.mask()));
        Ok(EncoderOut {
            states,
            pooled,
            mask: input.mask().to_vec(),
        })
    }

    /// Runs the decoder over `input` (which starts with BOS) attending to `enc`.
    pub fn decode(
        &mut self,
        tape: &mut Tape<T>,
        enc: &EncoderOut,
        input: &TokenSequence,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<DecoderOut, NnError> {
        if !self.params.is_full() {
            return Err(NnError::Param {
                path: String::from("dec"),
                msg: String::from("decoder parameters missing"),
            });
        }
        self.params.check_input(input)?;
        if input.ids()[0] != BOS {
            return Err(NnError::MissingBos);
        }
        let cfg = &self.params.config;
        let layers = cfg.n_dec_layers;
        let enc_end = cfg.encoder_tensors();
        let mut self_mask = key_mask(input.mask());
        self_mask.causal = true;
        let cross_mask = key_mask(&enc.mask);
        let mut x = self.embed(tape, input.ids(), &mut rng);
        for l in 0..layers {
            let base = enc_end + DEC_STRIDE * l;
            let h = self.layer_norm(tape, x, base);
            let a = self.attention(tape, h, h, base + 2, &self_mask);
            let a = self.dropout(tape, a, &mut rng);
            x = tape.add(x, a);
            let h = self.layer_norm(tape, x, base + 10);
            let a = self.attention(tape, h, enc.states, base + 12, &cross_mask);
            let a = self.dropout(tape, a, &mut rng);
            x = tape.add(x, a);
            let h = self.layer_norm(tape, x, base + 20);
            let f = self.feed_forward(tape, h, base + 22);
            let f = self.dropout(tape, f, &mut rng);
            x = tape.add(x, f);
        }
        let states = self.layer_norm(tape, x, enc_end + DEC_STRIDE * layers);
        let pooled = tape.mean_rows(states, valid_rows(input.mask()));
        Ok(DecoderOut { states, pooled })
    }

    /// Vocabulary logits for every decoder row.
    pub fn logits(&mut self, tape: &mut Tape<T>, states: Var) -> Var {
        let w = self.params.len() - 2;
        self.linear(tape, states, w, w + 1)
    }
}

fn key_mask(mask: &[bool]) -> AttentionMask {
    AttentionMask {
        keys: if mask.iter().all(|m| *m) {
            None
        } else {
            Some(mask.to_vec())
        },
        causal: false,
    }
}

fn valid_rows(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i))
        .collect()
}

/// Eval-mode encoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded<T> {
    pub states: Matrix<T>,
    pub mask: Vec<bool>,
    pub pooled: Representation,
}

pub fn encode<T: Scalar>(params: &ModelParams<T>, input: &TokenSequence) -> Result<Encoded<T>, NnError> {
    let mut tape = Tape::new();
    let out = Binder::frozen(params).encode(&mut tape, input, None)?;
    Ok(Encoded {
        pooled: Representation::from_values(tape.value(out.pooled).data()),
        states: tape.value(out.states).clone(),
        mask: out.mask,
    })
}

/// Logits `(target_len, vocab)` and the pooled decoder representation.
pub fn decode_teacher_forced<T: Scalar>(
    params: &ModelParams<T>,
    enc: &Encoded<T>,
    target: &TokenSequence,
) -> Result<(Matrix<T>, Representation), NnError> {
    let mut tape = Tape::new();
    let mut b = Binder::frozen(params);
    let enc_out = constant_encoder(&mut tape, enc);
    let dec = b.decode(&mut tape, &enc_out, target, None)?;
    let logits = b.logits(&mut tape, dec.states);
    Ok((
        tape.value(logits).clone(),
        Representation::from_values(tape.value(dec.pooled).data()),
    ))
}

fn constant_encoder<T: Scalar>(tape: &mut Tape<T>, enc: &Encoded<T>) -> EncoderOut {
    let states = tape.constant(enc.states.clone());
    EncoderOut {
        states,
        pooled: states,
        mask: enc.mask.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
}

/// Log-probabilities of the next token after `prefix`. PAD and BOS are never
/// proposed.
fn next_log_probs<T: Scalar>(
    params: &ModelParams<T>,
    enc: &Encoded<T>,
    prefix: &[u32],
) -> Result<Vec<f64>, NnError> {
    let mut tape = Tape::new();
    let mut b = Binder::frozen(params);
    let enc_out = constant_encoder(&mut tape, enc);
    let dec = b.decode(&mut tape, &enc_out, &TokenSequence::new(prefix.to_vec()), None)?;
    let states = tape.value(dec.states);
    let last = Matrix::row_vector(states.row(states.rows() - 1).to_vec());
    let n = params.len();
    let mut logits = last.matmul(&params.values[n - 2]);
    logits.add_assign(&params.values[n - 1]);
    let mut row: Vec<f64> = logits.data().iter().map(|v| Scalar::to_f64(*v)).collect();
    row[PAD as usize] = f64::NEG_INFINITY;
    row[BOS as usize] = f64::NEG_INFINITY;
    let lse = log_sum_exp(&row);
    Ok(row.into_iter().map(|v| v - lse).collect())
}

/// Decodes from `[BOS]` until EOS or `max_len` tokens (BOS included).
pub fn generate<T: Scalar>(
    params: &ModelParams<T>,
    enc: &Encoded<T>,
    max_len: usize,
    strategy: Strategy,
) -> Result<TokenSequence, NnError> {
    let max_len = max_len.clamp(1, params.config.max_len);
    match strategy {
        Strategy::Greedy => greedy(params, enc, max_len),
        Strategy::Beam(k) => beam(params, enc, max_len, k.max(1)),
    }
}

fn greedy<T: Scalar>(
    params: &ModelParams<T>,
    enc: &Encoded<T>,
    max_len: usize,
) -> Result<TokenSequence, NnError> {
    let mut ids = vec![BOS];
    while ids.len() < max_len {
        let lp = next_log_probs(params, enc, &ids)?;
        let mut best = 0;
        for (i, v) in lp.iter().enumerate() {
            if *v > lp[best] {
                best = i;
            }
        }
        ids.push(best as u32);
        if best as u32 == EOS {
            break;
        }
    }
    Ok(TokenSequence::new(ids))
}

#[derive(Clone)]
struct Hyp {
    ids: Vec<u32>,
    score: f64,
}

/// Higher score first, then shorter, then lexicographically smaller ids.
fn rank(a: &Hyp, b: &Hyp) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.ids.len().cmp(&b.ids.len()))
        .then_with(|| a.ids.cmp(&b.ids))
}

fn beam<T: Scalar>(
    params: &ModelParams<T>,
    enc: &Encoded<T>,
    max_len: usize,
    k: usize,
) -> Result<TokenSequence, NnError> {
    let mut live = vec![Hyp {
        ids: vec![BOS],
        score: 0.0,
    }];
    let mut done: Vec<Hyp> = Vec::new();
    while !live.is_empty() && live[0].ids.len() < max_len {
        let mut cands = Vec::with_capacity(live.len() * k);
        for h in &live {
            let lp = next_log_probs(params, enc, &h.ids)?;
            let mut order: Vec<usize> = (0..lp.len()).filter(|i| lp[*i].is_finite()).collect();
            order.sort_by(|a, b| lp[*b].partial_cmp(&lp[*a]).unwrap_or(Ordering::Equal).then(a.cmp(b)));
            for &t in order.iter().take(k) {
                let mut ids = h.ids.clone();
                ids.push(t as u32);
                cands.push(Hyp {
                    ids,
                    score: h.score + lp[t],
                });
            }
        }
        cands.sort_by(rank);
        cands.truncate(k);
        live.clear();
        for c in cands {
            if c.ids.last() == Some(&EOS) {
                done.push(c);
            } else {
                live.push(c);
            }
        }
        done.sort_by(rank);
        // Scores only fall as hypotheses grow, so a finished one that already
        // beats the best live one cannot be overtaken.
        if let (Some(d), Some(l)) = (done.first(), live.first()) {
            if d.score >= l.score {
                break;
            }
        }
    }
    let best = done
        .into_iter()
        .chain(live)
        .min_by(rank)
        .expect("beam keeps at least one hypothesis");
    Ok(TokenSequence::new(best.ids))
}
