//! Training: per-pair loss graphs, Adam, momentum/queue scheduling and epochs.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{log_sum_exp, Tape, Var};
use crate::chunkfocus::{
    build_phrase_dictionary, generate_hard_negatives, identify_focus, Phrase, PhraseDictionary,
    PosLexicon,
};
use crate::contrast::{
    compose_losses, loss_weights, ContrastError, ContrastiveConfig, LossBundle, MemoryQueue,
    MomentumPair,
};
use crate::nn::{Binder, ModelParams, NnError, Representation};
use crate::tensor::{Matrix, Scalar};
use crate::textcore::{encode_tokens, QAPair, TextError, TokenSequence, Vocab, BOS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("non-finite {component} at step {step}, pair {pair_id}: {detail}")]
    NonFinite {
        step: u64,
        pair_id: usize,
        component: &'static str,
        detail: String,
    },
    #[error("logits have {rows} rows for a target of length {len}")]
    Shape { rows: usize, len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    CeOnly,
    Qfcl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::CeOnly => "ce_only",
            Mode::Qfcl => "qfcl",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Mode::CeOnly => 3e-5,
            Mode::Qfcl => 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip_norm: f64,
    pub contrastive: ContrastiveConfig,
    pub mode: Mode,
}

impl TrainConfig {
    pub fn new(mode: Mode) -> Self {
        TrainConfig {
            learning_rate: mode.default_learning_rate(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            grad_clip_norm: 1.0,
            contrastive: ContrastiveConfig::default(),
            mode,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be > 0");
        }
        self.contrastive.validate()?;
        if self.mode == Mode::Qfcl && self.batch_size > self.contrastive.queue_size {
            return bad("batch_size must not exceed queue_size");
        }
        Ok(())
    }
}

/// Folds `parts` into one 64-bit seed (splitmix64 finalizer per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4F50;

/// Mean negative log-likelihood of `target` under row-wise `logits`,
/// skipping PAD positions.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, target: &TokenSequence) -> Result<f64, TrainError> {
    if logits.rows() != target.len() {
        return Err(TrainError::Shape {
            rows: logits.rows(),
            len: target.len(),
        });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, (&id, &valid)) in target.ids().iter().zip(target.mask()).enumerate() {
        if !valid {
            continue;
        }
        let row: Vec<f64> = logits.row(r).iter().map(|v| Scalar::to_f64(*v)).collect();
        total += log_sum_exp(&row) - row[id as usize];
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: &TrainConfig, params: &[Matrix<T>]) -> Self {
        let zeros: Vec<Matrix<T>> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &[Matrix<T>]) {
        self.t += 1;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = 1.0 - powu(self.beta1, self.t);
        let bc2 = 1.0 - powu(self.beta2, self.t);
        let step = T::from_f64(self.lr / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(self.eps);
        for i in 0..params.len() {
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = b1 * m[j] + c1 * g;
                v[j] = b2 * v[j] + c2 * g * g;
                p[j] = p[j] - step * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
    }
}

fn powu(x: f64, n: u64) -> f64 {
    Float::powf(x, n as f64)
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Matrix<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| {
            let x = Scalar::to_f64(*v);
            x * x
        })
        .sum();
    let norm = Float::sqrt(sq);
    if norm > max_norm {
        let s = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

/// One tokenized training pair with this epoch's hard negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub pair_id: usize,
    pub chq: TokenSequence,
    /// Gold FAQ ids, ending in EOS. Also the key-side positive.
    pub faq: TokenSequence,
    pub hard: Vec<TokenSequence>,
    /// False when the pair has no usable focus.
    pub hard_mask: bool,
}

impl Example {
    /// `[BOS] + faq[..n-1]`, aligned with `faq` as labels.
    pub fn decoder_input(&self) -> TokenSequence {
        let (f, m) = (self.faq.ids(), self.faq.mask());
        let mut ids = Vec::with_capacity(f.len());
        ids.push(BOS);
        ids.extend_from_slice(&f[..f.len() - 1]);
        let mut mask = Vec::with_capacity(f.len());
        mask.push(true);
        mask.extend_from_slice(&m[..m.len() - 1]);
        TokenSequence::with_mask(ids, mask).expect("BOS is always valid")
    }
}

/// Key-encoder representations for one example (constants on any tape).
#[derive(Clone, Debug)]
pub struct KeyReps<T> {
    pub positive: Vec<T>,
    pub hard: Rc<Matrix<T>>,
}

pub fn key_reps<T: Scalar>(key: &ModelParams<T>, ex: &Example) -> Result<KeyReps<T>, NnError> {
    let mut tape = Tape::new();
    let mut b = Binder::frozen(key);
    let pos = b.encode(&mut tape, &ex.faq, None)?;
    let positive = tape.value(pos.pooled).data().to_vec();
    let d = positive.len();
    let mut hard = Vec::with_capacity(ex.hard.len() * d);
    for h in &ex.hard {
        let e = b.encode(&mut tape, h, None)?;
        hard.extend_from_slice(tape.value(e.pooled).data());
    }
    Ok(KeyReps {
        positive,
        hard: Rc::new(Matrix::from_vec(ex.hard.len(), d, hard)),
    })
}

/// Loss nodes of one pair. Contrastive terms are absent in CE-only mode and
/// the hard terms are absent when the pair has no focus.
#[derive(Clone, Debug)]
pub struct PairLoss {
    pub ce: Var,
    pub cs: Option<Var>,
    pub ch: Option<Var>,
    pub gs: Option<Var>,
    pub gh: Option<Var>,
    pub total: Var,
    pub hard_mask: bool,
}

impl PairLoss {
    pub fn bundle<T: Scalar>(
        &self,
        tape: &Tape<T>,
        cfg: &ContrastiveConfig,
    ) -> Result<LossBundle, ContrastError> {
        let v = |x: Option<Var>| x.map_or(0.0, |x| Scalar::to_f64(tape.value(x).item()));
        compose_losses(
            v(Some(self.ce)),
            v(self.cs),
            v(self.ch),
            v(self.gs),
            v(self.gh),
            cfg,
            self.hard_mask,
        )
    }
}

/// Records the full loss of one pair on `tape`. `keys` is `None` for
/// CE-only training; otherwise it carries the key representations and the
/// current queue contents.
pub fn pair_loss<T: Scalar>(
    tape: &mut Tape<T>,
    binder: &mut Binder<'_, T>,
    ex: &Example,
    keys: Option<(&KeyReps<T>, &Rc<Matrix<T>>)>,
    cfg: &ContrastiveConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<PairLoss, TrainError> {
    let enc = binder.encode(tape, &ex.chq, rng.as_deref_mut())?;
    let dec = binder.decode(tape, &enc, &ex.decoder_input(), rng.as_deref_mut())?;
    let logits = binder.logits(tape, dec.states);
    let targets = ex
        .faq
        .ids()
        .iter()
        .zip(ex.faq.mask())
        .map(|(&id, &m)| m.then_some(id as usize))
        .collect();
    let ce = tape.cross_entropy(logits, targets);
    let Some((k, queue)) = keys else {
        return Ok(PairLoss {
            ce,
            cs: None,
            ch: None,
            gs: None,
            gh: None,
            total: ce,
            hard_mask: false,
        });
    };
    let tau = T::from_f64(cfg.tau);
    let cs = tape.info_nce(enc.pooled, k.positive.clone(), queue.clone(), tau).map_err(NnError::from)?;
    let gs = tape.info_nce(dec.pooled, k.positive.clone(), queue.clone(), tau).map_err(NnError::from)?;
    let (ch, gh) = if ex.hard_mask {
        (
            Some(tape.info_nce(enc.pooled, k.positive.clone(), k.hard.clone(), tau).map_err(NnError::from)?),
            Some(tape.info_nce(dec.pooled, k.positive.clone(), k.hard.clone(), tau).map_err(NnError::from)?),
        )
    } else {
        (None, None)
    };
    let w = loss_weights(cfg, ex.hard_mask);
    let mut terms = vec![(ce, T::one()), (cs, T::from_f64(w[1])), (gs, T::from_f64(w[3]))];
    if let (Some(ch), Some(gh)) = (ch, gh) {
        terms.push((ch, T::from_f64(w[2])));
        terms.push((gh, T::from_f64(w[4])));
    }
    let total = tape.lin_comb(terms);
    Ok(PairLoss {
        ce,
        cs: Some(cs),
        ch,
        gs: Some(gs),
        gh,
        total,
        hard_mask: ex.hard_mask,
    })
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub pair: MomentumPair<T>,
    pub queue: MemoryQueue,
    pub adam: Adam<T>,
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: ModelParams<T>, cfg: &TrainConfig) -> Self {
        TrainState {
            adam: Adam::new(cfg, params.values()),
            queue: MemoryQueue::new(cfg.contrastive.queue_size),
            pair: MomentumPair::new(params, cfg.contrastive.momentum),
            step: 0,
            epoch: 0,
        }
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.pair.query
    }
}

fn loss_component(b: &LossBundle) -> Option<&'static str> {
    [
        (b.ce, "ce"),
        (b.ctr_cs, "ctrCS"),
        (b.ctr_ch, "ctrCH"),
        (b.ctr_gs, "ctrGS"),
        (b.ctr_gh, "ctrGH"),
    ]
    .into_iter()
    .find(|(v, _)| !v.is_finite())
    .map(|(_, c)| c)
}

/// One optimizer step over `batch`: per-pair losses against the pre-step
/// queue, averaged gradients, clipping, Adam, then the momentum update and
/// enqueueing of the batch's key-side FAQ representations.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[Example],
    cfg: &TrainConfig,
) -> Result<LossBundle, TrainError> {
    let qfcl = cfg.mode == Mode::Qfcl;
    let d = state.pair.query.config().d_model;
    let queue = Rc::new(if qfcl {
        state.queue.to_matrix::<T>(d)?
    } else {
        Matrix::zeros(0, d)
    });
    let mut grads: Vec<Matrix<T>> = state
        .pair
        .query
        .values()
        .iter()
        .map(|p| Matrix::zeros(p.rows(), p.cols()))
        .collect();
    let inv = T::from_f64(1.0 / batch.len() as f64);
    let mut bundles = Vec::with_capacity(batch.len());
    let mut enqueue = Vec::with_capacity(batch.len());
    for ex in batch {
        let keys = if qfcl {
            Some(key_reps(&state.pair.key, ex)?)
        } else {
            None
        };
        let mut tape = Tape::new();
        let mut binder = Binder::trainable(&state.pair.query);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
            cfg.seed,
            DROPOUT_STREAM,
            state.step,
            ex.pair_id as u64,
        ]));
        let loss = pair_loss(
            &mut tape,
            &mut binder,
            ex,
            keys.as_ref().map(|k| (k, &queue)),
            &cfg.contrastive,
            Some(&mut rng),
        )?;
        let bundle = loss.bundle(&tape, &cfg.contrastive).map_err(|e| match e {
            ContrastError::NonFinite { component } => TrainError::NonFinite {
                step: state.step,
                pair_id: ex.pair_id,
                component,
                detail: format!("chq {:?} faq {:?}", ex.chq.ids(), ex.faq.ids()),
            },
            other => TrainError::Contrast(other),
        })?;
        debug_assert!(loss_component(&bundle).is_none());
        let g = tape.backward(loss.total).map_err(NnError::from)?;
        for (slot, m) in g.iter() {
            grads[slot].add_scaled(m, inv);
        }
        bundles.push(bundle);
        if let Some(k) = keys {
            enqueue.push(Representation::from_values(&k.positive));
        }
    }
    clip_global_norm(&mut grads, cfg.grad_clip_norm);
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFinite {
            step: state.step,
            pair_id: batch.first().map_or(0, |e| e.pair_id),
            component: "gradient",
            detail: String::from("non-finite gradient after backward"),
        });
    }
    state.adam.step(state.pair.query.values_mut(), &grads);
    if qfcl {
        state.pair.update()?;
        state.queue.step(enqueue)?;
    }
    state.step += 1;
    Ok(LossBundle::mean(&bundles))
}

/// A tokenized pair plus what is needed to regenerate its hard negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub pair_id: usize,
    pub chq: TokenSequence,
    pub faq: TokenSequence,
    pub faq_tokens: Vec<String>,
    pub focuses: Vec<Phrase>,
}

/// Training split with its vocabulary and phrase dictionary.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub vocab: Vocab,
    pub dict: PhraseDictionary,
    pub items: Vec<TrainItem>,
    pub max_len: usize,
}

impl TrainData {
    pub fn new(
        pairs: &[QAPair],
        vocab: Vocab,
        lexicon: &PosLexicon,
        max_len: usize,
    ) -> Result<Self, TrainError> {
        let mut items = Vec::with_capacity(pairs.len());
        let mut faqs = Vec::with_capacity(pairs.len());
        for (pair_id, p) in pairs.iter().enumerate() {
            let enc = p.encode(&vocab, max_len)?;
            let chq_tokens = p.chq_tokens();
            let faq_tokens = p.faq_tokens();
            let focuses = identify_focus(&chq_tokens, &faq_tokens, lexicon);
            faqs.push(faq_tokens.clone());
            items.push(TrainItem {
                pair_id,
                chq: enc.chq,
                faq: enc.faq,
                faq_tokens,
                focuses,
            });
        }
        Ok(TrainData {
            dict: build_phrase_dictionary(&faqs, lexicon),
            vocab,
            items,
            max_len,
        })
    }

    /// Examples for `epoch` in pair order. Hard negatives are drawn only
    /// when `n_h` is positive, from seed `(seed, epoch, pair_id)`.
    pub fn examples(&self, epoch: usize, seed: u64, n_h: usize) -> Result<Vec<Example>, TrainError> {
        let mut out = Vec::with_capacity(self.items.len());
        for it in &self.items {
            let mut hard = Vec::new();
            let mut hard_mask = false;
            if n_h > 0 {
                let s = derive_seed(&[seed, epoch as u64, it.pair_id as u64]);
                if let Ok(set) =
                    generate_hard_negatives(it.pair_id, &it.faq_tokens, &it.focuses, &self.dict, n_h, s)
                {
                    for neg in &set.negatives {
                        hard.push(encode_tokens(neg, &self.vocab, self.max_len)?);
                    }
                    hard_mask = true;
                }
            }
            out.push(Example {
                pair_id: it.pair_id,
                chq: it.chq.clone(),
                faq: it.faq.clone(),
                hard,
                hard_mask,
            });
        }
        Ok(out)
    }
}

/// Per-step record emitted during an epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub losses: LossBundle,
}

/// Runs epoch `state.epoch + 1` over a seed-determined shuffle of `data`.
pub fn train_epoch<T: Scalar>(
    state: &mut TrainState<T>,
    data: &TrainData,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<StepRecord>, TrainError> {
    let epoch = state.epoch + 1;
    let n_h = if cfg.mode == Mode::Qfcl { cfg.contrastive.n_h } else { 0 };
    let mut examples = data.examples(epoch, cfg.seed, n_h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, SHUFFLE_STREAM, epoch as u64]));
    examples.shuffle(&mut rng);
    let mut records = Vec::with_capacity(examples.len() / cfg.batch_size + 1);
    for batch in examples.chunks(cfg.batch_size) {
        let losses = train_step(state, batch, cfg)?;
        let rec = StepRecord {
            step: state.step,
            epoch,
            losses,
        };
        on_step(&rec);
        records.push(rec);
    }
    state.epoch = epoch;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::textcore::{build_vocab, synth_corpus, SynthConfig, EOS};

    #[test]
    fn cross_entropy_cases() {
        let t = TokenSequence::new(vec![1, 2]);
        let mut certain = Matrix::<f64>::zeros(2, 4);
        certain.row_mut(0)[1] = 800.0;
        certain.row_mut(1)[2] = 800.0;
        assert_eq!(cross_entropy(&certain, &t).unwrap(), 0.0);
        let uniform = Matrix::<f64>::zeros(2, 4);
        assert!((cross_entropy(&uniform, &t).unwrap() - 4f64.ln()).abs() < 1e-12);

        let ninf = f64::NEG_INFINITY;
        let mut m = Matrix::<f64>::zeros(2, 4);
        m.row_mut(0).copy_from_slice(&[ninf, ninf, 0.5f64.ln(), 0.5f64.ln()]);
        m.row_mut(1).copy_from_slice(&[ninf, 0.25f64.ln(), 0.75f64.ln(), ninf]);
        let t = TokenSequence::new(vec![2, 1]);
        let want = -0.5 * (0.5f64.ln() + 0.25f64.ln());
        assert!((cross_entropy(&m, &t).unwrap() - want).abs() < 1e-12);
        assert!((want - 1.0397).abs() < 1e-4);

        let padded = TokenSequence::new(vec![2, 1, EOS]).padded(4);
        let mut m4 = Matrix::<f64>::zeros(4, 4);
        m4.row_mut(3)[0] = 50.0;
        let ce = cross_entropy(&m4, &padded).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&m, &padded).is_err());
    }

    #[test]
    fn seeds_differ_by_part() {
        assert_ne!(derive_seed(&[1, 2, 3]), derive_seed(&[1, 3, 2]));
        assert_eq!(derive_seed(&[7, 0]), derive_seed(&[7, 0]));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Matrix::from_vec(1, 2, vec![3.0f64, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].get(0, 0) - 0.6).abs() < 1e-15);
    }

    fn setup(mode: Mode) -> (TrainData, TrainConfig, TrainState<f64>) {
        let pairs = synth_corpus(
            &SynthConfig {
                pair_count: 12,
                max_len: 16,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let vocab = build_vocab(&pairs, 1);
        let data = TrainData::new(&pairs, vocab.clone(), &PosLexicon::english(), 16).unwrap();
        let mut cfg = TrainConfig::new(mode);
        cfg.batch_size = 4;
        cfg.learning_rate = 1e-3;
        cfg.contrastive.n_h = 3;
        cfg.contrastive.queue_size = 10;
        cfg.contrastive.momentum = 0.9;
        let mc = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 16,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_ff: 16,
            max_len: 16,
            dropout_rate: 0.1,
        };
        let state = TrainState::new(ModelParams::init(&mc, 5).unwrap(), &cfg);
        (data, cfg, state)
    }

    #[test]
    fn ce_only_has_no_contrastive_terms() {
        let (data, cfg, mut state) = setup(Mode::CeOnly);
        let ex = data.examples(1, 0, 0).unwrap();
        let b = train_step(&mut state, &ex[..4], &cfg).unwrap();
        assert_eq!((b.ctr_cs, b.ctr_ch, b.ctr_gs, b.ctr_gh), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(b.total, b.ce);
        assert!(state.queue.is_empty());
    }

    #[test]
    fn qfcl_step_updates_key_and_queue() {
        let (data, cfg, mut state) = setup(Mode::Qfcl);
        let ex = data.examples(1, 0, 3).unwrap();
        assert!(ex.iter().all(|e| e.hard_mask && e.hard.len() == 3));
        let old_key = state.pair.key.clone();
        train_step(&mut state, &ex[..4], &cfg).unwrap();
        assert_eq!(state.queue.len(), 4);
        let m = cfg.contrastive.momentum;
        for ((k, k0), q) in state.pair.key.values().iter().zip(old_key.values()).zip(state.pair.query.values()) {
            for ((a, b), c) in k.data().iter().zip(k0.data()).zip(q.data()) {
                assert!((a - (m * b + (1.0 - m) * c)).abs() < 1e-12);
            }
        }
        let b = train_step(&mut state, &ex[4..8], &cfg).unwrap();
        assert!(b.ctr_cs > 0.0 && b.ctr_ch > 0.0);
        train_step(&mut state, &ex[8..12], &cfg).unwrap();
        assert_eq!(state.queue.len(), 10);
    }

    #[test]
    fn resuming_from_a_copy_is_exact() {
        let (data, cfg, mut state) = setup(Mode::Qfcl);
        let ex = data.examples(1, 0, 3).unwrap();
        train_step(&mut state, &ex[..4], &cfg).unwrap();
        let mut copy = state.clone();
        let a = train_step(&mut state, &ex[4..8], &cfg).unwrap();
        let b = train_step(&mut copy, &ex[4..8], &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(state, copy);
    }

    #[test]
    fn epochs_are_deterministic() {
        let (data, cfg, state) = setup(Mode::Qfcl);
        let mut a = state.clone();
        let mut b = state;
        let ra = train_epoch(&mut a, &data, &cfg, |_| {}).unwrap();
        let rb = train_epoch(&mut b, &data, &cfg, |_| {}).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(a.epoch, 1);
        assert_eq!(ra.len(), 3);
    }
}
