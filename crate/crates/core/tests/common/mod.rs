//! Independent oracles shared by the property and acceptance suites.
#![allow(dead_code)]

use std::rc::Rc;

use qfcl_core::autodiff::Tape;
use qfcl_core::chunkfocus::{Phrase, PhraseDictionary};
use qfcl_core::contrast::ContrastiveConfig;
use qfcl_core::nn::{Binder, ModelConfig, ModelParams};
use qfcl_core::tensor::Matrix;
use qfcl_core::textcore::{TokenSequence, EOS};
use qfcl_core::trainer::{key_reps, pair_loss, Example, KeyReps};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-3;
/// Gradient magnitude below which finite differences are pure rounding noise.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const LOSS_NAMES: [&str; 6] = ["ce", "ctrCS", "ctrCH", "ctrGS", "ctrGH", "total"];

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        max_len: 8,
        dropout_rate: 0.0,
    }
}

fn seq(rng: &mut ChaCha8Rng, len: usize, pad_to: usize, eos: bool) -> TokenSequence {
    let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(4..50)).collect();
    if eos {
        *ids.last_mut().unwrap() = EOS;
    }
    TokenSequence::new(ids).padded(pad_to)
}

pub struct GradCase {
    pub query: ModelParams<f64>,
    pub key: ModelParams<f64>,
    pub ex: Example,
    pub queue: Rc<Matrix<f64>>,
    pub cfg: ContrastiveConfig,
}

pub fn grad_case(seed: u64) -> GradCase {
    let query = ModelParams::<f64>::init(&tiny_config(), seed).unwrap();
    let mut key = query.encoder();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for m in key.values_mut() {
        for v in m.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let ex = Example {
        pair_id: 0,
        chq: seq(&mut rng, 6, 8, false),
        faq: seq(&mut rng, 5, 7, true),
        hard: (0..3).map(|_| seq(&mut rng, 5, 7, true)).collect(),
        hard_mask: true,
    };
    let queue: Vec<f64> = (0..5 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GradCase {
        query,
        key,
        ex,
        queue: Rc::new(Matrix::from_vec(5, 16, queue)),
        cfg: ContrastiveConfig {
            n_h: 3,
            ..ContrastiveConfig::default()
        },
    }
}

fn losses(c: &GradCase, q: &ModelParams<f64>, keys: &KeyReps<f64>) -> [f64; 6] {
    let mut tape = Tape::new();
    let mut b = Binder::trainable(q);
    let l = pair_loss(&mut tape, &mut b, &c.ex, Some((keys, &c.queue)), &c.cfg, None).unwrap();
    let v = |x| tape.value(x).item();
    [v(l.ce), v(l.cs.unwrap()), v(l.ch.unwrap()), v(l.gs.unwrap()), v(l.gh.unwrap()), v(l.total)]
}

/// Worst relative error per loss component between backprop and central
/// finite differences over every query parameter entry.
pub fn max_grad_errors(seed: u64) -> [f64; 6] {
    let c = grad_case(seed);
    let keys = key_reps(&c.key, &c.ex).unwrap();
    let mut tape = Tape::new();
    let mut b = Binder::trainable(&c.query);
    let l = pair_loss(&mut tape, &mut b, &c.ex, Some((&keys, &c.queue)), &c.cfg, None).unwrap();
    let outs = [l.ce, l.cs.unwrap(), l.ch.unwrap(), l.gs.unwrap(), l.gh.unwrap(), l.total];
    let analytic: Vec<_> = outs.iter().map(|&o| tape.backward(o).unwrap()).collect();

    let mut worst = [0.0f64; 6];
    let mut q = c.query.clone();
    for t in 0..q.len() {
        for j in 0..q.values()[t].data().len() {
            let orig = q.values()[t].data()[j];
            q.values_mut()[t].data_mut()[j] = orig + GRAD_STEP;
            let plus = losses(&c, &q, &keys);
            q.values_mut()[t].data_mut()[j] = orig - GRAD_STEP;
            let minus = losses(&c, &q, &keys);
            q.values_mut()[t].data_mut()[j] = orig;
            for k in 0..6 {
                let numeric = (plus[k] - minus[k]) / (2.0 * GRAD_STEP);
                let a = analytic[k].get(t).map_or(0.0, |g| g.data()[j]);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
                worst[k] = worst[k].max(rel);
            }
        }
    }
    worst
}

/// Records the key encoder as tracked parameters on the same tape as the
/// query model and returns the largest gradient magnitude it receives from
/// the total loss, plus the number of query tensors with a gradient.
pub fn key_gradient_magnitude(seed: u64) -> (f64, usize) {
    let c = grad_case(seed);
    let n = c.query.len();
    let mut tape = Tape::new();
    let mut kb = Binder::trainable_at(&c.key, n);
    let pos = kb.encode(&mut tape, &c.ex.faq, None).unwrap();
    let positive = tape.value(pos.pooled).data().to_vec();
    let mut hard = Vec::new();
    for h in &c.ex.hard {
        let e = kb.encode(&mut tape, h, None).unwrap();
        hard.extend_from_slice(tape.value(e.pooled).data());
    }
    let keys = KeyReps {
        positive,
        hard: Rc::new(Matrix::from_vec(c.ex.hard.len(), 16, hard)),
    };
    let mut qb = Binder::trainable(&c.query);
    let l = pair_loss(&mut tape, &mut qb, &c.ex, Some((&keys, &c.queue)), &c.cfg, None).unwrap();
    let g = tape.backward(l.total).unwrap();
    let mut key_max = 0.0f64;
    let mut query_tensors = 0;
    for (slot, m) in g.iter() {
        if slot >= n {
            key_max = m.data().iter().fold(key_max, |a, v| a.max(v.abs()));
        } else {
            query_tensors += 1;
        }
    }
    (key_max, query_tensors)
}

/// True when `neg` is `faq` with every focus span swapped for a different
/// dictionary phrase of the same label and nothing else changed.
pub fn replacement_sound(faq: &[String], focuses: &[Phrase], dict: &PhraseDictionary, neg: &[String]) -> bool {
    fn walk(faq: &[String], spans: &[&Phrase], dict: &PhraseDictionary, neg: &[String], fi: usize, ni: usize) -> bool {
        let Some((p, rest)) = spans.split_first() else {
            return faq[fi..] == neg[ni..];
        };
        let gap = p.start - fi;
        if neg.len() < ni + gap || faq[fi..p.start] != neg[ni..ni + gap] {
            return false;
        }
        let at = ni + gap;
        dict.get(p.label).iter().filter(|c| **c != p.text).any(|c| {
            let toks: Vec<&str> = c.split(' ').collect();
            neg.len() >= at + toks.len()
                && neg[at..at + toks.len()].iter().zip(&toks).all(|(a, b)| a == b)
                && walk(faq, rest, dict, neg, p.end, at + toks.len())
        })
    }
    let mut spans: Vec<&Phrase> = focuses.iter().collect();
    spans.sort_by_key(|p| p.start);
    neg != faq && walk(faq, &spans, dict, neg, 0, 0)
}

/// Clipped n-gram overlap by exhaustive counting.
pub fn brute_ngram(c: &[String], r: &[String], n: usize) -> usize {
    if c.len() < n || r.len() < n {
        return 0;
    }
    let cw: Vec<&[String]> = c.windows(n).collect();
    let rw: Vec<&[String]> = r.windows(n).collect();
    let mut seen: Vec<&[String]> = Vec::new();
    let mut total = 0;
    for g in &cw {
        if seen.contains(g) {
            continue;
        }
        seen.push(g);
        let a = cw.iter().filter(|x| *x == g).count();
        let b = rw.iter().filter(|x| *x == g).count();
        total += a.min(b);
    }
    total
}

fn is_subsequence(small: &[&String], big: &[String]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == *s))
}

/// LCS length by trying every subsequence of the shorter list.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let pick: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        if pick.len() > best && is_subsequence(&pick, long) {
            best = pick.len();
        }
    }
    best
}

/// F1 on the 0..100 scale.
pub fn f1(overlap: usize, c: usize, r: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let (p, rr) = (overlap as f64 / c as f64, overlap as f64 / r as f64);
    100.0 * 2.0 * p * rr / (p + rr)
}
