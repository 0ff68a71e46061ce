//! ROUGE, focus accuracy and the representation-similarity analysis.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunkfocus::{build_phrase_dictionary, generate_hard_negatives, identify_focus, PosLexicon};
use crate::contrast::{cosine_sim, ContrastError};
use crate::nn::{decode_teacher_forced, encode, generate, ModelParams, NnError, Representation, Strategy};
use crate::tensor::Scalar;
use crate::textcore::{contains_span, encode_tokens, normalize, QAPair, TextError, TokenSequence, Vocab, EOS};
use crate::trainer::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{what}: {left} vs {right} items")]
    Misaligned { what: &'static str, left: usize, right: usize },
    #[error("need at least two dev pairs for shuffled negatives")]
    TooFewPairs,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Text(#[from] TextError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

impl Prf {
    /// From an overlap count and the two totals, scaled to 0..100.
    fn from_counts(overlap: usize, cand: usize, refr: usize) -> Prf {
        if overlap == 0 || cand == 0 || refr == 0 {
            return Prf::default();
        }
        let p = overlap as f64 / cand as f64;
        let r = overlap as f64 / refr as f64;
        Prf {
            p: 100.0 * p,
            r: 100.0 * r,
            f: 100.0 * 2.0 * p * r / (p + r),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
}

fn ngrams<'a, S: AsRef<str>>(tokens: &'a [S], n: usize) -> BTreeMap<Vec<&'a str>, usize> {
    let mut out = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

fn ngram_prf<S: AsRef<str>, U: AsRef<str>>(cand: &[S], refr: &[U], n: usize) -> Prf {
    let c = ngrams(cand, n);
    let r = ngrams(refr, n);
    let overlap = c
        .iter()
        .map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(overlap, c.values().sum(), r.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: AsRef<str>, U: AsRef<str>>(a: &[S], b: &[U]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-1, ROUGE-2 and ROUGE-L with plain F1, no stemming or stopword removal.
pub fn rouge<S: AsRef<str>, U: AsRef<str>>(candidate: &[S], reference: &[U]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        log::warn!("rouge on an empty token list scores zero");
        return RougeScore::default();
    }
    RougeScore {
        r1: ngram_prf(candidate, reference, 1),
        r2: ngram_prf(candidate, reference, 2),
        rl: Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len()),
    }
}

/// `(hits, total)` over all gold focus phrases.
pub fn focus_hits<S: AsRef<str>, F: AsRef<str>>(
    generated: &[Vec<S>],
    gold_focuses: &[Vec<F>],
) -> Result<(usize, usize), EvalError> {
    if generated.len() != gold_focuses.len() {
        return Err(EvalError::Misaligned {
            what: "focus accuracy",
            left: generated.len(),
            right: gold_focuses.len(),
        });
    }
    let mut hits = 0;
    let mut total = 0;
    for (g, focuses) in generated.iter().zip(gold_focuses) {
        let g: Vec<String> = g.iter().flat_map(|t| normalize(t.as_ref())).collect();
        for f in focuses {
            total += 1;
            if contains_span(&g, &normalize(f.as_ref())) {
                hits += 1;
            }
        }
    }
    Ok((hits, total))
}

/// Fraction of gold focus phrases found verbatim in the matching summary;
/// 0 when there are no focuses at all.
pub fn focus_accuracy<S: AsRef<str>, F: AsRef<str>>(
    generated: &[Vec<S>],
    gold_focuses: &[Vec<F>],
) -> Result<f64, EvalError> {
    let (hits, total) = focus_hits(generated, gold_focuses)?;
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Gold focuses of a pair: the annotated ones if present, else the overlap
/// heuristic.
pub fn pair_focuses(pair: &QAPair, lexicon: &PosLexicon) -> Vec<String> {
    match &pair.gold_focuses {
        Some(f) => f.clone(),
        None => identify_focus(&pair.chq_tokens(), &pair.faq_tokens(), lexicon)
            .into_iter()
            .map(|p| p.text)
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub focus_accuracy: f64,
}

/// Greedy (or beam) summaries of every CHQ as token lists.
pub fn summarize<T: Scalar>(
    params: &ModelParams<T>,
    vocab: &Vocab,
    pairs: &[QAPair],
    strategy: Strategy,
) -> Result<Vec<Vec<String>>, EvalError> {
    let max_len = params.config().max_len;
    pairs
        .iter()
        .map(|p| {
            let chq = encode_tokens(&p.chq_tokens(), vocab, max_len)?;
            let enc = encode(params, &chq)?;
            let out = generate(params, &enc, max_len, strategy)?;
            Ok(vocab.decode(out.ids()))
        })
        .collect()
}

/// Mean ROUGE F1 and focus accuracy of generated summaries.
pub fn score_summaries(
    summaries: &[Vec<String>],
    pairs: &[QAPair],
    lexicon: &PosLexicon,
) -> Result<EvalReport, EvalError> {
    if summaries.len() != pairs.len() {
        return Err(EvalError::Misaligned {
            what: "evaluation",
            left: summaries.len(),
            right: pairs.len(),
        });
    }
    let mut report = EvalReport::default();
    for (s, p) in summaries.iter().zip(pairs) {
        let r = rouge(s, &p.faq_tokens());
        report.r1 += r.r1.f;
        report.r2 += r.r2.f;
        report.rl += r.rl.f;
    }
    let n = pairs.len().max(1) as f64;
    report.r1 /= n;
    report.r2 /= n;
    report.rl /= n;
    let gold: Vec<Vec<String>> = pairs.iter().map(|p| pair_focuses(p, lexicon)).collect();
    report.focus_accuracy = focus_accuracy(summaries, &gold)?;
    Ok(report)
}

pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    vocab: &Vocab,
    pairs: &[QAPair],
    lexicon: &PosLexicon,
    strategy: Strategy,
) -> Result<EvalReport, EvalError> {
    let summaries = summarize(params, vocab, pairs, strategy)?;
    score_summaries(&summaries, pairs, lexicon)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarityCurvePoint {
    pub epoch: usize,
    pub s_c_faq_pos: f64,
    pub s_c_sim_neg: f64,
    pub s_c_hard_neg: f64,
    pub s_g_faq_pos: f64,
    pub s_g_sim_neg: f64,
    pub s_g_hard_neg: f64,
}

pub const CURVE_HEADER: [&str; 7] = [
    "epoch",
    "s_c_faq_pos",
    "s_c_sim_neg",
    "s_c_hard_neg",
    "s_g_faq_pos",
    "s_g_sim_neg",
    "s_g_hard_neg",
];

/// A cyclic permutation of `0..n`: nobody maps to themselves.
pub fn derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Analysis settings shared by every checkpoint of one curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSetup {
    pub n_h: usize,
    pub seed: u64,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Mean cosine similarities on `dev` for one checkpoint. All representations
/// come from the query-side model in eval mode: `R_c`, `R_f` and the
/// negatives from the encoder, `R_g` from the decoder run over the model's
/// own greedy summary.
pub fn similarity_point<T: Scalar>(
    params: &ModelParams<T>,
    vocab: &Vocab,
    dev: &[QAPair],
    lexicon: &PosLexicon,
    setup: &CurveSetup,
    epoch: usize,
) -> Result<SimilarityCurvePoint, EvalError> {
    if dev.len() < 2 {
        return Err(EvalError::TooFewPairs);
    }
    let max_len = params.config().max_len;
    let faq_tokens: Vec<Vec<String>> = dev.iter().map(QAPair::faq_tokens).collect();
    let dict = build_phrase_dictionary(&faq_tokens, lexicon);
    let rep = |tokens: &[String]| -> Result<Representation, EvalError> {
        Ok(encode(params, &encode_tokens(tokens, vocab, max_len)?)?.pooled)
    };
    let faq_reps = faq_tokens.iter().map(|t| rep(t)).collect::<Result<Vec<_>, _>>()?;
    let perm = derangement(dev.len(), derive_seed(&[setup.seed, 0x5349_4D]));

    let mut m: [Mean; 6] = Default::default();
    for (i, pair) in dev.iter().enumerate() {
        let chq_tokens = pair.chq_tokens();
        let enc = encode(params, &encode_tokens(&chq_tokens, vocab, max_len)?)?;
        let r_c = &enc.pooled;
        let out = generate(params, &enc, max_len, Strategy::Greedy)?;
        let mut ids = out.ids().to_vec();
        if ids.len() > 1 && ids.last() == Some(&EOS) {
            ids.pop();
        }
        let (_, r_g) = decode_teacher_forced(params, &enc, &TokenSequence::new(ids))?;

        let r_f = &faq_reps[i];
        let r_s = &faq_reps[perm[i]];
        m[0].add(cosine_sim(r_c, r_f)?);
        m[1].add(cosine_sim(r_c, r_s)?);
        m[3].add(cosine_sim(&r_g, r_f)?);
        m[4].add(cosine_sim(&r_g, r_s)?);

        let focuses = identify_focus(&chq_tokens, &faq_tokens[i], lexicon);
        let seed = derive_seed(&[setup.seed, i as u64]);
        if let Ok(set) = generate_hard_negatives(i, &faq_tokens[i], &focuses, &dict, setup.n_h, seed) {
            for neg in &set.negatives {
                let r_h = rep(neg)?;
                m[2].add(cosine_sim(r_c, &r_h)?);
                m[5].add(cosine_sim(&r_g, &r_h)?);
            }
        }
    }
    Ok(SimilarityCurvePoint {
        epoch,
        s_c_faq_pos: m[0].get(),
        s_c_sim_neg: m[1].get(),
        s_c_hard_neg: m[2].get(),
        s_g_faq_pos: m[3].get(),
        s_g_sim_neg: m[4].get(),
        s_g_hard_neg: m[5].get(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use crate::textcore::{build_vocab, synth_corpus, SynthConfig};

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        let a = toks("what causes knee pain");
        let r = rouge(&a, &a);
        assert_eq!((r.r1.f, r.r2.f, r.rl.f), (100.0, 100.0, 100.0));
        let r = rouge(&a, &toks("x y z"));
        assert_eq!(r, RougeScore::default());
        assert_eq!(rouge::<&str, &str>(&[], &a), RougeScore::default());
    }

    #[test]
    fn rouge_hand_case() {
        let r = rouge(&toks("a b c"), &toks("a c d"));
        for prf in [r.r1, r.rl] {
            assert!((prf.p - 200.0 / 3.0).abs() < 1e-9);
            assert!((prf.r - 200.0 / 3.0).abs() < 1e-9);
            assert!((prf.f - 200.0 / 3.0).abs() < 1e-9);
        }
        assert_eq!(r.r2.f, 0.0);
        assert_eq!(lcs_len(&toks("a b c"), &toks("a c d")), 2);
    }

    #[test]
    fn rouge_clips_repeated_ngrams() {
        let r = rouge(&toks("the the the"), &toks("the cat"));
        assert!((r.r1.p - 100.0 / 3.0).abs() < 1e-9);
        assert!((r.r1.r - 50.0).abs() < 1e-9);
    }

    #[test]
    fn focus_accuracy_cases() {
        let gen = vec![toks("what causes knee pain ?"), toks("how is gout treated")];
        let all = vec![vec!["knee pain"], vec!["gout"]];
        assert_eq!(focus_accuracy(&gen, &all).unwrap(), 1.0);
        let half = vec![vec!["diabetes"], vec!["gout"]];
        assert_eq!(focus_accuracy(&gen, &half).unwrap(), 0.5);
        let none = vec![vec!["diabetes"], vec!["asthma"]];
        assert_eq!(focus_accuracy(&gen, &none).unwrap(), 0.0);
        assert!(focus_accuracy(&gen, &all[..1]).is_err());
        // Token alignment: "pain" does not match inside "painful".
        assert_eq!(focus_accuracy(&[toks("painful")], &[vec!["pain"]]).unwrap(), 0.0);
    }

    #[test]
    fn counting_granularity() {
        let gen: Vec<Vec<&str>> = (0..812).map(|i| if i < 301 { vec!["gout"] } else { vec!["x"] }).collect();
        let gold: Vec<Vec<&str>> = (0..812).map(|_| vec!["gout"]).collect();
        let acc = focus_accuracy(&gen, &gold).unwrap();
        assert!((acc - 0.3707).abs() < 1e-4);
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        for n in 2..40 {
            let p = derangement(n, n as u64);
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, j)| i != *j));
        }
    }

    #[test]
    fn curve_values_are_cosines() {
        let pairs = synth_corpus(
            &SynthConfig {
                pair_count: 6,
                max_len: 16,
                ..SynthConfig::default()
            },
            1,
        )
        .unwrap();
        let vocab = build_vocab(&pairs, 1);
        let mut mc = ModelConfig::small(vocab.len(), 16);
        mc.d_model = 16;
        mc.n_heads = 2;
        mc.d_ff = 16;
        let p: ModelParams<f32> = ModelParams::init(&mc, 1).unwrap();
        let setup = CurveSetup { n_h: 2, seed: 3 };
        let pt = similarity_point(&p, &vocab, &pairs, &PosLexicon::english(), &setup, 0).unwrap();
        for v in [pt.s_c_faq_pos, pt.s_c_sim_neg, pt.s_c_hard_neg, pt.s_g_faq_pos, pt.s_g_sim_neg, pt.s_g_hard_neg] {
            assert!((-1.0..=1.0).contains(&v));
        }
        let again = similarity_point(&p, &vocab, &pairs, &PosLexicon::english(), &setup, 0).unwrap();
        assert_eq!(pt, again);
    }
}
