//! Text normalization, vocabulary, and the synthetic CHQ/FAQ corpus.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("input is empty after normalization")]
    EmptyInput,
    #[error("max_len must be at least 1")]
    ZeroMaxLen,
    #[error("synthetic corpus config: {0}")]
    Config(String),
}

/// Lowercases, splits on whitespace, and splits every punctuation character
/// into its own token.
pub fn normalize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(core::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Token ids `0..len`, with the four reserved tokens at ids 0 through 3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocab {
    pub fn reserved_only() -> Self {
        let mut v = Vocab {
            token_to_id: BTreeMap::new(),
            id_to_token: Vec::new(),
        };
        for t in RESERVED {
            v.push(t.to_string());
        }
        v
    }

    /// Rebuilds a vocabulary from its id-ordered token list (checkpoint form).
    /// The first four entries must be the reserved tokens and the rest unique.
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return None;
        }
        let mut v = Vocab {
            token_to_id: BTreeMap::new(),
            id_to_token: Vec::new(),
        };
        for t in tokens {
            if v.token_to_id.contains_key(&t) {
                return None;
            }
            v.push(t);
        }
        Some(v)
    }

    fn push(&mut self, token: String) -> u32 {
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Maps ids back to tokens, dropping reserved ids.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|id| !matches!(**id, PAD | BOS | EOS))
            .filter_map(|id| self.token(*id).map(ToString::to_string))
            .collect()
    }
}

/// Token ids with a validity mask (`false` marks padding).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    mask: Vec<bool>,
}

impl TokenSequence {
    /// Sequence whose PAD ids are marked invalid. Panics on an empty id list.
    pub fn new(ids: Vec<u32>) -> Self {
        assert!(!ids.is_empty(), "token sequence needs at least one token");
        let mask = ids.iter().map(|&i| i != PAD).collect();
        TokenSequence { ids, mask }
    }

    /// Explicit ids and mask; PAD positions are forced to `false`.
    /// Returns `None` if the lengths differ or nothing is valid.
    pub fn with_mask(ids: Vec<u32>, mask: Vec<bool>) -> Option<Self> {
        if ids.len() != mask.len() {
            return None;
        }
        let mask: Vec<bool> = ids.iter().zip(mask).map(|(i, m)| m && *i != PAD).collect();
        if !mask.iter().any(|m| *m) {
            return None;
        }
        Some(TokenSequence { ids, mask })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-PAD positions.
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Right-pads with PAD up to `len`. No-op if already that long.
    pub fn padded(&self, len: usize) -> Self {
        let mut out = self.clone();
        while out.ids.len() < len {
            out.ids.push(PAD);
            out.mask.push(false);
        }
        out
    }
}

/// Tokenizes `text`, mapping unknown words to UNK and always ending in EOS.
/// Longer inputs keep their first `max_len - 1` tokens.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSequence, TextError> {
    let tokens = normalize(text);
    encode_tokens(&tokens, vocab, max_len)
}

pub fn encode_tokens<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocab,
    max_len: usize,
) -> Result<TokenSequence, TextError> {
    if max_len == 0 {
        return Err(TextError::ZeroMaxLen);
    }
    if tokens.is_empty() {
        return Err(TextError::EmptyInput);
    }
    let mut ids: Vec<u32> = tokens
        .iter()
        .take(max_len - 1)
        .map(|t| vocab.id(t.as_ref()))
        .collect();
    ids.push(EOS);
    Ok(TokenSequence::new(ids))
}

/// A consumer health question and its FAQ-style summary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub chq: String,
    pub faq: String,
    /// Planted focus phrases (synthetic data) or annotated ones.
    #[serde(default, rename = "focuses", skip_serializing_if = "Option::is_none")]
    pub gold_focuses: Option<Vec<String>>,
}

impl QAPair {
    pub fn new(chq: impl Into<String>, faq: impl Into<String>) -> Self {
        QAPair {
            chq: chq.into(),
            faq: faq.into(),
            gold_focuses: None,
        }
    }

    pub fn chq_tokens(&self) -> Vec<String> {
        normalize(&self.chq)
    }

    pub fn faq_tokens(&self) -> Vec<String> {
        normalize(&self.faq)
    }

    pub fn encode(&self, vocab: &Vocab, max_len: usize) -> Result<EncodedPair, TextError> {
        Ok(EncodedPair {
            chq: tokenize(&self.chq, vocab, max_len)?,
            faq: tokenize(&self.faq, vocab, max_len)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub chq: TokenSequence,
    pub faq: TokenSequence,
}

/// Builds a vocabulary from every CHQ and FAQ token. Ids after the reserved
/// block go by descending frequency, ties broken lexicographically.
pub fn build_vocab(corpus: &[QAPair], min_freq: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for pair in corpus {
        for t in normalize(&pair.chq).into_iter().chain(normalize(&pair.faq)) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut vocab = Vocab::reserved_only();
    for (t, _) in entries {
        vocab.push(t);
    }
    vocab
}

/// Settings for the synthetic corpus.
///
/// A template is `"<chq body> => <faq>"` with numbered focus slots `{0}`,
/// `{1}`, ... A distractor may contain `{x}`, filled with a focus phrase
/// that is not planted in the pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub pair_count: usize,
    pub focus_phrases: Vec<String>,
    pub templates: Vec<String>,
    pub distractors: Vec<String>,
    pub min_distractors: usize,
    pub max_distractors: usize,
    /// Probability that the CHQ opens with a `subject: <focus> message:` header.
    pub subject_prob: f64,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pair_count: 2000,
            focus_phrases: DEFAULT_FOCUSES.iter().map(|s| s.to_string()).collect(),
            templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            distractors: DEFAULT_DISTRACTORS.iter().map(|s| s.to_string()).collect(),
            min_distractors: 1,
            max_distractors: 3,
            subject_prob: 0.5,
            max_len: 48,
        }
    }
}

const DEFAULT_FOCUSES: [&str; 40] = [
    "knee pain",
    "back pain",
    "breast cancer",
    "diabetes",
    "high blood pressure",
    "gender dysphoria",
    "asthma",
    "migraine headaches",
    "kidney stones",
    "acid reflux",
    "sleep apnea",
    "lyme disease",
    "shingles",
    "psoriasis",
    "gout",
    "anemia",
    "vertigo",
    "eczema",
    "glaucoma",
    "tinnitus",
    "bronchitis",
    "hepatitis",
    "arthritis",
    "osteoporosis",
    "celiac disease",
    "thyroid nodules",
    "heart palpitations",
    "ear infection",
    "strep throat",
    "pneumonia",
    "scoliosis",
    "sciatica",
    "fibromyalgia",
    "endometriosis",
    "hives",
    "cataracts",
    "tendonitis",
    "insomnia",
    "plantar fasciitis",
    "chronic fatigue",
];

// CHQ wording never reuses a non-stopword from its FAQ, so the planted
// focus is the only overlap phrase.
const DEFAULT_TEMPLATES: [&str; 13] = [
    "i have {0} and want to know how to get rid of it => what are the treatments for {0}?",
    "what could be behind my {0} => what causes {0}?",
    "is {0} something that runs in families => is {0} hereditary?",
    "how do doctors find out if someone has {0} => how is {0} diagnosed?",
    "what signs should i watch for with {0} => what are the symptoms of {0}?",
    "can i take my usual pills while dealing with {0} => what medications are safe with {0}?",
    "i read that {0} can lead to {1} and i am worried => can {0} cause {1}?",
    "which doctor should i see about {0} => what kind of specialist treats {0}?",
    "are there diets or routines that would improve my {0} => what lifestyle changes reduce {0}?",
    "is it dangerous to go running with {0} => is exercise safe with {0}?",
    "how long until i get better from {0} => what is the recovery time for {0}?",
    "is there a way to avoid getting {0} => how can {0} be prevented?",
    "i was told i have {0} and {1} at the same moment => how are {0} and {1} related?",
];

const DEFAULT_DISTRACTORS: [&str; 12] = [
    "my sister had {x} last year",
    "my doctor thinks it is not {x}",
    "i already tried some pills from the pharmacy",
    "i am 45 years old",
    "thank you for any advice",
    "please reply soon",
    "my husband also suffers from {x}",
    "i do not have insurance right now",
    "it started two weeks ago",
    "it gets worse at night",
    "we live far from a hospital",
    "my mother had {x} when she was young",
];

struct Template {
    chq: String,
    faq: String,
    slots: usize,
}

fn parse_template(raw: &str) -> Result<Template, TextError> {
    let (chq, faq) = raw
        .split_once("=>")
        .ok_or_else(|| TextError::Config(format!("template without '=>': {raw}")))?;
    let (chq, faq) = (chq.trim(), faq.trim());
    if chq.is_empty() || faq.is_empty() {
        return Err(TextError::Config(format!("template side is empty: {raw}")));
    }
    let mut slots = 0;
    while faq.contains(&format!("{{{slots}}}")) {
        if !chq.contains(&format!("{{{slots}}}")) {
            return Err(TextError::Config(format!(
                "slot {{{slots}}} missing from the CHQ side of: {raw}"
            )));
        }
        slots += 1;
    }
    if slots == 0 {
        return Err(TextError::Config(format!("template has no {{0}} slot: {raw}")));
    }
    Ok(Template {
        chq: chq.to_string(),
        faq: faq.to_string(),
        slots,
    })
}

fn fill(template: &str, focuses: &[&str]) -> String {
    let mut s = template.to_string();
    for (i, f) in focuses.iter().enumerate() {
        s = s.replace(&format!("{{{i}}}"), f);
    }
    s
}

/// Generates `config.pair_count` pairs, each planting its focus phrases
/// verbatim in both CHQ and FAQ. Identical `(config, seed)` give identical
/// output.
pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<Vec<QAPair>, TextError> {
    if config.pair_count < 1 {
        return Err(TextError::Config("pair_count must be at least 1".into()));
    }
    if config.templates.is_empty() {
        return Err(TextError::Config("no templates".into()));
    }
    if config.min_distractors > config.max_distractors {
        return Err(TextError::Config("min_distractors exceeds max_distractors".into()));
    }
    if !(0.0..=1.0).contains(&config.subject_prob) {
        return Err(TextError::Config("subject_prob must lie in [0, 1]".into()));
    }
    if config.max_distractors > 0 && config.distractors.is_empty() {
        return Err(TextError::Config("max_distractors > 0 but no distractors".into()));
    }
    let templates = config
        .templates
        .iter()
        .map(|t| parse_template(t))
        .collect::<Result<Vec<_>, _>>()?;
    let focuses: Vec<String> = config
        .focus_phrases
        .iter()
        .map(|f| normalize(f).join(" "))
        .filter(|f| !f.is_empty())
        .collect();
    let max_slots = templates.iter().map(|t| t.slots).max().unwrap_or(1);
    let needs_extra = config.distractors.iter().any(|d| d.contains("{x}"));
    if focuses.len() < max_slots + usize::from(needs_extra) {
        return Err(TextError::Config(format!(
            "need at least {} focus phrases, got {}",
            max_slots + usize::from(needs_extra),
            focuses.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(config.pair_count);
    for _ in 0..config.pair_count {
        let t = &templates[rng.gen_range(0..templates.len())];
        let chosen: Vec<&str> = focuses
            .choose_multiple(&mut rng, t.slots)
            .map(String::as_str)
            .collect();
        let body = fill(&t.chq, &chosen);
        let faq = fill(&t.faq, &chosen);

        let n_distract = rng.gen_range(config.min_distractors..=config.max_distractors);
        let mut clauses: Vec<String> = config
            .distractors
            .choose_multiple(&mut rng, n_distract.min(config.distractors.len()))
            .map(|d| {
                if d.contains("{x}") {
                    let others: Vec<&String> =
                        focuses.iter().filter(|f| !chosen.contains(&f.as_str())).collect();
                    let x = others[rng.gen_range(0..others.len())];
                    d.replace("{x}", x)
                } else {
                    d.clone()
                }
            })
            .collect();
        let at = rng.gen_range(0..=clauses.len());
        clauses.insert(at, body);
        let message = clauses.join(". ");
        let chq = if rng.gen_bool(config.subject_prob) {
            format!("subject: {} message: {}", chosen[0], message)
        } else {
            message
        };
        out.push(QAPair {
            chq,
            faq,
            gold_focuses: Some(chosen.iter().map(|s| s.to_string()).collect()),
        });
    }
    Ok(out)
}

/// Token-aligned containment of `needle` in `haystack`.
pub fn contains_span<S: AsRef<str>, U: AsRef<str>>(haystack: &[S], needle: &[U]) -> bool {
    find_span(haystack, needle).is_some()
}

pub fn find_span<S: AsRef<str>, U: AsRef<str>>(haystack: &[S], needle: &[U]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len()).find(|&i| {
        haystack[i..i + needle.len()]
            .iter()
            .zip(needle)
            .all(|(a, b)| a.as_ref() == b.as_ref())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vocab_of(words: &[&str]) -> Vocab {
        let mut v = Vocab::reserved_only();
        for w in words {
            v.push(w.to_string());
        }
        v
    }

    #[test]
    fn normalize_splits_punctuation() {
        assert_eq!(
            normalize("What are the treatments for Breast Cancer?"),
            vec!["what", "are", "the", "treatments", "for", "breast", "cancer", "?"]
        );
        assert_eq!(normalize("[location].no"), vec!["[", "location", "]", ".", "no"]);
    }

    #[test]
    fn tokenize_looks_up_words_and_appends_eos() {
        let v = vocab_of(&["gender", "dysphoria"]);
        let seq = tokenize("Gender Dysphoria", &v, 16).unwrap();
        assert_eq!(seq.ids(), &[v.id("gender"), v.id("dysphoria"), EOS]);
        assert_eq!(tokenize("zzyzx", &v, 16).unwrap().ids(), &[UNK, EOS]);
    }

    #[test]
    fn tokenize_truncates_keeping_eos() {
        let v = Vocab::reserved_only();
        let text = vec!["w"; 100].join(" ");
        let seq = tokenize(&text, &v, 8).unwrap();
        assert_eq!(seq.len(), 8);
        assert_eq!(seq.ids()[7], EOS);
        assert_eq!(seq.ids()[..7], [UNK; 7]);
    }

    #[test]
    fn tokenize_rejects_empty_input() {
        let v = Vocab::reserved_only();
        assert_eq!(tokenize("   ", &v, 8), Err(TextError::EmptyInput));
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographically() {
        let corpus = vec![QAPair::new("a b", "a")];
        let v = build_vocab(&corpus, 1);
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.id("a"), 4);
        let v2 = build_vocab(&corpus, 2);
        assert!(v2.contains("a"));
        assert!(!v2.contains("b"));
        let tie = build_vocab(&[QAPair::new("zeta alpha", "mid")], 1);
        assert_eq!(&tie.tokens()[4..], &["alpha", "mid", "zeta"]);
    }

    #[test]
    fn vocab_from_tokens_requires_reserved_prefix() {
        let v = build_vocab(&[QAPair::new("a b", "c")], 1);
        assert_eq!(Vocab::from_tokens(v.tokens().to_vec()), Some(v));
        assert!(Vocab::from_tokens(vec!["x".into()]).is_none());
    }

    #[test]
    fn padded_positions_are_masked() {
        let seq = TokenSequence::new(vec![5, 6, EOS]).padded(5);
        assert_eq!(seq.mask(), &[true, true, true, false, false]);
        assert_eq!(seq.valid_len(), 3);
        assert!(TokenSequence::with_mask(vec![PAD, PAD], vec![true, true]).is_none());
    }

    #[test]
    fn knee_pain_template_example() {
        let cfg = SynthConfig {
            pair_count: 1,
            focus_phrases: vec!["knee pain".into()],
            templates: vec![
                "i have {0} for two weeks please advise => what are the treatments for {0}?".into(),
            ],
            distractors: vec![],
            min_distractors: 0,
            max_distractors: 0,
            subject_prob: 1.0,
            max_len: 48,
        };
        let pairs = synth_corpus(&cfg, 0).unwrap();
        assert_eq!(
            pairs[0].chq,
            "subject: knee pain message: i have knee pain for two weeks please advise"
        );
        assert_eq!(pairs[0].faq, "what are the treatments for knee pain?");
        assert_eq!(pairs[0].gold_focuses, Some(vec!["knee pain".into()]));
    }

    #[test]
    fn synth_is_deterministic_and_rejects_zero_pairs() {
        let cfg = SynthConfig {
            pair_count: 50,
            ..SynthConfig::default()
        };
        assert_eq!(synth_corpus(&cfg, 7).unwrap(), synth_corpus(&cfg, 7).unwrap());
        assert_ne!(synth_corpus(&cfg, 7).unwrap(), synth_corpus(&cfg, 8).unwrap());
        let zero = SynthConfig {
            pair_count: 0,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_corpus(&zero, 1), Err(TextError::Config(_))));
    }

    #[test]
    fn every_focus_is_used_in_a_large_corpus() {
        let cfg = SynthConfig::default();
        let pairs = synth_corpus(&cfg, 3).unwrap();
        assert_eq!(pairs.len(), 2000);
        assert_eq!(cfg.focus_phrases.len(), 40);
        let mut seen = BTreeMap::new();
        for p in &pairs {
            for f in p.gold_focuses.as_ref().unwrap() {
                *seen.entry(f.clone()).or_insert(0usize) += 1;
            }
        }
        for f in &cfg.focus_phrases {
            assert!(seen.get(f).copied().unwrap_or(0) >= 1, "{f} never planted");
        }
    }

    #[test]
    fn planted_focuses_appear_in_both_token_streams() {
        let pairs = synth_corpus(&SynthConfig::default(), 11).unwrap();
        for p in &pairs {
            let (c, f) = (p.chq_tokens(), p.faq_tokens());
            for focus in p.gold_focuses.as_ref().unwrap() {
                let ft = normalize(focus);
                assert!(contains_span(&c, &ft), "{focus} missing from CHQ {}", p.chq);
                assert!(contains_span(&f, &ft), "{focus} missing from FAQ {}", p.faq);
            }
        }
    }

    #[test]
    fn default_vocabulary_is_desk_sized() {
        let pairs = synth_corpus(&SynthConfig::default(), 5).unwrap();
        let v = build_vocab(&pairs, 1);
        assert!((150..=260).contains(&v.len()), "vocab size {}", v.len());
    }
}
