//! Shallow chunking, question-focus detection, and focus-swapped hard negatives.
//!
//! Tokens are tagged from a lexicon (unknown words default to nouns) and then
//! grouped greedily, left to right:
//!
//! ```text
//! NP   := DT? JJ* NN+
//! ADJP := JJ+            (adjectives not followed by a noun)
//! VP   := MD? VB+
//! PP   := IN
//! O    := any other single token
//! ```
//!
//! A focus is an FAQ phrase (not `O`, not made only of stopwords) that also
//! occurs verbatim in the CHQ. Hard negatives copy the FAQ and swap every
//! focus span for a different dictionary phrase with the same label.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textcore::find_span;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PosTag {
    Det,
    Adj,
    Noun,
    Verb,
    Modal,
    Prep,
    Wh,
    Other,
}

impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "DT" => PosTag::Det,
            "JJ" => PosTag::Adj,
            "NN" => PosTag::Noun,
            "VB" => PosTag::Verb,
            "MD" => PosTag::Modal,
            "IN" => PosTag::Prep,
            "WH" => PosTag::Wh,
            "O" => PosTag::Other,
            other => return Err(other.to_string()),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChunkLabel {
    NP,
    VP,
    PP,
    ADJP,
    O,
}

impl ChunkLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ChunkLabel::NP => "NP",
            ChunkLabel::VP => "VP",
            ChunkLabel::PP => "PP",
            ChunkLabel::ADJP => "ADJP",
            ChunkLabel::O => "O",
        }
    }
}

impl fmt::Display for ChunkLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PosLexicon {
    tags: BTreeMap<String, PosTag>,
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "my", "your", "his", "her", "its", "our", "their", "this", "that", "these",
    "those", "some", "any", "every", "each", "no",
];
const PREPOSITIONS: &[&str] = &[
    "for", "of", "in", "on", "with", "to", "from", "about", "at", "by", "after", "before",
    "during", "without", "than", "since", "into", "like", "until", "over", "under", "between",
    "through", "while", "if",
];
const WH_WORDS: &[&str] = &["what", "how", "why", "when", "where", "which", "who", "whom", "whose"];
const MODALS: &[&str] = &[
    "can", "could", "should", "would", "will", "may", "might", "must", "shall",
];
const VERBS: &[&str] = &[
    "is", "are", "am", "was", "were", "be", "been", "being", "do", "does", "did", "have", "has",
    "had", "get", "gets", "getting", "got", "take", "takes", "taking", "treat", "treats",
    "treated", "cause", "causes", "caused", "causing", "help", "helps", "know", "want", "need",
    "see", "go", "going", "read", "told", "tried", "try", "think", "thinks", "live", "started",
    "suffers", "suffering", "reduce", "improve", "prevent", "prevented", "diagnosed", "related",
    "lead", "worried", "find", "dealing", "runs", "watch", "avoid", "reply", "worked", "working",
    "shutting", "drink", "give", "giving", "overcome", "feed", "suggest",
];
const ADJECTIVES: &[&str] = &[
    "high", "low", "chronic", "safe", "dangerous", "hereditary", "contagious", "bad", "good",
    "better", "best", "worse", "severe", "mild", "usual", "same", "last", "young", "old", "far",
    "long", "other", "new", "normal", "possible", "okay", "sure",
];
const OTHER_WORDS: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them", "myself", "himself",
    "herself", "and", "or", "but", "not", "please", "thank", "thanks", "so", "because", "also",
    "there", "here", "just", "very", "too", "now", "then", "already", "soon", "right", "ago",
    "somehow", "someone", "something", "as", "up", "out", "again", "ever", "still", "yes",
];

/// Function words never allowed to form a focus on their own.
pub fn is_stopword(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
        || DETERMINERS.contains(&token)
        || PREPOSITIONS.contains(&token)
        || WH_WORDS.contains(&token)
        || MODALS.contains(&token)
        || OTHER_WORDS.contains(&token)
        || matches!(
            token,
            "is" | "are" | "am" | "was" | "were" | "be" | "been" | "being" | "do" | "does"
                | "did" | "have" | "has" | "had"
        )
}

impl PosLexicon {
    pub fn empty() -> Self {
        PosLexicon::default()
    }

    /// Closed-class English words plus the verbs and adjectives that occur
    /// in health questions.
    pub fn english() -> Self {
        let mut lex = PosLexicon::empty();
        let groups: [(&[&str], PosTag); 7] = [
            (DETERMINERS, PosTag::Det),
            (PREPOSITIONS, PosTag::Prep),
            (WH_WORDS, PosTag::Wh),
            (MODALS, PosTag::Modal),
            (VERBS, PosTag::Verb),
            (ADJECTIVES, PosTag::Adj),
            (OTHER_WORDS, PosTag::Other),
        ];
        for (words, tag) in groups {
            for w in words {
                lex.insert(w, tag);
            }
        }
        lex
    }

    pub fn insert(&mut self, token: &str, tag: PosTag) {
        self.tags.insert(token.to_string(), tag);
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Lexicon tag; punctuation is `Other`, anything unknown is a noun.
    pub fn tag(&self, token: &str) -> PosTag {
        if let Some(t) = self.tags.get(token) {
            return *t;
        }
        if !token.chars().any(char::is_alphanumeric) {
            return PosTag::Other;
        }
        PosTag::Noun
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phrase {
    pub text: String,
    pub label: ChunkLabel,
    /// Token offsets `[start, end)` in the chunked sentence.
    pub start: usize,
    pub end: usize,
}

impl Phrase {
    pub fn tokens(&self) -> Vec<&str> {
        self.text.split(' ').collect()
    }
}

/// Partitions `sentence` into labelled phrases.
pub fn chunk<S: AsRef<str>>(sentence: &[S], lexicon: &PosLexicon) -> Vec<Phrase> {
    let tags: Vec<PosTag> = sentence.iter().map(|t| lexicon.tag(t.as_ref())).collect();
    let n = tags.len();
    let run = |from: usize, tag: PosTag| {
        let mut j = from;
        while j < n && tags[j] == tag {
            j += 1;
        }
        j
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let (end, label) = 'rule: {
            // NP
            let mut j = i;
            if tags[j] == PosTag::Det {
                j += 1;
            }
            let j = run(j, PosTag::Adj);
            let k = run(j, PosTag::Noun);
            if k > j {
                break 'rule (k, ChunkLabel::NP);
            }
            // ADJP
            if tags[i] == PosTag::Adj {
                break 'rule (run(i, PosTag::Adj), ChunkLabel::ADJP);
            }
            // VP
            let j = if tags[i] == PosTag::Modal { i + 1 } else { i };
            let k = run(j, PosTag::Verb);
            if k > j {
                break 'rule (k, ChunkLabel::VP);
            }
            if tags[i] == PosTag::Prep {
                break 'rule (i + 1, ChunkLabel::PP);
            }
            (i + 1, ChunkLabel::O)
        };
        out.push(Phrase {
            text: join(&sentence[i..end]),
            label,
            start: i,
            end,
        });
        i = end;
    }
    out
}

fn join<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.as_ref());
    }
    s
}

/// FAQ phrases that reappear verbatim (token-aligned) in the CHQ.
pub fn identify_focus<S: AsRef<str>, U: AsRef<str>>(
    chq: &[S],
    faq: &[U],
    lexicon: &PosLexicon,
) -> Vec<Phrase> {
    chunk(faq, lexicon)
        .into_iter()
        .filter(|p| p.label != ChunkLabel::O)
        .filter(|p| !faq[p.start..p.end].iter().all(|t| is_stopword(t.as_ref())))
        .filter(|p| find_span(chq, &faq[p.start..p.end]).is_some())
        .collect()
}

/// Every distinct phrase of the training FAQs, grouped by chunk label and
/// sorted lexicographically within a label.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct PhraseDictionary {
    by_label: BTreeMap<ChunkLabel, Vec<String>>,
}

impl PhraseDictionary {
    pub fn get(&self, label: ChunkLabel) -> &[String] {
        self.by_label.get(&label).map_or(&[], Vec::as_slice)
    }

    pub fn labels(&self) -> impl Iterator<Item = ChunkLabel> + '_ {
        self.by_label.keys().copied()
    }

    pub fn contains(&self, label: ChunkLabel, phrase: &str) -> bool {
        self.get(label).binary_search_by(|p| p.as_str().cmp(phrase)).is_ok()
    }
}

pub fn build_phrase_dictionary<S: AsRef<str>>(
    train_faqs: &[Vec<S>],
    lexicon: &PosLexicon,
) -> PhraseDictionary {
    let mut sets: BTreeMap<ChunkLabel, BTreeSet<String>> = BTreeMap::new();
    for faq in train_faqs {
        for p in chunk(faq, lexicon) {
            sets.entry(p.label).or_default().insert(p.text);
        }
    }
    PhraseDictionary {
        by_label: sets
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardNegativeSet {
    pub source_pair_id: usize,
    /// Token lists of the generated negatives.
    pub negatives: Vec<Vec<String>>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum NegativeError {
    /// No usable focus; callers drop the hard-negative loss terms.
    #[error("pair has no replaceable question focus")]
    NoFocus,
}

/// Redraws allowed per negative before giving up on a pair.
pub const MAX_REDRAWS: usize = 8;

/// Builds `n_h` negatives from `faq`, replacing every focus span with a
/// uniformly drawn same-label dictionary phrase different from the original.
/// Replacements may repeat across negatives.
pub fn generate_hard_negatives<S: AsRef<str>>(
    pair_id: usize,
    faq: &[S],
    focuses: &[Phrase],
    dict: &PhraseDictionary,
    n_h: usize,
    seed: u64,
) -> Result<HardNegativeSet, NegativeError> {
    if focuses.is_empty() {
        return Err(NegativeError::NoFocus);
    }
    let mut spans: Vec<&Phrase> = focuses.iter().collect();
    spans.sort_by_key(|p| p.start);
    let candidates: Vec<Vec<&String>> = spans
        .iter()
        .map(|p| {
            let c: Vec<&String> = dict.get(p.label).iter().filter(|d| **d != p.text).collect();
            if c.is_empty() {
                log::warn!("no alternative {} phrase for focus '{}'", p.label, p.text);
            }
            c
        })
        .collect();

    let original: Vec<&str> = faq.iter().map(AsRef::as_ref).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut negatives = Vec::with_capacity(n_h);
    for _ in 0..n_h {
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let mut tokens: Vec<String> = Vec::with_capacity(original.len() + 4);
            let mut cursor = 0;
            for (p, cands) in spans.iter().zip(&candidates) {
                tokens.extend(original[cursor..p.start].iter().map(|t| t.to_string()));
                if cands.is_empty() {
                    tokens.extend(original[p.start..p.end].iter().map(|t| t.to_string()));
                } else {
                    let pick = cands[rng.gen_range(0..cands.len())];
                    tokens.extend(pick.split(' ').map(ToString::to_string));
                }
                cursor = p.end;
            }
            tokens.extend(original[cursor..].iter().map(|t| t.to_string()));
            if tokens.iter().map(String::as_str).ne(original.iter().copied()) {
                accepted = Some(tokens);
                break;
            }
        }
        match accepted {
            Some(t) => negatives.push(t),
            None => return Err(NegativeError::NoFocus),
        }
    }
    Ok(HardNegativeSet {
        source_pair_id: pair_id,
        negatives,
    })
}
