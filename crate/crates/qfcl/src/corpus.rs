//! JSON Lines corpora, hard-negative dumps and the tab-separated POS lexicon.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use qfcl_core::chunkfocus::{PosLexicon, PosTag};
use qfcl_core::textcore::{normalize, QAPair};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Reads one `{"chq", "faq", "focuses"?}` object per line. Blank lines are
/// skipped; errors carry the 1-based line number.
pub fn load_pairs(path: &Path) -> Result<Vec<QAPair>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let pair: QAPair = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        if normalize(&pair.chq).is_empty() || normalize(&pair.faq).is_empty() {
            return Err(parse("empty chq or faq".into()));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::format(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pairs(path: &Path, pairs: &[QAPair]) -> Result<()> {
    write_jsonl(path, pairs)
}

/// One line of `gen-negatives` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub pair_id: usize,
    pub focuses: Vec<String>,
    pub negatives: Vec<String>,
}

/// `token<TAB>tag` lines layered over the built-in English lexicon. Tags are
/// DT, JJ, NN, VB, MD, IN, WH or O; `#` starts a comment line.
pub fn load_lexicon(path: &Path) -> Result<PosLexicon> {
    let mut lex = PosLexicon::english();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (token, tag) = line
            .split_once('\t')
            .ok_or_else(|| parse("expected token<TAB>tag".into()))?;
        let tag: PosTag = tag
            .trim()
            .parse()
            .map_err(|t| parse(format!("unknown tag {t:?}")))?;
        lex.insert(&token.trim().to_lowercase(), tag);
    }
    Ok(lex)
}
