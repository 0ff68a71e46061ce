//! Subcommand drivers.
//!
//! `train` writes into its output directory:
//!
//! * `manifest.json` before anything else
//! * `trainlog.csv`: one row per optimizer step
//! * `dev_metrics.csv`: greedy dev ROUGE and focus accuracy per epoch, epoch 0 included
//! * `timing.csv`: wall-clock seconds per epoch, kept apart so the other files are reproducible
//! * `checkpoints/epoch_NNN.ckpt`: model-only checkpoint per epoch, epoch 0 included
//! * `best.ckpt`: the epoch checkpoint with the highest dev ROUGE-L, earliest on ties
//! * `state.ckpt`: final checkpoint with momentum encoder, queue and optimizer state

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use qfcl_core::chunkfocus::{build_phrase_dictionary, generate_hard_negatives, identify_focus, PosLexicon};
use qfcl_core::evalkit::{evaluate, similarity_point, CurveSetup, EvalReport, SimilarityCurvePoint, CURVE_HEADER};
use qfcl_core::nn::{ModelParams, Strategy};
use qfcl_core::textcore::{build_vocab, synth_corpus, QAPair};
use qfcl_core::trainer::{derive_seed, train_epoch, TrainData, TrainState};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::corpus::{load_lexicon, load_pairs, write_jsonl, write_pairs, NegativeRecord};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;

pub const TRAINLOG_HEADER: [&str; 8] = ["step", "epoch", "ce", "ctrCS", "ctrCH", "ctrGS", "ctrGH", "total"];
pub const DEV_HEADER: [&str; 5] = ["epoch", "r1", "r2", "rl", "focus_accuracy"];

pub fn lexicon(path: Option<&Path>) -> Result<PosLexicon> {
    path.map_or_else(|| Ok(PosLexicon::english()), load_lexicon)
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(sub: &str, cfg: &RunConfig, inputs: &[Option<&Path>], out: Option<&Path>, at: Option<PathBuf>) -> Result<()> {
    let inputs = inputs.iter().flatten().map(|p| p.to_path_buf()).collect();
    let outputs = out.map(|p| vec![p.to_path_buf()]).unwrap_or_default();
    match at.or_else(|| out.map(sidecar)) {
        Some(path) => RunManifest::new(sub, cfg, inputs, outputs).write(&path),
        None => Ok(()),
    }
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    Ok(w)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

fn row<W: Write>(w: &mut csv::Writer<W>, path: &Path, fields: &[String]) -> Result<()> {
    w.write_record(fields).map_err(|e| csv_err(path, e))
}

fn flush<W: Write>(w: &mut csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `synth.pair_count` synthetic pairs drawn with the run seed.
pub fn gen_corpus(cfg: &RunConfig, out: &Path) -> Result<Vec<QAPair>> {
    write_manifest("gen-corpus", cfg, &[], Some(out), None)?;
    let pairs = synth_corpus(&cfg.synth, cfg.train.seed).map_err(|e| Error::Config(e.to_string()))?;
    write_pairs(out, &pairs)?;
    Ok(pairs)
}

/// Focus spans and `n_h` hard negatives for every pair, with the phrase
/// dictionary built from the corpus FAQs. Pairs without a usable focus get
/// an empty negative list.
pub fn gen_negatives(cfg: &RunConfig, corpus: &Path, lex_path: Option<&Path>, out: &Path) -> Result<Vec<NegativeRecord>> {
    write_manifest("gen-negatives", cfg, &[Some(corpus), lex_path], Some(out), None)?;
    let lex = lexicon(lex_path)?;
    let pairs = load_pairs(corpus)?;
    let faqs: Vec<Vec<String>> = pairs.iter().map(QAPair::faq_tokens).collect();
    let dict = build_phrase_dictionary(&faqs, &lex);
    let n_h = cfg.train.contrastive.n_h;
    let records: Vec<NegativeRecord> = pairs
        .iter()
        .zip(&faqs)
        .enumerate()
        .map(|(i, (p, faq))| {
            let focuses = identify_focus(&p.chq_tokens(), faq, &lex);
            let seed = derive_seed(&[cfg.train.seed, 0, i as u64]);
            let negatives = generate_hard_negatives(i, faq, &focuses, &dict, n_h, seed)
                .map(|s| s.negatives.iter().map(|n| n.join(" ")).collect())
                .unwrap_or_default();
            NegativeRecord {
                pair_id: i,
                focuses: focuses.into_iter().map(|f| f.text).collect(),
                negatives,
            }
        })
        .collect();
    write_jsonl(out, &records)?;
    Ok(records)
}

pub struct TrainPaths<'a> {
    pub corpus: &'a Path,
    pub dev: &'a Path,
    pub lexicon: Option<&'a Path>,
    pub out: &'a Path,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub best_epoch: usize,
    /// Dev metrics per epoch, epoch 0 first.
    pub dev: Vec<EvalReport>,
}

pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"))
}

pub fn train(cfg: &RunConfig, paths: &TrainPaths) -> Result<TrainSummary> {
    let out = paths.out;
    fs::create_dir_all(out.join("checkpoints")).map_err(|e| Error::io(out, e))?;
    write_manifest(
        "train",
        cfg,
        &[Some(paths.corpus), Some(paths.dev), paths.lexicon],
        Some(out),
        Some(out.join("manifest.json")),
    )?;
    cfg.train.validate()?;
    let lex = lexicon(paths.lexicon)?;
    let train_pairs = load_pairs(paths.corpus)?;
    let dev_pairs = load_pairs(paths.dev)?;
    if train_pairs.is_empty() {
        return Err(Error::format(paths.corpus, "corpus is empty"));
    }
    let vocab = build_vocab(&train_pairs, cfg.min_freq);
    let mut mc = cfg.model.clone();
    mc.vocab_size = vocab.len();
    let params: ModelParams<f32> = ModelParams::init(&mc, cfg.train.seed)?;
    let data = TrainData::new(&train_pairs, vocab.clone(), &lex, mc.max_len)?;
    let mut state = TrainState::new(params, &cfg.train);

    let log_path = out.join("trainlog.csv");
    let dev_path = out.join("dev_metrics.csv");
    let time_path = out.join("timing.csv");
    let mut log = csv_writer(&log_path, &TRAINLOG_HEADER)?;
    let mut dev_log = csv_writer(&dev_path, &DEV_HEADER)?;
    let mut timing = csv_writer(&time_path, &["epoch", "train_seconds", "eval_seconds"])?;

    let mut reports = Vec::with_capacity(cfg.train.epochs + 1);
    let mut best = (0, f64::NEG_INFINITY);
    for epoch in 0..=cfg.train.epochs {
        let started = Instant::now();
        if epoch > 0 {
            let records = train_epoch(&mut state, &data, &cfg.train, |_| {})?;
            for r in &records {
                let l = &r.losses;
                let vals = [l.ce, l.ctr_cs, l.ctr_ch, l.ctr_gs, l.ctr_gh, l.total];
                let mut fields = vec![r.step.to_string(), r.epoch.to_string()];
                fields.extend(vals.iter().map(|v| v.to_string()));
                row(&mut log, &log_path, &fields)?;
            }
            flush(&mut log, &log_path)?;
        }
        let train_secs = started.elapsed().as_secs_f64();
        let ckpt = Checkpoint::inference(&vocab, &state, &cfg.train);
        ckpt.save(&epoch_checkpoint(out, epoch))?;

        let started = Instant::now();
        let report = if dev_pairs.is_empty() {
            EvalReport::default()
        } else {
            evaluate(state.params(), &vocab, &dev_pairs, &lex, Strategy::Greedy)?
        };
        let fields = [report.r1, report.r2, report.rl, report.focus_accuracy];
        let mut rec = vec![epoch.to_string()];
        rec.extend(fields.iter().map(|v| v.to_string()));
        row(&mut dev_log, &dev_path, &rec)?;
        flush(&mut dev_log, &dev_path)?;
        log::info!("epoch {epoch}: dev rl {:.2} focus accuracy {:.3}", report.rl, report.focus_accuracy);
        if report.rl > best.1 {
            best = (epoch, report.rl);
            ckpt.save(&out.join("best.ckpt"))?;
        }
        reports.push(report);
        let eval_secs = started.elapsed().as_secs_f64();
        row(
            &mut timing,
            &time_path,
            &[epoch.to_string(), format!("{train_secs:.3}"), format!("{eval_secs:.3}")],
        )?;
        flush(&mut timing, &time_path)?;
    }
    Checkpoint::full(&vocab, &state, &cfg.train).save(&out.join("state.ckpt"))?;
    Ok(TrainSummary {
        best_epoch: best.0,
        dev: reports,
    })
}

pub fn evaluate_checkpoint(
    cfg: &RunConfig,
    checkpoint: &Path,
    corpus: &Path,
    lex_path: Option<&Path>,
    strategy: Strategy,
    out: Option<&Path>,
) -> Result<EvalReport> {
    write_manifest("evaluate", cfg, &[Some(checkpoint), Some(corpus), lex_path], out, None)?;
    let lex = lexicon(lex_path)?;
    let ck = Checkpoint::load_model(checkpoint)?;
    let pairs = load_pairs(corpus)?;
    let report = evaluate(&ck.model, &ck.vocab, &pairs, &lex, strategy)?;
    let json = serde_json::to_string(&report).expect("report serializes") + "\n";
    match out {
        Some(p) => fs::write(p, json).map_err(|e| Error::io(p, e))?,
        None => print!("{json}"),
    }
    Ok(report)
}

/// `epoch_*.ckpt` files in `dir`, ordered by the epoch stored inside.
pub fn epoch_checkpoints(dir: &Path) -> Result<Vec<(usize, PathBuf, Checkpoint)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("epoch_") && name.ends_with(".ckpt") {
            let ck = Checkpoint::load_model(&path)?;
            found.push((ck.meta.epoch, path, ck));
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(found)
}

/// Similarity curve over every epoch checkpoint in `dir`.
pub fn analyze(cfg: &RunConfig, dir: &Path, dev: &Path, lex_path: Option<&Path>, out: Option<&Path>) -> Result<Vec<SimilarityCurvePoint>> {
    write_manifest("analyze", cfg, &[Some(dir), Some(dev), lex_path], out, None)?;
    let lex = lexicon(lex_path)?;
    let pairs = load_pairs(dev)?;
    let ckpts = epoch_checkpoints(dir)?;
    if ckpts.is_empty() {
        return Err(Error::format(dir, "no epoch_*.ckpt files"));
    }
    let setup = CurveSetup {
        n_h: cfg.analysis_n_h,
        seed: cfg.analysis_seed,
    };
    let mut points = Vec::with_capacity(ckpts.len());
    for (epoch, _, ck) in &ckpts {
        points.push(similarity_point(&ck.model, &ck.vocab, &pairs, &lex, &setup, *epoch)?);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let sink = out.unwrap_or(Path::new("<stdout>"));
    row(&mut w, sink, &CURVE_HEADER.map(String::from))?;
    for p in &points {
        let vals = [p.s_c_faq_pos, p.s_c_sim_neg, p.s_c_hard_neg, p.s_g_faq_pos, p.s_g_sim_neg, p.s_g_hard_neg];
        let mut rec = vec![p.epoch.to_string()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        row(&mut w, sink, &rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(sink, e.to_string()))?;
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e))?,
        None => std::io::stdout().write_all(&bytes).map_err(|e| Error::io(sink, e))?,
    }
    Ok(points)
}
