use qfcl_core::chunkfocus::PosLexicon;
use qfcl_core::contrast::LossBundle;
use qfcl_core::nn::{ModelConfig, ModelParams};
use qfcl_core::textcore::{build_vocab, synth_corpus, SynthConfig};
use qfcl_core::trainer::{train_epoch, Mode, TrainConfig, TrainData, TrainState};

fn setup(pairs: usize, seed: u64) -> (TrainData, ModelConfig) {
    let sc = SynthConfig {
        pair_count: pairs,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&sc, seed).unwrap();
    let vocab = build_vocab(&corpus, 1);
    let mc = ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        max_len: sc.max_len,
        dropout_rate: 0.1,
    };
    let data = TrainData::new(&corpus, vocab, &PosLexicon::english(), sc.max_len).unwrap();
    (data, mc)
}

fn cfg(mode: Mode, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(mode);
    c.learning_rate = 1e-3;
    c.seed = seed;
    c.batch_size = 8;
    c.contrastive.n_h = 4;
    c.contrastive.queue_size = 64;
    c
}

#[test]
fn ce_only_matches_contrastive_training_with_zero_weights() {
    let (data, mc) = setup(48, 11);
    let params = ModelParams::<f32>::init(&mc, 4).unwrap();
    let ce = cfg(Mode::CeOnly, 4);
    let mut muted = cfg(Mode::Qfcl, 4);
    muted.learning_rate = ce.learning_rate;
    muted.contrastive.alpha = 0.0;
    muted.contrastive.beta = 0.0;

    let mut a = TrainState::new(params.clone(), &ce);
    let mut b = TrainState::new(params, &muted);
    for _ in 0..2 {
        let ra = train_epoch(&mut a, &data, &ce, |_| {}).unwrap();
        let rb = train_epoch(&mut b, &data, &muted, |_| {}).unwrap();
        let ce_a: Vec<f64> = ra.iter().map(|r| r.losses.ce).collect();
        let ce_b: Vec<f64> = rb.iter().map(|r| r.losses.ce).collect();
        assert_eq!(ce_a, ce_b);
        assert!(ra.iter().all(|r| r.losses.total == r.losses.ce));
    }
    assert_eq!(a.params().values(), b.params().values());
}

#[test]
fn total_loss_falls_between_epoch_1_and_5() {
    let mut wins = 0;
    for seed in 0..3 {
        let (data, mc) = setup(120, 100 + seed);
        let c = cfg(Mode::Qfcl, seed);
        let mut st = TrainState::new(ModelParams::<f32>::init(&mc, seed).unwrap(), &c);
        let mut totals = Vec::new();
        for _ in 0..5 {
            let recs = train_epoch(&mut st, &data, &c, |_| {}).unwrap();
            let b: Vec<LossBundle> = recs.iter().map(|r| r.losses).collect();
            totals.push(LossBundle::mean(&b).total);
        }
        if totals[4] < totals[0] {
            wins += 1;
        }
    }
    assert!(wins >= 2, "loss fell on only {wins} of 3 seeds");
}
