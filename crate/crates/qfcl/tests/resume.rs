use std::path::Path;

use qfcl::checkpoint::Checkpoint;
use qfcl_core::chunkfocus::PosLexicon;
use qfcl_core::nn::{ModelConfig, ModelParams};
use qfcl_core::textcore::{build_vocab, synth_corpus, SynthConfig};
use qfcl_core::trainer::{train_epoch, Mode, TrainConfig, TrainData, TrainState};

#[test]
fn saved_state_resumes_bit_for_bit() {
    let sc = SynthConfig {
        pair_count: 40,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&sc, 9).unwrap();
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
    let data = TrainData::new(&corpus, vocab.clone(), &PosLexicon::english(), sc.max_len).unwrap();
    let mut cfg = TrainConfig::new(Mode::Qfcl);
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 8;
    cfg.contrastive.n_h = 2;
    cfg.contrastive.queue_size = 24;

    let mut straight = TrainState::new(ModelParams::<f32>::init(&mc, 1).unwrap(), &cfg);
    train_epoch(&mut straight, &data, &cfg, |_| {}).unwrap();
    let bytes = Checkpoint::full(&vocab, &straight, &cfg).to_bytes();
    let log_a = train_epoch(&mut straight, &data, &cfg, |_| {}).unwrap();

    let loaded = Checkpoint::from_bytes(&bytes, false, Path::new("mem")).unwrap();
    assert_eq!(loaded.vocab, vocab);
    let mut resumed = loaded.into_train_state(&cfg);
    let log_b = train_epoch(&mut resumed, &data, &cfg, |_| {}).unwrap();

    assert_eq!(log_a, log_b);
    assert_eq!(resumed, straight);
    assert_eq!(
        Checkpoint::full(&vocab, &resumed, &cfg).to_bytes(),
        Checkpoint::full(&vocab, &straight, &cfg).to_bytes()
    );
}
