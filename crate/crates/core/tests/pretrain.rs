//! Pretraining loop behavior on small synthetic corpora.

use mcls_core::encoder::{init_encoder_params, LossWeights, ModelConfig};
use mcls_core::numkernel::Graph;
use mcls_core::pretrain::*;
use mcls_core::rng::seeded;
use mcls_core::synth::{synthetic_corpus, SynthCorpusConfig};
use mcls_core::textpipe::{compute_tfidf_targets, encode_documents, BatchMode, Document, TfidfTable, Vocabulary};
use mcls_core::Error;

fn small() -> ModelConfig {
    ModelConfig {
        k: 3,
        lambda: 0.1,
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        insert_layers: vec![1],
        vocab_size: 256,
        max_len: 24,
        dropout_p: 0.1,
        ..ModelConfig::default()
    }
}

fn corpus(n_docs: usize, cfg: &ModelConfig) -> Vec<Document> {
    let raw = synthetic_corpus(&SynthCorpusConfig { n_docs, ..Default::default() }, &mut seeded(0)).unwrap();
    let vocab = Vocabulary::from_documents(&raw, cfg.vocab_size, cfg.k).unwrap();
    encode_documents(&vocab, &raw)
}

fn hp(steps: u64) -> PretrainConfig {
    PretrainConfig { steps, batch_size: 12, lr: 1e-3, ..PretrainConfig::default() }
}

#[test]
fn loss_decreases_over_training() {
    let cfg = small();
    let docs = corpus(200, &cfg);
    let (_, state, reports) = pretrain(&docs, &cfg, &hp(500), 3, None).unwrap();
    let mean = |r: &[StepReport]| r.iter().map(|x| x.total).sum::<f64>() / r.len() as f64;
    let (early, late) = (mean(&reports[..50]), mean(&reports[450..]));
    assert!(late < early, "early {early:.4} late {late:.4}");
    assert!(state.running_total < reports[0].total);
    assert_eq!(state.step, 500);
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let cfg = ModelConfig {
        loss_weights: LossWeights { mcqt: 0.0, mlm: 0.0, so: 0.0, tfidf: 0.0 },
        ..small()
    };
    let docs = corpus(30, &cfg);
    let (params, _, reports) = pretrain(&docs, &cfg, &hp(5), 1, None).unwrap();
    let init = init_encoder_params(&cfg, &mut mcls_core::rng::stream(1, "pretrain/init")).unwrap();
    assert_eq!(params, init);
    assert!(reports.iter().all(|r| r.total == 0.0 && r.grad_norm == 0.0));
}

#[test]
fn runs_are_deterministic() {
    let cfg = small();
    let docs = corpus(40, &cfg);
    let mut log_a = Vec::new();
    let mut log_b = Vec::new();
    let a = pretrain(&docs, &cfg, &hp(15), 9, Some(&mut log_a)).unwrap();
    let b = pretrain(&docs, &cfg, &hp(15), 9, Some(&mut log_b)).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(log_a, log_b);
    let c = pretrain(&docs, &cfg, &hp(15), 10, None).unwrap();
    assert_ne!(a.0, c.0);
    let text = String::from_utf8(log_a).unwrap();
    assert_eq!(text.lines().next(), Some(LOG_HEADER));
    assert_eq!(text.lines().count(), 16);
}

#[test]
fn total_is_weighted_sum_of_objectives() {
    let base = ModelConfig { dropout_p: 0.0, ..small() };
    let docs = corpus(40, &base);
    let table = TfidfTable::build(&docs, base.vocab_size);
    let mut trainer = Pretrainer::new(&docs, base.clone(), hp(1), 2).unwrap();
    let batch = trainer.next_batch().unwrap();
    let targets = compute_tfidf_targets(&batch, &table);
    let params = init_encoder_params(&base, &mut seeded(5)).unwrap();
    let eval = |w: LossWeights| {
        let cfg = ModelConfig { loss_weights: w, ..base.clone() };
        let mut g = Graph::new();
        let p = params.bind_frozen(&mut g);
        let v = build_objectives(&mut g, &p, &cfg, &batch, &targets, None).unwrap();
        let get = |x: Option<_>| x.map(|x| g.value(x).item()).unwrap();
        (g.value(v.total).item(), [get(v.mcqt), get(v.mlm), get(v.so), get(v.tfidf)])
    };
    let (_, unit) = eval(LossWeights::default());
    let w = LossWeights { mcqt: 0.5, mlm: 2.0, so: 0.25, tfidf: 3.0 };
    let (total, parts) = eval(w);
    assert_eq!(parts, unit);
    let want = 0.5 * unit[0] + 2.0 * unit[1] + 0.25 * unit[2] + 3.0 * unit[3];
    assert!((total - want).abs() < 1e-12);
}

#[test]
fn two_part_mode_trains() {
    let cfg = small();
    let docs = corpus(40, &cfg);
    let hp = PretrainConfig { mode: BatchMode::TwoPart, ..hp(3) };
    let (_, _, r) = pretrain(&docs, &cfg, &hp, 0, None).unwrap();
    assert!(r.iter().all(|x| x.losses.mcqt > 0.0));
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let cfg = small();
    let docs = corpus(10, &cfg);
    let bad = PretrainConfig { batch_size: 10, ..hp(1) };
    assert!(matches!(pretrain(&docs, &cfg, &bad, 0, None), Err(Error::Config(_))));
    assert!(matches!(pretrain(&[], &cfg, &hp(1), 0, None), Err(Error::Config(_))));
}

#[test]
fn warmup_reaches_peak_then_holds() {
    let s = WarmupSchedule::new(2e-4, 0.001, 1000);
    assert_eq!(s.lr(1), 2e-4);
    let s = WarmupSchedule::new(1e-3, 0.1, 100);
    assert!((s.lr(5) - 5e-4).abs() < 1e-18);
    assert_eq!(s.lr(10), 1e-3);
    assert_eq!(s.lr(90), 1e-3);
}
