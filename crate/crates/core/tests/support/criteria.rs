//! Measurements shared by the integration tests and the acceptance runner.
//! Each function returns the worst deviation it saw so callers pick the
//! threshold.

use mcls_core::analysis::ece;
use mcls_core::finetune::{reparam_aggregate, PredictionRecord};
use mcls_core::numkernel::{Graph, Tensor};
use mcls_core::pretrain::{mc_logit, mcqt_loss, qt_logit};
use mcls_core::rng::{stream, Rng};
use mcls_core::Result;
use rand::Rng as _;

use super::{ece_oracle, mc_logit_oracle, mcqt_oracle, nested3};

/// Worst |mc_logit − enumeration oracle| over random `K ≤ 5`, `D ≤ 16` pairs.
pub fn mc_logit_gap(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, "test/mc_logit");
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let k = rng.random_range(1..=5);
        let d = rng.random_range(1..=16);
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let a = Tensor::randn(&[k, d], 1.0, &mut rng);
        let b = Tensor::randn(&[k, d], 1.0, &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let got_var = mc_logit(&mut g, va, vb, lambda)?;
        let got = g.value(got_var).item();
        let rows = |t: &Tensor| (0..k).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
        worst = worst.max((got - mc_logit_oracle(&rows(&a), &rows(&b), lambda)).abs());
    }
    Ok(worst)
}

/// Worst |mcqt_loss − log-sum-exp oracle| over random batches with `n ≤ 4`.
pub fn mcqt_gap(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, "test/mcqt");
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=5);
        let d = rng.random_range(2..=8);
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let parts: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[n, k, d], 1.0, &mut rng)).collect();
        let mut g = Graph::new();
        let v: Vec<_> = parts.iter().map(|t| g.constant(t.clone())).collect();
        let got_var = mcqt_loss(&mut g, v[0], v[1], v[2], lambda)?;
        let got = g.value(got_var).item();
        let want = mcqt_oracle(&[nested3(&parts[0]), nested3(&parts[1]), nested3(&parts[2])], lambda);
        worst = worst.max((got - want).abs());
    }
    Ok(worst)
}

/// Random records with coarse confidences so tie groups straddle bins.
pub fn random_records(rng: &mut Rng, n: usize, classes: usize) -> Vec<PredictionRecord> {
    (0..n)
        .map(|i| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(1..=6) as f64).collect();
            let z: f64 = raw.iter().sum();
            PredictionRecord {
                id: i as u64,
                gold: rng.random_range(0..classes) as f64,
                probs: raw.iter().map(|r| r / z).collect(),
                cls_probs: vec![],
                uncertainty: 0.0,
                cls_hidden: None,
            }
        })
        .collect()
}

/// Worst |ece − histogram oracle| over random record sets.
pub fn ece_gap(sets: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, "test/ece");
    let mut worst = 0.0f64;
    for _ in 0..sets {
        let n = rng.random_range(1..=60);
        let c = rng.random_range(2..=4);
        let recs = random_records(&mut rng, n, c);
        let (got, _) = ece(&recs)?;
        worst = worst.max((got - ece_oracle(&recs)).abs());
    }
    Ok(worst)
}

/// Worst |mc_logit − qt_logit| at `K = 1` across λ.
pub fn k1_reduction_gap(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, "test/k1");
    let mut worst = 0.0f64;
    for i in 0..instances {
        let d = rng.random_range(1..=16);
        let lambda = i as f64 / (instances.max(2) - 1) as f64;
        let a = Tensor::randn(&[1, d], 1.0, &mut rng);
        let b = Tensor::randn(&[1, d], 1.0, &mut rng);
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
        let mc_var = mc_logit(&mut g, va, vb, lambda)?;
        let mc = g.value(mc_var).item();
        let fa = g.constant(a.reshaped(&[d])?);
        let fb = g.constant(b.reshaped(&[d])?);
        let qt_var = qt_logit(&mut g, fa, fb)?;
        let qt = g.value(qt_var).item();
        worst = worst.max((mc - qt).abs());
    }
    Ok(worst)
}

/// Worst |mcqt_loss − 2 ln(2n)| when every facet of every row is the same vector.
pub fn identical_cls_gap(seed: u64) -> Result<f64> {
    let mut rng = stream(seed, "test/identical");
    let mut worst = 0.0f64;
    for n in 1..=6 {
        let (k, d) = (rng.random_range(1..=5), rng.random_range(2..=8));
        let v = Tensor::randn(&[d], 1.0, &mut rng);
        let data: Vec<f64> = (0..n * k).flat_map(|_| v.data().to_vec()).collect();
        let part = Tensor::new(vec![n, k, d], data)?;
        let mut g = Graph::new();
        let p: Vec<_> = (0..3).map(|_| g.constant(part.clone())).collect();
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let got_var = mcqt_loss(&mut g, p[0], p[1], p[2], lambda)?;
        let got = g.value(got_var).item();
        worst = worst.max((got - 2.0 * (2.0 * n as f64).ln()).abs());
    }
    Ok(worst)
}

/// Largest |entry| of reparam_aggregate when all `W_k` are equal.
pub fn identical_w_output(seed: u64) -> Result<f64> {
    let mut rng = stream(seed, "test/identical_w");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (b, k, d, out) = (rng.random_range(1..=4), rng.random_range(2..=6), rng.random_range(1..=8), rng.random_range(1..=3));
        let one = Tensor::randn(&[out, d], 1.0, &mut rng);
        let w = Tensor::new(vec![k, out, d], (0..k).flat_map(|_| one.data().to_vec()).collect())?;
        let h = Tensor::randn(&[b, k, d], 1.0, &mut rng);
        let mut g = Graph::new();
        let (vh, vw) = (g.constant(h), g.constant(w));
        let y = reparam_aggregate(&mut g, vh, vw)?;
        worst = g.value(y).data().iter().fold(worst, |m, v| m.max(v.abs()));
    }
    Ok(worst)
}

/// Mean top-20% overlap ratio of independent random rankings of `n` ids.
pub fn random_overlap_mean(n: usize, seeds: u64) -> Result<f64> {
    use mcls_core::analysis::top20_overlap;
    use rand::seq::SliceRandom;
    let mut total = 0.0;
    for s in 0..seeds {
        let mut rng = stream(s, "test/overlap");
        let mut a: Vec<u64> = (0..n as u64).collect();
        let mut b = a.clone();
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        total += top20_overlap(&a, &b)?.ratio;
    }
    Ok(total / seeds as f64)
}

/// `chernoff_p` is 1 at the expected overlap and never increases with ΣS.
pub fn chernoff_is_monotone(n: usize) -> Result<bool> {
    use mcls_core::analysis::chernoff_p;
    let mu = n / 25;
    if chernoff_p(&[mu], n)? != 1.0 {
        return Ok(false);
    }
    let mut prev = 1.0;
    for s in 0..=n / 5 {
        let p = chernoff_p(&[s], n)?;
        if p > prev || !(0.0..=1.0).contains(&p) {
            return Ok(false);
        }
        prev = p;
    }
    Ok(true)
}

/// Model, corpus and vocabulary of the toy experiments.
pub struct Toy {
    pub cfg: mcls_core::encoder::ModelConfig,
    pub corpus_cfg: mcls_core::synth::SynthCorpusConfig,
    pub vocab: mcls_core::textpipe::Vocabulary,
    pub docs: Vec<mcls_core::textpipe::Document>,
}

/// K=5, D=32, three layers with inserts after layers 1 and 2, on a 200-document
/// synthetic corpus of 8 to 12 sentences per document.
pub fn toy() -> Result<Toy> {
    use mcls_core::synth::{synthetic_corpus, SynthCorpusConfig};
    use mcls_core::textpipe::{encode_documents, Vocabulary};
    let cfg = mcls_core::encoder::ModelConfig {
        k: 5,
        d_model: 32,
        n_layers: 3,
        n_heads: 2,
        d_ff: 64,
        insert_layers: vec![1, 2],
        vocab_size: 256,
        max_len: 24,
        ..Default::default()
    };
    let corpus_cfg = SynthCorpusConfig::default();
    let raw = synthetic_corpus(&corpus_cfg, &mut stream(0, "synth/corpus"))?;
    let vocab = Vocabulary::from_documents(&raw, cfg.vocab_size, cfg.k)?;
    let docs = encode_documents(&vocab, &raw);
    Ok(Toy { cfg, corpus_cfg, vocab, docs })
}

/// Pretrain the toy model; `insert = false` trains the no-insert ablation.
pub fn pretrain_toy(t: &Toy, steps: u64, insert: bool, seed: u64) -> Result<mcls_core::checkpoint::Checkpoint> {
    use mcls_core::pretrain::{pretrain, PretrainConfig};
    let cfg = mcls_core::encoder::ModelConfig { use_inserted_layers: insert, ..t.cfg.clone() };
    let hp = PretrainConfig { steps, ..PretrainConfig::default() };
    let (params, _, _) = pretrain(&t.docs, &cfg, &hp, seed, None)?;
    Ok(mcls_core::checkpoint::Checkpoint::new(cfg, params))
}

/// Mean off-diagonal facet correlation on a fixed held-out batch.
pub fn toy_diversity(t: &Toy, ckpt: &mcls_core::checkpoint::Checkpoint) -> Result<f64> {
    let m = mcls_core::analysis::encoder_diversity(&ckpt.params, &ckpt.config, &t.docs, 32, &mut stream(99, "analysis/diversity"))?;
    Ok(m.iter().map(|x| x.2).sum::<f64>() / m.len() as f64)
}

/// The 100-train / 200-dev separable two-class task in the toy vocabulary.
pub fn toy_task(t: &Toy, seed: u64) -> Result<mcls_core::finetune::TaskSpec> {
    let file = mcls_core::synth::separable_task_file(&t.corpus_cfg, 100, 200, &mut stream(seed, "synth/task"))?;
    file.encode(&t.vocab)
}
