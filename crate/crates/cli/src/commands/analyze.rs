use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use mcls_core::analysis::{
    ece, encoder_diversity, ensemble_average, nearest_neighbors, overlap_report, read_records, uncertainty_rank,
    uncertainty_scores, write_records, UncertaintyMethod,
};
use mcls_core::checkpoint::{write_atomic, Checkpoint};
use mcls_core::finetune::{swa_average, PredictionRecord};
use mcls_core::rng::stream;
use mcls_core::textpipe::{encode_documents, read_corpus_dir};

use super::load_vocab;
use crate::{vocab_path, CmdResult, Failure};

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Expected calibration error with its ten reliability bins.
    Ece(EceArgs),
    /// Overlap of the top-20% most uncertain examples between prediction files.
    Overlap(OverlapArgs),
    /// Rank examples from most to least uncertain.
    Rank(RankArgs),
    /// Pairwise correlation of CLS facets on a batch sampled from a corpus.
    Diversity(DiversityArgs),
    /// Nearest records by cosine similarity of one CLS state.
    Neighbors(NeighborsArgs),
    /// Average aligned prediction files.
    Ensemble(EnsembleArgs),
    /// Average the weights of several checkpoints.
    Swa(SwaArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    MultiClsVar,
    EnsembleVar,
    LeastConfidence,
}

impl From<MethodArg> for UncertaintyMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::MultiClsVar => UncertaintyMethod::MultiClsVar,
            MethodArg::EnsembleVar => UncertaintyMethod::EnsembleVar,
            MethodArg::LeastConfidence => UncertaintyMethod::LeastConfidence,
        }
    }
}

#[derive(Debug, Args)]
pub struct EceArgs {
    pub file: PathBuf,
    /// Also write the bins as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    /// Two or more prediction files; every pair is compared.
    pub files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "least-confidence")]
    pub method: MethodArg,
    /// Ranking for the second file of each pair; defaults to `--method`.
    #[arg(long, value_enum)]
    pub method_b: Option<MethodArg>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// One file, or several for `ensemble-var`.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "least-confidence")]
    pub method: MethodArg,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Rows per batch part.
    #[arg(long, default_value_t = 16)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct NeighborsArgs {
    pub file: PathBuf,
    #[arg(long)]
    pub query: u64,
    /// Which CLS state to compare (0-based).
    #[arg(long, default_value_t = 0)]
    pub k_index: usize,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SwaArgs {
    #[arg(required = true)]
    pub ckpts: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cmd: AnalyzeCommand) -> CmdResult {
    match cmd {
        AnalyzeCommand::Ece(a) => run_ece(a),
        AnalyzeCommand::Overlap(a) => run_overlap(a),
        AnalyzeCommand::Rank(a) => run_rank(a),
        AnalyzeCommand::Diversity(a) => run_diversity(a),
        AnalyzeCommand::Neighbors(a) => run_neighbors(a),
        AnalyzeCommand::Ensemble(a) => run_ensemble(a),
        AnalyzeCommand::Swa(a) => run_swa(a),
    }
}

fn read_all(files: &[PathBuf]) -> CmdResult<Vec<Vec<PredictionRecord>>> {
    Ok(files.iter().map(|f| read_records(f)).collect::<Result<_, _>>()?)
}

fn run_ece(a: EceArgs) -> CmdResult {
    let records = read_records(&a.file)?;
    let (value, bins) = ece(&records)?;
    println!("bin\tcount\taccuracy\tconfidence");
    for (i, b) in bins.bins.iter().enumerate() {
        println!("{i}\t{}\t{:.6}\t{:.6}", b.count, b.accuracy, b.confidence);
    }
    println!("ece\t{value}");
    if let Some(p) = a.json {
        let doc = serde_json::json!({ "ece": value, "bins": bins.bins });
        write_atomic(&p, serde_json::to_string_pretty(&doc).map_err(mcls_core::Error::from)?.as_bytes())?;
    }
    Ok(())
}

fn run_overlap(a: OverlapArgs) -> CmdResult {
    if a.files.len() < 2 {
        return Err(Failure::Usage("overlap compares at least two prediction files".into()));
    }
    let method_a = UncertaintyMethod::from(a.method);
    let method_b = a.method_b.map(UncertaintyMethod::from).unwrap_or(method_a);
    if method_a == UncertaintyMethod::EnsembleVar || method_b == UncertaintyMethod::EnsembleVar {
        return Err(Failure::Usage(
            "overlap ranks each file on its own; build ensemble rankings with `analyze ensemble` first".into(),
        ));
    }
    let files = read_all(&a.files)?;
    let name = |m: UncertaintyMethod| format!("{m:?}");
    println!("file_a\tfile_b\tmethod_a\tmethod_b\toverlap\tm\tratio\tp_value");
    let mut trials = Vec::new();
    let mut reports = Vec::new();
    for i in 0..files.len() {
        for j in i + 1..files.len() {
            let ra = uncertainty_rank(std::slice::from_ref(&files[i]), method_a)?;
            let rb = uncertainty_rank(std::slice::from_ref(&files[j]), method_b)?;
            let r = overlap_report(&name(method_a), &name(method_b), &[(ra.clone(), rb.clone())])?;
            println!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.3e}",
                a.files[i].display(),
                a.files[j].display(),
                r.method_a,
                r.method_b,
                r.total_overlap,
                (0.2 * ra.len() as f64).floor(),
                r.ratio,
                r.p_value
            );
            reports.push(r);
            trials.push((ra, rb));
        }
    }
    if trials.len() > 1 {
        let pooled = overlap_report(&name(method_a), &name(method_b), &trials)?;
        println!(
            "pooled\t{} pairs\t{}\t{}\t{}\t-\t{:.4}\t{:.3e}",
            trials.len(),
            pooled.method_a,
            pooled.method_b,
            pooled.total_overlap,
            pooled.ratio,
            pooled.p_value
        );
        reports.push(pooled);
    }
    if let Some(p) = a.json {
        write_atomic(&p, serde_json::to_string_pretty(&reports).map_err(mcls_core::Error::from)?.as_bytes())?;
    }
    Ok(())
}

fn run_rank(a: RankArgs) -> CmdResult {
    let files = read_all(&a.files)?;
    let scores = uncertainty_scores(&files, a.method.into())?;
    let ranked = uncertainty_rank(&files, a.method.into())?;
    let by_id: std::collections::HashMap<u64, f64> = scores.into_iter().collect();
    println!("rank\tid\tuncertainty");
    for (i, id) in ranked.iter().enumerate() {
        println!("{}\t{id}\t{}", i + 1, by_id[id]);
    }
    Ok(())
}

fn run_diversity(a: DiversityArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let cfg = &ckpt.config;
    if cfg.k < 2 {
        return Err(Failure::Usage("diversity needs a checkpoint with K ≥ 2".into()));
    }
    let vocab = load_vocab(&a.ckpt, cfg.k)?;
    let docs = encode_documents(&vocab, &read_corpus_dir(&a.corpus)?);
    let m = encoder_diversity(&ckpt.params, cfg, &docs, a.rows, &mut stream(a.seed, "analysis/diversity"))?;
    println!("k1\tk2\tcorr");
    for (k1, k2, r) in &m {
        println!("{k1}\t{k2}\t{r:.6}");
    }
    let mean = m.iter().map(|x| x.2).sum::<f64>() / m.len() as f64;
    println!("mean\t-\t{mean:.6}");
    Ok(())
}

fn run_neighbors(a: NeighborsArgs) -> CmdResult {
    let records = read_records(&a.file)?;
    println!("rank\tid\tcosine");
    for (i, (id, s)) in nearest_neighbors(&records, a.query, a.k_index, a.top)?.iter().enumerate() {
        println!("{}\t{id}\t{s:.6}", i + 1);
    }
    Ok(())
}

fn run_ensemble(a: EnsembleArgs) -> CmdResult {
    let files = read_all(&a.files)?;
    let avg = ensemble_average(&files)?;
    write_records(&a.out, &avg)?;
    println!("averaged {} files into {}", files.len(), a.out.display());
    Ok(())
}

fn run_swa(a: SwaArgs) -> CmdResult {
    let ckpts: Vec<Checkpoint> = a.ckpts.iter().map(|p| Checkpoint::load(p)).collect::<Result<_, _>>()?;
    let avg = swa_average(&ckpts)?;
    avg.save(&a.out)?;
    let vocab = vocab_path(&a.ckpts[0]);
    if vocab.exists() {
        write_atomic(&vocab_path(&a.out), &std::fs::read(vocab)?)?;
    }
    println!("averaged {} checkpoints into {}", ckpts.len(), a.out.display());
    Ok(())
}
