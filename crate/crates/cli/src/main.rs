//! Batch entry points: train, eval, generate, entropy, search-topk,
//! build-vocab. Exit code 0 on success, 1 on user error, 2 on internal
//! error.

use std::fs;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bootchat_core::corpus::{encode_corpus, read_corpus_file, split_dataset, DialogueExample};
use bootchat_core::entropy::{positional_entropy, write_entropy_csv, EntropyScope};
use bootchat_core::error::{Error, Result};
use bootchat_core::metrics::{evaluate, write_eval_csv};
use bootchat_core::trainer::{
    eval_pairs, generate_response, load_run, run_training, search_top_k, EvalDecode, LoadedRun,
    TrainingConfig,
};
use bootchat_core::vocab::Vocabulary;

#[derive(Parser)]
#[command(name = "bootchat", version, about = "Dialogue model training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file and a corpus
    Train(TrainArgs),
    /// Score a checkpoint's decodes on a data split
    Eval(EvalArgs),
    /// Decode one response for a TAB-separated context
    Generate(GenerateArgs),
    /// Write per-position token entropy of a corpus as CSV
    Entropy(EntropyArgs),
    /// Sweep top-k over the validation split by BLEU-2
    SearchTopk(SearchTopkArgs),
    /// Build a vocabulary file from a corpus
    BuildVocab(BuildVocabArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file
    #[arg(long)]
    config: PathBuf,
    /// Corpus: one conversation per line, TAB-separated turns
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, vocab, and metrics
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train | validation | test
    #[arg(long, default_value = "test")]
    split: String,
    /// greedy | topk
    #[arg(long, default_value = "greedy")]
    mode: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV path (default eval-<split>.csv in the working directory)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Context turns separated by TAB characters
    #[arg(long)]
    context: String,
    /// greedy | topk
    #[arg(long, default_value = "greedy")]
    mode: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    /// responses | all
    #[arg(long, default_value = "responses")]
    scope: String,
    /// Accepted for interface uniformity; entropy is deterministic
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SearchTopkArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Optional CSV path for the k → BLEU-2 curve
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long)]
    data: PathBuf,
    /// Vocabulary file to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    capacity: usize,
    /// Accepted for interface uniformity; vocabulary building is deterministic
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
        Command::Entropy(a) => entropy(a),
        Command::SearchTopk(a) => search_topk(a),
        Command::BuildVocab(a) => build_vocab(a),
    }
}

/// `--data` takes the corpus file itself, or a directory holding
/// `corpus.txt`.
fn resolve_corpus(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        let inner = path.join("corpus.txt");
        if inner.is_file() {
            return Ok(inner);
        }
        return Err(Error::Config(format!(
            "{} is a directory without a corpus.txt",
            path.display()
        )));
    }
    Ok(path.to_path_buf())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainingConfig::parse(&read_text(&a.config)?)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let corpus = resolve_corpus(&a.data)?;
    let summary = run_training(&cfg, &corpus, &a.out, a.resume.as_deref())?;
    println!("steps           {}", summary.steps);
    println!("final gen loss  {}", summary.final_gen_loss);
    println!("final disc loss {}", summary.final_disc_loss);
    println!("final lr        {}", summary.final_lr);
    println!("val bleu2       {}", summary.final_val_bleu2);
    println!("checkpoint      {}", summary.checkpoint.display());
    println!("metrics         {}", summary.metrics_csv.display());
    Ok(())
}

fn decode_mode(mode: &str, k: usize) -> Result<EvalDecode> {
    match mode {
        "greedy" => Ok(EvalDecode::Greedy),
        "topk" => Ok(EvalDecode::TopK { k }),
        other => Err(Error::Config(format!("unknown mode `{other}`, expected greedy or topk"))),
    }
}

/// Re-derives the training split so eval addresses the same subsets the run
/// saw. Splitting uses the seed the model was trained with; `--seed` only
/// steers sampling.
fn load_split(run: &LoadedRun, data: &Path, split: &str) -> Result<Vec<DialogueExample>> {
    let corpus = resolve_corpus(data)?;
    let raw = read_corpus_file(&corpus)?;
    let examples = encode_corpus(&raw, &run.vocab, &run.cfg.limits())?;
    if !run.cfg.split {
        return match split {
            "train" | "validation" | "test" => Ok(examples),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        };
    }
    let (train, validation, test) = split_dataset(examples, run.cfg.seed)?;
    match split {
        "train" => Ok(train),
        "validation" => Ok(validation),
        "test" => Ok(test),
        other => Err(Error::Config(format!(
            "unknown split `{other}`, expected train, validation, or test"
        ))),
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let run = load_run(&a.checkpoint)?;
    let examples = load_split(&run, &a.data, &a.split)?;
    if examples.is_empty() {
        return Err(Error::Config(format!("split `{}` is empty", a.split)));
    }
    let mode = decode_mode(&a.mode, a.k)?;
    let mut cfg = run.cfg.clone();
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let pairs = eval_pairs(&run.params, &cfg, &run.vocab, &examples, mode, "eval", &[])?;
    let report = evaluate(&pairs)?;
    println!("metric value");
    println!("bleu2  {}", report.bleu2);
    println!("rouge2 {}", report.rouge2);
    println!("dist1  {}", report.dist1);
    println!("dist2  {}", report.dist2);
    println!("nasl   {}", report.nasl);
    let out = a.out.unwrap_or_else(|| PathBuf::from(format!("eval-{}.csv", a.split)));
    let file = File::create(&out).map_err(|e| Error::io(format!("writing {}", out.display()), e))?;
    let mut w = BufWriter::new(file);
    write_eval_csv(&report, &mut w)?;
    println!("report {}", out.display());
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let run = load_run(&a.checkpoint)?;
    let mode = decode_mode(&a.mode, a.k)?;
    let response = generate_response(&run, &a.context, mode, a.seed)?;
    println!("{response}");
    Ok(())
}

fn entropy(a: EntropyArgs) -> Result<()> {
    let scope = match a.scope.as_str() {
        "responses" => EntropyScope::Responses,
        "all" => EntropyScope::AllUtterances,
        other => Err(Error::Config(format!("unknown scope `{other}`, expected responses or all")))?,
    };
    let corpus = resolve_corpus(&a.data)?;
    let raw = read_corpus_file(&corpus)?;
    let rows = positional_entropy(&raw, scope)?;
    let file =
        File::create(&a.out).map_err(|e| Error::io(format!("writing {}", a.out.display()), e))?;
    let mut w = BufWriter::new(file);
    write_entropy_csv(&rows, &mut w)?;
    println!("{} positions -> {}", rows.len(), a.out.display());
    Ok(())
}

fn search_topk(a: SearchTopkArgs) -> Result<()> {
    let run = load_run(&a.checkpoint)?;
    let validation = load_split(&run, &a.data, "validation")?;
    let mut cfg = run.cfg.clone();
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let search = search_top_k(&run.params, &cfg, &run.vocab, &validation, a.k_max)?;
    println!("k,val_bleu2");
    for (k, score) in &search.curve {
        println!("{k},{score}");
    }
    println!("best k = {}", search.best_k);
    if let Some(out) = a.out {
        let mut text = String::from("k,val_bleu2\n");
        for (k, score) in &search.curve {
            text.push_str(&format!("{k},{score}\n"));
        }
        fs::write(&out, text).map_err(|e| Error::io(format!("writing {}", out.display()), e))?;
    }
    Ok(())
}

fn build_vocab(a: BuildVocabArgs) -> Result<()> {
    let corpus = resolve_corpus(&a.data)?;
    let raw = read_corpus_file(&corpus)?;
    let vocab = Vocabulary::build_from_texts(raw.all_turns(), a.capacity)?;
    fs::write(&a.out, vocab.to_lines())
        .map_err(|e| Error::io(format!("writing {}", a.out.display()), e))?;
    println!("{} tokens -> {}", vocab.size(), a.out.display());
    Ok(())
}
