//! `fineehr` command line: generate synthetic corpora, run one pipeline
//! setting, run the four-setting ablation grid, or inspect learned
//! artifacts.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fineehr::embed::EmbeddingMatrix;
use fineehr::pipeline::{self, PipelineConfig, PipelineError, Setting};
use fineehr::textprep::Vocabulary;
use fineehr::corpus;

#[derive(Parser)]
#[command(name = "fineehr", about = "Clinical-note representation refinement pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set word2vec.dim=32 (repeatable).
    #[arg(long = "set", value_parser = parse_key_value)]
    set: Vec<(String, String)>,
    /// Override the master seed (run.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut config = pipeline::load_config(&self.config, &self.set)?;
        if let Some(seed) = self.seed {
            config.run.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic notes.csv + admissions.csv corpus.
    Generate(ConfigArgs),
    /// Run the pipeline for one ablation setting.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Which refinement stages to enable.
        #[arg(long, default_value = "full")]
        setting: Setting,
    },
    /// Run all four settings over the configured seeds.
    Ablate(ConfigArgs),
    /// Print learned category weights and nearest-neighbor words from a
    /// previous `run` output directory.
    Inspect {
        /// Directory written by `run`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Token to look up neighbors for.
        #[arg(long)]
        token: Option<String>,
        #[arg(long, default_value_t = 10)]
        topk: usize,
    },
}

fn parse_key_value(raw: &str) -> Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {raw:?}"))
}

fn generate(args: &ConfigArgs) -> Result<(), PipelineError> {
    let config = args.load()?;
    let synth = config.data.synthetic.as_ref().ok_or_else(|| {
        PipelineError::Config("generate requires a [data.synthetic] section".into())
    })?;
    let (notes, admissions) = corpus::generate_synthetic(synth)
        .map_err(|e| PipelineError::Data { stage: "synthetic", message: e.to_string() })?;
    fs::create_dir_all(&args.out).map_err(|source| PipelineError::Io {
        path: args.out.clone(),
        source,
    })?;
    let write = |name: &str, bytes: Vec<u8>| {
        let path = args.out.join(name);
        fs::write(&path, bytes).map_err(|source| PipelineError::Io { path, source })
    };
    write(
        "notes.csv",
        corpus::serialize_notes_csv(&notes)
            .map_err(|e| PipelineError::Data { stage: "serialize", message: e.to_string() })?,
    )?;
    write(
        "admissions.csv",
        corpus::serialize_admissions_csv(&admissions)
            .map_err(|e| PipelineError::Data { stage: "serialize", message: e.to_string() })?,
    )?;
    println!(
        "wrote {} notes / {} admissions to {}",
        notes.len(),
        admissions.len(),
        args.out.display()
    );
    Ok(())
}

fn run(args: &ConfigArgs, setting: Setting) -> Result<(), PipelineError> {
    let config = args.load()?;
    let started = std::time::Instant::now();
    let report = pipeline::execute_run(&config, setting, &args.out)?;
    eprintln!("run finished in {:.2}s", started.elapsed().as_secs_f64());
    for (classifier, m) in &report.metrics {
        println!(
            "{} {}: auc={:.4} auc_pr={:.4}",
            setting.name(),
            classifier,
            m.auc,
            m.auc_pr
        );
    }
    println!("report: {}", args.out.join("report.json").display());
    Ok(())
}

fn ablate(args: &ConfigArgs) -> Result<(), PipelineError> {
    let config = args.load()?;
    let report = pipeline::execute_ablation(&config, &args.out)?;
    eprintln!("ablation finished in {:.2}s", report.timing_secs);
    for m in &report.means {
        println!(
            "{:<9} {:<7} auc={:.4} auc_pr={:.4}",
            m.setting.name(),
            m.classifier,
            m.auc,
            m.auc_pr
        );
    }
    println!("report: {}", args.out.join("report.json").display());
    Ok(())
}

fn inspect(out: &PathBuf, token: Option<&str>, topk: usize) -> anyhow::Result<()> {
    let weights_path = out.join("weights.json");
    if weights_path.exists() {
        let value: serde_json::Value = serde_json::from_str(&fs::read_to_string(&weights_path)?)?;
        let categories = value["categories"].as_array().cloned().unwrap_or_default();
        let weights = value["weights"].as_array().cloned().unwrap_or_default();
        println!("category weights:");
        for (c, w) in categories.iter().zip(&weights) {
            println!("  {:<20} {:>10.5}", c.as_str().unwrap_or("?"), w.as_f64().unwrap_or(0.0));
        }
    } else {
        println!("no weights.json in {} (weighting disabled?)", out.display());
    }

    let vocab_path = out.join("vocab.json");
    let emb_path = out.join("embeddings.bin");
    if vocab_path.exists() && emb_path.exists() {
        let vocab = Vocabulary::from_json(&serde_json::from_str(&fs::read_to_string(&vocab_path)?)?)?;
        let embeddings = EmbeddingMatrix::read_from(fs::File::open(&emb_path)?)?;
        let targets: Vec<String> = match token {
            Some(t) => vec![t.to_string()],
            // Default: the five most frequent tokens.
            None => (0..vocab.len().min(5)).map(|i| vocab.token(i).to_string()).collect(),
        };
        for t in targets {
            match pipeline::nearest_neighbors(&embeddings, &vocab, &t, topk) {
                Some(neighbors) => {
                    println!("nearest neighbors of {t:?}:");
                    for (tok, cos) in neighbors {
                        println!("  {tok:<16} cos={cos:.4}");
                    }
                }
                None => println!("token {t:?} not in vocabulary"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), PipelineError> = match &cli.command {
        Command::Generate(args) => generate(args),
        Command::Run { config, setting } => run(config, *setting),
        Command::Ablate(args) => ablate(args),
        Command::Inspect { out, token, topk } => {
            return match inspect(out, token.as_deref(), *topk) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(3)
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
