//! `phonmap`: run the symbol-mapping experiment stage by stage or end to end.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use phonmap_core::evaluation::MappingScore;
use phonmap_core::gradsuite;
use phonmap_core::pipeline::{evaluate_files, EvalReport, ExperimentConfig, Pipeline, SEED_ENV};
use phonmap_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "phonmap", version, about = "Cross-lingual symbol mapping through a phonetic transformation network")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `output_dir`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Global seed; overrides the file and PHONMAP_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any configuration key, e.g. `--set asr.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Args, Debug, Default)]
struct MappingFlags {
    /// Transformation threshold.
    #[arg(long)]
    xi: Option<f64>,
    /// Uniform mass mixed into each probe.
    #[arg(long)]
    smoothing: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct EmbeddingFlags {
    /// separate, unified or learned.
    #[arg(long)]
    strategy: Option<String>,
    /// Embedding width.
    #[arg(long)]
    dim: Option<usize>,
    /// `source<TAB>target` table for the unified strategy.
    #[arg(long)]
    unified_table: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the language pair, reference mapping and corpora.
    GenData,
    /// Train the source acoustic model.
    TrainAsr,
    /// Train the PTN against the frozen acoustic model.
    TrainPtn,
    /// Probe the PTN and write the thresholded mapping table.
    DiscoverMap {
        #[command(flatten)]
        mapping: MappingFlags,
    },
    /// Initialize target embeddings from the source embeddings.
    TransferEmbeddings {
        #[command(flatten)]
        embedding: EmbeddingFlags,
    },
    /// Score the discovered mapping, or any predicted/reference file pair.
    EvalMap {
        /// Predicted table (`src<TAB>tgt[<TAB>confidence]` lines).
        #[arg(long, requires = "reference")]
        predicted: Option<PathBuf>,
        /// Reference pairs (`src<TAB>tgt` lines).
        #[arg(long, requires = "predicted")]
        reference: Option<PathBuf>,
        /// Source symbols, one per line; defaults to the run directory's.
        #[arg(long)]
        source_inventory: Option<PathBuf>,
        /// Target symbols, one per line; defaults to the run directory's.
        #[arg(long)]
        target_inventory: Option<PathBuf>,
        /// Where to write the score as JSON (file pair mode).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference check of every layer and the full stack.
    Gradcheck {
        /// Where to write the JSON report; `<output_dir>/gradcheck.json` by default.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Every stage in order, ending with the mapping score.
    RunAll {
        #[command(flatten)]
        mapping: MappingFlags,
        #[command(flatten)]
        embedding: EmbeddingFlags,
    },
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for raw in &cli.global.set {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| Error::config(raw.clone(), "expected KEY=VALUE"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.global.seed {
        out.push(("seed".into(), seed.to_string()));
    }
    let (mapping, embedding) = match &cli.command {
        Command::DiscoverMap { mapping } => (Some(mapping), None),
        Command::TransferEmbeddings { embedding } => (None, Some(embedding)),
        Command::RunAll { mapping, embedding } => (Some(mapping), Some(embedding)),
        _ => (None, None),
    };
    if let Some(m) = mapping {
        if let Some(xi) = m.xi {
            out.push(("mapping.xi".into(), format!("{xi:?}")));
        }
        if let Some(s) = m.smoothing {
            out.push(("mapping.smoothing".into(), format!("{s:?}")));
        }
    }
    if let Some(e) = embedding {
        if let Some(s) = &e.strategy {
            out.push(("embedding.strategy".into(), s.clone()));
        }
        if let Some(d) = e.dim {
            out.push(("embedding.dim".into(), d.to_string()));
        }
    }
    Ok(out)
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut config = ExperimentConfig::load(cli.global.config.as_deref(), env_seed.as_deref(), &overrides(cli)?)?;
    if let Some(dir) = &cli.global.output_dir {
        config.output_dir = dir.clone();
    }
    let embedding = match &cli.command {
        Command::TransferEmbeddings { embedding } | Command::RunAll { embedding, .. } => Some(embedding),
        _ => None,
    };
    if let Some(path) = embedding.and_then(|e| e.unified_table.clone()) {
        config.embedding.unified_table = Some(path);
    }
    Ok(config)
}

fn print_score(score: &MappingScore) {
    println!("precision {}", score.precision);
    println!("recall {}", score.recall);
    println!("predicted {} correct {} overlap {}", score.n_predicted, score.n_correct, score.overlap_size);
}

fn print_report(report: &EvalReport) {
    println!("xi {}", report.xi);
    println!("precision {}", report.precision);
    println!("recall {}", report.recall);
    println!(
        "predicted {} correct {} overlap {}",
        report.n_predicted, report.n_correct, report.overlap_size
    );
    if let Some(b) = report.random_baseline_recall {
        println!("random baseline recall {b}");
    }
}

fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    if let Command::EvalMap {
        predicted: Some(predicted),
        reference: Some(reference),
        source_inventory,
        target_inventory,
        output,
    } = &cli.command
    {
        let root = &config.output_dir;
        let src = source_inventory
            .clone()
            .unwrap_or_else(|| root.join(phonmap_core::pipeline::SOURCE_INVENTORY));
        let tgt = target_inventory
            .clone()
            .unwrap_or_else(|| root.join(phonmap_core::pipeline::TARGET_INVENTORY));
        let score = evaluate_files(predicted, reference, &src, &tgt)?;
        if let Some(path) = output {
            write_json(path, &score)?;
        }
        print_score(&score);
        return Ok(());
    }

    info!("config digest {}", config.digest());
    let pipeline = Pipeline::open(config)?;
    match &cli.command {
        Command::GenData => drop(pipeline.gen_data()?),
        Command::TrainAsr => drop(pipeline.train_asr()?),
        Command::TrainPtn => drop(pipeline.train_ptn()?),
        Command::DiscoverMap { .. } => drop(pipeline.discover_map()?),
        Command::TransferEmbeddings { .. } => drop(pipeline.transfer_embeddings()?),
        Command::EvalMap { .. } => print_report(&pipeline.eval_map()?),
        Command::RunAll { .. } => print_report(&pipeline.run_all()?),
        Command::Gradcheck { output } => {
            let entries = gradsuite::run(pipeline.config().seed)?;
            for e in &entries {
                eprintln!(
                    "{} {:<24} max rel err {:.3e} (tol {:.0e}, {} elements)",
                    if e.passed { "PASS" } else { "FAIL" },
                    e.name,
                    e.max_relative_error,
                    e.tolerance,
                    e.elements_checked
                );
            }
            let path = output.clone().unwrap_or_else(|| pipeline.root().join("gradcheck.json"));
            write_json(&path, &entries)?;
            if let Some(bad) = entries.iter().find(|e| !e.passed) {
                return Err(Error::InvalidState(format!("gradient check `{}` failed", bad.name)));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
