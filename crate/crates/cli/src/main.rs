use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adfuse_core::evaluation::{compute_metrics, make_folds};
use adfuse_core::experiment::{run_experiment, LoadedConfig, RunOptions};
use adfuse_core::feature_store::{load_feature_set, FeatureMatrix, Manifest};
use adfuse_core::synthetic::{self, SyntheticConfig};
use adfuse_core::transcripts::{self, CleanOptions};
use adfuse_core::DecisionVector;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

/// Multi-level majority-vote fusion for transcript-based dementia screening.
#[derive(Parser, Debug)]
#[command(name = "adfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn CHAT (.cha) or ASR (.txt) transcripts into plain participant text.
    ExtractText(ExtractArgs),
    /// Run every system of an experiment config and write the reports.
    Run(RunArgs),
    /// Score a decision CSV against a label CSV.
    Metrics {
        predictions: PathBuf,
        truth: PathBuf,
    },
    /// Print the fold assignment of a labelled feature set.
    Folds(FoldArgs),
    /// Write a seeded synthetic corpus, manifest and example config.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ExtractArgs {
    input: PathBuf,
    output: PathBuf,
    /// Drop words that the speaker retraced ([/], [//], [///]).
    #[arg(long)]
    strip_retraces: bool,
    /// Keep interviewer speech as well.
    #[arg(long)]
    all_speakers: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    config: PathBuf,
    /// Override the cross-validation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, env = "ADFUSE_MANIFEST")]
    manifest: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FoldArgs {
    /// A feature CSV, or a feature-set id when --manifest is given.
    features: String,
    #[arg(long, env = "ADFUSE_MANIFEST")]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 768)]
    dim: usize,
    #[arg(long, default_value_t = 108)]
    n_train: usize,
    #[arg(long, default_value_t = 48)]
    n_test: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ExtractText(a) => extract_text(&a),
        Command::Run(a) => run(&a),
        Command::Metrics { predictions, truth } => metrics(&predictions, &truth),
        Command::Folds(a) => folds(&a),
        Command::Synth(a) => synth(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn extract_text(args: &ExtractArgs) -> Result<ExitCode> {
    let mut inputs: Vec<PathBuf> = fs::read_dir(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("cha" | "txt")))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        bail!("no .cha or .txt files in {}", args.input.display());
    }
    fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    let options = CleanOptions {
        strip_retraces: args.strip_retraces,
    };
    let (mut written, mut empty, mut skipped) = (0, 0, 0);
    for path in &inputs {
        let subject = path.file_stem().and_then(|s| s.to_str()).context("non UTF-8 file name")?;
        let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let text = if path.extension().is_some_and(|e| e == "cha") {
            let doc = transcripts::parse_chat_with(&raw, subject, options);
            skipped += doc.skipped_lines;
            if args.all_speakers {
                transcripts::full_text(&doc)
            } else {
                transcripts::participant_text(&doc)
            }
        } else {
            transcripts::asr_text(&raw)
        };
        if text.is_empty() {
            log::warn!("{subject}: no participant speech");
            empty += 1;
        }
        let out = args.output.join(format!("{subject}.txt"));
        fs::write(&out, format!("{text}\n")).with_context(|| format!("writing {}", out.display()))?;
        written += 1;
    }
    println!("wrote {written} files ({empty} empty, {skipped} unparsed lines skipped)");
    Ok(ExitCode::SUCCESS)
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let loaded = LoadedConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    let options = RunOptions {
        seed: args.seed,
        jobs: args.jobs,
        manifest: args.manifest.clone(),
    };
    let report = run_experiment(&loaded, &options)?;
    let out = args.output.clone().unwrap_or_else(|| loaded.output_dir());
    report.write(&out)?;
    print!("{}", report.to_text());
    println!("\nreports written to {}", out.display());
    Ok(if report.has_errors() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn metrics(pred: &Path, truth: &Path) -> Result<ExitCode> {
    let p = DecisionVector::load_csv(pred).with_context(|| format!("loading {}", pred.display()))?;
    let t = DecisionVector::load_csv(truth).with_context(|| format!("loading {}", truth.display()))?;
    let m = compute_metrics(&p, &t)?;
    println!("subjects   {}", m.n());
    println!("TP/FP/FN/TN {}/{}/{}/{}", m.tp, m.fp, m.fn_, m.tn);
    println!("accuracy   {:.2}", 100.0 * m.accuracy);
    println!("precision  {:.2}", 100.0 * m.precision);
    println!("recall     {:.2}", 100.0 * m.recall);
    println!("f1         {:.2}", 100.0 * m.f1);
    Ok(ExitCode::SUCCESS)
}

fn folds(args: &FoldArgs) -> Result<ExitCode> {
    let matrix = match &args.manifest {
        Some(m) => {
            let manifest = Manifest::load(m)?;
            let entry = manifest
                .get(&args.features)
                .with_context(|| format!("unknown feature set `{}`", args.features))?;
            load_feature_set(entry)?
        }
        None => FeatureMatrix::load_csv(&args.features, None)?,
    };
    let labels = matrix.labels.as_ref().context("feature file has no labels")?;
    let f = make_folds(&matrix.subject_ids, labels, args.k, args.seed)?;
    print!("{}", f.to_csv_string());
    let sizes: Vec<String> = f.fold_sizes().iter().map(usize::to_string).collect();
    eprintln!("fold sizes: {}", sizes.join(" "));
    Ok(ExitCode::SUCCESS)
}

fn synth(args: &SynthArgs) -> Result<ExitCode> {
    let config = SyntheticConfig {
        seed: args.seed,
        n_train: args.n_train,
        n_test: args.n_test,
        dim: args.dim,
        separation: args.separation,
        ..Default::default()
    };
    let manifest = synthetic::generate(&config, &args.output)?;
    let config_path = args.output.join("experiment.toml");
    fs::write(&config_path, synthetic::example_config("manifest.toml"))
        .with_context(|| format!("writing {}", config_path.display()))?;
    println!(
        "wrote {} feature sets and {} to {}",
        manifest.feature_sets.len(),
        config_path.file_name().unwrap_or_default().to_string_lossy(),
        args.output.display()
    );
    Ok(ExitCode::SUCCESS)
}
