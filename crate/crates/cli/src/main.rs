use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fsru::artifact::{write_atomic, Csv};
use fsru::bench::{bench, bench_csv};
use fsru::checkpoint::Checkpoint;
use fsru::data::{generate, threshold_accuracy, Dataset, Sample};
use fsru::train::{self, metrics_csv, summary_csv};
use fsru::{FsruError, MixerKind, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "fsru", version, about = "Spectral text+image classifier: data, training and benchmarks")]
struct Cli {
    /// TOML run configuration; unspecified fields keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every written artifact.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Per-field override, e.g. `--set data.noise=0.2` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Training file; generated from the configuration when omitted.
    #[arg(long, value_name = "PATH")]
    train: Option<PathBuf>,
    /// Test file; generated from the configuration when omitted.
    #[arg(long, value_name = "PATH")]
    test: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic train/test files.
    Generate,
    /// Train one model; writes a checkpoint and per-epoch metrics.
    Train(DataArgs),
    /// Score a checkpoint on a dataset.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Also write the mean spectra of the first N samples at each stage.
        #[arg(long, value_name = "N")]
        spectrum_dump: Option<usize>,
    },
    /// Train the full model and each single-component ablation.
    Ablate(DataArgs),
    /// Train with 1, 2, 4 and 8 filters.
    SweepK(DataArgs),
    /// Time the token mixers, or compare their training convergence.
    Bench {
        /// Sequence lengths to time.
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
        lengths: Vec<usize>,
        /// Channel width to time.
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long, default_value_t = fsru::bench::DEFAULT_REPEATS)]
        repeats: usize,
        /// Mixers to include.
        #[arg(long, value_delimiter = ',', default_value = "spectral,self_attention,spatial_mlp")]
        kinds: Vec<MixerKind>,
        /// Train every mixer on identical data instead of timing them.
        #[arg(long)]
        convergence: bool,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Two-dimensional PCA projection of the fused features.
    Project {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<FsruError>(), Some(FsruError::NonFiniteLoss { .. })));
            ExitCode::from(if numeric { 2 } else { 1 })
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn datasets(cfg: &RunConfig, args: &DataArgs) -> anyhow::Result<(Dataset, Dataset)> {
    match (&args.train, &args.test) {
        (Some(tr), Some(te)) => Ok((read_dataset(tr)?, read_dataset(te)?)),
        (None, None) => Ok(generate(cfg)?),
        _ => bail!("--train and --test must be given together"),
    }
}

fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_csv(dir: &Path, name: &str, csv: &Csv) -> anyhow::Result<()> {
    let path = dir.join(name);
    csv.write(&path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    write_atomic(&path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Generate => {
            let (tr, te) = generate(&cfg)?;
            tr.write(&out.join("train.tsv"))?;
            te.write(&out.join("test.tsv"))?;
            write_text(out, "config.toml", &cfg.to_toml_string())?;
            println!(
                "generated {} train / {} test samples; threshold oracle accuracy {:.4}",
                tr.len(),
                te.len(),
                threshold_accuracy(&cfg.data, &te)
            );
        }
        Command::Train(args) => {
            let (tr, te) = datasets(&cfg, args)?;
            write_text(out, "config.toml", &cfg.to_toml_string())?;
            if cfg.folds > 1 {
                let folds = train::kfold(&cfg, &tr)?;
                let mut csv = Csv::new(&["fold", "accuracy", "f1_rumor", "f1_nonrumor"]);
                for (i, m) in folds.iter().enumerate() {
                    csv.row(&[&i, &m.accuracy, &m.rumor.f1, &m.nonrumor.f1]);
                }
                write_csv(out, "kfold.csv", &csv)?;
                let mean = folds.iter().map(|m| m.accuracy).sum::<f64>() / folds.len() as f64;
                println!("{}-fold mean accuracy {mean:.4}", cfg.folds);
                return Ok(());
            }
            let outcome = train::train(&cfg, &tr, &te)?;
            Checkpoint::from_model(&outcome.model).save(&out.join("model.fsru"))?;
            write_csv(out, "metrics.csv", &metrics_csv(&outcome.rows))?;
            let m = outcome.final_test;
            println!(
                "epochs {} test accuracy {:.4} f1 rumor {:.4} f1 non-rumor {:.4}",
                outcome.epochs_run, m.accuracy, m.rumor.f1, m.nonrumor.f1
            );
        }
        Command::Evaluate {
            checkpoint,
            data,
            spectrum_dump,
        } => {
            let model = Checkpoint::load(checkpoint)?.into_model(Some(&cfg))?;
            let ds = read_dataset(data)?;
            ds.meta.check(&model.config)?;
            let eval = train::evaluate(&model, &ds)?;
            let json = serde_json::json!({
                "metrics": eval.metrics,
                "loss": eval.report,
            });
            let text = serde_json::to_string_pretty(&json)?;
            write_text(out, "evaluation.json", &text)?;
            println!("{text}");
            if let Some(n) = spectrum_dump {
                let refs: Vec<&Sample> = ds.samples.iter().take((*n).max(1)).collect();
                write_csv(out, "spectrum.csv", &train::spectrum_dump(&model, &refs)?)?;
            }
        }
        Command::Ablate(args) => {
            let (tr, te) = datasets(&cfg, args)?;
            let results = train::ablate(&cfg, &tr, &te)?;
            for r in &results {
                let stem = r.name.strip_prefix('-').map_or(r.name.clone(), |c| format!("no_{c}"));
                write_csv(out, &format!("metrics_{stem}.csv"), &metrics_csv(&r.outcome.rows))?;
            }
            let csv = summary_csv("variant", &results);
            write_csv(out, "ablation.csv", &csv)?;
            print!("{}", csv.as_str());
        }
        Command::SweepK(args) => {
            let (tr, te) = datasets(&cfg, args)?;
            let results = train::sweep_k(&cfg, &tr, &te)?;
            let csv = summary_csv("k", &results);
            write_csv(out, "sweep_k.csv", &csv)?;
            print!("{}", csv.as_str());
        }
        Command::Bench {
            lengths,
            dim,
            repeats,
            kinds,
            convergence,
            data,
        } => {
            if *convergence {
                let (tr, te) = datasets(&cfg, data)?;
                let runs = train::convergence(&cfg, kinds, &tr, &te)?;
                let csv = train::convergence_csv(&runs);
                write_csv(out, "convergence.csv", &csv)?;
                for (kind, outcome) in &runs {
                    println!(
                        "{kind}: final accuracy {:.4}, first epoch at 0.90: {}",
                        outcome.final_test.accuracy,
                        outcome
                            .first_epoch_reaching(0.90)
                            .map_or("never".to_string(), |e| e.to_string())
                    );
                }
            } else {
                let sizes: Vec<(usize, usize)> = lengths.iter().map(|&l| (l, *dim)).collect();
                let records = bench(kinds, &sizes, *repeats)?;
                let csv = bench_csv(&records);
                write_csv(out, "bench.csv", &csv)?;
                print!("{}", csv.as_str());
            }
        }
        Command::Project { checkpoint, data } => {
            let model = Checkpoint::load(checkpoint)?.into_model(Some(&cfg))?;
            let ds = read_dataset(data)?;
            ds.meta.check(&model.config)?;
            let (projection, csv) = train::project_features(&model, &ds)?;
            write_csv(out, "projection.csv", &csv)?;
            println!(
                "projected {} samples; component variances {:.4e}, {:.4e}",
                ds.len(),
                projection.variance[0],
                projection.variance[1]
            );
        }
    }
    Ok(())
}
