use std::ffi::OsString;
use std::path::{Path, PathBuf};

use bytetr_core::types::{parse_c_type, parse_variable_list, standard_aliases, TypeLabel};
use bytetr_core::{parse_module, AbiSpec, PosixKb};
use bytetr_ggnn::{Aggregation, Checkpoint, EdgeWeighting, GgnnConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{
    build_dataset, discover, load_split, write_dataset, DatasetOptions, Split, SplitRatios,
};
use crate::error::{read_text, write_text, HarnessError};
use crate::predict::predict_module;
use crate::stats::{fit_heaps, fit_zipf, render_fit};
use crate::synth::{default_classes, generate, write_corpus, SynthSpec};
use crate::train::{evaluate_split, train, TrainOptions};

#[derive(Debug, Parser)]
#[command(
    name = "bytetr",
    version,
    about = "Variable type recovery over lifted binary IR"
)]
pub struct Cli {
    /// Calling-convention description (JSON); defaults to System V x86-64.
    #[arg(long, global = true, value_name = "FILE")]
    pub abi: Option<PathBuf>,
    /// Library API signatures (JSON); defaults to the bundled table.
    #[arg(long = "posix-kb", global = true, value_name = "FILE")]
    pub posix_kb: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build graph corpora, vocabulary and manifest from IR modules.
    Dataset(DatasetArgs),
    /// Train a classifier on a built dataset.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Predict variable types in one module.
    Predict(PredictArgs),
    /// Fit Zipf and Heaps laws to a stream of type labels.
    Stats(StatsArgs),
    /// Write a synthetic corpus with planted type evidence.
    GenSynthetic(SynthArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Directory laid out as <project>/<module>.ir.json with .truth.json sidecars.
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value = "80/10/10")]
    pub split: SplitRatios,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "min-freq", default_value_t = 2)]
    pub min_freq: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggArg {
    Sum,
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightingArg {
    Scalar,
    Diagonal,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory produced by `dataset`.
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long = "batch-size", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum, default_value = "sum")]
    pub agg: AggArg,
    #[arg(long = "edge-weighting", value_enum, default_value = "scalar")]
    pub edge_weighting: WeightingArg,
    #[arg(long = "d-in", default_value_t = 64)]
    pub d_in: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long = "mlp-hidden", default_value_t = 128)]
    pub mlp_hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Continue from the last checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub json: bool,
    /// Also write eval_<split>.json and eval_<split>.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    /// IR module (JSON).
    pub module: PathBuf,
    /// Variable list in sidecar layout; types are optional.
    pub vars: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long)]
    pub json: bool,
    /// Also write predictions.json and predictions.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Text file with one label per line, or a dataset directory.
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub variables: usize,
    #[arg(long, default_value_t = 10)]
    pub projects: usize,
    #[arg(long = "modules-per-project", default_value_t = 2)]
    pub modules_per_project: usize,
    /// Semicolon-separated C types; defaults to the six planted classes.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long = "cross-function", default_value_t = 0.3)]
    pub cross_function: f64,
    #[arg(long = "deep-fraction", default_value_t = 0.0)]
    pub deep_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub posix: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn load_abi(p: &Option<PathBuf>) -> Result<AbiSpec, HarnessError> {
    match p {
        Some(p) => AbiSpec::from_json(&read_text(p)?)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", p.display()))),
        None => Ok(AbiSpec::sysv_x86_64()),
    }
}

fn load_kb(p: &Option<PathBuf>) -> Result<PosixKb, HarnessError> {
    match p {
        Some(p) => PosixKb::from_json(&read_text(p)?)
            .map_err(|e| HarnessError::Data(format!("{}: {e}", p.display()))),
        None => Ok(PosixKb::bundled()),
    }
}

fn fraction(name: &str, v: f64) -> Result<f64, HarnessError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(HarnessError::Usage(format!("--{name} must lie in [0, 1]")))
    }
}

fn stats_labels(input: &Path) -> Result<Vec<String>, HarnessError> {
    if input.is_dir() {
        let mut out = Vec::new();
        for split in Split::ALL {
            for r in load_split(input, split)? {
                if let Some(c) = r.label {
                    out.push(c.to_string());
                }
            }
        }
        return Ok(out);
    }
    Ok(read_text(input)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Runs one command and returns what it prints on stdout.
pub fn execute(cli: Cli) -> Result<String, HarnessError> {
    match cli.command {
        Command::Dataset(a) => {
            let abi = load_abi(&cli.abi)?;
            let kb = load_kb(&cli.posix_kb)?;
            let inputs = discover(&a.input)?;
            let opts = DatasetOptions {
                depth: a.depth,
                split: a.split,
                seed: a.seed,
                min_freq: a.min_freq,
            };
            let start = std::time::Instant::now();
            let ds = build_dataset(&a.input, &inputs, &opts, &abi, &kb)?;
            let elapsed = start.elapsed();
            write_dataset(&a.out, &ds)?;
            let m = &ds.manifest;
            let mut s = format!(
                "{} modules, {} functions kept, {} variables skipped, vocabulary {}\n",
                m.inputs.len(),
                m.functions.iter().filter(|f| f.kept).count(),
                m.skipped.len(),
                m.vocab_size
            );
            for (split, c) in &m.counts {
                s += &format!(
                    "{:<5} {} functions, {} variables ({} untraceable)\n",
                    split.name(),
                    c.functions,
                    c.variables,
                    c.untraceable
                );
            }
            let nf = m.functions.len().max(1);
            s += &format!(
                "preprocessing: {:.3} ms per function\n",
                elapsed.as_secs_f64() * 1e3 / nf as f64
            );
            Ok(s)
        }
        Command::Train(a) => {
            let opts = TrainOptions {
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr: a.lr,
                patience: a.patience,
                model: GgnnConfig {
                    d_in: a.d_in,
                    hidden: a.hidden,
                    steps: a.steps,
                    aggregation: match a.agg {
                        AggArg::Sum => Aggregation::Sum,
                        AggArg::Mean => Aggregation::Mean,
                        AggArg::Max => Aggregation::Max,
                    },
                    mlp_hidden: a.mlp_hidden,
                    edge_weighting: match a.edge_weighting {
                        WeightingArg::Scalar => EdgeWeighting::Scalar,
                        WeightingArg::Diagonal => EdgeWeighting::Diagonal,
                    },
                    seed: a.seed,
                    ..GgnnConfig::default()
                },
            };
            let summary = train(&a.dataset, &a.out, &opts, a.resume)?;
            let mut s = String::new();
            for m in &summary.history {
                s += &format!("epoch {:>3}  train loss {:.6}", m.epoch, m.train_loss);
                if let Some(v) = m.val_loss {
                    s += &format!("  val loss {v:.6}");
                }
                if let Some(v) = m.val_accuracy {
                    s += &format!("  val acc {v:.4}");
                }
                s.push('\n');
            }
            s += &format!("best epoch {}\n", summary.state.best_epoch);
            Ok(s)
        }
        Command::Eval(a) => {
            let split: Split = a.split.parse()?;
            let report = evaluate_split(&a.checkpoint, &a.dataset, split)?;
            if let Some(dir) = &a.out {
                write_text(
                    &dir.join(format!("eval_{}.json", split.name())),
                    &report.to_json(),
                )?;
                write_text(
                    &dir.join(format!("eval_{}.txt", split.name())),
                    &report.to_text(),
                )?;
            }
            Ok(if a.json {
                report.to_json()
            } else {
                report.to_text()
            })
        }
        Command::Predict(a) => {
            let abi = load_abi(&cli.abi)?;
            let kb = load_kb(&cli.posix_kb)?;
            let ck = Checkpoint::from_json(&read_text(&a.checkpoint)?)?;
            let module = parse_module(&read_text(&a.module)?)
                .map_err(|e| HarnessError::Data(format!("{}: {e}", a.module.display())))?;
            let vars = parse_variable_list(&read_text(&a.vars)?)
                .map_err(|e| HarnessError::Data(format!("{}: {e}", a.vars.display())))?;
            let report = predict_module(&ck, &module, &vars, a.depth, &abi, &kb)?;
            if let Some(dir) = &a.out {
                write_text(&dir.join("predictions.json"), &report.to_json())?;
                write_text(&dir.join("predictions.txt"), &report.to_text())?;
            }
            Ok(if a.json {
                report.to_json()
            } else {
                report.to_text()
            })
        }
        Command::Stats(a) => {
            let labels = stats_labels(&a.input)?;
            let zipf = fit_zipf(&labels)?;
            let heaps = fit_heaps(&labels)?;
            Ok(if a.json {
                serde_json::to_string_pretty(&serde_json::json!({"zipf": zipf, "heaps": heaps}))
                    .expect("fits serialize")
                    + "\n"
            } else {
                format!("{}\n{}\n", render_fit(&zipf), render_fit(&heaps))
            })
        }
        Command::GenSynthetic(a) => {
            let classes = match &a.classes {
                None => default_classes(),
                Some(list) => {
                    let aliases = standard_aliases();
                    list.split(';')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(|t| {
                            parse_c_type(t, &aliases)
                                .map_err(|e| HarnessError::Usage(format!("class `{t}`: {e}")))
                        })
                        .collect::<Result<Vec<TypeLabel>, _>>()?
                }
            };
            let spec = SynthSpec {
                variables: a.variables,
                projects: a.projects,
                modules_per_project: a.modules_per_project,
                classes,
                cross_function: fraction("cross-function", a.cross_function)?,
                deep_fraction: fraction("deep-fraction", a.deep_fraction)?,
                posix: fraction("posix", a.posix)?,
                seed: a.seed,
                ..SynthSpec::default()
            };
            let modules = generate(&spec)?;
            let files = write_corpus(&a.out, &modules)?;
            Ok(format!(
                "wrote {files} files for {} variables to {}\n",
                spec.variables,
                a.out.display()
            ))
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
