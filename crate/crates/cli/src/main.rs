//! Command-line front end: training runs, ablation sweeps, standalone
//! kernel Gram export, synthetic dataset generation, and metric
//! evaluation of prediction files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use relkern::config::{describe_keys, parse_flat_json, parse_override, RunConfig};
use relkern::graph::Partition;
use relkern::kernels;
use relkern::report::{matrix_to_csv, sweep_to_csv};
use relkern::trainer;
use relkern::{Error, Result};

#[derive(Parser)]
#[command(
    name = "relkern",
    version,
    about = "Graph-level clustering with relation views and graph kernels",
    after_help = concat!("Config keys (JSON file via --config, overrides via --set key=value):\n")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with the configured seeds and write an aggregate report.
    Run(RunArgs),
    /// Sweep one ablation axis and write per-cell reports plus a CSV.
    Ablate(AblateArgs),
    /// Compute a structural kernel Gram matrix for a dataset as CSV.
    Kernel(KernelArgs),
    /// Generate a synthetic dataset from a spec and write TUDataset files.
    Synth(SynthArgs),
    /// Score a predictions file against a ground-truth labels file.
    Eval(EvalArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file of flat dotted config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.epochs=10. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut map: BTreeMap<String, Value> = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                parse_flat_json(&text)?
            }
            None => BTreeMap::new(),
        };
        for raw in &self.set {
            let (key, value) = parse_override(raw)?;
            map.insert(key, value);
        }
        RunConfig::from_map(map)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Write the aggregate report JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// One of: sub-relation, module, kernel, loss-grid.
    #[arg(long)]
    mode: String,
    /// Directory receiving per-cell JSON reports and the CSV summary.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct KernelArgs {
    /// Directory holding the TUDataset files.
    #[arg(long)]
    dataset_dir: PathBuf,
    /// Dataset name (file prefix) inside the directory.
    #[arg(long)]
    dataset_name: String,
    /// One of: wl, sp, rw.
    #[arg(long)]
    kernel: String,
    /// Refinement rounds for the wl kernel.
    #[arg(long, default_value_t = 3)]
    wl_iterations: usize,
    /// Write the Gram CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic dataset spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for the TUDataset files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted cluster indices, one integer per line.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth class labels, one integer per line.
    #[arg(long)]
    truth: PathBuf,
    /// Cluster count; defaults to one more than the largest index seen.
    #[arg(long)]
    k: Option<usize>,
}

fn write_or_print(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Error::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let config = args.config.load()?;
    let report = trainer::run_experiment(&config)?;
    eprintln!(
        "{} runs: ACC {:.4} ± {:.4}, NMI {:.4} ± {:.4}, ARI {:.4} ± {:.4}, F1 {:.4} ± {:.4}",
        report.runs.len(),
        report.acc.mean,
        report.acc.std,
        report.nmi.mean,
        report.nmi.std,
        report.ari.mean,
        report.ari.std,
        report.f1.mean,
        report.f1.std,
    );
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Runtime(format!("report serialization failed: {e}")))?;
    write_or_print(&args.out, &json)
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let config = args.config.load()?;
    let rows = trainer::ablation(&config, &args.mode)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::Runtime(format!("cannot create {}: {e}", args.out_dir.display())))?;
    for (label, report) in &rows {
        let path = args.out_dir.join(format!("{}_{label}.json", args.mode));
        let json = serde_json::to_string_pretty(report)
            .map_err(|e| Error::Runtime(format!("report serialization failed: {e}")))?;
        std::fs::write(&path, json)
            .map_err(|e| Error::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    let csv = sweep_to_csv(&rows);
    let csv_path = args.out_dir.join(format!("{}_summary.csv", args.mode));
    std::fs::write(&csv_path, &csv)
        .map_err(|e| Error::Runtime(format!("cannot write {}: {e}", csv_path.display())))?;
    print!("{csv}");
    Ok(())
}

fn cmd_kernel(args: &KernelArgs) -> Result<()> {
    let dataset = relkern::io::parse_tudataset(&args.dataset_dir, &args.dataset_name)?;
    let refs: Vec<&relkern::Graph> = dataset.graphs.iter().collect();
    let gram = match args.kernel.as_str() {
        "wl" => kernels::wl_gram(&refs, args.wl_iterations),
        "sp" => kernels::sp_gram(&refs),
        "rw" => kernels::rw_gram(&refs, 10, 0.1),
        "dynamic" => {
            return Err(Error::Config(
                "the dynamic kernel needs trained embeddings; use the run subcommand".into(),
            ))
        }
        other => {
            return Err(Error::Config(format!(
                "unknown kernel {other:?}; use wl, sp, or rw"
            )))
        }
    };
    eprintln!(
        "{} graphs, {} classes: {}x{} Gram matrix",
        dataset.len(),
        dataset.num_classes,
        gram.nrows(),
        gram.ncols()
    );
    write_or_print(&args.out, matrix_to_csv(&gram).trim_end())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| Error::Config(format!("cannot read spec {}: {e}", args.spec.display())))?;
    let spec = relkern::io::DatasetSpec::from_json(&text)?;
    let dataset = relkern::io::generate_synthetic(&spec)?;
    relkern::io::write_tudataset(&dataset, &args.out)?;
    eprintln!(
        "wrote {} graphs, {} classes to {}",
        dataset.len(),
        dataset.num_classes,
        args.out.display()
    );
    Ok(())
}

fn read_label_file(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: usize = trimmed.parse().map_err(|_| {
            Error::Config(format!(
                "{}:{}: expected a nonnegative integer, got {trimmed:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        out.push(value);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{} holds no labels", path.display())));
    }
    Ok(out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let pred = read_label_file(&args.pred)?;
    let truth = read_label_file(&args.truth)?;
    if pred.len() != truth.len() {
        return Err(Error::Config(format!(
            "{} predictions vs {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let k = args
        .k
        .unwrap_or_else(|| pred.iter().max().map_or(1, |&m| m + 1));
    let partition = Partition::new(pred, k)?;
    let report = relkern::metrics::evaluate(&partition, &truth, 0)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Runtime(format!("report serialization failed: {e}")))?;
    println!("{json}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Kernel(args) => cmd_kernel(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

/// Exit code 0 on success, 1 on configuration or usage errors, 2 on
/// runtime failures.
fn cli_main(argv: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                if e.kind() == ErrorKind::DisplayHelp {
                    println!("\nConfig keys:\n{}", describe_keys());
                }
                return 0;
            }
            eprint!("{e}");
            return 1;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Validation(_) => 1,
                _ => 2,
            }
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    std::process::exit(cli_main(std::env::args_os().collect()));
}
