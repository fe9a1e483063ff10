use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcsp_core::csp::{band_covariances, csp_cross_validate, LogisticConfig};
use gcsp_core::data::cov1::{read_cov1, write_cov1};
use gcsp_core::data::synth::{synth_generate, SynthProfile, SynthSpec};
use gcsp_core::gradcheck::{gradcheck, GradcheckConfig};
use gcsp_core::graph::{gen_adjacency, LatticeVector};
use gcsp_core::signal::build_tf_stack;
use gcsp_core::train::{run_train, stratified_folds, TrainConfig, TrainedModel};
use gcsp_core::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "gcsp", version, about = "Graph-based CSP networks on SPD covariance graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset as a COV1 file.
    Synth {
        #[arg(long, default_value = "default")]
        profile: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        channels: usize,
        #[arg(long, default_value_t = 128.0)]
        sampling_rate: f64,
        /// Epoch length in seconds.
        #[arg(long, default_value_t = 2.0)]
        span: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the time-frequency graph over all trials; writes `edges.csv` and `graph.json`.
    Graph {
        #[arg(long)]
        data: PathBuf,
        /// Training config JSON (plan, directions, kernel width and covariance options are used).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and evaluate under k-fold or holdout.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a saved model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Cross-validated CSP baseline on one band and time window.
    Csp {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], default_values_t = [4.0, 40.0])]
        band: Vec<f64>,
        /// Window start and end in seconds; defaults to the whole epoch.
        #[arg(long, num_args = 2, value_names = ["START", "END"])]
        window: Option<Vec<f64>>,
        #[arg(long, default_value_t = 4)]
        filters: usize,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        shrinkage: f64,
    },
    /// Compare every backward pass with central finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_json_file(p),
        None => Ok(TrainConfig::default()),
    }
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            profile,
            seed,
            trials,
            channels,
            sampling_rate,
            span,
            out,
        } => {
            let spec = SynthSpec {
                n_trials: trials,
                n_channels: channels,
                sampling_rate,
                span,
                profile: SynthProfile::by_name(&profile)?,
                seed,
            };
            let ds = synth_generate(&spec)?;
            write_cov1(&ds, &out)?;
            print_json(&json!({
                "path": out,
                "n_trials": ds.n_trials,
                "n_channels": ds.n_channels,
                "n_samples": ds.n_samples,
                "sampling_rate": ds.sampling_rate,
            }))
        }
        Command::Graph { data, config, out_dir } => {
            let cfg = load_train_config(config.as_deref())?;
            cfg.validate()?;
            let ds = read_cov1(&data)?;
            let plan = cfg.plan.resolve()?;
            let stack = build_tf_stack(&ds, &plan, &cfg.covariance)?;
            let graph = gen_adjacency(&LatticeVector::from_stack(&stack)?, &cfg.directions, cfg.kernel_width)?;
            std::fs::create_dir_all(&out_dir)?;
            let mut csv = String::from("i,j,weight\n");
            for &(i, j) in &graph.edges {
                csv.push_str(&format!("{i},{j},{:.17e}\n", graph.adjacency[(i, j)]));
            }
            std::fs::write(out_dir.join("edges.csv"), csv)?;
            let sidecar = json!({
                "n_nodes": graph.n_nodes(),
                "edge_count": graph.edge_count(),
                "kernel_width": graph.kernel_width,
                "directions": cfg.directions,
                "plan": plan,
                "nodes": stack.node_meta,
            });
            std::fs::write(out_dir.join("graph.json"), serde_json::to_string_pretty(&sidecar)?)?;
            print_json(&json!({"n_nodes": graph.n_nodes(), "edge_count": graph.edge_count(), "kernel_width": graph.kernel_width}))
        }
        Command::Train { data, config, out_dir } => {
            let cfg = load_train_config(config.as_deref())?;
            let ds = read_cov1(&data)?;
            let report = run_train(&cfg, &ds)?;
            report.write_outputs(&out_dir)?;
            let accs: Vec<f64> = report.folds.iter().map(|f| f.test_accuracy).collect();
            print_json(&json!({
                "mean_test_accuracy": report.mean_test_accuracy,
                "fold_test_accuracy": accs,
                "param_count": report.param_count,
                "out_dir": out_dir,
            }))
        }
        Command::Eval { model, data } => {
            let model: TrainedModel = serde_json::from_str(&std::fs::read_to_string(&model)?)?;
            let ds = read_cov1(&data)?;
            let (pred, loss) = model.predict(&ds)?;
            let acc = gcsp_core::csp::accuracy(&pred, &ds.labels);
            print_json(&json!({"accuracy": acc, "loss": loss, "predictions": pred}))
        }
        Command::Csp {
            data,
            band,
            window,
            filters,
            folds,
            seed,
            shrinkage,
        } => {
            let ds = read_cov1(&data)?;
            let window = window.unwrap_or_else(|| vec![0.0, ds.duration()]);
            let covs = band_covariances(&ds, (band[0], band[1]), (window[0], window[1]), shrinkage)?;
            let split = stratified_folds(&ds.labels, folds, seed)?;
            let report = csp_cross_validate(&covs, &ds.labels, &split, filters, &LogisticConfig::default())?;
            print_json(&serde_json::to_value(&report)?)
        }
        Command::Gradcheck { config, seed } => {
            let mut cfg = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?).map_err(|e| Error::Config(e.to_string()))?,
                None => GradcheckConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = gradcheck(&cfg)?;
            print_json(&serde_json::to_value(&report)?)?;
            report.into_result().map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"kind": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
