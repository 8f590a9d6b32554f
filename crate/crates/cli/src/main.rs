//! `ampi`: data generation, budget sweeps, the two-population heatmap and
//! plotting.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage and
//! configuration errors.

mod plot;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ampi_core::analytic::heatmap;
use ampi_core::datagen::{self, SyntheticParams, CHEAP, EXPENSIVE};
use ampi_core::rng::{self, domain};
use ampi_core::TwoPopParams;
use ampi_harness::config::{defaults_text, key_help, RawConfig};
use ampi_harness::sweep::{read_sweep_csv, save_records_csv, save_sweep_csv};
use ampi_harness::{run_sweep, write_dataset_csv, HarnessError};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ampi", version, about = "Budget-constrained multi-predictor active inference for population means")]
struct Cli {
    /// Worker threads for sweeps (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset as CSV.
    Gen(GenArgs),
    /// Run a budget sweep and write one row per (budget, method).
    #[command(after_long_help = sweep_help())]
    Sweep(SweepArgs),
    /// Two-population width-reduction heatmap as CSV.
    Analytic(AnalyticArgs),
    /// Render width, coverage and width-ratio SVG charts from a sweep CSV.
    Plot(PlotArgs),
    /// Print configuration defaults.
    #[command(after_long_help = sweep_help())]
    Config(ConfigArgs),
}

fn sweep_help() -> String {
    format!(
        "Configuration keys (override any key with AMPI__SECTION__KEY=value, e.g. AMPI__SWEEP__TRIALS=20):\n{}",
        key_help()
    )
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(subcommand)]
    generator: Generator,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RegressionArgs {
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.7)]
    easy_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    easy_noise_sd: f64,
    #[arg(long, default_value_t = 2.0)]
    hard_noise_sd: f64,
}

impl RegressionArgs {
    fn params(&self) -> SyntheticParams {
        SyntheticParams {
            n: self.n,
            d: self.d,
            easy_frac: self.easy_frac,
            easy_noise_sd: self.easy_noise_sd,
            hard_noise_sd: self.hard_noise_sd,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Generator {
    /// Easy/hard regression with `cheap` and `expensive` tree predictors
    /// fitted on a separate training sample.
    Synthetic {
        #[command(flatten)]
        data: RegressionArgs,
        /// Training rows for the tree predictors (default: n).
        #[arg(long)]
        train_n: Option<usize>,
        #[arg(long, default_value_t = 2)]
        cheap_depth: usize,
        #[arg(long, default_value_t = 6)]
        expensive_depth: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Easy/hard regression with noisy-oracle predictors.
    Noisy {
        #[command(flatten)]
        data: RegressionArgs,
        /// Predictor noise as id=sd; repeatable.
        #[arg(long = "sigma", value_parser = parse_sigma, default_values = ["cheap=2.5", "expensive=0.75"])]
        sigmas: Vec<(String, f64)>,
        #[command(flatten)]
        common: Common,
    },
    /// Two-population model; column x0 is the easy flag.
    Twopop {
        #[arg(long, default_value_t = 20_000)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 1e-4)]
        r_e: f64,
        #[arg(long, default_value_t = 1.0)]
        r_h: f64,
        #[arg(long, default_value_t = 0.75)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        var_y: f64,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_sigma(s: &str) -> Result<(String, f64), String> {
    let (id, v) = s.split_once('=').ok_or_else(|| format!("expected id=sd, got '{s}'"))?;
    let v: f64 = v.parse().map_err(|_| format!("bad number in '{s}'"))?;
    Ok((id.to_string(), v))
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Configuration file (see `ampi config --defaults`).
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Override `sweep.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write per-trial records to this CSV.
    #[arg(long)]
    records: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyticArgs {
    /// Easy fractions for the expensive-baseline grid.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    p: Vec<f64>,
    /// Cost shares c2 / b; each must lie in (0, 1).
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    phi: Vec<f64>,
    /// Hard-residual reductions for the cheap-baseline grid.
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    delta: Vec<f64>,
    /// Easy fraction used in the cheap-baseline grid.
    #[arg(long, default_value_t = 0.5)]
    p_cheap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Sweep CSV written by `ampi sweep`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for width.svg, coverage.svg and ratio.svg.
    #[arg(long)]
    out: PathBuf,
    /// Coverage target drawn as the dashed reference line.
    #[arg(long, default_value_t = 0.9)]
    target: f64,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Print every key with its default value.
    #[arg(long)]
    defaults: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        if e.is_usage() {
            CliError::Usage(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

/// Invalid generator or grid parameters are usage errors.
fn usage(e: ampi_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn gen(args: GenArgs) -> Result<(), CliError> {
    match args.generator {
        Generator::Synthetic { data, train_n, cheap_depth, expensive_depth, common } => {
            let params = data.params();
            let g = datagen::gen_synthetic_regression(&params, common.seed).map_err(usage)?;
            let train_params = SyntheticParams { n: train_n.unwrap_or(params.n), ..params };
            let train_seed = rng::derive_seed(common.seed, &[domain::TRAIN]);
            let train = datagen::gen_synthetic_regression(&train_params, train_seed).map_err(usage)?;
            let mut ds = g.dataset;
            for (id, depth) in [(CHEAP, cheap_depth), (EXPENSIVE, expensive_depth)] {
                let tree = datagen::fit_tree_predictor(&train.dataset, depth).map_err(usage)?;
                let preds = datagen::tree_predictions(&tree, &ds).map_err(usage)?;
                ds = ds.with_prediction(id, preds).map_err(usage)?;
            }
            let easy: Vec<f64> = g.easy.iter().map(|&e| e as u8 as f64).collect();
            write_dataset_csv(&common.out, &ds, &[("easy", &easy)])?;
        }
        Generator::Noisy { data, sigmas, common } => {
            let g = datagen::gen_synthetic_regression(&data.params(), common.seed).map_err(usage)?;
            let labels = g.dataset.require_labels().map_err(usage)?;
            let sigmas: BTreeMap<String, f64> = sigmas.into_iter().collect();
            let mut ds = g.dataset;
            for (id, sigma) in sigmas {
                let preds = datagen::make_noisy_predictor(&labels, sigma, datagen::predictor_seed(common.seed, &id))
                    .map_err(usage)?;
                ds = ds.with_prediction(id, preds).map_err(usage)?;
            }
            let easy: Vec<f64> = g.easy.iter().map(|&e| e as u8 as f64).collect();
            write_dataset_csv(&common.out, &ds, &[("easy", &easy)])?;
        }
        Generator::Twopop { n, p, r_e, r_h, delta, var_y, common } => {
            let params = TwoPopParams { p, r_e, r_h, delta, c1: 0.0, c2: 0.0, c_label: 1.0, b: 1.0, n, var_y };
            let g = datagen::gen_two_population(&params, n, common.seed).map_err(usage)?;
            let easy: Vec<f64> = g.easy.iter().map(|&e| e as u8 as f64).collect();
            write_dataset_csv(&common.out, &g.dataset, &[("easy", &easy)])?;
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs, threads: Option<usize>) -> Result<(), CliError> {
    let mut raw = RawConfig::from_file(&args.config)?;
    raw.apply_env(std::env::vars())?;
    if let Some(seed) = args.seed {
        raw.set("sweep.seed", &seed.to_string())?;
    }
    let mut cfg = raw.build()?;
    cfg.resolve_paths(&args.config);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let result = pool.install(|| run_sweep(&cfg))?;
    save_sweep_csv(&result.rows, &args.out)?;
    if let Some(path) = args.records {
        save_records_csv(&cfg, &result.records, &path)?;
    }
    Ok(())
}

fn analytic(args: AnalyticArgs) -> Result<(), CliError> {
    let cells = heatmap(&args.p, &args.phi, &args.delta, args.p_cheap).map_err(usage)?;
    let mut w = csv::Writer::from_path(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let write = |w: &mut csv::Writer<std::fs::File>, rec: [String; 6]| w.write_record(rec).map_err(|e| CliError::Runtime(e.to_string()));
    write(&mut w, ["case", "p", "phi", "delta", "ratio", "reduction_pct"].map(String::from))?;
    for c in cells {
        write(
            &mut w,
            [
                c.case.label().to_string(),
                c.p.to_string(),
                c.phi.to_string(),
                c.delta.map(|d| d.to_string()).unwrap_or_default(),
                c.ratio.to_string(),
                c.reduction_pct.to_string(),
            ],
        )?;
    }
    w.flush().map_err(|e| io_error(&args.out, e))
}

fn plot_cmd(args: PlotArgs) -> Result<(), CliError> {
    let rows = read_sweep_csv(&args.input).map_err(|e| CliError::Usage(e.to_string()))?;
    if !rows.iter().any(|r| r.viable) {
        return Err(CliError::Usage(format!("{}: no viable rows to plot", args.input.display())));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let panels = plot::sweep_panels(&rows, args.target);
    for (name, panel) in ["width.svg", "coverage.svg", "ratio.svg"].iter().zip(panels) {
        let path = args.out.join(name);
        std::fs::write(&path, panel.to_svg()).map_err(|e| io_error(&path, e))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(args) => gen(args),
        Command::Sweep(args) => sweep(args, cli.threads),
        Command::Analytic(args) => analytic(args),
        Command::Plot(args) => plot_cmd(args),
        Command::Config(args) => {
            if !args.defaults {
                return Err(CliError::Usage("nothing to do; pass --defaults".into()));
            }
            print!("{}", defaults_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}
