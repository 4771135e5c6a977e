use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fmbench::featurize::{ImplicitMode, ImplicitWeighting, ModelVariant};
use fmbench::harness::{
    fold_design, grid_search, make_folds, run_experiment, ExperimentConfig, ExperimentReport,
    GridOptions, GridPolicy, GridSpec, SolverConfig,
};
use fmbench::ingest::{parse_movielens, write_fm_text};
use fmbench::mcmc::{HyperGrouping, McmcConfig};
use fmbench::sgd::SgdConfig;
use fmbench::types::Dataset;

/// Factorization-machine baselines for rating prediction, evaluated by
/// seeded k-fold cross-validation.
#[derive(Parser)]
#[command(name = "fmbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate on every fold, writing a report.
    Run(RunArgs),
    /// Run only the SGD grid search on the whole dataset.
    Tune(TuneArgs),
    /// Write each fold's train and test design matrices as sparse text.
    ExportFeatures(ExportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Ratings file: user, item, rating, timestamp per line.
    #[arg(long)]
    data: PathBuf,
    /// Field separator: `::`, `tab`, `,` or any literal string.
    #[arg(long, default_value = "tab")]
    delim: String,
    /// mf, svdpp, timesvd, timesvdpp, timesvdpp-flipped, or a family list
    /// such as `u,i,iu` with --allow-custom-variants.
    #[arg(long, default_value = "mf")]
    model: String,
    #[arg(long)]
    allow_custom_variants: bool,
}

#[derive(Args)]
struct FeatureArgs {
    /// Which interactions feed the implicit-feedback features.
    #[arg(long, value_enum, default_value_t = Implicit::Prize)]
    implicit: Implicit,
    #[arg(long, value_enum, default_value_t = Weighting::InvSqrt)]
    weighting: Weighting,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    features: FeatureArgs,
    #[arg(long, value_enum, default_value_t = Solver::Mcmc)]
    solver: Solver,
    /// Embedding dimensions, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    dims: Vec<usize>,
    /// Gibbs sampling steps.
    #[arg(long, default_value_t = 512)]
    steps: usize,
    /// How embedding hyperparameters are shared within a feature group.
    #[arg(long, value_enum, default_value_t = Hyper::PerGroupPerFactor)]
    hyper: Hyper,
    /// Steps excluded from the diagnostic burn-in column of the trace.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// SGD epochs.
    #[arg(long, default_value_t = 128)]
    epochs: usize,
    /// `default` searches the standard 8-cell grid before training.
    #[arg(long, value_enum, default_value_t = Grid::None)]
    grid: Grid,
    /// Grid regularization values (implies a search).
    #[arg(long, value_delimiter = ',')]
    regs: Option<Vec<f64>>,
    /// Grid learning rates (implies a search).
    #[arg(long, value_delimiter = ',')]
    lrs: Option<Vec<f64>>,
    #[arg(long, default_value_t = fmbench::harness::grid::DEFAULT_TUNING_DIM)]
    tuning_dim: usize,
    /// Search on the first fold only and reuse the winner.
    #[arg(long)]
    tune_first_fold: bool,
    /// SGD regularization when not searching.
    #[arg(long, default_value_t = 0.04)]
    reg: f64,
    /// SGD learning rate when not searching.
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    /// Standard deviation of the Gaussian embedding initialization.
    #[arg(long, default_value_t = 0.1)]
    init_std: f64,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Run only these folds, comma separated.
    #[arg(long, value_delimiter = ',')]
    only_folds: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "FMBENCH_OUT", default_value = "results")]
    out: PathBuf,
    /// Folds trained in parallel.
    #[arg(long, env = "FMBENCH_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Leave per-step and per-epoch traces out of the report.
    #[arg(long)]
    no_traces: bool,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    regs: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lrs: Option<Vec<f64>>,
    #[arg(long, default_value_t = fmbench::harness::grid::DEFAULT_TUNING_DIM)]
    tuning_dim: usize,
    #[arg(long, default_value_t = 128)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    init_std: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "FMBENCH_OUT", default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    features: FeatureArgs,
    /// Number of folds; 1 writes the whole dataset to `all.txt`.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "FMBENCH_OUT", default_value = "results")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Mcmc,
    Sgd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Hyper {
    PerGroupPerFactor,
    PerGroup,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Grid {
    None,
    Default,
}

#[derive(Clone, Copy, ValueEnum)]
enum Implicit {
    Prize,
    Strict,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    InvSqrt,
    Inverse,
    Unit,
}

impl From<Implicit> for ImplicitMode {
    fn from(m: Implicit) -> Self {
        match m {
            Implicit::Prize => ImplicitMode::Prize,
            Implicit::Strict => ImplicitMode::Strict,
        }
    }
}

impl From<Weighting> for ImplicitWeighting {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::InvSqrt => ImplicitWeighting::InvSqrt,
            Weighting::Inverse => ImplicitWeighting::Inverse,
            Weighting::Unit => ImplicitWeighting::Unit,
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit with 2 inside `parse`.
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Tune(a) => cmd_tune(a),
        Command::ExportFeatures(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn delimiter(s: &str) -> &str {
    match s {
        "tab" | "\\t" => "\t",
        "comma" => ",",
        other => other,
    }
}

fn load(a: &DataArgs) -> Result<(Dataset, ModelVariant)> {
    let variant = ModelVariant::parse(&a.model, a.allow_custom_variants)?;
    let data = parse_movielens(&a.data, delimiter(&a.delim))
        .with_context(|| format!("reading {}", a.data.display()))?;
    Ok((data, variant))
}

fn grid_from(regs: Option<Vec<f64>>, lrs: Option<Vec<f64>>, tuning_dim: usize) -> GridSpec {
    let default = GridSpec::default();
    GridSpec {
        regs: regs.unwrap_or(default.regs),
        lrs: lrs.unwrap_or(default.lrs),
        tuning_dim,
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let (data, variant) = load(&a.data)?;
    let solver = match a.solver {
        Solver::Mcmc => SolverConfig::Mcmc(McmcConfig {
            steps: a.steps,
            burn_in: a.burn_in,
            init_std: a.init_std,
            hyper_grouping: match a.hyper {
                Hyper::PerGroup => HyperGrouping::PerGroup,
                Hyper::PerGroupPerFactor => HyperGrouping::PerGroupPerFactor,
            },
            ..McmcConfig::default()
        }),
        Solver::Sgd => {
            let search = a.grid == Grid::Default || a.regs.is_some() || a.lrs.is_some();
            SolverConfig::Sgd {
                sgd: SgdConfig {
                    learning_rate: a.lr,
                    reg: a.reg,
                    epochs: a.epochs,
                    ..SgdConfig::default()
                },
                init_std: a.init_std,
                grid: search.then(|| grid_from(a.regs.clone(), a.lrs.clone(), a.tuning_dim)),
                grid_policy: if a.tune_first_fold { GridPolicy::FirstFold } else { GridPolicy::PerFold },
            }
        }
    };
    let mut cfg = ExperimentConfig::new(variant, solver, a.dims.clone());
    cfg.implicit_mode = a.features.implicit.into();
    cfg.weighting = a.features.weighting.into();
    cfg.seed = a.seed;
    cfg.jobs = a.jobs.max(1);
    cfg.folds = a.only_folds.clone();
    cfg.keep_traces = !a.no_traces;
    let plan = make_folds(data.len(), a.folds, a.seed)?;
    let report = run_experiment(&data, &cfg, &plan)?;
    report.write_to_dir(&a.out)?;
    print_table(&mut std::io::stdout().lock(), &report)?;
    if report.partial {
        let failed: Vec<_> = report.results.iter().filter_map(|r| r.error.as_deref()).collect();
        bail!("{} fold run(s) failed; first: {}", failed.len(), failed[0]);
    }
    Ok(())
}

/// One line per dimension; numbers are printed exactly as stored in the
/// report.
fn print_table(out: &mut impl Write, r: &ExperimentReport) -> Result<()> {
    let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| v.to_string());
    writeln!(out, "variant\tsolver\tdim\tfolds\tmean_rmse\tstd_rmse")?;
    for a in &r.aggregates {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.config.variant,
            r.config.solver.name(),
            a.dim,
            a.n_ok,
            opt(a.mean),
            opt(a.std)
        )?;
    }
    Ok(())
}

fn cmd_tune(a: TuneArgs) -> Result<()> {
    let (data, variant) = load(&a.data)?;
    let grid = grid_from(a.regs, a.lrs, a.tuning_dim);
    let opts = GridOptions {
        sgd: SgdConfig {
            epochs: a.epochs,
            track_train_rmse: false,
            ..SgdConfig::default()
        },
        init_std: a.init_std,
        seed: a.seed,
        ..GridOptions::default()
    };
    let result = grid_search(&data, variant, &grid, &opts)?;
    let mut body = String::from("reg,lr,validation_rmse\n");
    for c in &result.cells {
        body.push_str(&format!("{},{},{}\n", c.reg, c.lr, c.validation_rmse));
    }
    mkdir(&a.out)?;
    let path = a.out.join("grid.csv");
    fs::write(&path, &body).with_context(|| format!("writing {}", path.display()))?;
    print!("{body}");
    println!("# best reg {} lr {}", result.best_reg, result.best_lr);
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let (data, variant) = load(&a.data)?;
    mkdir(&a.out)?;
    let mut cfg = ExperimentConfig::new(variant, SolverConfig::Mcmc(McmcConfig::default()), vec![1]);
    cfg.implicit_mode = a.features.implicit.into();
    cfg.weighting = a.features.weighting.into();
    if a.folds == 1 {
        let vocab = fmbench::featurize::fit_vocabulary(&data, variant, &data);
        let implicit = fmbench::featurize::build_implicit_index(&data);
        let m = fmbench::featurize::FeatureBuilder::new(vocab, &implicit, cfg.weighting)?.build(&data)?;
        write_rows(&a.out.join("all.txt"), &m)?;
        return Ok(());
    }
    let plan = make_folds(data.len(), a.folds, a.seed)?;
    for f in 0..plan.n_folds() {
        let d = fold_design(&data, &cfg, &plan, f)?;
        write_rows(&a.out.join(format!("fold{f}_train.txt")), &d.train)?;
        write_rows(&a.out.join(format!("fold{f}_test.txt")), &d.test)?;
    }
    Ok(())
}

fn write_rows(path: &Path, m: &fmbench::design::DesignMatrix) -> Result<()> {
    let rows: Vec<_> = m.rows().collect();
    write_fm_text(path, &rows)?;
    Ok(())
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}
