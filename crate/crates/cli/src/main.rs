use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use gdr_core::data_io::{load_dataset, resolve_dataset_path, write_dataset, SplitTag};
use gdr_core::experiment::{
    report_merge, run_gdr, run_train, Direction, ExperimentConfig, PriorSpec, ResultReport, RunOutput,
    REPORT_FILE,
};
use gdr_core::synthetic::PlantedPartition;
use gdr_core::GdrError;

#[derive(Parser)]
#[command(
    name = "gdr",
    version,
    about = "Graph diffusion reclassification and diffusive GCN experiments"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a prior, pick the burn-in time on the validation nodes and
    /// reclassify by diffusion overshoot.
    RunGdr(RunArgs),
    /// Train a neural model and export its predictions as a prior file.
    RunTrain(RunArgs),
    /// Concatenate report CSVs of one dataset into a single sorted report.
    ReportMerge {
        /// Report files to merge.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the merged report here instead of standard output.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Load a dataset directory with every consistency check and print its
    /// statistics.
    ValidateDataset {
        /// Dataset directory (relative paths are resolved against $GDR_DATA_ROOT).
        path: PathBuf,
    },
    /// Write a seeded planted-partition dataset, handy for trying the tools.
    Synth(SynthArgs),
}

/// Command-line overrides for the experiment config. Every flag maps to the
/// config key of the same name.
#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// [dataset] path
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// [model] prior: uniform, projection, mlp, gcn, diff-gcn, aug-gcn,
    /// aug-diff-gcn or external:PATH
    #[arg(long)]
    prior: Option<PriorSpec>,
    /// [model] direction: undirected, forward, backward or augmented
    #[arg(long)]
    direction: Option<Direction>,
    /// [model] alpha
    #[arg(long)]
    alpha: Option<f64>,

    /// [gdr] t_min_grid, comma separated
    #[arg(long, value_delimiter = ',')]
    t_min_grid: Option<Vec<f64>>,
    /// [gdr] grid_points
    #[arg(long)]
    grid_points: Option<usize>,
    /// [gdr] t0
    #[arg(long)]
    t0: Option<f64>,
    /// [gdr] horizon_factor
    #[arg(long)]
    horizon_factor: Option<f64>,
    /// [gdr] stationarity_eps
    #[arg(long)]
    stationarity_eps: Option<f64>,
    /// [gdr] overshoot_eps
    #[arg(long)]
    overshoot_eps: Option<f64>,
    /// [gdr] expm_method: auto, dense-eig, taylor-stepping or chebyshev-stepping
    #[arg(long)]
    expm_method: Option<String>,
    /// [gdr] expm_tol
    #[arg(long)]
    expm_tol: Option<f64>,

    /// [train] hidden_units
    #[arg(long)]
    hidden_units: Option<usize>,
    /// [train] dropout
    #[arg(long)]
    dropout: Option<f64>,
    /// [train] epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// [train] learning_rate
    #[arg(long)]
    learning_rate: Option<f64>,
    /// [train] weight_decay
    #[arg(long)]
    weight_decay: Option<f64>,
    /// [train] early_stopping
    #[arg(long)]
    early_stopping: Option<usize>,
    /// [train] t_init
    #[arg(long)]
    t_init: Option<f64>,
    /// [train] normalize_features
    #[arg(long)]
    normalize_features: Option<bool>,

    /// [run] seeds, comma separated
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// [run] output_dir
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<ExperimentConfig, GdrError> {
        let mut cfg = match (&self.config, &self.dataset) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(dataset)) => ExperimentConfig::for_dataset(dataset),
            (None, None) => {
                return Err(GdrError::Config(
                    "either --config or --dataset is required".into(),
                ));
            }
        };
        fn set<T>(slot: &mut T, value: Option<T>) {
            if let Some(v) = value {
                *slot = v;
            }
        }
        set(&mut cfg.dataset.path, self.dataset);
        set(&mut cfg.model.prior, self.prior);
        set(&mut cfg.model.direction, self.direction);
        set(&mut cfg.model.alpha, self.alpha);
        let g = &mut cfg.gdr;
        set(&mut g.t_min_grid, self.t_min_grid);
        set(&mut g.grid_points, self.grid_points);
        set(&mut g.t0, self.t0);
        set(&mut g.horizon_factor, self.horizon_factor);
        set(&mut g.stationarity_eps, self.stationarity_eps);
        set(&mut g.overshoot_eps, self.overshoot_eps);
        set(&mut g.expm_method, self.expm_method);
        set(&mut g.expm_tol, self.expm_tol);
        let t = &mut cfg.train;
        set(&mut t.hidden_units, self.hidden_units);
        set(&mut t.dropout, self.dropout);
        set(&mut t.epochs, self.epochs);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.weight_decay, self.weight_decay);
        if self.early_stopping.is_some() {
            t.early_stopping = self.early_stopping;
        }
        set(&mut t.t_init, self.t_init);
        set(&mut t.normalize_features, self.normalize_features);
        set(&mut cfg.run.seeds, self.seeds);
        set(&mut cfg.run.output_dir, self.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 300)]
    nodes: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 4.0)]
    mean_degree: f64,
    /// Fraction of edges inside a class.
    #[arg(long, default_value_t = 0.8)]
    homophily: f64,
    #[arg(long, default_value_t = 60)]
    features: usize,
    #[arg(long, default_value_t = 10)]
    train_per_class: usize,
    #[arg(long, default_value_t = 60)]
    val: usize,
    #[arg(long, default_value_t = 120)]
    test: usize,
    #[arg(long)]
    directed: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit status for each failure class.
fn exit_code(err: &GdrError) -> u8 {
    match err.root() {
        GdrError::Config(_) | GdrError::Parameter(_) => 2,
        GdrError::Data { .. }
        | GdrError::Validation(_)
        | GdrError::Input(_)
        | GdrError::LaplacianRequiresUndirected
        | GdrError::SingularClassCounts { .. } => 3,
        GdrError::NonFinite { .. } | GdrError::Diverged { .. } | GdrError::PagerankNotConverged { .. } => 4,
        GdrError::Io { .. } => 5,
        GdrError::Stage { .. } | GdrError::Training { .. } => unreachable!("root() unwraps wrappers"),
    }
}

fn print_run(out: &RunOutput) {
    println!(
        "{:<24} {:<11} {:>5} {:>6} {:>8} {:>6} {:>7}",
        "method", "direction", "seed", "t_min", "accuracy", "prior", "delta"
    );
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x}"));
    for r in &out.report.rows {
        println!(
            "{:<24} {:<11} {:>5} {:>6} {:>8.1} {:>6} {:>7}",
            r.method,
            r.direction,
            r.seed,
            opt(r.t_min),
            r.accuracy,
            opt(r.prior_accuracy),
            opt(r.delta)
        );
    }
    println!(
        "results written to {}",
        out.output_dir.join(REPORT_FILE).display()
    );
    for p in &out.priors {
        println!("prior exported to {}", p.display());
    }
}

fn validate(path: &Path) -> Result<(), GdrError> {
    let dir = resolve_dataset_path(path);
    let (d, m) = load_dataset(&dir)?;
    println!("dataset   {}", m.name);
    println!("nodes     {}", m.n_nodes);
    println!(
        "edges     {}{}",
        m.n_edges,
        if m.directed { " (directed)" } else { "" }
    );
    println!("classes   {}", m.n_classes);
    println!("features  {}", m.n_features);
    for tag in [
        SplitTag::Train,
        SplitTag::Val,
        SplitTag::Test,
        SplitTag::Unlabeled,
    ] {
        println!("{:<9} {}", tag.as_str(), d.split.nodes(tag).len());
    }
    println!("digest    {}", m.combined_digest());
    Ok(())
}

fn run(cli: Cli) -> Result<(), GdrError> {
    match cli.command {
        Command::RunGdr(args) => print_run(&run_gdr(&args.resolve()?)?),
        Command::RunTrain(args) => print_run(&run_train(&args.resolve()?)?),
        Command::ReportMerge { reports, output } => {
            let loaded = reports
                .iter()
                .map(|p| ResultReport::read_csv(p))
                .collect::<Result<Vec<_>, _>>()?;
            let merged = report_merge(&loaded)?;
            match output {
                Some(path) => merged.write_csv(&path)?,
                None => print!("{}", merged.to_csv_string()),
            }
        }
        Command::ValidateDataset { path } => validate(&path)?,
        Command::Synth(a) => {
            let d = PlantedPartition {
                n_nodes: a.nodes,
                n_classes: a.classes,
                mean_degree: a.mean_degree,
                homophily: a.homophily,
                n_features: a.features,
                train_per_class: a.train_per_class,
                n_val: a.val,
                n_test: a.test,
                directed: a.directed,
                seed: a.seed,
                ..PlantedPartition::default()
            }
            .generate()?;
            let m = write_dataset(&a.output, &d)?;
            println!(
                "wrote {} ({} nodes, {} edges) to {}",
                m.name,
                m.n_nodes,
                m.n_edges,
                a.output.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
