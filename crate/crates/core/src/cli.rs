//! The `uav-ho` command line.
//!
//! Config precedence, lowest first: built-in defaults, `--config` file or
//! `--manifest`, the `UAV_HO_OUTPUT_DIR` variable (output directory only),
//! then flags. Every command writes `manifest.json` next to its outputs.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Manifest, RunConfig, OUTPUT_DIR_ENV};
use crate::dqn::{train_dqn_with_checkpoints, StateEncoder};
use crate::eval::{baseline_flight, run_flight, write_metrics_csv, EmpiricalCdf, SummaryJson};
use crate::experiment::{flight_route, run_experiment, ExperimentResult, Scheme};
use crate::mdp::{HandoverEnv, RewardWeights};
use crate::radio_env::{generate_synthetic_samples, import_samples, EmptyBinFill, RsrpGrid};
use crate::tabular::{table_policy, train_tabular, QTableMeta};
use crate::trajectory::Trajectory;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "uav-ho", version, about = "Handover optimization for cellular-connected drones")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Re-run with the resolved config stored in an earlier manifest.json.
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [env: UAV_HO_OUTPUT_DIR].
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Candidate cells per handover decision.
    #[arg(long, global = true)]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the binned RSRP map.
    #[command(subcommand)]
    Map(MapCommand),
    /// Draw random routes.
    #[command(subcommand)]
    Route(RouteCommand),
    /// Train a policy on one route.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Evaluate one scheme against the strongest-cell baseline over many routes.
    Eval(EvalArgs),
    /// Evaluate several schemes and weight pairs over the same routes.
    Compare(CompareArgs),
}

#[derive(Debug, Subcommand)]
pub enum MapCommand {
    /// Sample the synthetic layout and bin it: samples.csv, grid.csv, grid.json, association.csv.
    Generate(MapGenerateArgs),
    /// Bin a measured samples CSV (x_m,y_m,cell_id,rsrp_dbm): grid.csv, grid.json, association.csv.
    Import(MapImportArgs),
}

#[derive(Debug, Args)]
pub struct MapGenerateArgs {
    /// Samples drawn per cell.
    #[arg(long)]
    pub samples_per_cell: Option<usize>,
    #[command(flatten)]
    pub binning: BinningArgs,
}

#[derive(Debug, Args)]
pub struct MapImportArgs {
    /// Samples CSV to import.
    #[arg(long, value_name = "FILE")]
    pub samples: PathBuf,
    /// Number of cells in the file.
    #[arg(long)]
    pub n_cells: Option<usize>,
    #[command(flatten)]
    pub binning: BinningArgs,
}

#[derive(Debug, Args)]
pub struct BinningArgs {
    /// Bin edge length in meters.
    #[arg(long)]
    pub bin_size: Option<f64>,
    /// Value for bins with no sample of a cell: neighbors or global-min.
    #[arg(long, value_parser = parse_fill)]
    pub fill: Option<EmptyBinFill>,
}

#[derive(Debug, Subcommand)]
pub enum RouteCommand {
    /// Write routes/route_NNNN.csv (idx,x_m,y_m,direction_idx) for consecutive flight ids.
    Sample(RouteSampleArgs),
}

#[derive(Debug, Args)]
pub struct RouteSampleArgs {
    /// Number of routes.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// First flight id; route `i` is the one `eval` and `compare` fly as flight `i`.
    #[arg(long, default_value_t = 0)]
    pub first: usize,
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Tabular Q-learning: qtable.csv and qtable.json.
    Tabular(TrainArgs),
    /// Deep Q-learning: model.json, plus checkpoints/ when dqn.checkpoint_every > 0.
    Dqn(TrainArgs),
}

#[derive(Debug, Args)]
pub struct MapSourceArgs {
    /// Use a grid CSV written by `map generate` or `map import` (sidecar .json alongside).
    #[arg(long, value_name = "FILE", conflicts_with = "samples")]
    pub grid: Option<PathBuf>,
    /// Bin this samples CSV instead of sampling the synthetic layout.
    #[arg(long, value_name = "FILE")]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Route CSV to train on.
    #[arg(long, value_name = "FILE", conflicts_with = "flight")]
    pub route: Option<PathBuf>,
    /// Train on the random route of this flight id instead.
    #[arg(long, default_value_t = 0)]
    pub flight: usize,
    /// Reward weights as w_ho:w_rsrp.
    #[arg(long, default_value = "1:9", value_parser = parse_weights)]
    pub weights: RewardWeights,
    /// Training episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Steps per episode.
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub map: MapSourceArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Number of random routes.
    #[arg(long)]
    pub flights: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Comma-separated weight pairs, e.g. 0:1,1:9,5:5.
    #[arg(long, value_delimiter = ',', value_parser = parse_weights)]
    pub weights: Option<Vec<RewardWeights>>,
    /// Training episodes for both learners.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Steps per episode for both learners.
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub map: MapSourceArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scheme to evaluate: tabular, dqn or oracle.
    #[arg(long, default_value = "dqn")]
    pub scheme: Scheme,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated schemes.
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<Scheme>>,
    #[command(flatten)]
    pub run: RunArgs,
}

fn parse_weights(s: &str) -> std::result::Result<RewardWeights, String> {
    RewardWeights::parse(s).map_err(|e| e.to_string())
}

fn parse_fill(s: &str) -> std::result::Result<EmptyBinFill, String> {
    match s {
        "neighbors" => Ok(EmptyBinFill::Neighbors),
        "global-min" | "global_min" => Ok(EmptyBinFill::GlobalMin),
        _ => Err(format!("unknown fill `{s}`; expected neighbors or global-min")),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status: 0 on success, 2 for usage errors and missing
/// inputs, 1 for every other failure.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let env_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    let command: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, env_dir, command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::MissingInput(_) => 2,
                _ => 1,
            }
        }
    }
}

/// Base config for `global`, before command-specific flags.
pub fn resolve_config(global: &GlobalArgs, env_output_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut config = match (&global.config, &global.manifest) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(Error::MissingInput(path.clone()));
            }
            RunConfig::load(path)?
        }
        (None, Some(path)) => Manifest::load(path)?.config,
        (None, None) => RunConfig::default(),
    };
    if let Some(dir) = env_output_dir {
        config.output_dir = dir;
    }
    if let Some(dir) = &global.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(k) = global.k {
        config.k = k;
    }
    Ok(config)
}

fn apply_map_source(config: &mut RunConfig, map: &MapSourceArgs) {
    if let Some(grid) = &map.grid {
        config.map.grid_file = Some(grid.clone());
        config.map.samples_file = None;
    }
    if let Some(samples) = &map.samples {
        config.map.samples_file = Some(samples.clone());
        config.map.grid_file = None;
    }
}

fn apply_binning(config: &mut RunConfig, b: &BinningArgs) {
    if let Some(size) = b.bin_size {
        config.map.bin_size = size;
    }
    if let Some(fill) = b.fill {
        config.map.fill = fill;
    }
}

fn apply_run(config: &mut RunConfig, run: &RunArgs) {
    apply_map_source(config, &run.map);
    if let Some(f) = run.flights {
        config.flights = f;
    }
    if let Some(w) = run.workers {
        config.workers = w;
    }
    if let Some(w) = &run.weights {
        config.weights = w.clone();
    }
    if let Some(e) = run.episodes {
        config.tabular.episodes = e;
        config.dqn.episodes = e;
    }
    if let Some(s) = run.steps {
        config.tabular.steps = s;
        config.dqn.steps = s;
    }
}

/// Config after every flag of `cli` is applied, validated.
pub fn resolved_config(cli: &Cli, env_output_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut config = resolve_config(&cli.global, env_output_dir)?;
    match &cli.command {
        Command::Map(MapCommand::Generate(a)) => {
            config.map.grid_file = None;
            config.map.samples_file = None;
            if let Some(n) = a.samples_per_cell {
                config.map.samples_per_cell = n;
            }
            apply_binning(&mut config, &a.binning);
        }
        Command::Map(MapCommand::Import(a)) => {
            config.map.grid_file = None;
            config.map.samples_file = Some(a.samples.clone());
            if let Some(n) = a.n_cells {
                config.map.n_cells = n;
            }
            apply_binning(&mut config, &a.binning);
        }
        Command::Route(_) => {}
        Command::Train(TrainCommand::Tabular(a)) => {
            apply_map_source(&mut config, &a.map);
            config.weights = vec![a.weights];
            if let Some(e) = a.episodes {
                config.tabular.episodes = e;
            }
            if let Some(s) = a.steps {
                config.tabular.steps = s;
            }
        }
        Command::Train(TrainCommand::Dqn(a)) => {
            apply_map_source(&mut config, &a.map);
            config.weights = vec![a.weights];
            if let Some(e) = a.episodes {
                config.dqn.episodes = e;
            }
            if let Some(s) = a.steps {
                config.dqn.steps = s;
            }
        }
        Command::Eval(a) => {
            apply_run(&mut config, &a.run);
            config.schemes = if a.scheme == Scheme::Baseline { Vec::new() } else { vec![a.scheme] };
        }
        Command::Compare(a) => {
            apply_run(&mut config, &a.run);
            if let Some(s) = &a.schemes {
                config.schemes = s.clone();
            }
        }
    }
    config.validate()?;
    config.check_inputs()?;
    Ok(config)
}

fn execute(cli: &Cli, env_output_dir: Option<PathBuf>, command: Vec<String>) -> Result<()> {
    let config = resolved_config(cli, env_output_dir)?;
    let out = config.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    match &cli.command {
        Command::Map(MapCommand::Generate(_)) => {
            let samples = generate_synthetic_samples(&config.layout(), config.map.samples_per_cell, config.seed)?;
            crate::radio_env::write_samples(&samples, create(&out.join("samples.csv"))?)?;
            write_grid(&out, &config.grid_from_samples(&samples)?)?;
        }
        Command::Map(MapCommand::Import(a)) => {
            let samples = import_samples(
                std::io::BufReader::new(File::open(&a.samples)?),
                config.extents(),
                config.map.n_cells,
            )?;
            write_grid(&out, &config.grid_from_samples(&samples)?)?;
        }
        Command::Route(RouteCommand::Sample(a)) => {
            let dir = out.join("routes");
            std::fs::create_dir_all(&dir)?;
            let exp = config.experiment_config();
            for id in a.first..a.first + a.count {
                let route = flight_route(&exp, config.extents(), id)?;
                route.write_csv(create(&dir.join(format!("route_{id:04}.csv")))?)?;
            }
            println!("wrote {} routes to {}", a.count, dir.display());
        }
        Command::Train(TrainCommand::Tabular(a)) => {
            let grid = config.build_grid()?;
            let route = training_route(&config, a)?;
            let env = HandoverEnv::new(&grid, &route, a.weights, config.k)?;
            let table = train_tabular(&env, &config.tabular_config())?;
            table.write_csv(create(&out.join("qtable.csv"))?)?;
            let meta = QTableMeta {
                k: config.k,
                key_resolution: table.resolution(),
                weights: a.weights,
                lambda: config.lambda,
            };
            write_json(&out.join("qtable.json"), &meta)?;
            route.write_csv(create(&out.join("route.csv"))?)?;
            report_flight("tabular", &grid, &route, run_flight(&env, table_policy(&table))?.ho_count)?;
        }
        Command::Train(TrainCommand::Dqn(a)) => {
            let grid = config.build_grid()?;
            let route = training_route(&config, a)?;
            let env = HandoverEnv::new(&grid, &route, a.weights, config.k)?;
            let cfg = config.train_config();
            let checkpoints = out.join("checkpoints");
            let model = train_dqn_with_checkpoints(&env, &cfg, Some(&checkpoints))?;
            let mut w = create(&out.join("model.json"))?;
            model.save_json(&mut w)?;
            w.flush()?;
            route.write_csv(create(&out.join("route.csv"))?)?;
            let encoder = StateEncoder::new(&env, cfg.encoding);
            let flight = run_flight(&env, |s| crate::dqn::predict_action(&model, &encoder, s))?;
            report_flight("dqn", &grid, &route, flight.ho_count)?;
        }
        Command::Eval(_) | Command::Compare(_) => {
            let grid = config.build_grid()?;
            let result = run_experiment(&grid, &config.experiment_config())?;
            write_results(&out, &result)?;
            print_summary(&result);
        }
    }
    Manifest { command, config }.write(&out)?;
    Ok(())
}

fn training_route(config: &RunConfig, a: &TrainArgs) -> Result<Trajectory> {
    match &a.route {
        Some(path) => {
            let file = File::open(path).map_err(|_| Error::MissingInput(path.clone()))?;
            Trajectory::read_csv(std::io::BufReader::new(file))
        }
        None => flight_route(&config.experiment_config(), config.extents(), a.flight),
    }
}

fn report_flight(scheme: &str, grid: &RsrpGrid, route: &Trajectory, ho_count: usize) -> Result<()> {
    let baseline = baseline_flight(grid, route)?;
    println!(
        "{scheme}: {ho_count} handovers over {} waypoints (baseline {})",
        route.len(),
        baseline.ho_count
    );
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_grid(out: &Path, grid: &RsrpGrid) -> Result<()> {
    let mut w = create(&out.join("grid.csv"))?;
    grid.write_csv(&mut w)?;
    w.flush()?;
    write_json(&out.join("grid.json"), &grid.meta())?;
    let mut w = create(&out.join("association.csv"))?;
    grid.write_association_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn weight_tag(w: &RewardWeights) -> String {
    format!("w{}-{}", w.w_ho, w.w_rsrp)
}

/// Writes metrics.csv, summary.json and one CDF CSV per metric, scheme and weight.
pub fn write_results(out: &Path, result: &ExperimentResult) -> Result<()> {
    let mut w = create(&out.join("metrics.csv"))?;
    write_metrics_csv(&result.metrics_rows(), &mut w)?;
    w.flush()?;

    let cdf_dir = out.join("cdf");
    std::fs::create_dir_all(&cdf_dir)?;
    let write_cdf = |name: String, cdf: &EmpiricalCdf| -> Result<()> {
        let mut w = create(&cdf_dir.join(name))?;
        cdf.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    };
    let mut summaries: Vec<SummaryJson> = Vec::new();
    for (wi, weights) in result.weights.iter().enumerate() {
        let tag = weight_tag(weights);
        for scheme in std::iter::once(Scheme::Baseline).chain(result.schemes.iter().copied()) {
            let s = result.summary(wi, scheme).expect("scheme was run");
            write_cdf(format!("{scheme}_{tag}_ho_count.csv"), &s.ho_count_cdf)?;
            write_cdf(format!("{scheme}_{tag}_rsrp_dbm.csv"), &s.rsrp_cdf)?;
            if scheme != Scheme::Baseline {
                write_cdf(format!("{scheme}_{tag}_ho_ratio.csv"), &s.ho_ratio_cdf)?;
            }
            summaries.push(s.to_json(scheme.name(), weights));
        }
    }
    write_json(&out.join("summary.json"), &summaries)
}

fn print_summary(result: &ExperimentResult) {
    println!("{} flights", result.flights.len());
    for (wi, weights) in result.weights.iter().enumerate() {
        for &scheme in &result.schemes {
            let s = result.summary(wi, scheme).expect("scheme was run");
            println!(
                "{weights:>7} {scheme:<8} avg HO {:>6.2} (baseline {:>6.2})  median ratio {:.3}  p05 RSRP {:.2} dBm",
                s.avg_ho_count,
                s.avg_baseline_ho_count,
                s.ho_ratio_cdf.quantile(0.5),
                s.rsrp_cdf.quantile(0.05),
            );
        }
    }
}
