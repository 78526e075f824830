//! Compare baseline, tabular, DQN and the exact optimum over a batch of
//! random routes for the weight pairs 0:1, 1:9 and 5:5.
//!
//! cargo run --release --example compare [flights] [workers]

use uav_handover::dqn::TrainConfig;
use uav_handover::experiment::{run_experiment, ExperimentConfig, Scheme};
use uav_handover::mdp::RewardWeights;
use uav_handover::radio_env::{generate_synthetic_samples, GridSpec, RsrpGrid, SyntheticLayout};
use uav_handover::tabular::TabularConfig;
use uav_handover::trajectory::{MIN_SEPARATION, STEP_LENGTH};

fn main() -> uav_handover::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let flights = args.next().flatten().unwrap_or(8);
    let workers = args.next().flatten().unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let layout = SyntheticLayout::default();
    let samples = generate_synthetic_samples(&layout, 10_000, 0)?;
    let grid = RsrpGrid::build(&samples, &GridSpec::new(layout.extents, 50.0, layout.n_cells()))?;
    let config = ExperimentConfig {
        flights,
        seed: 0,
        weights: ["0:1", "1:9", "5:5"].iter().map(|w| RewardWeights::parse(w)).collect::<Result<_, _>>()?,
        schemes: vec![Scheme::Tabular, Scheme::Dqn, Scheme::Oracle],
        k: 6,
        min_separation: MIN_SEPARATION,
        step_length: STEP_LENGTH,
        tabular: TabularConfig::default(),
        dqn: TrainConfig { episodes: 40, steps: 300, ..TrainConfig::default() },
        workers,
    };
    let result = run_experiment(&grid, &config)?;

    println!("{flights} routes");
    println!("weights  scheme   avg HO  median ratio  p05 dBm");
    for (wi, w) in config.weights.iter().enumerate() {
        for scheme in std::iter::once(Scheme::Baseline).chain(config.schemes.iter().copied()) {
            let s = result.summary(wi, scheme).expect("scheme ran");
            println!(
                "{:>7}  {:<8} {:6.2} {:13.3} {:8.2}",
                w.to_string(),
                scheme.name(),
                s.avg_ho_count,
                s.ho_ratio_cdf.quantile(0.5),
                s.rsrp_cdf.quantile(0.05)
            );
        }
    }
    Ok(())
}
