//! Tabular Q-learning on one route: the plain schedule, the converged
//! schedule, and the exact optimum for reference.
//!
//! cargo run --release --example tabular_q [w_ho:w_rsrp]

use uav_handover::eval::{baseline_flight, dp_oracle, run_flight};
use uav_handover::mdp::{HandoverEnv, RewardWeights};
use uav_handover::radio_env::{generate_synthetic_samples, GridSpec, RsrpGrid, SyntheticLayout};
use uav_handover::tabular::{table_policy, train_tabular, train_tabular_converged, TabularConfig};
use uav_handover::trajectory::{random_route, MIN_SEPARATION, STEP_LENGTH};

fn main() -> uav_handover::Result<()> {
    let weights = RewardWeights::parse(&std::env::args().nth(1).unwrap_or_else(|| "1:9".into()))?;
    let layout = SyntheticLayout::default();
    let samples = generate_synthetic_samples(&layout, 10_000, 0)?;
    let grid = RsrpGrid::build(&samples, &GridSpec::new(layout.extents, 50.0, layout.n_cells()))?;
    let route = random_route(layout.extents, MIN_SEPARATION, STEP_LENGTH, 1)?;
    let env = HandoverEnv::new(&grid, &route, weights, 6)?;
    let cfg = TabularConfig::default();

    let baseline = baseline_flight(&grid, &route)?;
    println!("route of {} waypoints, weights {weights}", route.len());
    println!("baseline:          {:3} HOs, p05 {:.2} dBm", baseline.ho_count, baseline.p05_rsrp_dbm());

    let table = train_tabular(&env, &cfg)?;
    let f = run_flight(&env, table_policy(&table))?;
    println!("tabular {}x{}:    {:3} HOs, p05 {:.2} dBm, {} states", cfg.episodes, cfg.steps, f.ho_count, f.p05_rsrp_dbm(), table.len());

    let conv = train_tabular_converged(&env, &cfg, 2000)?;
    let f = run_flight(&env, table_policy(&conv.table))?;
    println!(
        "tabular converged: {:3} HOs, p05 {:.2} dBm after {} episodes (stable: {})",
        f.ho_count,
        f.p05_rsrp_dbm(),
        conv.episodes,
        conv.converged
    );

    let oracle = dp_oracle(&env, cfg.lambda)?;
    println!("oracle:            {:3} HOs, p05 {:.2} dBm", oracle.flight.ho_count, oracle.flight.p05_rsrp_dbm());
    Ok(())
}
