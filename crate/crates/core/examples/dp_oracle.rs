//! Solve one route exactly by backward induction for a sweep of weights,
//! tracing the handover count against signal strength.
//!
//! cargo run --release --example dp_oracle

use uav_handover::eval::{baseline_flight, dp_oracle};
use uav_handover::mdp::{HandoverEnv, RewardWeights};
use uav_handover::radio_env::{generate_synthetic_samples, GridSpec, RsrpGrid, SyntheticLayout};
use uav_handover::trajectory::{random_route, MIN_SEPARATION, STEP_LENGTH};

fn main() -> uav_handover::Result<()> {
    let layout = SyntheticLayout::default();
    let samples = generate_synthetic_samples(&layout, 10_000, 0)?;
    let grid = RsrpGrid::build(&samples, &GridSpec::new(layout.extents, 50.0, layout.n_cells()))?;
    let route = random_route(layout.extents, MIN_SEPARATION, STEP_LENGTH, 5)?;
    let baseline = baseline_flight(&grid, &route)?;
    println!(
        "{} waypoints; baseline {} HOs, mean {:.2} dBm, p05 {:.2} dBm",
        route.len(),
        baseline.ho_count,
        baseline.mean_rsrp_dbm(),
        baseline.p05_rsrp_dbm()
    );
    println!("weights    value  HOs  mean dBm   p05 dBm");
    for w in ["0:1", "1:99", "1:19", "1:9", "1:4", "1:2", "1:1", "2:1"] {
        let env = HandoverEnv::new(&grid, &route, RewardWeights::parse(w)?, 6)?;
        let sol = dp_oracle(&env, 0.3)?;
        println!(
            "{w:>6} {:8.4} {:4} {:9.2} {:9.2}",
            sol.value(),
            sol.flight.ho_count,
            sol.flight.mean_rsrp_dbm(),
            sol.flight.p05_rsrp_dbm()
        );
    }
    Ok(())
}
