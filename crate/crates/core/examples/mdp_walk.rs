//! Walk the handover decision process along one route, always taking the
//! strongest candidate, and print the state, candidate set and reward at
//! each of the first waypoints.
//!
//! cargo run --release --example mdp_walk

use uav_handover::mdp::{HandoverEnv, RewardWeights};
use uav_handover::radio_env::{generate_synthetic_samples, GridSpec, RsrpGrid, SyntheticLayout};
use uav_handover::trajectory::{random_route, MIN_SEPARATION, STEP_LENGTH};

fn main() -> uav_handover::Result<()> {
    let layout = SyntheticLayout::default();
    let samples = generate_synthetic_samples(&layout, 10_000, 0)?;
    let grid = RsrpGrid::build(&samples, &GridSpec::new(layout.extents, 50.0, layout.n_cells()))?;
    let route = random_route(layout.extents, MIN_SEPARATION, STEP_LENGTH, 3)?;
    let env = HandoverEnv::new(&grid, &route, RewardWeights::parse("1:9")?, 6)?;

    let mut state = env.initial_state();
    let mut total = 0.0;
    println!(" i        x        y dir serving  candidates            reward");
    while !env.is_terminal(&state) {
        let cands = env.candidates(state.waypoint_index)?.to_vec();
        let result = env.step(&state, 0);
        total += result.reward;
        if state.waypoint_index < 12 {
            println!(
                "{:2} {:8.1} {:8.1} {:3} {:7}  {:20} {:7.4}",
                state.waypoint_index,
                state.x,
                state.y,
                state.direction.index(),
                state.serving_cell,
                format!("{cands:?}"),
                result.reward
            );
        }
        state = result.next;
    }
    println!("... {} waypoints, undiscounted return of the greedy walk {total:.3}", env.len());
    Ok(())
}
