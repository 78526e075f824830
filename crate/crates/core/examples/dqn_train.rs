//! Train a DQN on one route step by step, logging loss and target syncs,
//! then fly the learned policy.
//!
//! cargo run --release --example dqn_train [episodes] [steps]

use uav_handover::dqn::{predict_action, DqnTrainer, TrainConfig};
use uav_handover::eval::{baseline_flight, dp_oracle, run_flight};
use uav_handover::mdp::{HandoverEnv, RewardWeights};
use uav_handover::radio_env::{generate_synthetic_samples, GridSpec, RsrpGrid, SyntheticLayout};
use uav_handover::trajectory::{random_route, MIN_SEPARATION, STEP_LENGTH};

fn main() -> uav_handover::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let episodes = args.next().flatten().unwrap_or(40);
    let steps = args.next().flatten().unwrap_or(300);

    let layout = SyntheticLayout::default();
    let samples = generate_synthetic_samples(&layout, 10_000, 0)?;
    let grid = RsrpGrid::build(&samples, &GridSpec::new(layout.extents, 50.0, layout.n_cells()))?;
    let route = random_route(layout.extents, MIN_SEPARATION, STEP_LENGTH, 2)?;
    let env = HandoverEnv::new(&grid, &route, RewardWeights::parse("1:9")?, 6)?;

    let cfg = TrainConfig { episodes, steps, ..TrainConfig::default() };
    let mut trainer = DqnTrainer::new(&env, cfg.clone())?;
    let (mut loss_sum, mut loss_n, mut syncs) = (0.0, 0usize, 0usize);
    while !trainer.is_finished() {
        let r = trainer.step();
        if let Some(l) = r.loss {
            loss_sum += l;
            loss_n += 1;
        }
        syncs += usize::from(r.synced);
        if r.step + 1 == steps && (r.episode + 1) % 10 == 0 {
            println!(
                "episode {:3}: mean loss {:.5}, {} syncs so far, buffer {}",
                r.episode + 1,
                loss_sum / loss_n.max(1) as f64,
                syncs,
                trainer.buffer().len()
            );
            (loss_sum, loss_n) = (0.0, 0);
        }
    }
    let encoder = trainer.encoder().clone();
    let model = trainer.into_target();
    let flight = run_flight(&env, |s| predict_action(&model, &encoder, s))?;
    let baseline = baseline_flight(&grid, &route)?;
    let oracle = dp_oracle(&env, cfg.lambda)?;
    println!("handovers: dqn {}, oracle {}, baseline {}", flight.ho_count, oracle.flight.ho_count, baseline.ho_count);
    println!(
        "p05 RSRP:  dqn {:.2}, oracle {:.2}, baseline {:.2} dBm",
        flight.p05_rsrp_dbm(),
        oracle.flight.p05_rsrp_dbm(),
        baseline.p05_rsrp_dbm()
    );
    Ok(())
}
