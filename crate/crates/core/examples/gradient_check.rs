//! Compare backpropagated gradients with central finite differences on
//! random networks and masked regression targets.
//!
//! cargo run --release --example gradient_check

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uav_handover::nn::{grad_check, MlpModel};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for trial in 0..10 {
        let (inputs, outputs, batch) = (rng.random_range(2..12), rng.random_range(1..7), rng.random_range(1..9));
        let model = MlpModel::init(inputs, &[16, 16], outputs, trial);
        let x = Array2::from_shape_fn((batch, inputs), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((batch, outputs), |_| rng.random_range(-1.0..1.0));
        // One target per row, as in the taken-action DQN loss.
        let mut mask = Array2::zeros((batch, outputs));
        for mut row in mask.rows_mut() {
            row[rng.random_range(0..outputs)] = 1.0;
        }
        let err = grad_check(&model, x.view(), y.view(), mask.view(), 1e-5);
        println!("trial {trial}: {inputs:2} -> 16 -> 16 -> {outputs}, batch {batch}, {} params, max rel error {err:.2e}", model.param_count());
        worst = worst.max(err);
    }
    println!("worst relative error {worst:.2e}");
}
