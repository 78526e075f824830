//! Sample the synthetic seven-site layout, bin it into 50 m bins and report
//! how the strongest-cell association splits the area.
//!
//! cargo run --release --example radio_map [seed]

use std::collections::BTreeMap;

use uav_handover::radio_env::{generate_synthetic_samples, GridSpec, RsrpGrid, SyntheticLayout};

fn main() -> uav_handover::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let layout = SyntheticLayout::default();
    let samples = generate_synthetic_samples(&layout, 10_000, seed)?;
    let grid = RsrpGrid::build(&samples, &GridSpec::new(layout.extents, 50.0, layout.n_cells()))?;

    let (bx, by) = grid.bins();
    let (lo, hi) = grid.norm_bounds_dbm();
    println!("{} samples, {bx}x{by} bins, {} cells", samples.len(), grid.n_cells());
    println!("normalization bounds: {lo:.1} .. {hi:.1} dBm");

    let mut share: BTreeMap<usize, usize> = BTreeMap::new();
    let assoc = grid.association_map();
    for (_, cell) in &assoc {
        *share.entry(*cell).or_default() += 1;
    }
    println!("best-cell share of bins:");
    for (cell, n) in share {
        let (site, sector) = (cell / 3, cell % 3);
        println!("  cell {cell:2} (site {site}, sector {sector}): {:5.1}%", 100.0 * n as f64 / assoc.len() as f64);
    }

    // Fragmentation: how often the best cell changes between horizontally adjacent bins.
    let best = |x: usize, y: usize| grid.strongest_in_bin(x, y, 1).map(|v| v[0]);
    let mut changes = 0;
    for y in 0..by {
        for x in 1..bx {
            changes += usize::from(best(x, y)? != best(x - 1, y)?);
        }
    }
    println!("best cell changes across {:.1}% of horizontal bin edges", 100.0 * changes as f64 / (by * (bx - 1)) as f64);
    Ok(())
}
