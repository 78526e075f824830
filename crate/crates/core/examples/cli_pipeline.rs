//! Drive the command line in-process: build a map, sample routes, train on
//! one route and run a small comparison, all under a temporary directory.
//!
//! cargo run --release --example cli_pipeline

use uav_handover::cli::run_command;

fn run(args: &[&str]) {
    println!("$ uav-ho {}", args.join(" "));
    let status = run_command(std::iter::once("uav-ho").chain(args.iter().copied()));
    assert_eq!(status, 0, "command failed");
}

fn main() -> std::io::Result<()> {
    let dir = std::env::temp_dir().join(format!("uav-ho-pipeline-{}", std::process::id()));
    let out = |sub: &str| dir.join(sub).to_string_lossy().into_owned();
    let grid = dir.join("map/grid.csv").to_string_lossy().into_owned();

    run(&["--output-dir", &out("map"), "map", "generate"]);
    run(&["--output-dir", &out("routes"), "route", "sample", "--count", "3"]);
    let route = dir.join("routes/routes/route_0002.csv").to_string_lossy().into_owned();
    run(&["--output-dir", &out("tabular"), "train", "tabular", "--grid", &grid, "--route", &route]);
    run(&["--output-dir", &out("dqn"), "train", "dqn", "--grid", &grid, "--route", &route, "--episodes", "20", "--steps", "300"]);
    run(&[
        "--output-dir", &out("compare"), "compare", "--grid", &grid, "--flights", "4", "--workers", "2",
        "--weights", "0:1,1:9,5:5", "--episodes", "20", "--steps", "300",
    ]);
    let manifest = dir.join("compare/manifest.json").to_string_lossy().into_owned();
    run(&["--manifest", &manifest, "--output-dir", &out("rerun"), "compare"]);

    let a = std::fs::read(dir.join("compare/metrics.csv"))?;
    let b = std::fs::read(dir.join("rerun/metrics.csv"))?;
    println!("re-run from manifest reproduces metrics.csv: {}", a == b);
    std::fs::remove_dir_all(&dir)
}
