//! Draw random routes and a fixed one, showing the 8-direction headings.
//!
//! cargo run --release --example routes

use uav_handover::radio_env::Extents;
use uav_handover::trajectory::{generate_route, random_route, Waypoint, MIN_SEPARATION, STEP_LENGTH};

fn main() -> uav_handover::Result<()> {
    let area = Extents::default();

    let fixed = generate_route(Waypoint::new(100.0, 100.0), Waypoint::new(1300.0, 600.0), STEP_LENGTH, area)?;
    let headings: String = fixed.directions().iter().map(|d| char::from(b'0' + d.index())).collect();
    let last = fixed.waypoints().last().unwrap();
    println!("fixed route: {} waypoints, headings {headings}", fixed.len());
    println!("  ends at ({:.1}, {:.1}), {:.1} m from the destination", last.x, last.y, last.distance(&Waypoint::new(1300.0, 600.0)));

    println!("random routes (endpoints at least {MIN_SEPARATION} m apart):");
    for seed in 0..5 {
        let r = random_route(area, MIN_SEPARATION, STEP_LENGTH, seed)?;
        let (a, b) = (r.waypoints()[0], *r.waypoints().last().unwrap());
        println!(
            "  seed {seed}: {:3} waypoints, ({:6.0}, {:6.0}) -> ({:6.0}, {:6.0}), straight-line {:5.0} m",
            r.len(),
            a.x,
            a.y,
            b.x,
            b.y,
            a.distance(&b)
        );
    }

    let mut csv = Vec::new();
    fixed.write_csv(&mut csv)?;
    println!("route CSV starts:\n{}", String::from_utf8_lossy(&csv).lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}
