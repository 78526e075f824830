//! Fixed drone routes on an 8-direction compass.
//!
//! At each waypoint the drone moves `step_length` meters in whichever of the
//! eight directions lands closest to the destination, and stops once no step
//! gets strictly closer. The result is generally not a straight line.

use std::f64::consts::FRAC_PI_4;
use std::io::{Read, Write};

use rand::Rng;

use crate::radio_env::Extents;
use crate::rng::substream;
use crate::{Error, Result};

/// Default spacing between consecutive waypoints, meters.
pub const STEP_LENGTH: f64 = 50.0;

/// Default minimum start/end separation for random routes, meters.
pub const MIN_SEPARATION: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Waypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Heading `index * π/4`, index in `0..8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction(u8);

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction(0),
        Direction(1),
        Direction(2),
        Direction(3),
        Direction(4),
        Direction(5),
        Direction(6),
        Direction(7),
    ];

    pub fn new(index: u8) -> Option<Self> {
        (index < 8).then_some(Self(index))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn angle(self) -> f64 {
        f64::from(self.0) * FRAC_PI_4
    }

    /// Unit vector; axis-aligned components are exact.
    pub fn unit(self) -> (f64, f64) {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        match self.0 {
            0 => (1.0, 0.0),
            1 => (d, d),
            2 => (0.0, 1.0),
            3 => (-d, d),
            4 => (-1.0, 0.0),
            5 => (-d, -d),
            6 => (0.0, -1.0),
            _ => (d, -d),
        }
    }

    fn advance(self, from: &Waypoint, step: f64) -> Waypoint {
        let (ux, uy) = self.unit();
        Waypoint::new(from.x + step * ux, from.y + step * uy)
    }
}

/// Relative tolerance under which two candidate distances count as tied.
const TIE_TOL: f64 = 1e-9;

fn best_step(
    current: &Waypoint,
    destination: &Waypoint,
    step: f64,
    allowed: impl Fn(&Waypoint) -> bool,
) -> Option<(Direction, Waypoint, f64)> {
    let mut best: Option<(Direction, Waypoint, f64)> = None;
    for dir in Direction::ALL {
        let next = dir.advance(current, step);
        if !allowed(&next) {
            continue;
        }
        let d = next.distance(destination);
        match best {
            Some((_, _, bd)) if d >= bd - TIE_TOL * bd.max(1.0) => {}
            _ => best = Some((dir, next, d)),
        }
    }
    best
}

/// Direction whose next waypoint lands closest to `destination`; ties go to the lower index.
pub fn pick_direction(current: &Waypoint, destination: &Waypoint, step_length: f64) -> Direction {
    best_step(current, destination, step_length, |_| true)
        .map(|(d, _, _)| d)
        .expect("eight candidate directions")
}

/// Ordered waypoints with the heading of every segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<Waypoint>,
    directions: Vec<Direction>,
    step_length: f64,
}

impl Trajectory {
    /// Builds a trajectory from segments, checking that waypoints follow the headings.
    pub fn from_parts(
        waypoints: Vec<Waypoint>,
        directions: Vec<Direction>,
        step_length: f64,
    ) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Validation("a trajectory needs at least 2 waypoints".into()));
        }
        if directions.len() != waypoints.len() - 1 {
            return Err(Error::Validation("one direction per segment required".into()));
        }
        for (i, (pair, dir)) in waypoints.windows(2).zip(&directions).enumerate() {
            let expected = dir.advance(&pair[0], step_length);
            if expected.distance(&pair[1]) > 1e-6 {
                return Err(Error::Validation(format!(
                    "segment {i} does not follow direction {}",
                    dir.index()
                )));
            }
        }
        Ok(Self {
            waypoints,
            directions,
            step_length,
        })
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    /// Heading of each segment; `len() - 1` entries.
    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn step_length(&self) -> f64 {
        self.step_length
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Movement direction at waypoint `i`: the heading of the segment leaving
    /// it, or of the arriving segment at the last waypoint.
    pub fn heading(&self, i: usize) -> Direction {
        self.directions[i.min(self.directions.len() - 1)]
    }

    /// Writes `idx,x_m,y_m,direction_idx`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["idx", "x_m", "y_m", "direction_idx"])?;
        for (i, p) in self.waypoints.iter().enumerate() {
            w.write_record([
                i.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                self.heading(i).index().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut waypoints = Vec::new();
        let mut headings = Vec::new();
        for (expected_idx, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse_err = |message: String| Error::Parse { line, message };
            if record.len() != 4 {
                return Err(parse_err(format!("expected 4 fields, found {}", record.len())));
            }
            let idx: usize = record[0].trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            if idx != expected_idx {
                return Err(parse_err(format!("expected idx {expected_idx}, found {idx}")));
            }
            let x: f64 = record[1].trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let y: f64 = record[2].trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let d: u8 = record[3].trim().parse().map_err(|e| parse_err(format!("{e}")))?;
            let dir = Direction::new(d).ok_or_else(|| parse_err(format!("direction {d}")))?;
            waypoints.push(Waypoint::new(x, y));
            headings.push(dir);
        }
        if waypoints.len() < 2 {
            return Err(Error::Validation("a trajectory needs at least 2 waypoints".into()));
        }
        let step = waypoints[0].distance(&waypoints[1]);
        headings.pop();
        Self::from_parts(waypoints, headings, step)
    }
}

/// Greedy 8-direction route from `start` toward `end`.
///
/// Steps that would leave `extents` are not considered. The route ends when
/// no remaining step strictly reduces the distance to `end`.
pub fn generate_route(
    start: Waypoint,
    end: Waypoint,
    step_length: f64,
    extents: Extents,
) -> Result<Trajectory> {
    if !(step_length > 0.0 && step_length.is_finite()) {
        return Err(Error::Config("step_length must be positive".into()));
    }
    for p in [&start, &end] {
        if !extents.contains(p.x, p.y) {
            return Err(Error::OutOfRange { x: p.x, y: p.y });
        }
    }
    if start == end {
        return Err(Error::DegenerateRoute);
    }
    let mut waypoints = vec![start];
    let mut directions = Vec::new();
    let mut current = start;
    let mut dist = start.distance(&end);
    while let Some((dir, next, d)) =
        best_step(&current, &end, step_length, |p| extents.contains(p.x, p.y))
    {
        if d >= dist {
            break;
        }
        waypoints.push(next);
        directions.push(dir);
        current = next;
        dist = d;
    }
    if waypoints.len() < 2 {
        return Err(Error::Validation(
            "no step from the start gets closer to the end".into(),
        ));
    }
    Ok(Trajectory {
        waypoints,
        directions,
        step_length,
    })
}

/// Route between uniformly drawn endpoints at least `min_separation` apart.
pub fn random_route(
    extents: Extents,
    min_separation: f64,
    step_length: f64,
    seed: u64,
) -> Result<Trajectory> {
    if min_separation.powi(2) >= extents.x.powi(2) + extents.y.powi(2) {
        return Err(Error::Config(format!(
            "min_separation {min_separation} m does not fit in the area"
        )));
    }
    let mut rng = substream(seed, "route", 0);
    loop {
        let start = Waypoint::new(rng.random::<f64>() * extents.x, rng.random::<f64>() * extents.y);
        let end = Waypoint::new(rng.random::<f64>() * extents.x, rng.random::<f64>() * extents.y);
        if start.distance(&end) < min_separation {
            continue;
        }
        match generate_route(start, end, step_length, extents) {
            Ok(t) => return Ok(t),
            Err(Error::Validation(_)) => continue,
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn area() -> Extents {
        Extents::default()
    }

    #[test]
    fn collinear_directions() {
        let o = Waypoint::new(0.0, 0.0);
        assert_eq!(pick_direction(&o, &Waypoint::new(1000.0, 0.0), 50.0).index(), 0);
        assert_eq!(pick_direction(&o, &Waypoint::new(-300.0, -300.0), 50.0).index(), 5);
    }

    #[test]
    fn bearing_halfway_between_directions_takes_lower_index() {
        let a = std::f64::consts::PI / 8.0;
        let dest = Waypoint::new(1000.0 * a.cos(), 1000.0 * a.sin());
        assert_eq!(pick_direction(&Waypoint::new(0.0, 0.0), &dest, 50.0).index(), 0);
    }

    #[test]
    fn axis_route_stops_before_overshoot() {
        let t = generate_route(Waypoint::new(0.0, 0.0), Waypoint::new(120.0, 0.0), 50.0, area())
            .unwrap();
        assert_eq!(
            t.waypoints(),
            &[
                Waypoint::new(0.0, 0.0),
                Waypoint::new(50.0, 0.0),
                Waypoint::new(100.0, 0.0)
            ]
        );
    }

    #[test]
    fn diagonal_route_hand_simulated() {
        // Distances to (100,100): 141.42 -> 91.42 -> 41.42 -> 8.58, then every
        // neighbor of (106.07,106.07) is at least 41.4 m away.
        let t = generate_route(Waypoint::new(0.0, 0.0), Waypoint::new(100.0, 100.0), 50.0, area())
            .unwrap();
        let s = 50.0 * std::f64::consts::FRAC_1_SQRT_2;
        let expect = [0.0, s, 2.0 * s, 3.0 * s];
        assert_eq!(t.len(), 4);
        for (p, e) in t.waypoints().iter().zip(expect) {
            assert!((p.x - e).abs() < 1e-9 && (p.y - e).abs() < 1e-9);
        }
        assert!((t.waypoints()[3].x - 106.066_017_178).abs() < 1e-6);
    }

    #[test]
    fn degenerate_route_rejected() {
        let p = Waypoint::new(10.0, 10.0);
        assert!(matches!(generate_route(p, p, 50.0, area()), Err(Error::DegenerateRoute)));
    }

    #[test]
    fn random_routes_are_seeded() {
        let a = random_route(area(), MIN_SEPARATION, STEP_LENGTH, 42).unwrap();
        let b = random_route(area(), MIN_SEPARATION, STEP_LENGTH, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_thousand_routes() {
        for seed in 0..2000 {
            let t = random_route(area(), MIN_SEPARATION, STEP_LENGTH, seed).unwrap();
            assert!(t.len() >= 2);
            assert!(t.waypoints().iter().all(|p| area().contains(p.x, p.y)));
        }
    }

    #[test]
    fn route_csv_round_trip() {
        let t = random_route(area(), MIN_SEPARATION, STEP_LENGTH, 9).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.directions(), t.directions());
        assert_eq!(back.len(), t.len());
        assert!((back.step_length() - 50.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn route_invariants(sx in 0.0..5000.0f64, sy in 0.0..6000.0f64,
                            ex in 0.0..5000.0f64, ey in 0.0..6000.0f64) {
            let (start, end) = (Waypoint::new(sx, sy), Waypoint::new(ex, ey));
            prop_assume!(start.distance(&end) > 60.0);
            let t = generate_route(start, end, 50.0, area()).unwrap();
            let d0 = start.distance(&end);
            let bound = (d0 / (50.0 * (std::f64::consts::PI / 8.0).cos())).ceil() as usize + 1;
            prop_assert!(t.len() <= bound);
            let mut prev = f64::INFINITY;
            for p in t.waypoints() {
                let d = p.distance(&end);
                prop_assert!(d < prev);
                prev = d;
                prop_assert!(area().contains(p.x, p.y));
            }
            for (pair, dir) in t.waypoints().windows(2).zip(t.directions()) {
                let (dx, dy) = (pair[1].x - pair[0].x, pair[1].y - pair[0].y);
                prop_assert!(((dx.hypot(dy)) - 50.0).abs() < 1e-9);
                let ang = dy.atan2(dx).rem_euclid(std::f64::consts::TAU);
                let diff = (ang - dir.angle()).abs();
                prop_assert!(diff.min(std::f64::consts::TAU - diff) < 1e-9);
            }
        }
    }
}
