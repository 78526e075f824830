//! The handover decision process along a fixed trajectory.
//!
//! A state is the drone's waypoint (position and heading) plus its serving
//! cell. The action picks an index into the candidate set: the `k` strongest
//! cells at the *next* waypoint, strongest first. The reward trades a
//! handover penalty against the normalized RSRP of the chosen cell.

use serde::{Deserialize, Serialize};

use crate::radio_env::{CellId, RsrpGrid};
use crate::trajectory::{Direction, Trajectory};
use crate::{Error, Result};

/// Default number of candidate cells per decision.
pub const DEFAULT_K: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_ho: f64,
    pub w_rsrp: f64,
}

impl RewardWeights {
    pub fn new(w_ho: f64, w_rsrp: f64) -> Result<Self> {
        if !(w_ho.is_finite() && w_rsrp.is_finite()) || w_ho < 0.0 || w_rsrp < 0.0 {
            return Err(Error::Config(format!(
                "weights must be finite and nonnegative, got {w_ho}:{w_rsrp}"
            )));
        }
        if w_ho + w_rsrp <= 0.0 {
            return Err(Error::Config("w_ho and w_rsrp cannot both be zero".into()));
        }
        Ok(Self { w_ho, w_rsrp })
    }

    /// Parses `"w_ho:w_rsrp"`, e.g. `"1:9"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("weight pair `{s}` must look like 1:9")))?;
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("weight pair `{s}`: {e}")))
        };
        Self::new(num(a)?, num(b)?)
    }

    /// `w_ho / w_rsrp`, infinite when `w_rsrp` is zero.
    pub fn ratio(&self) -> f64 {
        self.w_ho / self.w_rsrp
    }
}

impl std::fmt::Display for RewardWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.w_ho, self.w_rsrp)
    }
}

/// Position, heading and serving cell at one waypoint of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneState {
    pub x: f64,
    pub y: f64,
    pub direction: Direction,
    pub serving_cell: CellId,
    pub waypoint_index: usize,
}

/// Candidate cells at the next waypoint, strongest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub cells: Vec<CellId>,
}

/// `k` strongest cells at waypoint `waypoint_index + 1`.
pub fn candidates(
    grid: &RsrpGrid,
    trajectory: &Trajectory,
    waypoint_index: usize,
    k: usize,
) -> Result<CandidateSet> {
    let next = trajectory
        .waypoints()
        .get(waypoint_index + 1)
        .ok_or(Error::Terminal(waypoint_index))?;
    Ok(CandidateSet {
        cells: grid.strongest_cells(next.x, next.y, k)?,
    })
}

/// `-w_ho * [chosen != current] + w_rsrp * rsrp_next`.
pub fn reward(current: CellId, chosen: CellId, rsrp_next: f64, weights: &RewardWeights) -> f64 {
    let handover = if chosen != current { 1.0 } else { 0.0 };
    -weights.w_ho * handover + weights.w_rsrp * rsrp_next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub next: DroneState,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
struct WaypointInfo {
    rsrp: Vec<f64>,
    strongest: Vec<CellId>,
    bin: (usize, usize),
}

/// Deterministic handover environment over one trajectory.
///
/// Per-waypoint RSRP vectors and candidate lists are resolved once at
/// construction; stepping is a table lookup.
#[derive(Debug, Clone)]
pub struct HandoverEnv<'a> {
    grid: &'a RsrpGrid,
    trajectory: &'a Trajectory,
    weights: RewardWeights,
    k: usize,
    info: Vec<WaypointInfo>,
}

impl<'a> HandoverEnv<'a> {
    pub fn new(
        grid: &'a RsrpGrid,
        trajectory: &'a Trajectory,
        weights: RewardWeights,
        k: usize,
    ) -> Result<Self> {
        let info = trajectory
            .waypoints()
            .iter()
            .map(|p| {
                let (bx, by) = grid.bin_of(p.x, p.y)?;
                Ok(WaypointInfo {
                    rsrp: grid.bin_normalized(bx, by).to_vec(),
                    strongest: grid.strongest_in_bin(bx, by, k)?,
                    bin: (bx, by),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            trajectory,
            weights,
            k,
            info,
        })
    }

    pub fn grid(&self) -> &'a RsrpGrid {
        self.grid
    }

    pub fn trajectory(&self) -> &'a Trajectory {
        self.trajectory
    }

    pub fn weights(&self) -> RewardWeights {
        self.weights
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    /// Number of waypoints `l`.
    pub fn len(&self) -> usize {
        self.info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.info.is_empty()
    }

    pub fn is_terminal(&self, state: &DroneState) -> bool {
        state.waypoint_index + 1 >= self.len()
    }

    /// Strongest cell at the first waypoint.
    pub fn initial_state(&self) -> DroneState {
        self.state_at(0, self.info[0].strongest[0])
    }

    pub fn state_at(&self, waypoint_index: usize, serving_cell: CellId) -> DroneState {
        state_at(self.trajectory, waypoint_index, serving_cell)
    }

    /// The action set at `waypoint_index`: strongest cells at the next waypoint.
    pub fn candidates(&self, waypoint_index: usize) -> Result<&[CellId]> {
        self.info
            .get(waypoint_index + 1)
            .map(|w| w.strongest.as_slice())
            .ok_or(Error::Terminal(waypoint_index))
    }

    /// The `k` strongest cells at waypoint `i` itself.
    pub fn strongest_at(&self, i: usize) -> &[CellId] {
        &self.info[i].strongest
    }

    /// Normalized RSRP of every cell at waypoint `i`.
    pub fn rsrp(&self, i: usize) -> &[f64] {
        &self.info[i].rsrp
    }

    pub fn bin(&self, i: usize) -> (usize, usize) {
        self.info[i].bin
    }

    /// Applies `action`; panics if the state is terminal or the action is out of range.
    pub fn step(&self, state: &DroneState, action: usize) -> StepResult {
        assert!(action < self.k, "action {action} out of range 0..{}", self.k);
        let i = state.waypoint_index;
        assert!(i + 1 < self.len(), "step from terminal waypoint {i}");
        let next_info = &self.info[i + 1];
        let chosen = next_info.strongest[action];
        let r = reward(state.serving_cell, chosen, next_info.rsrp[chosen], &self.weights);
        let next = self.state_at(i + 1, chosen);
        StepResult {
            next,
            reward: r,
            terminal: i + 2 == self.len(),
        }
    }
}

fn state_at(trajectory: &Trajectory, waypoint_index: usize, serving_cell: CellId) -> DroneState {
    let p = trajectory.waypoints()[waypoint_index];
    DroneState {
        x: p.x,
        y: p.y,
        direction: trajectory.heading(waypoint_index),
        serving_cell,
        waypoint_index,
    }
}

/// One-shot step without a prebuilt environment.
pub fn step(
    state: &DroneState,
    action: usize,
    grid: &RsrpGrid,
    trajectory: &Trajectory,
    weights: &RewardWeights,
    k: usize,
) -> Result<StepResult> {
    let cands = candidates(grid, trajectory, state.waypoint_index, k)?;
    assert!(action < k, "action {action} out of range 0..{k}");
    let chosen = cands.cells[action];
    let next_p = trajectory.waypoints()[state.waypoint_index + 1];
    let rsrp = grid.rsrp_at(next_p.x, next_p.y, chosen)?;
    Ok(StepResult {
        next: state_at(trajectory, state.waypoint_index + 1, chosen),
        reward: reward(state.serving_cell, chosen, rsrp, weights),
        terminal: state.waypoint_index + 2 == trajectory.len(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::radio_env::Extents;
    use crate::trajectory::{generate_route, Waypoint};

    /// A straight 3-waypoint route along x over a 3×1 grid with the given per-bin RSRPs.
    pub(crate) fn line_fixture(bins: &[&[f64]]) -> (RsrpGrid, Trajectory) {
        let n_cells = bins[0].len();
        let raw: Vec<f64> = bins.iter().flat_map(|b| b.iter().copied()).collect();
        let w = bins.len() as f64 * 50.0;
        let grid =
            RsrpGrid::from_raw(Extents::new(w, 50.0), 50.0, n_cells, raw, Some((0.0, 1.0)))
                .unwrap();
        let traj = generate_route(
            Waypoint::new(25.0, 25.0),
            Waypoint::new(w - 25.0, 25.0),
            50.0,
            grid.extents(),
        )
        .unwrap();
        assert_eq!(traj.len(), bins.len());
        (grid, traj)
    }

    #[test]
    fn candidates_sorted_descending() {
        let (grid, traj) = line_fixture(&[
            &[0.5; 7],
            &[0.1, 0.9, 0.4, 0.8, 0.2, 0.3, 0.05],
        ]);
        let c = candidates(&grid, &traj, 0, 6).unwrap();
        assert_eq!(c.cells, vec![1, 3, 2, 5, 4, 0]);
        assert_eq!(candidates(&grid, &traj, 0, 1).unwrap().cells, vec![1]);
        assert!(matches!(candidates(&grid, &traj, 1, 6), Err(Error::Terminal(1))));
    }

    #[test]
    fn reward_formula() {
        let w = RewardWeights::new(1.0, 9.0).unwrap();
        assert!((reward(0, 1, 0.8, &w) - 6.2).abs() < 1e-12);
        assert!((reward(2, 2, 0.5, &w) - 4.5).abs() < 1e-12);
        let no_cost = RewardWeights::new(0.0, 1.0).unwrap();
        assert_eq!(reward(0, 1, 0.3, &no_cost), reward(1, 1, 0.3, &no_cost));
    }

    #[test]
    fn weights_validated() {
        assert!(RewardWeights::new(0.0, 0.0).is_err());
        assert!(RewardWeights::new(-1.0, 1.0).is_err());
        let w = RewardWeights::parse("5:5").unwrap();
        assert_eq!((w.w_ho, w.w_rsrp), (5.0, 5.0));
        assert!(RewardWeights::parse("1/9").is_err());
    }

    #[test]
    fn second_strongest_action() {
        // Next waypoint: cells 5,4,3,2,1,0 from strongest to weakest. Action 1 -> cell 4.
        let (grid, traj) = line_fixture(&[
            &[0.9, 0.1, 0.1, 0.1, 0.1, 0.1],
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
        ]);
        let w = RewardWeights::new(1.0, 1.0).unwrap();
        let env = HandoverEnv::new(&grid, &traj, w, 6).unwrap();
        let s = env.initial_state();
        assert_eq!(s.serving_cell, 0);
        let out = env.step(&s, 1);
        assert_eq!(out.next.serving_cell, 4);
        assert!(out.terminal);
        assert!((out.reward - (-1.0 + 0.5)).abs() < 1e-12);
        assert_eq!(env.step(&s, 1), out);
    }

    #[test]
    fn staying_on_strongest_has_no_cost() {
        let (grid, traj) = line_fixture(&[&[0.9, 0.1], &[0.7, 0.2], &[0.6, 0.3]]);
        let w = RewardWeights::new(1.0, 2.0).unwrap();
        let env = HandoverEnv::new(&grid, &traj, w, 2).unwrap();
        let out = env.step(&env.initial_state(), 0);
        assert_eq!(out.reward, 2.0 * 0.7);
        assert!(!out.terminal);
        let free = step(&env.initial_state(), 0, &grid, &traj, &w, 2).unwrap();
        assert_eq!(free, out);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn action_out_of_range_panics() {
        let (grid, traj) = line_fixture(&[&[0.9, 0.1], &[0.7, 0.2]]);
        let env = HandoverEnv::new(&grid, &traj, RewardWeights::new(1.0, 1.0).unwrap(), 2)
            .unwrap();
        env.step(&env.initial_state(), 2);
    }

    #[test]
    fn reward_bounds_and_no_cost_greedy() {
        let (grid, traj) = line_fixture(&[&[0.3, 0.6, 0.1], &[0.2, 0.9, 0.4], &[1.0, 0.0, 0.5]]);
        for w in [(0.0, 1.0), (1.0, 9.0), (5.0, 5.0), (2.0, 0.5)] {
            let weights = RewardWeights::new(w.0, w.1).unwrap();
            let env = HandoverEnv::new(&grid, &traj, weights, 3).unwrap();
            for i in 0..2 {
                for c in 0..3 {
                    let s = env.state_at(i, c);
                    let rewards: Vec<f64> = (0..3).map(|a| env.step(&s, a).reward).collect();
                    for r in &rewards {
                        assert!(*r >= -w.0 - 1e-12 && *r <= w.1 + 1e-12);
                    }
                    if w.0 == 0.0 {
                        let best = rewards
                            .iter()
                            .enumerate()
                            .fold(0, |b, (a, r)| if *r > rewards[b] { a } else { b });
                        assert_eq!(best, 0);
                    }
                }
            }
        }
    }
}
