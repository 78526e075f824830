//! Flight simulation, metrics, the strongest-cell baseline and an exact DP oracle.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::mdp::{reward, DroneState, HandoverEnv, RewardWeights};
use crate::radio_env::{CellId, RsrpGrid};
use crate::trajectory::Trajectory;
use crate::Result;

/// Quantiles reported in summaries.
pub const PERCENTILES: [f64; 4] = [0.05, 0.50, 0.90, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightMetrics {
    pub ho_count: usize,
    pub cells: Vec<CellId>,
    pub rsrp_norm: Vec<f64>,
    pub rsrp_dbm: Vec<f64>,
}

impl FlightMetrics {
    /// Metrics of flying `traj` while served by `cells[i]` at waypoint `i`.
    pub fn from_cells(grid: &RsrpGrid, traj: &Trajectory, cells: Vec<CellId>) -> Result<Self> {
        assert_eq!(cells.len(), traj.len(), "one cell per waypoint");
        let mut rsrp_norm = Vec::with_capacity(cells.len());
        let mut rsrp_dbm = Vec::with_capacity(cells.len());
        for (p, &c) in traj.waypoints().iter().zip(&cells) {
            rsrp_norm.push(grid.rsrp_at(p.x, p.y, c)?);
            rsrp_dbm.push(grid.raw_at(p.x, p.y, c)?);
        }
        Ok(Self {
            ho_count: count_handovers(&cells),
            cells,
            rsrp_norm,
            rsrp_dbm,
        })
    }

    pub fn mean_rsrp_dbm(&self) -> f64 {
        self.rsrp_dbm.iter().sum::<f64>() / self.rsrp_dbm.len() as f64
    }

    pub fn p05_rsrp_dbm(&self) -> f64 {
        EmpiricalCdf::new(self.rsrp_dbm.clone()).quantile(0.05)
    }
}

pub fn count_handovers(cells: &[CellId]) -> usize {
    cells.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Always served by the strongest cell.
pub fn baseline_flight(grid: &RsrpGrid, traj: &Trajectory) -> Result<FlightMetrics> {
    let cells = traj
        .waypoints()
        .iter()
        .map(|p| Ok(grid.strongest_cells(p.x, p.y, 1)?[0]))
        .collect::<Result<Vec<_>>>()?;
    FlightMetrics::from_cells(grid, traj, cells)
}

/// Cell sequence produced by `policy` from the strongest cell at the first waypoint.
pub fn policy_cells(env: &HandoverEnv<'_>, policy: impl Fn(&DroneState) -> usize) -> Vec<CellId> {
    let mut s = env.initial_state();
    let mut cells = vec![s.serving_cell];
    while !env.is_terminal(&s) {
        s = env.step(&s, policy(&s)).next;
        cells.push(s.serving_cell);
    }
    cells
}

pub fn run_flight(
    env: &HandoverEnv<'_>,
    policy: impl Fn(&DroneState) -> usize,
) -> Result<FlightMetrics> {
    FlightMetrics::from_cells(env.grid(), env.trajectory(), policy_cells(env, policy))
}

/// `Σ_i λ^i R_i` of the transitions implied by `cells`, using each waypoint's
/// normalized RSRP. `cells[0]` is the starting cell.
pub fn discounted_return(
    cells: &[CellId],
    rsrp: impl Fn(usize, CellId) -> f64,
    weights: &RewardWeights,
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for i in 1..cells.len() {
        total += discount * reward(cells[i - 1], cells[i], rsrp(i, cells[i]), weights);
        discount *= lambda;
    }
    total
}

/// Exact solution of the finite-horizon handover problem on one route.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// `values[i][c]`: optimal discounted return from waypoint `i` served by `c`.
    pub values: Vec<Vec<f64>>,
    /// `actions[i][c]`: optimal action index there; empty at the last waypoint.
    pub actions: Vec<Vec<usize>>,
    pub flight: FlightMetrics,
}

impl OracleSolution {
    /// Optimal value from the initial state.
    pub fn value(&self) -> f64 {
        self.values[0][self.flight.cells[0]]
    }
}

/// Backward induction over every (waypoint, serving cell) pair.
pub fn dp_oracle(env: &HandoverEnv<'_>, lambda: f64) -> Result<OracleSolution> {
    let l = env.len();
    let n = env.n_cells();
    let w = env.weights();
    let mut values = vec![vec![0.0; n]; l];
    let mut actions = vec![Vec::new(); l];
    for i in (0..l - 1).rev() {
        let cands = env.candidates(i)?;
        let rsrp = env.rsrp(i + 1);
        let mut v_i = vec![0.0; n];
        let mut a_i = vec![0; n];
        for c in 0..n {
            let mut best = f64::NEG_INFINITY;
            for (a, &c2) in cands.iter().enumerate() {
                let q = reward(c, c2, rsrp[c2], &w) + lambda * values[i + 1][c2];
                if q > best {
                    best = q;
                    a_i[c] = a;
                }
            }
            v_i[c] = best;
        }
        values[i] = v_i;
        actions[i] = a_i;
    }
    let cells = policy_cells(env, |s| actions[s.waypoint_index][s.serving_cell]);
    let flight = FlightMetrics::from_cells(env.grid(), env.trajectory(), cells)?;
    Ok(OracleSolution {
        values,
        actions,
        flight,
    })
}

/// Right-continuous empirical distribution of finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Self {
        assert!(samples.iter().all(|v| v.is_finite()), "CDF samples must be finite");
        samples.sort_by(f64::total_cmp);
        Self { sorted: samples }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `F(x)`: fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest sample `x` with `F(x) >= p`; NaN when empty.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        if n == 0 {
            return f64::NAN;
        }
        // The tolerance keeps p·n that rounds just above an integer on that integer.
        let rank = (p.clamp(0.0, 1.0) * n as f64 - 1e-9).ceil().max(1.0) as usize;
        self.sorted[rank.clamp(1, n) - 1]
    }

    /// Distinct sample values with the CDF at each.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = f,
                _ => out.push((v, f)),
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["value", "cumulative_probability"])?;
        for (v, f) in self.points() {
            w.write_record([v.to_string(), f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// HO ratio of one flight; `None` when the baseline had no HOs but the scheme did.
pub fn ho_ratio(proposed: usize, baseline: usize) -> Option<f64> {
    match (proposed, baseline) {
        (0, 0) => Some(1.0),
        (_, 0) => None,
        (p, b) => Some(p as f64 / b as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub flights: Vec<FlightMetrics>,
    /// Per flight, aligned with `flights`.
    pub ho_ratios: Vec<Option<f64>>,
    pub excluded_ratios: usize,
    pub avg_ho_count: f64,
    pub avg_baseline_ho_count: f64,
    pub ho_count_cdf: EmpiricalCdf,
    pub ho_ratio_cdf: EmpiricalCdf,
    /// Pooled per-waypoint serving RSRP in dBm.
    pub rsrp_cdf: EmpiricalCdf,
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    v.sum::<f64>() / n as f64
}

pub fn aggregate(proposed: &[FlightMetrics], baseline: &[FlightMetrics]) -> EvalSummary {
    assert_eq!(proposed.len(), baseline.len(), "flight lists must be route-aligned");
    let ho_ratios: Vec<Option<f64>> = proposed
        .iter()
        .zip(baseline)
        .map(|(p, b)| {
            assert_eq!(p.cells.len(), b.cells.len(), "flight lists must be route-aligned");
            ho_ratio(p.ho_count, b.ho_count)
        })
        .collect();
    EvalSummary {
        flights: proposed.to_vec(),
        excluded_ratios: ho_ratios.iter().filter(|r| r.is_none()).count(),
        ho_ratio_cdf: EmpiricalCdf::new(ho_ratios.iter().flatten().copied().collect()),
        ho_ratios,
        avg_ho_count: mean(proposed.iter().map(|f| f.ho_count as f64)),
        avg_baseline_ho_count: mean(baseline.iter().map(|f| f.ho_count as f64)),
        ho_count_cdf: EmpiricalCdf::new(proposed.iter().map(|f| f.ho_count as f64).collect()),
        rsrp_cdf: EmpiricalCdf::new(
            proposed.iter().flat_map(|f| f.rsrp_dbm.iter().copied()).collect(),
        ),
    }
}

/// Percentile table keyed by probability, e.g. `"0.05"`.
fn percentiles(cdf: &EmpiricalCdf) -> BTreeMap<String, Option<f64>> {
    PERCENTILES
        .iter()
        .map(|&p| (format!("{p:.2}"), Some(cdf.quantile(p)).filter(|v| v.is_finite())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryJson {
    pub scheme: String,
    pub w_ho: f64,
    pub w_rsrp: f64,
    pub flights: usize,
    pub avg_ho_count: Option<f64>,
    pub avg_baseline_ho_count: Option<f64>,
    pub avg_ho_ratio_of_means: Option<f64>,
    pub excluded_ratios: usize,
    pub ho_count: BTreeMap<String, Option<f64>>,
    pub ho_ratio: BTreeMap<String, Option<f64>>,
    pub rsrp_dbm: BTreeMap<String, Option<f64>>,
}

impl EvalSummary {
    pub fn to_json(&self, scheme: &str, weights: &RewardWeights) -> SummaryJson {
        let finite = |v: f64| Some(v).filter(|v| v.is_finite());
        SummaryJson {
            scheme: scheme.to_string(),
            w_ho: weights.w_ho,
            w_rsrp: weights.w_rsrp,
            flights: self.flights.len(),
            avg_ho_count: finite(self.avg_ho_count),
            avg_baseline_ho_count: finite(self.avg_baseline_ho_count),
            avg_ho_ratio_of_means: finite(self.avg_ho_count / self.avg_baseline_ho_count),
            excluded_ratios: self.excluded_ratios,
            ho_count: percentiles(&self.ho_count_cdf),
            ho_ratio: percentiles(&self.ho_ratio_cdf),
            rsrp_dbm: percentiles(&self.rsrp_cdf),
        }
    }
}

pub const METRICS_HEADER: [&str; 8] = [
    "flight_id",
    "scheme",
    "w_ho",
    "w_rsrp",
    "ho_count",
    "ho_ratio",
    "mean_rsrp_dbm",
    "p05_rsrp_dbm",
];

/// One line of the metrics CSV; `ho_ratio` is blank when excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub flight_id: usize,
    pub scheme: String,
    pub weights: RewardWeights,
    pub ho_count: usize,
    pub ho_ratio: Option<f64>,
    pub mean_rsrp_dbm: f64,
    pub p05_rsrp_dbm: f64,
}

impl MetricsRow {
    pub fn new(
        flight_id: usize,
        scheme: &str,
        weights: RewardWeights,
        flight: &FlightMetrics,
        baseline: &FlightMetrics,
    ) -> Self {
        Self {
            flight_id,
            scheme: scheme.to_string(),
            weights,
            ho_count: flight.ho_count,
            ho_ratio: ho_ratio(flight.ho_count, baseline.ho_count),
            mean_rsrp_dbm: flight.mean_rsrp_dbm(),
            p05_rsrp_dbm: flight.p05_rsrp_dbm(),
        }
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.flight_id.to_string(),
            r.scheme.clone(),
            r.weights.w_ho.to_string(),
            r.weights.w_rsrp.to_string(),
            r.ho_count.to_string(),
            r.ho_ratio.map_or_else(String::new, |v| v.to_string()),
            r.mean_rsrp_dbm.to_string(),
            r.p05_rsrp_dbm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::tests::line_fixture;
    use crate::tabular::{sweep, table_policy, QTable};
    use proptest::prelude::*;

    fn w(a: f64, b: f64) -> RewardWeights {
        RewardWeights::new(a, b).unwrap()
    }

    /// Best discounted return over every candidate sequence, by brute force.
    fn enumerate(env: &HandoverEnv<'_>, lambda: f64) -> (f64, Vec<CellId>) {
        let start = env.initial_state().serving_cell;
        let steps = env.len() - 1;
        let k = env.k();
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for code in 0..k.pow(steps as u32) {
            let mut cells = vec![start];
            let mut c = code;
            for i in 0..steps {
                cells.push(env.candidates(i).unwrap()[c % k]);
                c /= k;
            }
            let v = discounted_return(&cells, |i, cell| env.rsrp(i)[cell], &env.weights(), lambda);
            if v > best.0 {
                best = (v, cells);
            }
        }
        best
    }

    #[test]
    fn change_count() {
        assert_eq!(count_handovers(&[0, 0, 1, 1, 0]), 2);
        assert_eq!(count_handovers(&[3]), 0);
    }

    #[test]
    fn three_waypoint_oracle() {
        // Cells A=0, B=1; cell 2 is never a candidate.
        let (grid, traj) = line_fixture(&[&[0.9, 0.5, 0.0], &[0.9, 0.8, 0.0], &[0.3, 0.9, 0.0]]);
        let env = HandoverEnv::new(&grid, &traj, w(1.0, 1.0), 2).unwrap();
        let sol = dp_oracle(&env, 0.3).unwrap();
        assert_eq!(sol.flight.cells, vec![0, 0, 0]);
        assert!((sol.value() - 0.99).abs() < 1e-12);
        let (v, cells) = enumerate(&env, 0.3);
        assert_eq!(cells, sol.flight.cells);
        assert!((v - sol.value()).abs() < 1e-12);
    }

    #[test]
    fn tabular_sweeps_reach_oracle_values() {
        let (grid, traj) = line_fixture(&[&[0.9, 0.5, 0.0], &[0.9, 0.8, 0.0], &[0.3, 0.9, 0.0]]);
        let env = HandoverEnv::new(&grid, &traj, w(1.0, 1.0), 2).unwrap();
        let mut table = QTable::new(2, crate::tabular::KEY_RESOLUTION);
        sweep(&env, &mut table, 1.0, 0.3);
        let key = table.key(&env.initial_state());
        assert!((table.max_q(&key) - 0.99).abs() < 1e-12);
        assert_eq!(run_flight(&env, table_policy(&table)).unwrap().cells, vec![0, 0, 0]);
    }

    #[test]
    fn oracle_special_cases() {
        let bins: &[&[f64]] = &[&[0.2, 0.7, 0.4], &[0.9, 0.1, 0.5], &[0.3, 0.6, 0.8], &[0.5, 0.4, 0.2]];
        let (grid, traj) = line_fixture(bins);
        let env = HandoverEnv::new(&grid, &traj, w(0.0, 2.0), 2).unwrap();
        let sol = dp_oracle(&env, 0.3).unwrap();
        assert!(sol.actions[..3].iter().all(|row| row.iter().all(|&a| a == 0)));
        let expect: f64 = (1..4)
            .map(|i| 0.3f64.powi(i as i32 - 1) * 2.0 * bins[i].iter().copied().fold(0.0, f64::max))
            .sum();
        assert!((sol.value() - expect).abs() < 1e-12);

        let env = HandoverEnv::new(&grid, &traj, w(0.3, 1.0), 3).unwrap();
        let sol = dp_oracle(&env, 0.0).unwrap();
        for i in 0..3 {
            for c in 0..3 {
                let cands = env.candidates(i).unwrap();
                let best = cands
                    .iter()
                    .map(|&c2| reward(c, c2, env.rsrp(i + 1)[c2], &env.weights()))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(sol.values[i][c], best);
            }
        }
    }

    #[test]
    fn action_zero_is_baseline() {
        let (grid, traj) = line_fixture(&[&[0.2, 0.7, 0.4], &[0.9, 0.1, 0.5], &[0.3, 0.6, 0.8]]);
        let env = HandoverEnv::new(&grid, &traj, w(1.0, 1.0), 2).unwrap();
        let f = run_flight(&env, |_| 0).unwrap();
        let b = baseline_flight(&grid, &traj).unwrap();
        assert_eq!(f, b);
        assert_eq!(b.cells, vec![1, 0, 2]);
        assert_eq!(b.ho_count, 2);
        assert!(f.rsrp_norm.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sticky_policy_never_exceeds_baseline() {
        // Cell 0 stays within the top two throughout.
        let (grid, traj) = line_fixture(&[
            &[0.8, 0.7, 0.1],
            &[0.6, 0.9, 0.2],
            &[0.7, 0.2, 0.9],
            &[0.5, 0.8, 0.1],
            &[0.9, 0.1, 0.3],
        ]);
        let env = HandoverEnv::new(&grid, &traj, w(1.0, 1.0), 2).unwrap();
        let sticky = |s: &DroneState| {
            env.candidates(s.waypoint_index)
                .unwrap()
                .iter()
                .position(|&c| c == s.serving_cell)
                .unwrap_or(0)
        };
        let f = run_flight(&env, sticky).unwrap();
        let b = baseline_flight(&grid, &traj).unwrap();
        assert_eq!(f.ho_count, 0);
        assert_eq!(b.ho_count, 4);
    }

    #[test]
    fn cdf_examples() {
        let cdf = EmpiricalCdf::new(vec![4.0, 2.0, 3.0, 1.0]);
        assert_eq!(cdf.eval(2.0), 0.5);
        assert_eq!(cdf.eval(0.5), 0.0);
        assert_eq!(cdf.eval(4.0), 1.0);
        assert_eq!(cdf.quantile(0.5), 2.0);
        assert_eq!(cdf.quantile(0.51), 3.0);
        assert_eq!(cdf.quantile(0.0), 1.0);
        assert_eq!(cdf.quantile(1.0), 4.0);
        let c = EmpiricalCdf::new((1..=20).map(f64::from).collect());
        assert_eq!(c.quantile(0.05), 1.0);
        assert_eq!(c.quantile(0.95), 19.0);
        assert_eq!(EmpiricalCdf::new(vec![1.0, 1.0, 2.0]).points(), vec![(1.0, 2.0 / 3.0), (2.0, 1.0)]);
    }

    #[test]
    fn ratio_rules() {
        assert_eq!(ho_ratio(5, 10), Some(0.5));
        assert_eq!(ho_ratio(0, 0), Some(1.0));
        assert_eq!(ho_ratio(2, 0), None);
        let f = |n: usize| FlightMetrics {
            ho_count: n,
            cells: vec![0; 3],
            rsrp_norm: vec![0.5; 3],
            rsrp_dbm: vec![-90.0; 3],
        };
        let s = aggregate(&[f(5), f(0), f(1)], &[f(10), f(0), f(0)]);
        assert_eq!(s.ho_ratios, vec![Some(0.5), Some(1.0), None]);
        assert_eq!(s.excluded_ratios, 1);
        assert_eq!(s.ho_ratio_cdf.len(), 2);
        assert_eq!(s.avg_ho_count, 2.0);
    }

    #[test]
    fn empty_metrics_file_has_header() {
        let mut buf = Vec::new();
        write_metrics_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "flight_id,scheme,w_ho,w_rsrp,ho_count,ho_ratio,mean_rsrp_dbm,p05_rsrp_dbm\n"
        );
    }

    proptest! {
        #[test]
        fn oracle_matches_enumeration(
            rsrp in proptest::collection::vec(0.0..=1.0f64, 24),
            l in 2usize..=6, k in 1usize..=3,
            w_ho in 0.0..3.0f64, w_rsrp in 0.1..3.0f64, lambda in 0.0..0.95f64,
        ) {
            let bins: Vec<&[f64]> = rsrp.chunks(4).take(l).collect();
            let (grid, traj) = line_fixture(&bins);
            let env = HandoverEnv::new(&grid, &traj, w(w_ho, w_rsrp), k).unwrap();
            let sol = dp_oracle(&env, lambda).unwrap();
            let (best, _) = enumerate(&env, lambda);
            prop_assert!((sol.value() - best).abs() <= 1e-12);
            let achieved = discounted_return(&sol.flight.cells, |i, c| env.rsrp(i)[c], &env.weights(), lambda);
            prop_assert!((achieved - best).abs() <= 1e-12);
            let base = baseline_flight(&grid, &traj).unwrap();
            let vb = discounted_return(&base.cells, |i, c| env.rsrp(i)[c], &env.weights(), lambda);
            prop_assert!(vb <= sol.value() + 1e-12);
        }

        #[test]
        fn cdf_is_monotone(samples in proptest::collection::vec(-100.0..100.0f64, 1..50), probes in proptest::collection::vec(-120.0..120.0f64, 10)) {
            let cdf = EmpiricalCdf::new(samples);
            let mut p = probes;
            p.sort_by(f64::total_cmp);
            let f: Vec<f64> = p.iter().map(|&x| cdf.eval(x)).collect();
            prop_assert!(f.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
            for q in [0.05, 0.5, 0.9, 0.95] {
                let x = cdf.quantile(q);
                prop_assert!(cdf.eval(x) >= q);
            }
        }
    }
}
