//! Tabular Q-learning over quantized drone states.
//!
//! A table row is keyed by the quantized position, the heading and the serving
//! cell, and holds one value per candidate index. Missing rows read as zero.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{DroneState, HandoverEnv, RewardWeights};
use crate::radio_env::CellId;
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey {
    pub bin_x: usize,
    pub bin_y: usize,
    pub direction: u8,
    pub cell: CellId,
}

/// Default key grid spacing in meters: half a route step, so consecutive
/// waypoints always fall in different key bins.
pub const KEY_RESOLUTION: f64 = 25.0;

impl StateKey {
    /// Key of `state` on a square grid of `resolution` meters.
    pub fn of(state: &DroneState, resolution: f64) -> Self {
        Self {
            bin_x: (state.x / resolution).floor() as usize,
            bin_y: (state.y / resolution).floor() as usize,
            direction: state.direction.index(),
            cell: state.serving_cell,
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    k: usize,
    resolution: f64,
    values: HashMap<StateKey, Vec<f64>>,
}

impl QTable {
    pub fn new(k: usize, resolution: f64) -> Self {
        assert!(k > 0 && resolution > 0.0);
        Self {
            k,
            resolution,
            values: HashMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn key(&self, state: &DroneState) -> StateKey {
        StateKey::of(state, self.resolution)
    }

    /// Number of stored rows.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, key: &StateKey) -> Vec<f64> {
        self.values
            .get(key)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.k])
    }

    pub fn q(&self, key: &StateKey, action: usize) -> f64 {
        assert!(action < self.k);
        self.values.get(key).map_or(0.0, |row| row[action])
    }

    pub fn max_q(&self, key: &StateKey) -> f64 {
        self.values
            .get(key)
            .map_or(0.0, |row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `Q(s,a) ← (1−α) Q(s,a) + α (r + λ max_a' Q(s',a'))`; `next = None` is terminal.
    pub fn q_update(
        &mut self,
        state: StateKey,
        action: usize,
        reward: f64,
        next: Option<StateKey>,
        alpha: f64,
        lambda: f64,
    ) -> f64 {
        assert!(action < self.k, "action {action} out of range");
        let bootstrap = next.map_or(0.0, |n| self.max_q(&n));
        let k = self.k;
        let q = &mut self.values.entry(state).or_insert_with(|| vec![0.0; k])[action];
        *q = (1.0 - alpha) * *q + alpha * (reward + lambda * bootstrap);
        *q
    }

    pub fn policy_action(&self, key: &StateKey) -> usize {
        self.values.get(key).map_or(0, |row| argmax(row))
    }

    /// Writes `bin_x,bin_y,dir,cell,q0..q{k-1}` rows sorted by key.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["bin_x", "bin_y", "dir", "cell"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..self.k).map(|a| format!("q{a}")));
        w.write_record(&header)?;
        let mut keys: Vec<&StateKey> = self.values.keys().collect();
        keys.sort();
        for key in keys {
            let mut rec = vec![
                key.bin_x.to_string(),
                key.bin_y.to_string(),
                key.direction.to_string(),
                key.cell.to_string(),
            ];
            rec.extend(self.values[key].iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, k: usize, resolution: f64) -> Result<Self> {
        let mut table = Self::new(k, resolution);
        let mut rdr = csv::Reader::from_reader(reader);
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let parse_err = |message: String| Error::Parse { line, message };
            if record.len() != 4 + k {
                return Err(parse_err(format!("expected {} fields", 4 + k)));
            }
            let int = |i: usize| -> Result<usize> {
                record[i].trim().parse().map_err(|e| parse_err(format!("{e}")))
            };
            let key = StateKey {
                bin_x: int(0)?,
                bin_y: int(1)?,
                direction: u8::try_from(int(2)?).map_err(|e| parse_err(format!("{e}")))?,
                cell: int(3)?,
            };
            let row = (4..4 + k)
                .map(|i| record[i].trim().parse::<f64>().map_err(|e| parse_err(format!("{e}"))))
                .collect::<Result<Vec<_>>>()?;
            table.values.insert(key, row);
        }
        Ok(table)
    }
}

/// Sidecar metadata stored with a saved Q-table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTableMeta {
    pub k: usize,
    pub key_resolution: f64,
    pub weights: RewardWeights,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabularConfig {
    pub episodes: usize,
    pub steps: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub key_resolution: f64,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            episodes: 120,
            steps: 1000,
            alpha: 0.5,
            lambda: 0.3,
            epsilon: 0.2,
            seed: 0,
            key_resolution: KEY_RESOLUTION,
        }
    }
}

impl TabularConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} must lie in (0, 1]", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} must lie in [0, 1)", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} must lie in [0, 1]", self.epsilon)));
        }
        if !(self.key_resolution > 0.0) {
            return Err(Error::Config("key_resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Serving cells a drone can hold at waypoint `i`: the start cell at the
/// first waypoint, otherwise the candidate set that led into `i`.
pub fn reachable_cells(env: &HandoverEnv<'_>, i: usize) -> Vec<CellId> {
    if i == 0 {
        vec![env.initial_state().serving_cell]
    } else {
        env.strongest_at(i).to_vec()
    }
}

/// True when two different reachable (waypoint, cell) states share a table key,
/// which happens when two waypoints with the same heading share a key bin.
pub fn has_aliased_states(env: &HandoverEnv<'_>, resolution: f64) -> bool {
    let mut seen = HashMap::new();
    for i in 0..env.len() {
        for cell in reachable_cells(env, i) {
            let key = StateKey::of(&env.state_at(i, cell), resolution);
            if let Some(prev) = seen.insert(key, i) {
                if prev != i {
                    return true;
                }
            }
        }
    }
    false
}

/// Uniform restart: a non-final waypoint and one of its candidate cells.
pub(crate) fn random_restart<R: Rng>(env: &HandoverEnv<'_>, rng: &mut R) -> DroneState {
    let i = rng.random_range(0..env.len() - 1);
    let cells = env.strongest_at(i);
    env.state_at(i, cells[rng.random_range(0..cells.len())])
}

fn run_episodes<R: Rng>(
    env: &HandoverEnv<'_>,
    config: &TabularConfig,
    table: &mut QTable,
    rng: &mut R,
    episodes: usize,
) {
    for _ in 0..episodes {
        let mut state = env.initial_state();
        for _ in 0..config.steps {
            if env.is_terminal(&state) {
                state = random_restart(env, rng);
            }
            let key = table.key(&state);
            let action = if rng.random::<f64>() < config.epsilon {
                rng.random_range(0..env.k())
            } else {
                table.policy_action(&key)
            };
            let out = env.step(&state, action);
            let next_key = (!out.terminal).then(|| table.key(&out.next));
            table.q_update(key, action, out.reward, next_key, config.alpha, config.lambda);
            state = out.next;
        }
    }
}

/// ε-greedy Q-learning along one route. Episodes start at the first waypoint;
/// reaching the last waypoint restarts at a random one.
pub fn train_tabular(env: &HandoverEnv<'_>, config: &TabularConfig) -> Result<QTable> {
    config.validate()?;
    let mut table = QTable::new(env.k(), config.key_resolution);
    let mut rng = substream(config.seed, "tabular", 0);
    run_episodes(env, config, &mut table, &mut rng, config.episodes);
    Ok(table)
}

/// Greedy action at every reachable (waypoint, cell) state.
pub fn greedy_actions(env: &HandoverEnv<'_>, table: &QTable) -> Vec<usize> {
    (0..env.len() - 1)
        .flat_map(|i| reachable_cells(env, i).into_iter().map(move |c| (i, c)))
        .map(|(i, c)| table.policy_action(&table.key(&env.state_at(i, c))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub table: QTable,
    pub episodes: usize,
    pub converged: bool,
}

/// Trains in blocks of `config.episodes` until one whole block leaves the greedy
/// action at every reachable state unchanged, or `max_episodes` have run.
/// The first block matches [`train_tabular`] with the same config.
pub fn train_tabular_converged(
    env: &HandoverEnv<'_>,
    config: &TabularConfig,
    max_episodes: usize,
) -> Result<Convergence> {
    config.validate()?;
    if config.episodes == 0 {
        return Err(Error::Config("episodes per block must be positive".into()));
    }
    let mut table = QTable::new(env.k(), config.key_resolution);
    let mut rng = substream(config.seed, "tabular", 0);
    run_episodes(env, config, &mut table, &mut rng, config.episodes);
    let mut episodes = config.episodes;
    let mut previous = greedy_actions(env, &table);
    while episodes + config.episodes <= max_episodes {
        run_episodes(env, config, &mut table, &mut rng, config.episodes);
        episodes += config.episodes;
        let current = greedy_actions(env, &table);
        if current == previous {
            return Ok(Convergence { table, episodes, converged: true });
        }
        previous = current;
    }
    Ok(Convergence { table, episodes, converged: false })
}

/// One pass of `q_update` over every reachable (state, action), last waypoint first.
pub fn sweep(env: &HandoverEnv<'_>, table: &mut QTable, alpha: f64, lambda: f64) {
    for i in (0..env.len() - 1).rev() {
        for cell in reachable_cells(env, i) {
            let state = env.state_at(i, cell);
            let key = table.key(&state);
            for action in 0..env.k() {
                let out = env.step(&state, action);
                let next_key = (!out.terminal).then(|| table.key(&out.next));
                table.q_update(key, action, out.reward, next_key, alpha, lambda);
            }
        }
    }
}

/// Greedy action of `table` at `state`.
pub fn table_policy(table: &QTable) -> impl Fn(&DroneState) -> usize + '_ {
    move |s| table.policy_action(&table.key(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::tests::line_fixture as line;
    use proptest::prelude::*;

    fn key(cell: CellId) -> StateKey {
        StateKey {
            bin_x: 0,
            bin_y: 0,
            direction: 0,
            cell,
        }
    }

    #[test]
    fn update_arithmetic() {
        let mut t = QTable::new(2, KEY_RESOLUTION);
        t.values.insert(key(1), vec![2.0, -1.0]);
        let q = t.q_update(key(0), 0, 1.0, Some(key(1)), 0.5, 0.3);
        assert!((q - 0.8).abs() < 1e-12);
        let q = t.q_update(key(0), 1, 1.0, Some(key(1)), 1.0, 0.3);
        assert!((q - 1.6).abs() < 1e-12);
        let before = t.q(&key(0), 0);
        assert_eq!(t.q_update(key(0), 0, 5.0, Some(key(1)), 0.0, 0.3), before);
        assert_eq!(t.q_update(key(2), 0, 5.0, None, 1.0, 0.3), 5.0);
    }

    #[test]
    fn argmax_ties_and_shift_invariance() {
        let mut t = QTable::new(3, KEY_RESOLUTION);
        t.values.insert(key(0), vec![0.1, 0.9, 0.3]);
        assert_eq!(t.policy_action(&key(0)), 1);
        assert_eq!(t.policy_action(&key(5)), 0);
        t.values.insert(key(1), vec![0.0; 3]);
        assert_eq!(t.policy_action(&key(1)), 0);
        t.values.insert(key(2), vec![10.1, 10.9, 10.3]);
        assert_eq!(t.policy_action(&key(2)), 1);
    }

    #[test]
    fn zero_episodes_gives_empty_table() {
        let (grid, traj) = line(&[&[0.9, 0.1], &[0.2, 0.8], &[0.5, 0.4]]);
        let env = HandoverEnv::new(&grid, &traj, RewardWeights::new(1.0, 1.0).unwrap(), 2).unwrap();
        let cfg = TabularConfig { episodes: 0, ..TabularConfig::default() };
        let t = train_tabular(&env, &cfg).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.row(&key(0)), vec![0.0, 0.0]);
    }

    #[test]
    fn training_is_seeded() {
        let (grid, traj) = line(&[&[0.9, 0.1, 0.3], &[0.2, 0.8, 0.5], &[0.5, 0.4, 0.6], &[0.1, 0.2, 0.3]]);
        let env = HandoverEnv::new(&grid, &traj, RewardWeights::new(1.0, 1.0).unwrap(), 2).unwrap();
        let cfg = TabularConfig { episodes: 5, steps: 50, seed: 3, ..TabularConfig::default() };
        assert_eq!(train_tabular(&env, &cfg).unwrap(), train_tabular(&env, &cfg).unwrap());
    }

    #[test]
    fn converged_training_extends_plain_training() {
        let (grid, traj) = line(&[&[0.9, 0.1, 0.3], &[0.2, 0.8, 0.5], &[0.5, 0.4, 0.6], &[0.1, 0.2, 0.3]]);
        let env = HandoverEnv::new(&grid, &traj, RewardWeights::new(1.0, 1.0).unwrap(), 2).unwrap();
        let cfg = TabularConfig { episodes: 2, steps: 50, seed: 3, ..TabularConfig::default() };
        let c = train_tabular_converged(&env, &cfg, 2).unwrap();
        assert_eq!(c.table, train_tabular(&env, &cfg).unwrap());
        assert!(!c.converged);
        let c = train_tabular_converged(&env, &cfg, 100).unwrap();
        assert!(c.converged && c.episodes >= 4);
    }

    #[test]
    fn invalid_config_rejected() {
        let (grid, traj) = line(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let env = HandoverEnv::new(&grid, &traj, RewardWeights::new(1.0, 1.0).unwrap(), 2).unwrap();
        for cfg in [
            TabularConfig { alpha: 0.0, ..TabularConfig::default() },
            TabularConfig { lambda: 1.0, ..TabularConfig::default() },
            TabularConfig { epsilon: 1.5, ..TabularConfig::default() },
        ] {
            assert!(matches!(train_tabular(&env, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn csv_round_trip() {
        let (grid, traj) = line(&[&[0.9, 0.1, 0.3], &[0.2, 0.8, 0.5], &[0.5, 0.4, 0.6]]);
        let env = HandoverEnv::new(&grid, &traj, RewardWeights::new(1.0, 9.0).unwrap(), 3).unwrap();
        let t = train_tabular(&env, &TabularConfig { episodes: 3, steps: 40, ..TabularConfig::default() })
            .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("bin_x,bin_y,dir,cell,q0,q1,q2\n"));
        assert_eq!(QTable::read_csv(buf.as_slice(), 3, KEY_RESOLUTION).unwrap(), t);
    }

    #[test]
    fn straight_route_has_no_aliasing() {
        let (grid, traj) = line(&[&[0.9, 0.1], &[0.2, 0.8], &[0.5, 0.4]]);
        let env = HandoverEnv::new(&grid, &traj, RewardWeights::new(1.0, 1.0).unwrap(), 2).unwrap();
        assert!(!has_aliased_states(&env, KEY_RESOLUTION));
        assert!(has_aliased_states(&env, 1000.0));
    }

    proptest! {
        #[test]
        fn q_values_stay_bounded(
            rsrp in proptest::collection::vec(0.0..=1.0f64, 15),
            w_ho in 0.0..5.0f64, w_rsrp in 0.1..5.0f64, lambda in 0.0..0.9f64, seed in 0u64..100,
        ) {
            let bins: Vec<&[f64]> = rsrp.chunks(3).collect();
            let (grid, traj) = line(&bins);
            let env = HandoverEnv::new(&grid, &traj, RewardWeights::new(w_ho, w_rsrp).unwrap(), 2).unwrap();
            let cfg = TabularConfig { episodes: 4, steps: 60, lambda, epsilon: 0.5, seed, ..TabularConfig::default() };
            let t = train_tabular(&env, &cfg).unwrap();
            let bound = w_ho.max(w_rsrp) / (1.0 - lambda) + w_rsrp;
            for row in t.values.values() {
                for q in row {
                    prop_assert!(q.abs() <= bound);
                }
            }
        }
    }
}
