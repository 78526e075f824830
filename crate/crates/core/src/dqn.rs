//! Deep Q-learning with experience replay and a periodically synced target network.

use std::collections::VecDeque;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{DroneState, HandoverEnv, DEFAULT_K};
use crate::nn::{MlpModel, RmsProp, RmsPropConfig};
use crate::radio_env::Extents;
use crate::rng::substream;
use crate::tabular::{argmax, random_restart};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: DroneState,
    pub a: usize,
    pub r: f64,
    pub s_next: DroneState,
    pub terminal: bool,
}

/// Bounded FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends `t`, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `m` distinct transitions drawn uniformly, or `None` while fewer than `m` are stored.
    pub fn sample<R: Rng>(&self, m: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if m == 0 || self.items.len() < m {
            return None;
        }
        Some(
            rand::seq::index::sample(rng, self.items.len(), m)
                .into_iter()
                .map(|i| &self.items[i])
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    pub steps: usize,
    /// Target sync cycle in steps.
    pub sync_every: usize,
    /// Fraction of each episode trained on immediate rewards only.
    pub phase_threshold: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub k: usize,
    pub hidden: Vec<usize>,
    pub optimizer: RmsPropConfig,
    pub replay_capacity: usize,
    pub seed: u64,
    pub target_mode: TargetMode,
    pub encoding: Encoding,
    /// Episodes between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

/// Which outputs receive a regression target for each sampled state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Only the stored action's value.
    #[default]
    TakenAction,
    /// Every action's value, from its own deterministic reward and next state.
    AllActions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 120,
            steps: 1000,
            sync_every: 20,
            phase_threshold: 0.3,
            lambda: 0.3,
            epsilon: 0.2,
            batch_size: 64,
            k: DEFAULT_K,
            hidden: vec![64, 64],
            optimizer: RmsPropConfig::default(),
            replay_capacity: 50_000,
            seed: 0,
            target_mode: TargetMode::TakenAction,
            encoding: Encoding::Candidates,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.sync_every == 0 {
            return fail("sync_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.phase_threshold) {
            return fail(format!("phase_threshold {} must lie in [0, 1]", self.phase_threshold));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return fail(format!("lambda {} must lie in [0, 1)", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail(format!("epsilon {} must lie in [0, 1]", self.epsilon));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return fail("need 0 < batch_size <= replay_capacity".into());
        }
        if self.k == 0 {
            return fail("k must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return fail("hidden layer widths must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.decay) && o.epsilon > 0.0) {
            return fail("invalid optimizer constants".into());
        }
        Ok(())
    }
}

/// Network input layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// `[x/ex, y/ey, sin θ, cos θ, one-hot(serving cell)]`.
    Position,
    /// `Position` followed by, for each candidate `j` at the next waypoint,
    /// its normalized RSRP and whether it is the serving cell.
    #[default]
    Candidates,
}

impl Encoding {
    pub fn input_dim(self, n_cells: usize, k: usize) -> usize {
        match self {
            Encoding::Position => 4 + n_cells,
            Encoding::Candidates => 4 + n_cells + 2 * k,
        }
    }
}

/// `[x/ex, y/ey, sin θ, cos θ, one-hot(serving cell)]`.
pub fn encode_state(state: &DroneState, extents: Extents, n_cells: usize) -> Vec<f64> {
    let mut v = vec![0.0; 4 + n_cells];
    encode_position(state, extents, &mut v);
    v
}

fn encode_position(state: &DroneState, extents: Extents, out: &mut [f64]) {
    let theta = state.direction.angle();
    out[0] = state.x / extents.x;
    out[1] = state.y / extents.y;
    out[2] = theta.sin();
    out[3] = theta.cos();
    out[4..].fill(0.0);
    out[4 + state.serving_cell] = 1.0;
}

/// Encodes states along one route.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEncoder {
    encoding: Encoding,
    extents: Extents,
    n_cells: usize,
    k: usize,
    /// Per waypoint: candidate cells and their RSRP at the next waypoint.
    candidates: Vec<Vec<(usize, f64)>>,
}

impl StateEncoder {
    pub fn new(env: &HandoverEnv<'_>, encoding: Encoding) -> Self {
        let candidates = (0..env.len())
            .map(|i| match env.candidates(i) {
                Ok(cells) => cells.iter().map(|&c| (c, env.rsrp(i + 1)[c])).collect(),
                Err(_) => Vec::new(),
            })
            .collect();
        Self {
            encoding,
            extents: env.grid().extents(),
            n_cells: env.n_cells(),
            k: env.k(),
            candidates,
        }
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn dim(&self) -> usize {
        self.encoding.input_dim(self.n_cells, self.k)
    }

    /// Writes the input for `state` into `out` (length [`Self::dim`]).
    pub fn encode_into(&self, state: &DroneState, out: &mut [f64]) {
        let base = 4 + self.n_cells;
        encode_position(state, self.extents, &mut out[..base]);
        if self.encoding == Encoding::Candidates {
            let extra = &mut out[base..];
            extra.fill(0.0);
            for (j, &(cell, rsrp)) in self.candidates[state.waypoint_index].iter().enumerate() {
                extra[2 * j] = rsrp;
                extra[2 * j + 1] = f64::from(u8::from(cell == state.serving_cell));
            }
        }
    }

    pub fn encode(&self, state: &DroneState) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.encode_into(state, &mut v);
        v
    }

    pub fn encode_batch<'t>(&self, states: impl ExactSizeIterator<Item = &'t DroneState>) -> Array2<f64> {
        let mut x = Array2::zeros((states.len(), self.dim()));
        for (mut row, s) in x.rows_mut().into_iter().zip(states) {
            self.encode_into(s, row.as_slice_mut().expect("row-major"));
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Pre,
    Post,
}

impl Phase {
    /// `Pre` while `step / steps < threshold`.
    pub fn at(step: usize, steps: usize, threshold: f64) -> Self {
        if steps > 0 && (step as f64) / (steps as f64) < threshold {
            Phase::Pre
        } else {
            Phase::Post
        }
    }
}

/// Regression targets for the taken actions.
pub fn compute_targets(
    batch: &[&Transition],
    target: &MlpModel,
    phase: Phase,
    lambda: f64,
    encoder: &StateEncoder,
) -> Vec<f64> {
    match phase {
        Phase::Pre => batch.iter().map(|t| t.r).collect(),
        Phase::Post => {
            let next = encoder.encode_batch(batch.iter().map(|t| &t.s_next));
            let q_next = target.forward_batch(next.view());
            batch
                .iter()
                .zip(q_next.rows())
                .map(|(t, q)| {
                    if t.terminal {
                        t.r
                    } else {
                        t.r + lambda * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                    }
                })
                .collect()
        }
    }
}

/// Targets for every action of every state in `states` (`states.len() × k`).
pub fn compute_action_targets(
    env: &HandoverEnv<'_>,
    encoder: &StateEncoder,
    states: &[DroneState],
    target: &MlpModel,
    phase: Phase,
    lambda: f64,
) -> Array2<f64> {
    let k = env.k();
    let mut y = Array2::zeros((states.len(), k));
    for (i, s) in states.iter().enumerate() {
        let outs: Vec<_> = (0..k).map(|a| env.step(s, a)).collect();
        let bootstrap: Vec<f64> = match phase {
            Phase::Pre => vec![0.0; k],
            Phase::Post => {
                let next = encoder.encode_batch(outs.iter().map(|o| &o.next));
                target
                    .forward_batch(next.view())
                    .rows()
                    .into_iter()
                    .map(|q| q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                    .collect()
            }
        };
        for (a, o) in outs.iter().enumerate() {
            y[[i, a]] = if o.terminal { o.reward } else { o.reward + lambda * bootstrap[a] };
        }
    }
    y
}

/// Greedy action of `model`; ties go to the lowest index.
pub fn predict_action(model: &MlpModel, encoder: &StateEncoder, state: &DroneState) -> usize {
    argmax(&model.forward(&encoder.encode(state)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub episode: usize,
    pub step: usize,
    pub phase: Phase,
    pub transition: Transition,
    /// Minibatch loss, absent while the buffer is underfull.
    pub loss: Option<f64>,
    pub synced: bool,
}

/// Serialized alongside a model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub episode: usize,
    pub step: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub rng_stream: u64,
    pub rng_word_pos: u128,
}

/// Step-by-step trainer over one route.
pub struct DqnTrainer<'e, 'a> {
    env: &'e HandoverEnv<'a>,
    config: TrainConfig,
    encoder: StateEncoder,
    online: MlpModel,
    target: MlpModel,
    optimizer: RmsProp,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    state: DroneState,
    episode: usize,
    step: usize,
    total_steps: u64,
    last_sync: u64,
    /// `next_values[i][slot]`: max target-network value at waypoint `i` served by
    /// its `slot`-th strongest cell. Rebuilt lazily after each sync.
    next_values: Vec<Vec<f64>>,
    values_stale: bool,
}

impl<'e, 'a> DqnTrainer<'e, 'a> {
    pub fn new(env: &'e HandoverEnv<'a>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.k != env.k() {
            return Err(Error::Config(format!(
                "config k={} differs from environment k={}",
                config.k,
                env.k()
            )));
        }
        if env.len() < 2 {
            return Err(Error::DegenerateRoute);
        }
        let encoder = StateEncoder::new(env, config.encoding);
        let online = MlpModel::init(encoder.dim(), &config.hidden, config.k, config.seed);
        let target = online.clone();
        let optimizer = RmsProp::new(&online, config.optimizer);
        let buffer = ReplayBuffer::new(config.replay_capacity);
        let rng = substream(config.seed, "dqn", 0);
        Ok(Self {
            env,
            state: env.initial_state(),
            config,
            encoder,
            online,
            target,
            optimizer,
            buffer,
            rng,
            episode: 0,
            step: 0,
            total_steps: 0,
            last_sync: 0,
            next_values: Vec::new(),
            values_stale: true,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &StateEncoder {
        &self.encoder
    }

    pub fn online(&self) -> &MlpModel {
        &self.online
    }

    pub fn target(&self) -> &MlpModel {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Steps since the target network last received the online weights.
    pub fn steps_since_sync(&self) -> u64 {
        self.total_steps - self.last_sync
    }

    pub fn is_finished(&self) -> bool {
        self.episode >= self.config.episodes
    }

    pub fn training_state(&self) -> TrainingState {
        TrainingState {
            episode: self.episode,
            step: self.step,
            total_steps: self.total_steps,
            seed: self.config.seed,
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
        }
    }

    /// Writes `model.json` (the target network) and `training_state.json` into `dir`.
    pub fn write_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.target
            .save_json(BufWriter::new(File::create(dir.join("model.json"))?))?;
        serde_json::to_writer_pretty(
            BufWriter::new(File::create(dir.join("training_state.json"))?),
            &self.training_state(),
        )?;
        Ok(())
    }

    fn choose_action(&mut self) -> usize {
        if self.rng.random::<f64>() < self.config.epsilon {
            self.rng.random_range(0..self.config.k)
        } else {
            predict_action(&self.online, &self.encoder, &self.state)
        }
    }

    fn refresh_values(&mut self) {
        let env = self.env;
        let states: Vec<DroneState> = (0..env.len())
            .flat_map(|i| env.strongest_at(i).iter().map(move |&c| env.state_at(i, c)))
            .collect();
        let x = self.encoder.encode_batch(states.iter());
        let q = self.target.forward_batch(x.view());
        let k = self.config.k;
        self.next_values = q
            .rows()
            .into_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect::<Vec<_>>()
            .chunks(k)
            .map(<[f64]>::to_vec)
            .collect();
        self.values_stale = false;
    }

    /// Discounted target-network value of `next`, zero when terminal.
    fn bootstrap(&self, next: &DroneState, terminal: bool, phase: Phase) -> f64 {
        if terminal || phase == Phase::Pre {
            return 0.0;
        }
        let i = next.waypoint_index;
        let slot = self
            .env
            .strongest_at(i)
            .iter()
            .position(|&c| c == next.serving_cell)
            .expect("next cell is a candidate");
        self.config.lambda * self.next_values[i][slot]
    }

    /// Regression targets and loss mask for `batch`, both `batch.len() × k`.
    fn batch_targets(&mut self, batch: &[Transition], phase: Phase) -> (Array2<f64>, Array2<f64>) {
        if phase == Phase::Post && self.values_stale {
            self.refresh_values();
        }
        let k = self.config.k;
        let mut targets = Array2::zeros((batch.len(), k));
        let mut mask = Array2::zeros((batch.len(), k));
        for (i, t) in batch.iter().enumerate() {
            match self.config.target_mode {
                TargetMode::TakenAction => {
                    targets[[i, t.a]] = t.r + self.bootstrap(&t.s_next, t.terminal, phase);
                    mask[[i, t.a]] = 1.0;
                }
                TargetMode::AllActions => {
                    for a in 0..k {
                        let out = self.env.step(&t.s, a);
                        targets[[i, a]] = out.reward + self.bootstrap(&out.next, out.terminal, phase);
                        mask[[i, a]] = 1.0;
                    }
                }
            }
        }
        (targets, mask)
    }

    fn learn(&mut self, phase: Phase) -> Option<f64> {
        let m = self.config.batch_size;
        if self.buffer.len() < m {
            return None;
        }
        let batch: Vec<Transition> = self.buffer.sample(m, &mut self.rng)?.into_iter().copied().collect();
        let x = self.encoder.encode_batch(batch.iter().map(|t| &t.s));
        let (targets, mask) = self.batch_targets(&batch, phase);
        let (grads, loss) = self.online.backward(x.view(), targets.view(), mask.view());
        self.optimizer.step(&mut self.online, &grads);
        Some(loss)
    }

    /// Runs one training step; panics once every episode has run.
    pub fn step(&mut self) -> StepReport {
        assert!(!self.is_finished(), "training already finished");
        let (episode, step) = (self.episode, self.step);
        if step == 0 {
            self.state = self.env.initial_state();
        } else if self.env.is_terminal(&self.state) {
            self.state = random_restart(self.env, &mut self.rng);
        }
        let phase = Phase::at(step, self.config.steps, self.config.phase_threshold);

        let action = self.choose_action();
        let out = self.env.step(&self.state, action);
        let transition = Transition {
            s: self.state,
            a: action,
            r: out.reward,
            s_next: out.next,
            terminal: out.terminal,
        };
        self.buffer.push(transition);
        self.state = out.next;

        let loss = self.learn(phase);
        self.total_steps += 1;
        let synced = self.total_steps % self.config.sync_every as u64 == 0;
        if synced {
            self.target.copy_from(&self.online);
            self.last_sync = self.total_steps;
            self.values_stale = true;
        }

        self.step += 1;
        if self.step == self.config.steps {
            self.step = 0;
            self.episode += 1;
        }
        StepReport {
            episode,
            step,
            phase,
            transition,
            loss,
            synced,
        }
    }

    pub fn into_target(self) -> MlpModel {
        self.target
    }
}

/// Trains on one route and returns the target network.
pub fn train_dqn(env: &HandoverEnv<'_>, config: &TrainConfig) -> Result<MlpModel> {
    train_dqn_with_checkpoints(env, config, None)
}

/// As [`train_dqn`], writing `episode_XXXX` checkpoints under `dir` every
/// `config.checkpoint_every` episodes.
pub fn train_dqn_with_checkpoints(
    env: &HandoverEnv<'_>,
    config: &TrainConfig,
    dir: Option<&Path>,
) -> Result<MlpModel> {
    let mut trainer = DqnTrainer::new(env, config.clone())?;
    if config.steps == 0 {
        return Ok(trainer.into_target());
    }
    while !trainer.is_finished() {
        let report = trainer.step();
        let done_episode = report.step + 1 == config.steps;
        if let (Some(dir), true) = (dir, done_episode && config.checkpoint_every > 0) {
            let finished = report.episode + 1;
            if finished % config.checkpoint_every == 0 {
                trainer.write_checkpoint(&dir.join(format!("episode_{finished:04}")))?;
            }
        }
    }
    Ok(trainer.into_target())
}
