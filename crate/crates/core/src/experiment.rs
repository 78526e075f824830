//! Multi-route comparison of handover schemes.
//!
//! Every flight draws its route and training seeds from substreams keyed by
//! the flight index, so results are identical for any worker count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dqn::{predict_action, train_dqn, StateEncoder, TrainConfig};
use crate::eval::{aggregate, baseline_flight, dp_oracle, run_flight, EvalSummary, FlightMetrics, MetricsRow};
use crate::mdp::{HandoverEnv, RewardWeights};
use crate::radio_env::RsrpGrid;
use crate::rng::substream_seed;
use crate::tabular::{table_policy, train_tabular, TabularConfig};
use crate::trajectory::{random_route, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Baseline,
    Tabular,
    Dqn,
    Oracle,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Baseline, Scheme::Tabular, Scheme::Dqn, Scheme::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Baseline => "baseline",
            Scheme::Tabular => "tabular",
            Scheme::Dqn => "dqn",
            Scheme::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}; expected baseline, tabular, dqn or oracle")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub flights: usize,
    pub seed: u64,
    pub weights: Vec<RewardWeights>,
    /// Learned or solved schemes to run; the baseline always runs.
    pub schemes: Vec<Scheme>,
    pub k: usize,
    pub min_separation: f64,
    pub step_length: f64,
    pub tabular: TabularConfig,
    pub dqn: TrainConfig,
    pub workers: usize,
}

/// One route and every scheme's flight along it.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightRecord {
    pub flight_id: usize,
    pub route: Trajectory,
    pub baseline: FlightMetrics,
    /// Indexed `[weight][scheme]` following the config order.
    pub runs: Vec<Vec<FlightMetrics>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub weights: Vec<RewardWeights>,
    pub schemes: Vec<Scheme>,
    pub flights: Vec<FlightRecord>,
}

impl ExperimentResult {
    fn scheme_index(&self, scheme: Scheme) -> Option<usize> {
        self.schemes.iter().position(|&s| s == scheme)
    }

    /// Flights of `scheme` at weight index `w`, in flight order.
    pub fn flights_of(&self, w: usize, scheme: Scheme) -> Option<Vec<FlightMetrics>> {
        if scheme == Scheme::Baseline {
            return Some(self.baselines());
        }
        let s = self.scheme_index(scheme)?;
        Some(self.flights.iter().map(|f| f.runs[w][s].clone()).collect())
    }

    pub fn baselines(&self) -> Vec<FlightMetrics> {
        self.flights.iter().map(|f| f.baseline.clone()).collect()
    }

    pub fn summary(&self, w: usize, scheme: Scheme) -> Option<EvalSummary> {
        Some(aggregate(&self.flights_of(w, scheme)?, &self.baselines()))
    }

    /// Metrics rows grouped by weight, then scheme, then flight.
    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for (wi, &weights) in self.weights.iter().enumerate() {
            for scheme in std::iter::once(Scheme::Baseline).chain(self.schemes.iter().copied()) {
                for f in &self.flights {
                    let metrics = match self.scheme_index(scheme) {
                        Some(si) if scheme != Scheme::Baseline => &f.runs[wi][si],
                        _ => &f.baseline,
                    };
                    rows.push(MetricsRow::new(f.flight_id, scheme.name(), weights, metrics, &f.baseline));
                }
            }
        }
        rows
    }
}

/// Route of flight `flight_id` under master `seed`.
pub fn flight_route(config: &ExperimentConfig, extents: crate::radio_env::Extents, flight_id: usize) -> Result<Trajectory> {
    random_route(
        extents,
        config.min_separation,
        config.step_length,
        substream_seed(config.seed, "flight-route", flight_id as u64),
    )
}

fn run_one(grid: &RsrpGrid, config: &ExperimentConfig, flight_id: usize) -> Result<FlightRecord> {
    let route = flight_route(config, grid.extents(), flight_id)?;
    let baseline = baseline_flight(grid, &route)?;
    let mut runs = Vec::with_capacity(config.weights.len());
    for (wi, &weights) in config.weights.iter().enumerate() {
        let env = HandoverEnv::new(grid, &route, weights, config.k)?;
        let id = (flight_id * config.weights.len() + wi) as u64;
        let mut per_scheme = Vec::with_capacity(config.schemes.len());
        for &scheme in &config.schemes {
            let metrics = match scheme {
                Scheme::Baseline => baseline.clone(),
                Scheme::Tabular => {
                    let cfg = TabularConfig {
                        seed: substream_seed(config.seed, "flight-tabular", id),
                        ..config.tabular
                    };
                    let table = train_tabular(&env, &cfg)?;
                    run_flight(&env, table_policy(&table))?
                }
                Scheme::Dqn => {
                    let cfg = TrainConfig {
                        seed: substream_seed(config.seed, "flight-dqn", id),
                        k: config.k,
                        ..config.dqn.clone()
                    };
                    let model = train_dqn(&env, &cfg)?;
                    let encoder = StateEncoder::new(&env, cfg.encoding);
                    run_flight(&env, |s| predict_action(&model, &encoder, s))?
                }
                Scheme::Oracle => dp_oracle(&env, config.dqn.lambda)?.flight,
            };
            per_scheme.push(metrics);
        }
        runs.push(per_scheme);
    }
    Ok(FlightRecord {
        flight_id,
        route,
        baseline,
        runs,
    })
}

/// Runs every scheme and weight over `config.flights` random routes.
pub fn run_experiment(grid: &RsrpGrid, config: &ExperimentConfig) -> Result<ExperimentResult> {
    if config.workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    config.tabular.validate()?;
    config.dqn.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let flights = pool.install(|| {
        (0..config.flights)
            .into_par_iter()
            .map(|i| run_one(grid, config, i))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(ExperimentResult {
        weights: config.weights.clone(),
        schemes: config.schemes.clone(),
        flights,
    })
}
