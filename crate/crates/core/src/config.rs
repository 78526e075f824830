//! Run configuration: a TOML file, resolved against defaults and CLI flags.
//!
//! Every key is optional. An empty file gives the defaults below (k = 6,
//! 50 m bins, λ = 0.3, ε = 0.2, batch 64, target sync every 20 steps,
//! phase threshold 0.3).
//!
//! ```toml
//! seed = 0
//! output_dir = "out"
//! k = 6
//! lambda = 0.3
//! epsilon = 0.2
//! weights = ["0:1", "1:9", "5:5"]
//! schemes = ["tabular", "dqn"]
//! flights = 2000
//! workers = 1
//!
//! [map]
//! extent_x = 5000.0
//! extent_y = 6000.0
//! bin_size = 50.0
//! n_cells = 21
//! samples_per_cell = 10000
//! fill = "neighbors"          # or "global_min"
//! # samples_file = "samples.csv"
//! # grid_file = "grid.csv"
//!
//! [route]
//! min_separation = 1000.0
//! step_length = 50.0
//!
//! [tabular]
//! episodes = 120
//! steps = 1000
//! alpha = 0.5
//! key_resolution = 25.0
//!
//! [dqn]
//! episodes = 120
//! steps = 1000
//! sync_every = 20
//! phase_threshold = 0.3
//! batch_size = 64
//! hidden = [64, 64]
//! learning_rate = 0.001
//! rms_decay = 0.9
//! rms_epsilon = 1e-8
//! replay_capacity = 50000
//! target_mode = "taken_action"  # or "all_actions"
//! encoding = "candidates"       # or "position"
//! checkpoint_every = 0
//! ```

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dqn::{Encoding, TargetMode, TrainConfig};
use crate::experiment::{ExperimentConfig, Scheme};
use crate::mdp::RewardWeights;
use crate::nn::RmsPropConfig;
use crate::radio_env::{
    generate_synthetic_samples, hex_sites, import_samples, EmptyBinFill, Extents, GridMeta, GridSpec, RsrpGrid,
    SyntheticLayout,
};
use crate::tabular::{TabularConfig, KEY_RESOLUTION};
use crate::{Error, Result};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "UAV_HO_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub k: usize,
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(with = "weight_list")]
    pub weights: Vec<RewardWeights>,
    pub schemes: Vec<Scheme>,
    pub flights: usize,
    pub workers: usize,
    pub map: MapConfig,
    pub route: RouteConfig,
    pub tabular: TabularSection,
    pub dqn: DqnSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub extent_x: f64,
    pub extent_y: f64,
    pub bin_size: f64,
    /// Cell count; must match the synthetic layout unless samples are imported.
    pub n_cells: usize,
    pub samples_per_cell: usize,
    pub fill: EmptyBinFill,
    /// Import this samples CSV instead of generating synthetic samples.
    pub samples_file: Option<PathBuf>,
    /// Load a prebuilt grid CSV (with its `.json` sidecar) instead of binning samples.
    pub grid_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouteConfig {
    pub min_separation: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularSection {
    pub episodes: usize,
    pub steps: usize,
    pub alpha: f64,
    pub key_resolution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnSection {
    pub episodes: usize,
    pub steps: usize,
    pub sync_every: usize,
    pub phase_threshold: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub replay_capacity: usize,
    pub target_mode: TargetMode,
    pub encoding: Encoding,
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dqn = TrainConfig::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            k: dqn.k,
            lambda: dqn.lambda,
            epsilon: dqn.epsilon,
            weights: ["0:1", "1:9", "5:5"]
                .iter()
                .map(|w| RewardWeights::parse(w).expect("valid default weights"))
                .collect(),
            schemes: vec![Scheme::Tabular, Scheme::Dqn],
            flights: 2000,
            workers: 1,
            map: MapConfig::default(),
            route: RouteConfig::default(),
            tabular: TabularSection::default(),
            dqn: DqnSection::default(),
        }
    }
}

impl Default for MapConfig {
    fn default() -> Self {
        let extents = Extents::default();
        Self {
            extent_x: extents.x,
            extent_y: extents.y,
            bin_size: 50.0,
            n_cells: SyntheticLayout::default().n_cells(),
            samples_per_cell: 10_000,
            fill: EmptyBinFill::default(),
            samples_file: None,
            grid_file: None,
        }
    }
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            min_separation: crate::trajectory::MIN_SEPARATION,
            step_length: crate::trajectory::STEP_LENGTH,
        }
    }
}

impl Default for TabularSection {
    fn default() -> Self {
        let t = TabularConfig::default();
        Self {
            episodes: t.episodes,
            steps: t.steps,
            alpha: t.alpha,
            key_resolution: KEY_RESOLUTION,
        }
    }
}

impl Default for DqnSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            episodes: d.episodes,
            steps: d.steps,
            sync_every: d.sync_every,
            phase_threshold: d.phase_threshold,
            batch_size: d.batch_size,
            hidden: d.hidden,
            learning_rate: d.optimizer.learning_rate,
            rms_decay: d.optimizer.decay,
            rms_epsilon: d.optimizer.epsilon,
            replay_capacity: d.replay_capacity,
            target_mode: d.target_mode,
            encoding: d.encoding,
            checkpoint_every: d.checkpoint_every,
        }
    }
}

/// Weight pairs are written as `"w_ho:w_rsrp"` strings.
mod weight_list {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    use crate::mdp::RewardWeights;

    pub fn serialize<S: Serializer>(weights: &[RewardWeights], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(weights.iter().map(|w| w.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<RewardWeights>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| RewardWeights::parse(s).map_err(D::Error::custom))
            .collect()
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn extents(&self) -> Extents {
        Extents::new(self.map.extent_x, self.map.extent_y)
    }

    /// Synthetic site layout for the configured area: seven three-sector
    /// sites centered in it.
    pub fn layout(&self) -> SyntheticLayout {
        let extents = self.extents();
        SyntheticLayout {
            extents,
            sites: hex_sites(extents, 1500.0),
            ..SyntheticLayout::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        let m = &self.map;
        if !(m.extent_x > 0.0 && m.extent_y > 0.0 && m.extent_x.is_finite() && m.extent_y.is_finite()) {
            return fail("map.extent_x and map.extent_y must be positive".into());
        }
        if !(m.bin_size > 0.0 && m.bin_size.is_finite()) {
            return fail(format!("map.bin_size must be positive, got {}", m.bin_size));
        }
        if m.n_cells == 0 {
            return fail("map.n_cells must be positive".into());
        }
        if m.samples_file.is_none() && m.grid_file.is_none() {
            let layout_cells = self.layout().n_cells();
            if m.n_cells != layout_cells {
                return fail(format!(
                    "map.n_cells = {} but the synthetic layout has {layout_cells} cells",
                    m.n_cells
                ));
            }
            if m.samples_per_cell == 0 {
                return fail("map.samples_per_cell must be positive".into());
            }
        }
        if self.k == 0 || self.k > m.n_cells {
            return fail(format!("k = {} must lie in 1..={}", self.k, m.n_cells));
        }
        if self.weights.is_empty() {
            return fail("weights must list at least one pair".into());
        }
        if self.schemes.contains(&Scheme::Baseline) {
            return fail("schemes must not list baseline; it always runs".into());
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        if !(self.route.step_length > 0.0) || self.route.min_separation < 0.0 {
            return fail("route.step_length must be positive and route.min_separation nonnegative".into());
        }
        self.tabular_config().validate().map_err(as_validation)?;
        self.train_config().validate().map_err(as_validation)?;
        Ok(())
    }

    /// Checks that every referenced input file exists.
    pub fn check_inputs(&self) -> Result<()> {
        for path in self.map.samples_file.iter().chain(&self.map.grid_file) {
            if !path.is_file() {
                return Err(Error::MissingInput(path.clone()));
            }
        }
        if let Some(grid) = &self.map.grid_file {
            let sidecar = grid.with_extension("json");
            if !sidecar.is_file() {
                return Err(Error::MissingInput(sidecar));
            }
        }
        Ok(())
    }

    pub fn tabular_config(&self) -> TabularConfig {
        TabularConfig {
            episodes: self.tabular.episodes,
            steps: self.tabular.steps,
            alpha: self.tabular.alpha,
            lambda: self.lambda,
            epsilon: self.epsilon,
            seed: self.seed,
            key_resolution: self.tabular.key_resolution,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = &self.dqn;
        TrainConfig {
            episodes: d.episodes,
            steps: d.steps,
            sync_every: d.sync_every,
            phase_threshold: d.phase_threshold,
            lambda: self.lambda,
            epsilon: self.epsilon,
            batch_size: d.batch_size,
            k: self.k,
            hidden: d.hidden.clone(),
            optimizer: RmsPropConfig {
                learning_rate: d.learning_rate,
                decay: d.rms_decay,
                epsilon: d.rms_epsilon,
            },
            replay_capacity: d.replay_capacity,
            seed: self.seed,
            target_mode: d.target_mode,
            encoding: d.encoding,
            checkpoint_every: d.checkpoint_every,
        }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            flights: self.flights,
            seed: self.seed,
            weights: self.weights.clone(),
            schemes: self.schemes.clone(),
            k: self.k,
            min_separation: self.route.min_separation,
            step_length: self.route.step_length,
            tabular: self.tabular_config(),
            dqn: self.train_config(),
            workers: self.workers,
        }
    }

    /// The radio map this config describes: a prebuilt grid, imported
    /// samples, or the synthetic layout sampled with `seed`.
    pub fn build_grid(&self) -> Result<RsrpGrid> {
        self.check_inputs()?;
        if let Some(path) = &self.map.grid_file {
            let meta: GridMeta = serde_json::from_reader(BufReader::new(File::open(path.with_extension("json"))?))?;
            return RsrpGrid::read_csv(BufReader::new(File::open(path)?), &meta);
        }
        let samples = match &self.map.samples_file {
            Some(path) => import_samples(BufReader::new(File::open(path)?), self.extents(), self.map.n_cells)?,
            None => generate_synthetic_samples(&self.layout(), self.map.samples_per_cell, self.seed)?,
        };
        self.grid_from_samples(&samples)
    }

    pub fn grid_from_samples(&self, samples: &[crate::radio_env::RsrpSample]) -> Result<RsrpGrid> {
        let spec = GridSpec::new(self.extents(), self.map.bin_size, self.map.n_cells).with_fill(self.map.fill);
        RsrpGrid::build(samples, &spec)
    }
}

fn as_validation(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Validation(m),
        other => other,
    }
}

/// Resolved config plus the command line that produced it. Re-running a
/// command with `--manifest` reproduces its outputs byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: Vec<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|_| Error::MissingInput(path.to_path_buf()))?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file))?;
        manifest.config.validate()?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c.k, 6);
        assert_eq!(c.map.bin_size, 50.0);
        assert_eq!(c.lambda, 0.3);
        assert_eq!(c.epsilon, 0.2);
        assert_eq!(c.dqn.batch_size, 64);
        assert_eq!(c.dqn.sync_every, 20);
        assert_eq!(c.dqn.phase_threshold, 0.3);
        assert_eq!((c.dqn.episodes, c.dqn.steps), (120, 1000));
        assert_eq!(c.flights, 2000);
        assert_eq!(c.workers, 1);
        let w: Vec<String> = c.weights.iter().map(|w| w.to_string()).collect();
        assert_eq!(w, ["0:1", "1:9", "5:5"]);
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn zero_bin_size_is_rejected() {
        let e = RunConfig::from_toml_str("[map]\nbin_size = 0").unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let msg = RunConfig::from_toml_str("sed = 3").unwrap_err().to_string();
        assert!(msg.contains("sed"), "{msg}");
        for key in ["seed", "output_dir", "weights", "flights"] {
            assert!(msg.contains(key), "{msg}");
        }
        let msg = RunConfig::from_toml_str("[dqn]\nbatch = 3").unwrap_err().to_string();
        assert!(msg.contains("batch_size"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_the_key() {
        let msg = RunConfig::from_toml_str("seed = \"seven\"").unwrap_err().to_string();
        assert!(msg.contains("seed"), "{msg}");
        let msg = RunConfig::from_toml_str("[tabular]\nalpha = [1]").unwrap_err().to_string();
        assert!(msg.contains("alpha"), "{msg}");
    }

    #[test]
    fn weights_parse_and_validate() {
        let c = RunConfig::from_toml_str("weights = [\"1:1\", \"0.5:2\"]").unwrap();
        assert_eq!(c.weights[1], RewardWeights::new(0.5, 2.0).unwrap());
        assert!(RunConfig::from_toml_str("weights = [\"0:0\"]").is_err());
        assert!(RunConfig::from_toml_str("weights = [\"-1:1\"]").is_err());
        assert!(RunConfig::from_toml_str("weights = []").is_err());
    }

    #[test]
    fn k_above_cell_count_is_rejected() {
        assert!(RunConfig::from_toml_str("k = 22").is_err());
        assert!(RunConfig::from_toml_str("k = 21").is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.map.samples_file = Some(PathBuf::from("s.csv"));
        c.dqn.hidden = vec![32];
        let back: RunConfig = toml::from_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn manifest_round_trip_and_missing_input() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            command: vec!["compare".into()],
            config: RunConfig { seed: 3, ..RunConfig::default() },
        };
        let path = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::load(&path).unwrap(), m);
        let mut c = RunConfig::default();
        c.map.samples_file = Some(dir.path().join("absent.csv"));
        assert!(matches!(c.check_inputs(), Err(Error::MissingInput(_))));
    }

    #[test]
    fn section_values_reach_the_learners() {
        let c = RunConfig::from_toml_str("seed = 4\nlambda = 0.5\n[dqn]\nencoding = \"position\"\nlearning_rate = 0.01\n[tabular]\nalpha = 1.0").unwrap();
        let t = c.tabular_config();
        assert_eq!((t.alpha, t.lambda, t.seed), (1.0, 0.5, 4));
        let d = c.train_config();
        assert_eq!(d.encoding, Encoding::Position);
        assert_eq!(d.optimizer.learning_rate, 0.01);
        assert_eq!(d.lambda, 0.5);
    }
}
