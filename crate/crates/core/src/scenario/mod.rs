//! Scenario files, multi-stage planning runs and their reports.
//!
//! A scenario names its inputs by path, relative to the scenario file:
//! road network, grid case (or a bundled case name), candidate sites,
//! choice coefficients, LMPs and placement costs. Scenario and coefficient
//! files may be TOML or JSON; data files are JSON.

mod population;
mod report;
mod run;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::demand_model::{ChoiceCoefficients, ChoiceContext, DemandError, EvAgent};
use crate::placement_game::{GameConfig, GameError, GameInputs};
use crate::power_grid::{BusKind, DispatchOptions, GridError, GridModel, LmpTable, PowerSystem};
use crate::pricing_game::PricingError;
use crate::qos_sim::QosError;
use crate::road_network::{DistanceTable, RoadError, RoadNetwork};
use crate::seed;
use crate::sites::{Candidate, CandidateFile, PROVIDERS};

pub use population::{generate_population, NodeWeight, PopulationConfig};
pub use report::{heatmap, Heatmap, HeatmapConfig, ProviderReport, ReportWriter, StageReport, Summary};
pub use run::{run_multistage, run_stage};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("stage {stage}: {source}")]
    Game {
        stage: usize,
        #[source]
        source: GameError,
    },
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Qos(#[from] QosError),
    #[error(transparent)]
    Road(#[from] RoadError),
}

impl ScenarioError {
    /// 2 infeasible, 3 solver failure, 4 configuration or input error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) | ScenarioError::Io { .. } => 4,
            ScenarioError::Game {
                source: GameError::Infeasible { .. },
                ..
            } => 2,
            ScenarioError::Game {
                source: GameError::Config(_),
                ..
            } => 4,
            ScenarioError::Qos(QosError::Config(_)) => 4,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEntry {
    pub candidate: u32,
    /// Θ for providers 1, 2, 3.
    pub theta: [f64; PROVIDERS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostFile {
    pub costs: Vec<CostEntry>,
}

fn default_grid() -> String {
    "ieee14".into()
}

fn default_pf() -> f64 {
    0.98
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    /// Default report directory; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub network: PathBuf,
    /// Bundled case name (`ieee14`, `ieee118`) or a case file.
    #[serde(default = "default_grid")]
    pub grid: String,
    pub candidates: PathBuf,
    pub coefficients: PathBuf,
    pub lmp: PathBuf,
    pub costs: PathBuf,
    /// EV count per stage.
    pub stages: Vec<usize>,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
    /// Power factor of EV charging load.
    #[serde(default = "default_pf")]
    pub power_factor: f64,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads TOML when the extension says so, JSON otherwise.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(|e| io_err(path, e))
    } else {
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        read_structured(path)
    }
}

/// A loaded and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
    pub network: RoadNetwork,
    pub distances: DistanceTable,
    pub candidates: Vec<Candidate>,
    pub coefficients: ChoiceCoefficients,
    pub grid: GridModel,
    /// `lmp[k][j]`
    pub lmp: [Vec<f64>; PROVIDERS],
    /// Game settings with the placement costs filled in.
    pub game: GameConfig,
    /// SHA-256 over the resolved configuration and every input file.
    pub config_hash: String,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let config = ScenarioConfig::load(path)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_config(config, base)
    }

    pub fn from_config(config: ScenarioConfig, base_dir: PathBuf) -> Result<Self, ScenarioError> {
        let resolve = |p: &Path| base_dir.join(p);
        let cfg_err = |m: String| ScenarioError::Config(m);

        if config.stages.is_empty() {
            return Err(cfg_err("at least one stage is required".into()));
        }
        if config.stages.windows(2).any(|w| w[1] < w[0]) {
            return Err(cfg_err(format!("stage EV counts {:?} decrease", config.stages)));
        }

        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&config).expect("config serialises"));
        let mut read = |p: &Path| -> Result<String, ScenarioError> {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            hasher.update(p.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
            hasher.update(text.as_bytes());
            Ok(text)
        };

        let net_path = resolve(&config.network);
        let network = RoadNetwork::from_json_str(&read(&net_path)?).map_err(|e| io_err(&net_path, e))?;
        if !network.is_connected() {
            return Err(cfg_err("road network must be connected".into()));
        }

        let system = match PowerSystem::bundled(&config.grid) {
            Some(s) => s,
            None => {
                let p = resolve(Path::new(&config.grid));
                PowerSystem::from_json_str(&read(&p)?).map_err(|e| io_err(&p, e))?
            }
        };

        let cand_path = resolve(&config.candidates);
        let cand_file: CandidateFile =
            serde_json::from_str(&read(&cand_path)?).map_err(|e| io_err(&cand_path, e))?;
        let candidates = cand_file.candidates;
        for (i, c) in candidates.iter().enumerate() {
            if candidates[..i].iter().any(|o| o.id == c.id) {
                return Err(cfg_err(format!("duplicate candidate id {}", c.id)));
            }
            if !network.contains(c.node) {
                return Err(cfg_err(format!("candidate {} sits on unknown node {}", c.id, c.node)));
            }
            match system.bus(c.bus) {
                Ok(b) if b.kind == BusKind::Pq => {}
                Ok(_) => return Err(cfg_err(format!("candidate {} bus {} is not a PQ bus", c.id, c.bus))),
                Err(_) => return Err(cfg_err(format!("candidate {} uses unknown bus {}", c.id, c.bus))),
            }
            if c.levels.iter().any(|&l| !(1..=3).contains(&l)) {
                return Err(cfg_err(format!("candidate {} lists a level outside 1..=3", c.id)));
            }
        }

        let coef_path = resolve(&config.coefficients);
        let coef_text = read(&coef_path)?;
        let coefficients: ChoiceCoefficients = if coef_path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&coef_text).map_err(|e| io_err(&coef_path, e))?
        } else {
            serde_json::from_str(&coef_text).map_err(|e| io_err(&coef_path, e))?
        };
        coefficients.validate().map_err(|e| cfg_err(e.to_string()))?;

        let lmp_path = resolve(&config.lmp);
        let table: LmpTable = serde_json::from_str(&read(&lmp_path)?).map_err(|e| io_err(&lmp_path, e))?;
        let per_site = candidates
            .iter()
            .map(|c| match table.price(c.bus) {
                Some(p) if p.is_finite() && p >= 0.0 => Ok(p),
                Some(p) => Err(cfg_err(format!("LMP {p} at bus {} is invalid", c.bus))),
                None => Err(cfg_err(format!("no LMP for bus {}", c.bus))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let lmp = std::array::from_fn(|_| per_site.clone());

        let cost_path = resolve(&config.costs);
        let cost_file: CostFile = serde_json::from_str(&read(&cost_path)?).map_err(|e| io_err(&cost_path, e))?;
        let mut costs: [Vec<f64>; PROVIDERS] = Default::default();
        for c in &candidates {
            let entry = cost_file
                .costs
                .iter()
                .find(|e| e.candidate == c.id)
                .ok_or_else(|| cfg_err(format!("no placement cost for candidate {}", c.id)))?;
            for (row, &theta) in costs.iter_mut().zip(&entry.theta) {
                row.push(theta);
            }
        }
        let mut game = config.game.clone();
        game.costs = costs;
        game.validate(candidates.len()).map_err(|e| cfg_err(e.to_string()))?;

        let grid = GridModel::new(
            system,
            DispatchOptions {
                power_factor: config.power_factor,
                ..Default::default()
            },
        )
        .map_err(|e| match e {
            GridError::NonConvergence { .. } | GridError::SingularJacobian => ScenarioError::Grid(e),
            other => cfg_err(other.to_string()),
        })?;

        let config_hash = hex::encode(hasher.finalize());
        Ok(Self {
            distances: network.distance_table(),
            config,
            base_dir,
            network,
            candidates,
            coefficients,
            grid,
            lmp,
            game,
            config_hash,
        })
    }

    pub fn stage_count(&self) -> usize {
        self.config.stages.len()
    }

    /// Seed of stage `stage` (0-based).
    pub fn stage_seed(&self, stage: usize) -> u64 {
        seed::derive(self.config.seed, stage as u64)
    }

    pub fn population(&self, stage: usize) -> Result<Vec<EvAgent>, ScenarioError> {
        let size = *self
            .config
            .stages
            .get(stage)
            .ok_or_else(|| ScenarioError::Config(format!("stage {} does not exist", stage + 1)))?;
        generate_population(
            &self.network,
            &self.coefficients,
            &self.config.population,
            size,
            seed::derive(self.stage_seed(stage), seed::stream::POPULATION),
        )
    }

    pub fn choice_context(&self, stage: usize) -> Result<ChoiceContext, ScenarioError> {
        Ok(ChoiceContext::build(
            &self.network,
            &self.distances,
            &self.candidates,
            self.population(stage)?,
            self.coefficients.clone(),
        )?)
    }

    /// Game settings for `stage` with its derived opponent and QoS seeds.
    pub fn stage_game(&self, stage: usize) -> GameConfig {
        let s = self.stage_seed(stage);
        let mut game = self.game.clone();
        game.seed = seed::derive(s, seed::stream::OPPONENTS);
        game.qos.seed = seed::derive(s, seed::stream::QOS);
        game
    }

    pub fn inputs<'a>(&'a self, ctx: &'a ChoiceContext) -> GameInputs<'a> {
        GameInputs {
            ctx,
            net: &self.network,
            distances: &self.distances,
            candidates: &self.candidates,
            grid: &self.grid,
            lmp: &self.lmp,
        }
    }

    pub fn output_dir(&self) -> Option<PathBuf> {
        self.config.output_dir.as_ref().map(|d| self.base_dir.join(d))
    }
}
