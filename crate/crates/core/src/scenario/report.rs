use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::demand_model::EvAgent;
use crate::qos_sim::QosEstimate;
use crate::road_network::RoadNetwork;
use crate::sites::PROVIDERS;

fn default_cells_x() -> usize {
    8
}

fn default_cells_y() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    #[serde(default = "default_cells_x")]
    pub cells_x: usize,
    #[serde(default = "default_cells_y")]
    pub cells_y: usize,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            cells_x: default_cells_x(),
            cells_y: default_cells_y(),
        }
    }
}

/// Route-node traversal counts on a uniform grid over the network's bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// `counts[row][col]`, row 0 at `y_min`.
    pub counts: Vec<Vec<u64>>,
}

impl Heatmap {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,x_min,x_max,y_min,y_max,count\n");
        let rows = self.counts.len();
        let cols = self.counts.first().map_or(0, Vec::len);
        let dx = (self.x_max - self.x_min) / cols.max(1) as f64;
        let dy = (self.y_max - self.y_min) / rows.max(1) as f64;
        for (r, row) in self.counts.iter().enumerate() {
            for (c, n) in row.iter().enumerate() {
                let x0 = self.x_min + dx * c as f64;
                let y0 = self.y_min + dy * r as f64;
                let _ = writeln!(out, "{r},{c},{x0},{},{y0},{},{n}", x0 + dx, y0 + dy);
            }
        }
        out
    }
}

fn cell(v: f64, lo: f64, hi: f64, cells: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * cells as f64) as usize).min(cells - 1)
}

/// Counts every node of every agent's shortest route.
pub fn heatmap(net: &RoadNetwork, agents: &[EvAgent], cfg: &HeatmapConfig) -> Result<Heatmap, ScenarioError> {
    if cfg.cells_x == 0 || cfg.cells_y == 0 {
        return Err(ScenarioError::Config("heatmap needs at least one cell per axis".into()));
    }
    let (x_min, x_max, y_min, y_max) = net.bounding_box().unwrap_or((0.0, 0.0, 0.0, 0.0));
    let mut counts = vec![vec![0u64; cfg.cells_x]; cfg.cells_y];
    for a in agents {
        for id in net.shortest_path(a.origin, a.destination)?.nodes {
            let n = net.node(id)?;
            counts[cell(n.y, y_min, y_max, cfg.cells_y)][cell(n.x, x_min, x_max, cfg.cells_x)] += 1;
        }
    }
    Ok(Heatmap {
        x_min,
        x_max,
        y_min,
        y_max,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderReport {
    pub level: usize,
    /// Bit string over the candidate list.
    pub policy: String,
    /// Candidate ids with a station.
    pub stations: Vec<u32>,
    /// Candidate ids added this stage.
    pub new_stations: Vec<u32>,
    pub price: Option<f64>,
    /// Expected energy per station, kWh per period, aligned with `stations`.
    pub demand_kwh: Vec<f64>,
    pub revenue: f64,
    pub placement_cost: f64,
    pub profit: f64,
    /// Marginal generator-deviation impact, MW² + MVAr².
    pub impact: f64,
    pub expected_utility: f64,
    pub utility_se: f64,
    pub qos: QosEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub ev_count: usize,
    pub seed: u64,
    pub config_hash: String,
    pub providers: Vec<ProviderReport>,
    pub station_counts: [usize; PROVIDERS],
    pub cumulative_stations: usize,
    pub heatmap: Heatmap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: usize,
    pub ev_count: usize,
    pub station_counts: [usize; PROVIDERS],
    pub cumulative_stations: usize,
    pub prices: [Option<f64>; PROVIDERS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub completed_stages: usize,
    pub stages: Vec<StageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Summary {
    pub fn new(config_hash: &str, seed: u64, reports: &[StageReport], error: Option<&ScenarioError>) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            seed,
            completed_stages: reports.len(),
            stages: reports
                .iter()
                .map(|r| StageSummary {
                    stage: r.stage,
                    ev_count: r.ev_count,
                    station_counts: r.station_counts,
                    cumulative_stations: r.cumulative_stations,
                    prices: std::array::from_fn(|k| r.providers[k].price),
                })
                .collect(),
            error: error.map(|e| e.to_string()),
        }
    }
}

/// Writes `stage_{i}.json`, `heatmap_stage_{i}.csv` and `summary.json`.
#[derive(Debug, Clone)]
pub struct ReportWriter {
    dir: PathBuf,
}

impl ReportWriter {
    pub fn new(dir: &Path) -> Result<Self, ScenarioError> {
        std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&self, name: &str, contents: &str) -> Result<(), ScenarioError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| ScenarioError::Io {
            path,
            message: e.to_string(),
        })
    }

    pub fn write_stage(&self, report: &StageReport) -> Result<(), ScenarioError> {
        let json = serde_json::to_string_pretty(report).expect("report serialises");
        self.write(&format!("stage_{}.json", report.stage), &(json + "\n"))?;
        self.write(&format!("heatmap_stage_{}.csv", report.stage), &report.heatmap.to_csv())
    }

    pub fn write_summary(&self, summary: &Summary) -> Result<(), ScenarioError> {
        let json = serde_json::to_string_pretty(summary).expect("summary serialises");
        self.write("summary.json", &(json + "\n"))
    }
}
