use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::demand_model::{ChoiceCoefficients, EvAgent};
use crate::road_network::{NodeId, RoadNetwork};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeWeight {
    pub node: NodeId,
    pub weight: f64,
}

fn default_income() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    /// Mean of the log-normal income distribution.
    #[serde(default = "default_income")]
    pub income_mean: f64,
    /// Standard deviation of income; 0 gives every agent the mean.
    #[serde(default)]
    pub income_sd: f64,
    /// Trip origin weights; nodes not listed get weight 0. Uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_weights: Option<Vec<NodeWeight>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_weights: Option<Vec<NodeWeight>>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            income_mean: default_income(),
            income_sd: 0.0,
            origin_weights: None,
            destination_weights: None,
        }
    }
}

fn node_weights(net: &RoadNetwork, spec: &Option<Vec<NodeWeight>>, what: &str) -> Result<Vec<f64>, ScenarioError> {
    let Some(list) = spec else {
        return Ok(vec![1.0; net.len()]);
    };
    let mut w = vec![0.0; net.len()];
    for nw in list {
        let i = net
            .index_of(nw.node)
            .map_err(|_| ScenarioError::Config(format!("{what} weight for unknown node {}", nw.node)))?;
        if !(nw.weight >= 0.0 && nw.weight.is_finite()) {
            return Err(ScenarioError::Config(format!(
                "{what} weight {} at node {} is not a finite non-negative number",
                nw.weight, nw.node
            )));
        }
        w[i] += nw.weight;
    }
    Ok(w)
}

/// Log-normal (μ, σ) with the requested mean and standard deviation.
fn log_normal(mean: f64, sd: f64) -> Result<LogNormal<f64>, ScenarioError> {
    let s2 = (1.0 + (sd / mean).powi(2)).ln();
    LogNormal::new(mean.ln() - s2 / 2.0, s2.sqrt())
        .map_err(|e| ScenarioError::Config(format!("income distribution: {e}")))
}

/// `size` EV owners drawn deterministically from `seed`.
pub fn generate_population(
    net: &RoadNetwork,
    coeffs: &ChoiceCoefficients,
    cfg: &PopulationConfig,
    size: usize,
    seed: u64,
) -> Result<Vec<EvAgent>, ScenarioError> {
    if !(cfg.income_mean > 0.0 && cfg.income_mean.is_finite()) {
        return Err(ScenarioError::Config(format!("income mean {} must be positive", cfg.income_mean)));
    }
    if !(cfg.income_sd >= 0.0 && cfg.income_sd.is_finite()) {
        return Err(ScenarioError::Config(format!("income sd {} must be non-negative", cfg.income_sd)));
    }
    if !(coeffs.q_a >= 0.0 && coeffs.q_a <= coeffs.q_b) {
        return Err(ScenarioError::Config(format!("demand range [{}, {}] is invalid", coeffs.q_a, coeffs.q_b)));
    }
    if size == 0 {
        return Ok(Vec::new());
    }
    let weighted = |spec, what| -> Result<WeightedIndex<f64>, ScenarioError> {
        WeightedIndex::new(node_weights(net, spec, what)?)
            .map_err(|e| ScenarioError::Config(format!("{what} weights: {e}")))
    };
    let origins = weighted(&cfg.origin_weights, "origin")?;
    let dests = weighted(&cfg.destination_weights, "destination")?;
    let income = (cfg.income_sd > 0.0)
        .then(|| log_normal(cfg.income_mean, cfg.income_sd))
        .transpose()?;

    let mut rng = seed::rng(seed);
    let nodes = net.nodes();
    let mut agents = Vec::with_capacity(size);
    for id in 0..size {
        let origin = nodes[origins.sample(&mut rng)].id;
        let mut destination = nodes[dests.sample(&mut rng)].id;
        // a trip needs two distinct ends; give up after a few draws on degenerate weights
        for _ in 0..64 {
            if destination != origin {
                break;
            }
            destination = nodes[dests.sample(&mut rng)].id;
        }
        let income = income.map_or(cfg.income_mean, |d| d.sample(&mut rng));
        let demand_kwh = if coeffs.q_a == coeffs.q_b {
            coeffs.q_a
        } else {
            rng.random_range(coeffs.q_a..=coeffs.q_b)
        };
        agents.push(EvAgent {
            id: id as u32,
            income,
            origin,
            destination,
            demand_kwh,
        });
    }
    Ok(agents)
}
