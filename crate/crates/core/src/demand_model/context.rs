use serde::{Deserialize, Serialize};

use super::nested_logit::{choice_probabilities, nest_shift_gradient, AgentChoice, Nest};
use super::{
    provider_utility, station_utility, ChoiceCoefficients, DemandError, EvAgent, LevelAttributes,
    StationObservables,
};
use crate::road_network::{DistanceTable, RoadNetwork};
use crate::sites::{ActiveStations, Candidate, PROVIDERS};

/// Population, coefficients and precomputed station utilities: everything
/// needed to evaluate choice probabilities for any placement and prices.
#[derive(Debug, Clone)]
pub struct ChoiceContext {
    coeffs: ChoiceCoefficients,
    levels: [LevelAttributes; PROVIDERS],
    agents: Vec<EvAgent>,
    observables: Vec<Vec<StationObservables>>,
    /// `[agent][provider][candidate]`
    station_utility: Vec<[Vec<f64>; PROVIDERS]>,
    candidate_count: usize,
}

/// Choice probabilities for a whole population under one market state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceMatrix {
    pub active: ActiveStations,
    /// One row per agent; `stations[k]` is aligned with `active[k]` and
    /// `nest_shares` always has one entry per provider.
    pub rows: Vec<AgentChoice>,
}

/// ∂Φ/∂p_k for every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceGradient {
    pub provider: usize,
    /// `stations[n][t][j]`, aligned with the matrix's active sets.
    pub stations: Vec<Vec<Vec<f64>>>,
    pub outside: Vec<f64>,
}

/// Expected energy sold at each active station, kWh per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandForecast {
    pub active: ActiveStations,
    pub demand_kwh: [Vec<f64>; PROVIDERS],
}

impl DemandForecast {
    pub fn provider_total(&self, k: usize) -> f64 {
        self.demand_kwh[k].iter().sum()
    }

    pub fn total(&self) -> f64 {
        (0..PROVIDERS).map(|k| self.provider_total(k)).sum()
    }

    /// Demand of provider `k` spread over all `len` candidates (0 where inactive).
    pub fn per_candidate(&self, k: usize, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for (&j, &d) in self.active[k].iter().zip(&self.demand_kwh[k]) {
            out[j] = d;
        }
        out
    }
}

impl ChoiceContext {
    pub fn new(
        coeffs: ChoiceCoefficients,
        agents: Vec<EvAgent>,
        observables: Vec<Vec<StationObservables>>,
    ) -> Result<Self, DemandError> {
        coeffs.validate()?;
        if observables.len() != agents.len() {
            return Err(DemandError::DimensionMismatch {
                expected: agents.len(),
                actual: observables.len(),
            });
        }
        let candidate_count = observables.first().map_or(0, Vec::len);
        for row in &observables {
            if row.len() != candidate_count {
                return Err(DemandError::DimensionMismatch {
                    expected: candidate_count,
                    actual: row.len(),
                });
            }
        }
        for a in &agents {
            if !(a.income > 0.0) {
                return Err(DemandError::Domain(format!(
                    "agent {} has income {} ≤ 0",
                    a.id, a.income
                )));
            }
        }
        let station_utility = observables
            .iter()
            .map(|row| {
                std::array::from_fn(|k| {
                    row.iter()
                        .map(|o| station_utility(o, &coeffs.nests[k]))
                        .collect()
                })
            })
            .collect();
        Ok(Self {
            levels: coeffs.level_attributes(),
            coeffs,
            agents,
            observables,
            station_utility,
            candidate_count,
        })
    }

    /// Derives detours, destination flags and amenities from the road network.
    pub fn build(
        net: &RoadNetwork,
        distances: &DistanceTable,
        candidates: &[Candidate],
        agents: Vec<EvAgent>,
        coeffs: ChoiceCoefficients,
    ) -> Result<Self, DemandError> {
        let amenities = candidates
            .iter()
            .map(|c| Ok(c.amenities(net.node(c.node)?.amenities())))
            .collect::<Result<Vec<_>, DemandError>>()?;
        let observables = agents
            .iter()
            .map(|a| {
                candidates
                    .iter()
                    .zip(&amenities)
                    .map(|(c, &amen)| {
                        Ok(StationObservables {
                            deviation_km: distances.deviating_distance(a.origin, a.destination, c.node)?,
                            near_destination: distances.get(a.destination, c.node)? <= coeffs.d_th,
                            amenities: amen,
                        })
                    })
                    .collect::<Result<Vec<_>, DemandError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(coeffs, agents, observables)
    }

    pub fn coefficients(&self) -> &ChoiceCoefficients {
        &self.coeffs
    }

    pub fn levels(&self) -> &[LevelAttributes; PROVIDERS] {
        &self.levels
    }

    pub fn agents(&self) -> &[EvAgent] {
        &self.agents
    }

    pub fn candidate_count(&self) -> usize {
        self.candidate_count
    }

    pub fn observables(&self, agent: usize, candidate: usize) -> &StationObservables {
        &self.observables[agent][candidate]
    }

    pub fn station_utility(&self, agent: usize, provider: usize, candidate: usize) -> f64 {
        self.station_utility[agent][provider][candidate]
    }

    pub fn provider_utility(&self, agent: usize, provider: usize, price: f64) -> f64 {
        // income and charging time were validated at construction
        provider_utility(
            &self.levels[provider],
            price,
            self.agents[agent].income,
            &self.coeffs,
        )
        .expect("validated context")
    }

    /// ∂W_k/∂p_k for agent `n`, i.e. β / i_n.
    pub fn price_sensitivity(&self, agent: usize) -> f64 {
        self.coeffs.beta / self.agents[agent].income
    }

    pub fn agent_choice(
        &self,
        agent: usize,
        active: &ActiveStations,
        prices: &[f64; PROVIDERS],
    ) -> Result<AgentChoice, DemandError> {
        let mut nests = Vec::with_capacity(PROVIDERS);
        let mut owners = Vec::with_capacity(PROVIDERS);
        for k in 0..PROVIDERS {
            if active[k].is_empty() {
                continue;
            }
            let v = active[k]
                .iter()
                .map(|&j| self.station_utility[agent][k][j])
                .collect();
            nests.push(Nest::new(
                self.coeffs.nests[k].sigma,
                self.provider_utility(agent, k, prices[k]),
                v,
            ));
            owners.push(k);
        }
        let compact = choice_probabilities(&nests, self.coeffs.outside_utility())?;
        let mut stations = vec![Vec::new(); PROVIDERS];
        let mut nest_shares = vec![0.0; PROVIDERS];
        for ((k, probs), share) in owners.into_iter().zip(compact.stations).zip(compact.nest_shares) {
            stations[k] = probs;
            nest_shares[k] = share;
        }
        Ok(AgentChoice {
            stations,
            nest_shares,
            outside: compact.outside,
        })
    }

    pub fn choice_matrix(
        &self,
        active: &ActiveStations,
        prices: &[f64; PROVIDERS],
    ) -> Result<ChoiceMatrix, DemandError> {
        for list in active {
            if let Some(&j) = list.iter().find(|&&j| j >= self.candidate_count) {
                return Err(DemandError::DimensionMismatch {
                    expected: self.candidate_count,
                    actual: j + 1,
                });
            }
        }
        let rows = (0..self.agents.len())
            .map(|n| self.agent_choice(n, active, prices))
            .collect::<Result<_, _>>()?;
        Ok(ChoiceMatrix {
            active: active.clone(),
            rows,
        })
    }

    /// ∂Φⁿⱼₜ/∂p_k for every agent, station and provider.
    pub fn demand_price_gradient(
        &self,
        active: &ActiveStations,
        prices: &[f64; PROVIDERS],
        provider: usize,
    ) -> Result<PriceGradient, DemandError> {
        Ok(self.choice_matrix(active, prices)?.price_gradient(self, provider))
    }
}

impl ChoiceMatrix {
    pub fn price_gradient(&self, ctx: &ChoiceContext, provider: usize) -> PriceGradient {
        let (stations, outside) = self
            .rows
            .iter()
            .enumerate()
            .map(|(n, row)| nest_shift_gradient(row, provider, ctx.price_sensitivity(n)))
            .unzip();
        PriceGradient {
            provider,
            stations,
            outside,
        }
    }
}

/// ψ_jk = Σ_n q_n Φⁿ_jk
pub fn aggregate_demand(agents: &[EvAgent], phi: &ChoiceMatrix) -> Result<DemandForecast, DemandError> {
    if agents.len() != phi.rows.len() {
        return Err(DemandError::DimensionMismatch {
            expected: agents.len(),
            actual: phi.rows.len(),
        });
    }
    let mut demand_kwh: [Vec<f64>; PROVIDERS] =
        std::array::from_fn(|k| vec![0.0; phi.active[k].len()]);
    for (agent, row) in agents.iter().zip(&phi.rows) {
        for ((total, probs), active) in demand_kwh.iter_mut().zip(&row.stations).zip(&phi.active) {
            if probs.len() != active.len() {
                return Err(DemandError::DimensionMismatch {
                    expected: active.len(),
                    actual: probs.len(),
                });
            }
            for (acc, p) in total.iter_mut().zip(probs) {
                *acc += agent.demand_kwh * p;
            }
        }
    }
    Ok(DemandForecast {
        active: phi.active.clone(),
        demand_kwh,
    })
}
