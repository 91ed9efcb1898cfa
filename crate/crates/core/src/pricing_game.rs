//! Bertrand retail prices for a fixed triple of placement policies.
//!
//! Every provider charges one price at all of its stations. Equilibrium
//! prices zero the first-order conditions
//!
//! ```text
//! ∂Π_k/∂p_k = Σ_n Σ_j q_n s_jk [Φⁿ_jk + (p_k − c_jk) ∂Φⁿ_jk/∂p_k] = 0
//! ```
//!
//! which are solved jointly by damped Newton with an analytic Jacobian.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand_model::{aggregate_demand, ChoiceContext, ChoiceMatrix, DemandError, DemandForecast};
use crate::sites::{active_stations, ActiveStations, PlacementPolicy, PROVIDERS};

pub const FOC_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 200;
pub const MAX_HALVINGS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PricingError {
    #[error("price competition is unbounded: demand does not fall with price (beta = {0})")]
    Unbounded(f64),
    #[error("Bertrand solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

/// Placements, wholesale prices and the demand model they are evaluated with.
#[derive(Debug, Clone)]
pub struct MarketState<'a> {
    pub ctx: &'a ChoiceContext,
    pub policies: [PlacementPolicy; PROVIDERS],
    /// `lmp[k][j]`: wholesale price paid by provider `k` at candidate `j`, per kWh.
    pub lmp: [Vec<f64>; PROVIDERS],
}

/// Retail prices; `None` for providers without stations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(pub [Option<f64>; PROVIDERS]);

impl PriceVector {
    /// Prices with inactive providers filled with 0 (they never enter the demand model).
    pub fn dense(&self) -> [f64; PROVIDERS] {
        self.0.map(|p| p.unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProviderProfit {
    /// Π_k = R_k − Θ_kᵀ S_k
    pub profit: f64,
    /// R_k = Σ_j s_jk (p_k − c_jk) ψ_jk
    pub revenue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BertrandSolution {
    pub prices: PriceVector,
    pub iterations: usize,
    /// FOC infinity-norm at the returned prices.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BertrandOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Additional random starts used by [`solve_bertrand_multistart`].
    pub extra_starts: usize,
    pub seed: u64,
}

impl Default for BertrandOptions {
    fn default() -> Self {
        Self {
            tolerance: FOC_TOLERANCE,
            max_iterations: MAX_NEWTON_ITERATIONS,
            extra_starts: 4,
            seed: 0,
        }
    }
}

impl<'a> MarketState<'a> {
    pub fn new(
        ctx: &'a ChoiceContext,
        policies: [PlacementPolicy; PROVIDERS],
        lmp: [Vec<f64>; PROVIDERS],
    ) -> Result<Self, PricingError> {
        let l = ctx.candidate_count();
        for k in 0..PROVIDERS {
            if policies[k].len() != l || lmp[k].len() != l {
                return Err(PricingError::DimensionMismatch(format!(
                    "provider {} has policy length {} and {} LMPs, expected {l}",
                    k + 1,
                    policies[k].len(),
                    lmp[k].len()
                )));
            }
        }
        Ok(Self { ctx, policies, lmp })
    }

    pub fn active(&self) -> ActiveStations {
        active_stations(&self.policies)
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.policies[k].count() > 0
    }

    pub fn choice_matrix(&self, prices: &[f64; PROVIDERS]) -> Result<ChoiceMatrix, PricingError> {
        Ok(self.ctx.choice_matrix(&self.active(), prices)?)
    }

    pub fn demand(&self, prices: &[f64; PROVIDERS]) -> Result<DemandForecast, PricingError> {
        Ok(aggregate_demand(self.ctx.agents(), &self.choice_matrix(prices)?)?)
    }
}

/// Revenue and profit of every provider at the given prices.
pub fn provider_profit(
    state: &MarketState<'_>,
    prices: &[f64; PROVIDERS],
    placement_costs: &[Vec<f64>; PROVIDERS],
) -> Result<[ProviderProfit; PROVIDERS], PricingError> {
    let demand = state.demand(prices)?;
    Ok(profit_from_demand(state, prices, placement_costs, &demand))
}

pub(crate) fn profit_from_demand(
    state: &MarketState<'_>,
    prices: &[f64; PROVIDERS],
    placement_costs: &[Vec<f64>; PROVIDERS],
    demand: &DemandForecast,
) -> [ProviderProfit; PROVIDERS] {
    std::array::from_fn(|k| {
        let revenue: f64 = demand.active[k]
            .iter()
            .zip(&demand.demand_kwh[k])
            .map(|(&j, psi)| (prices[k] - state.lmp[k][j]) * psi)
            .sum();
        let cost: f64 = state.policies[k]
            .active()
            .iter()
            .map(|&j| placement_costs[k][j])
            .sum();
        ProviderProfit {
            profit: revenue - cost,
            revenue,
        }
    })
}

/// Per-agent aggregates that both the residual and its Jacobian need.
struct AgentTerms {
    weight: f64,
    sensitivity: f64,
    share: [f64; PROVIDERS],
    /// Σ_j Φ_jk (p_k − c_jk)
    margin: [f64; PROVIDERS],
}

fn agent_terms(state: &MarketState<'_>, m: &ChoiceMatrix, prices: &[f64; PROVIDERS]) -> Vec<AgentTerms> {
    m.rows
        .iter()
        .enumerate()
        .map(|(n, row)| {
            let margin = std::array::from_fn(|k| {
                m.active[k]
                    .iter()
                    .zip(&row.stations[k])
                    .map(|(&j, phi)| phi * (prices[k] - state.lmp[k][j]))
                    .sum()
            });
            AgentTerms {
                weight: state.ctx.agents()[n].demand_kwh,
                sensitivity: state.ctx.price_sensitivity(n),
                share: std::array::from_fn(|k| row.nest_shares[k]),
                margin,
            }
        })
        .collect()
}

fn residual_from_terms(terms: &[AgentTerms], active: &[bool; PROVIDERS]) -> [f64; PROVIDERS] {
    std::array::from_fn(|k| {
        if !active[k] {
            return 0.0;
        }
        terms
            .iter()
            .map(|t| t.weight * (t.share[k] + t.sensitivity * (1.0 - t.share[k]) * t.margin[k]))
            .sum()
    })
}

/// ∂F_k/∂p_m of the FOC residual.
fn jacobian_from_terms(terms: &[AgentTerms], active: &[bool; PROVIDERS]) -> [[f64; PROVIDERS]; PROVIDERS] {
    let mut jac = [[0.0; PROVIDERS]; PROVIDERS];
    for t in terms {
        let a = t.sensitivity;
        for k in (0..PROVIDERS).filter(|&k| active[k]) {
            for m in (0..PROVIDERS).filter(|&m| active[m]) {
                let own = if k == m { 1.0 } else { 0.0 };
                let d_share = a * t.share[k] * (own - t.share[m]);
                let d_margin = a * (own - t.share[m]) * t.margin[k] + own * t.share[k];
                jac[k][m] += t.weight * (d_share * (1.0 - a * t.margin[k]) + a * (1.0 - t.share[k]) * d_margin);
            }
        }
    }
    jac
}

fn active_mask(state: &MarketState<'_>) -> [bool; PROVIDERS] {
    std::array::from_fn(|k| state.is_active(k))
}

/// ∂Π_k/∂p_k for every provider (0 for inactive ones).
pub fn foc_residual(state: &MarketState<'_>, prices: &[f64; PROVIDERS]) -> Result<[f64; PROVIDERS], PricingError> {
    let m = state.choice_matrix(prices)?;
    Ok(residual_from_terms(&agent_terms(state, &m, prices), &active_mask(state)))
}

/// Analytic Jacobian of [`foc_residual`].
pub fn foc_jacobian(
    state: &MarketState<'_>,
    prices: &[f64; PROVIDERS],
) -> Result<[[f64; PROVIDERS]; PROVIDERS], PricingError> {
    let m = state.choice_matrix(prices)?;
    Ok(jacobian_from_terms(&agent_terms(state, &m, prices), &active_mask(state)))
}

fn inf_norm(v: &[f64; PROVIDERS]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Start point: mean wholesale price plus the logit markup 1 / |β̄|, where
/// β̄ = β · mean(1 / income).
fn canonical_start(state: &MarketState<'_>) -> [f64; PROVIDERS] {
    let agents = state.ctx.agents();
    let mean_sensitivity = if agents.is_empty() {
        0.0
    } else {
        (0..agents.len())
            .map(|n| state.ctx.price_sensitivity(n).abs())
            .sum::<f64>()
            / agents.len() as f64
    };
    let markup = if mean_sensitivity > 0.0 {
        1.0 / mean_sensitivity
    } else {
        0.0
    };
    let active = state.active();
    std::array::from_fn(|k| {
        if active[k].is_empty() {
            return 0.0;
        }
        let mean_c = active[k].iter().map(|&j| state.lmp[k][j]).sum::<f64>() / active[k].len() as f64;
        mean_c + markup
    })
}

fn newton_from(
    state: &MarketState<'_>,
    start: [f64; PROVIDERS],
    opts: &BertrandOptions,
) -> Result<BertrandSolution, PricingError> {
    let mask = active_mask(state);
    let idx: Vec<usize> = (0..PROVIDERS).filter(|&k| mask[k]).collect();
    let finish = |p: [f64; PROVIDERS], iterations, residual| BertrandSolution {
        prices: PriceVector(std::array::from_fn(|k| mask[k].then_some(p[k]))),
        iterations,
        residual,
    };
    let eval = |p: &[f64; PROVIDERS]| -> Result<Vec<AgentTerms>, PricingError> {
        let m = state.choice_matrix(p)?;
        Ok(agent_terms(state, &m, p))
    };

    let mut p = start;
    let mut terms = eval(&p)?;
    let mut f = residual_from_terms(&terms, &mask);
    let mut norm = inf_norm(&f);
    let mut iterations = 0;
    while norm > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(PricingError::NonConvergence {
                iterations,
                residual: norm,
            });
        }
        let jac = jacobian_from_terms(&terms, &mask);
        let a = DMatrix::from_fn(idx.len(), idx.len(), |r, c| jac[idx[r]][idx[c]]);
        let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&k| -f[k]));
        let step = a.lu().solve(&rhs).ok_or(PricingError::NonConvergence {
            iterations,
            residual: norm,
        })?;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let mut trial = p;
            for (r, &k) in idx.iter().enumerate() {
                trial[k] += t * step[r];
            }
            let trial_terms = eval(&trial)?;
            let trial_f = residual_from_terms(&trial_terms, &mask);
            let trial_norm = inf_norm(&trial_f);
            if trial_norm < norm {
                accepted = Some((trial, trial_terms, trial_f, trial_norm));
                break;
            }
            t *= 0.5;
        }
        let Some((np, nterms, nf, nnorm)) = accepted else {
            return Err(PricingError::NonConvergence {
                iterations,
                residual: norm,
            });
        };
        p = np;
        terms = nterms;
        f = nf;
        norm = nnorm;
        iterations += 1;
    }
    Ok(finish(p, iterations, norm))
}

/// Equilibrium prices from the canonical start.
pub fn solve_bertrand(state: &MarketState<'_>) -> Result<BertrandSolution, PricingError> {
    solve_bertrand_with(state, &BertrandOptions::default())
}

pub fn solve_bertrand_with(
    state: &MarketState<'_>,
    opts: &BertrandOptions,
) -> Result<BertrandSolution, PricingError> {
    let beta = state.ctx.coefficients().beta;
    let any_active = (0..PROVIDERS).any(|k| state.is_active(k));
    if any_active && beta >= 0.0 {
        return Err(PricingError::Unbounded(beta));
    }
    newton_from(state, canonical_start(state), opts)
}

/// Canonical solve plus `opts.extra_starts` seeded random restarts; returns
/// every distinct root found (canonical first). Diagnostic only.
pub fn solve_bertrand_multistart(
    state: &MarketState<'_>,
    opts: &BertrandOptions,
) -> Result<Vec<BertrandSolution>, PricingError> {
    let canonical = solve_bertrand_with(state, opts)?;
    let base = canonical_start(state);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut roots = vec![canonical];
    for _ in 0..opts.extra_starts {
        let start = std::array::from_fn(|k| base[k] * rng.random_range(0.25..4.0));
        let Ok(sol) = newton_from(state, start, opts) else {
            continue;
        };
        let is_new = roots.iter().all(|r| {
            let (a, b) = (r.prices.dense(), sol.prices.dense());
            (0..PROVIDERS).any(|k| (a[k] - b[k]).abs() > 1e-6 * a[k].abs().max(1.0))
        });
        if is_new {
            roots.push(sol);
        }
    }
    Ok(roots)
}
