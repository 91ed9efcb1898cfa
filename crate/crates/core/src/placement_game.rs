//! Bayesian placement game.
//!
//! A provider does not know where its opponents will build. It treats every
//! still-free opponent placement bit as an independent Bernoulli(ρ) draw,
//! averages revenue and grid impact over sampled opponent policies, and
//! picks the QoS-feasible policy with the largest expected utility
//!
//! ```text
//! 𝔼U_k = 𝔼R_k − Θ_kᵀ S_k − w · 𝔼B_k
//! ```

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand_model::{ChoiceContext, DemandForecast};
use crate::power_grid::{GridError, GridModel};
use crate::pricing_game::{solve_bertrand, MarketState, PriceVector, PricingError};
use crate::qos_sim::{simulate_qos, QosConfig, QosError, QosEstimate};
use crate::road_network::{DistanceTable, RoadNetwork};
use crate::seed;
use crate::sites::{Candidate, PlacementPolicy, PROVIDERS};

/// Largest number of free bits a best response will enumerate.
pub const MAX_FREE_BITS: usize = 20;
/// Share of failed opponent samples above which an evaluation is rejected.
pub const MAX_FAILED_SHARE: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid game configuration: {0}")]
    Config(String),
    #[error("provider {} has no policy meeting the QoS thresholds; nearest: {}", .provider + 1, .nearest)]
    Infeasible { provider: usize, nearest: NearestFeasible },
    #[error("provider {} policy {policy}: {failed} of {total} opponent samples failed ({reason})", .provider + 1)]
    SampleFailure {
        provider: usize,
        policy: PlacementPolicy,
        failed: usize,
        total: usize,
        reason: String,
    },
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Qos(#[from] QosError),
}

/// The policy closest to meeting the QoS thresholds when none does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestFeasible {
    pub policy: PlacementPolicy,
    pub delay_probability: f64,
    pub coverage: f64,
    /// Summed threshold violation.
    pub violation: f64,
}

impl std::fmt::Display for NearestFeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (Υ = {:.4}, Ξ = {:.4}, violation {:.4})",
            self.policy, self.delay_probability, self.coverage, self.violation
        )
    }
}

/// How the coverage threshold is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageDirection {
    /// Ξ_k ≥ Ξ⁰
    #[default]
    AtLeast,
    /// Ξ_k ≤ Ξ⁰
    AtMost,
}

fn default_rho() -> f64 {
    0.5
}

fn default_samples() -> usize {
    32
}

fn default_upsilon() -> f64 {
    1.0
}

fn default_hours() -> f64 {
    24.0
}

fn one() -> f64 {
    1.0
}

fn default_rounds() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Impact weight w ≥ 0.
    #[serde(default)]
    pub weight: f64,
    /// Θ: `costs[k][j]` is provider k's cost of building at candidate j.
    #[serde(default)]
    pub costs: [Vec<f64>; PROVIDERS],
    /// Prior probability that an opponent builds on a free site.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Opponent policy samples per evaluation.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Υ⁰
    #[serde(default = "default_upsilon")]
    pub max_delay_probability: f64,
    /// Ξ⁰
    #[serde(default)]
    pub coverage_threshold: f64,
    #[serde(default)]
    pub coverage_direction: CoverageDirection,
    #[serde(default)]
    pub qos: QosConfig,
    /// Real EVs represented by one simulated agent when converting demand to grid load.
    #[serde(default = "one")]
    pub ev_scale: f64,
    /// Length of the demand period, hours.
    #[serde(default = "default_hours")]
    pub hours_per_period: f64,
    /// Repeat the 1→2→3 best-response pass until no policy changes.
    #[serde(default)]
    pub fixed_point: bool,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            weight: 0.0,
            costs: Default::default(),
            rho: default_rho(),
            samples: default_samples(),
            max_delay_probability: default_upsilon(),
            coverage_threshold: 0.0,
            coverage_direction: CoverageDirection::default(),
            qos: QosConfig::default(),
            ev_scale: 1.0,
            hours_per_period: default_hours(),
            fixed_point: false,
            max_rounds: default_rounds(),
            seed: 0,
        }
    }
}

impl GameConfig {
    pub fn validate(&self, candidates: usize) -> Result<(), GameError> {
        let bad = |m: String| Err(GameError::Config(m));
        if !(self.weight >= 0.0) {
            return bad(format!("impact weight {} < 0", self.weight));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho {} outside (0, 1)", self.rho));
        }
        if self.samples == 0 {
            return bad("at least one opponent sample is required".into());
        }
        for (k, row) in self.costs.iter().enumerate() {
            if row.len() != candidates {
                return bad(format!(
                    "provider {} has {} placement costs, expected {candidates}",
                    k + 1,
                    row.len()
                ));
            }
            if let Some(c) = row.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
                return bad(format!("provider {} placement cost {c} is not positive", k + 1));
            }
        }
        if !(self.ev_scale > 0.0) || !(self.hours_per_period > 0.0) {
            return bad("ev_scale and hours_per_period must be positive".into());
        }
        if self.fixed_point && self.max_rounds == 0 {
            return bad("max_rounds must be ≥ 1".into());
        }
        self.qos.validate()?;
        Ok(())
    }

    fn qos_binding(&self) -> bool {
        self.max_delay_probability < 1.0
            || match self.coverage_direction {
                CoverageDirection::AtLeast => self.coverage_threshold > 0.0,
                CoverageDirection::AtMost => true,
            }
    }

    fn violation(&self, q: &QosEstimate) -> f64 {
        let delay = (q.delay_probability - self.max_delay_probability).max(0.0);
        let coverage = match self.coverage_direction {
            CoverageDirection::AtLeast => (self.coverage_threshold - q.coverage).max(0.0),
            CoverageDirection::AtMost => (q.coverage - self.coverage_threshold).max(0.0),
        };
        delay + coverage
    }
}

/// Everything fixed within one stage.
#[derive(Clone, Copy)]
pub struct GameInputs<'a> {
    pub ctx: &'a ChoiceContext,
    pub net: &'a RoadNetwork,
    pub distances: &'a DistanceTable,
    pub candidates: &'a [Candidate],
    pub grid: &'a GridModel,
    /// `lmp[k][j]`, currency per kWh.
    pub lmp: &'a [Vec<f64>; PROVIDERS],
}

/// Prices, revenues and provider k's grid impact for one fully specified market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketOutcome {
    pub prices: PriceVector,
    pub demand: DemandForecast,
    pub revenue: [f64; PROVIDERS],
    /// B(all providers' load) − B(opponents' load only).
    pub impact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub policy: PlacementPolicy,
    pub expected_revenue: f64,
    pub expected_impact: f64,
    pub placement_cost: f64,
    pub expected_utility: f64,
    /// Monte-Carlo standard error of the utility.
    pub utility_se: f64,
    pub samples: usize,
    pub failed_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qos: Option<QosEstimate>,
    pub feasible: bool,
}

/// Evaluations of every policy a provider considered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEvaluation {
    pub provider: usize,
    pub entries: Vec<PolicyEvaluation>,
}

impl StrategyEvaluation {
    pub fn find(&self, policy: &PlacementPolicy) -> Option<&PolicyEvaluation> {
        self.entries.iter().find(|e| &e.policy == policy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub policy: PlacementPolicy,
    pub evaluation: StrategyEvaluation,
}

fn mw_loads(
    inputs: &GameInputs<'_>,
    cfg: &GameConfig,
    demand: &DemandForecast,
    include: impl Fn(usize) -> bool,
) -> Vec<(u32, f64)> {
    let mut loads: Vec<(u32, f64)> = Vec::new();
    for k in (0..PROVIDERS).filter(|&k| include(k)) {
        for (&j, &psi) in demand.active[k].iter().zip(&demand.demand_kwh[k]) {
            let mw = psi * cfg.ev_scale / cfg.hours_per_period / 1000.0;
            let bus = inputs.candidates[j].bus;
            match loads.iter_mut().find(|(b, _)| *b == bus) {
                Some(entry) => entry.1 += mw,
                None => loads.push((bus, mw)),
            }
        }
    }
    loads.sort_by_key(|&(b, _)| b);
    loads
}

/// Solves prices for a complete placement triple and measures provider `k`'s
/// revenue share and marginal grid impact.
pub fn evaluate_market(
    inputs: &GameInputs<'_>,
    cfg: &GameConfig,
    policies: &[PlacementPolicy; PROVIDERS],
    k: usize,
) -> Result<MarketOutcome, GameError> {
    let state = MarketState::new(inputs.ctx, policies.clone(), inputs.lmp.clone())?;
    let prices = solve_bertrand(&state)?.prices;
    let dense = prices.dense();
    let demand = state.demand(&dense)?;
    let revenue = std::array::from_fn(|m| {
        demand.active[m]
            .iter()
            .zip(&demand.demand_kwh[m])
            .map(|(&j, psi)| (dense[m] - inputs.lmp[m][j]) * psi)
            .sum()
    });
    let impact = if policies[k].count() == 0 {
        0.0
    } else {
        let all = mw_loads(inputs, cfg, &demand, |_| true);
        let others = mw_loads(inputs, cfg, &demand, |m| m != k);
        inputs.grid.impact(&all)?.b - inputs.grid.impact(&others)?.b
    };
    Ok(MarketOutcome {
        prices,
        demand,
        revenue,
        impact,
    })
}

/// Draws opponent policies: known placements stay, every other site a
/// provider may use is switched on with probability ρ. Slot `k` is left as given.
pub fn sample_opponents<R: Rng>(
    candidates: &[Candidate],
    rho: f64,
    k: usize,
    known: &[PlacementPolicy; PROVIDERS],
    rng: &mut R,
) -> [PlacementPolicy; PROVIDERS] {
    std::array::from_fn(|m| {
        if m == k {
            return known[m].clone();
        }
        PlacementPolicy(
            candidates
                .iter()
                .enumerate()
                .map(|(j, c)| known[m].get(j) || (c.allows(m) && rng.random::<f64>() < rho))
                .collect(),
        )
    })
}

fn opponent_samples(
    inputs: &GameInputs<'_>,
    cfg: &GameConfig,
    k: usize,
    known: &[PlacementPolicy; PROVIDERS],
) -> Vec<[PlacementPolicy; PROVIDERS]> {
    let mut rng = seed::rng(seed::derive(cfg.seed, k as u64));
    (0..cfg.samples)
        .map(|_| sample_opponents(inputs.candidates, cfg.rho, k, known, &mut rng))
        .collect()
}

fn placement_cost(cfg: &GameConfig, k: usize, policy: &PlacementPolicy) -> f64 {
    policy.active().iter().map(|&j| cfg.costs[k][j]).sum()
}

/// Reduces per-sample (revenue, impact) pairs to an evaluation.
fn summarise(
    cfg: &GameConfig,
    k: usize,
    policy: &PlacementPolicy,
    results: Vec<Result<(f64, f64), GameError>>,
) -> Result<PolicyEvaluation, GameError> {
    let total = results.len();
    let mut ok = Vec::with_capacity(total);
    let mut last_err = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => last_err = Some(e),
        }
    }
    let failed = total - ok.len();
    if ok.is_empty() || failed as f64 > MAX_FAILED_SHARE * total as f64 {
        return Err(GameError::SampleFailure {
            provider: k,
            policy: policy.clone(),
            failed,
            total,
            reason: last_err.map_or_else(|| "no samples".into(), |e| e.to_string()),
        });
    }
    let n = ok.len() as f64;
    let cost = placement_cost(cfg, k, policy);
    let expected_revenue = ok.iter().map(|v| v.0).sum::<f64>() / n;
    let expected_impact = ok.iter().map(|v| v.1).sum::<f64>() / n;
    let utility_se = if ok.len() > 1 {
        let mean = expected_revenue - cfg.weight * expected_impact;
        let var = ok
            .iter()
            .map(|(r, b)| (r - cfg.weight * b - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(PolicyEvaluation {
        policy: policy.clone(),
        expected_revenue,
        expected_impact,
        placement_cost: cost,
        expected_utility: expected_revenue - cost - cfg.weight * expected_impact,
        utility_se,
        samples: ok.len(),
        failed_samples: failed,
        qos: None,
        feasible: true,
    })
}

fn sample_value(
    inputs: &GameInputs<'_>,
    cfg: &GameConfig,
    k: usize,
    policy: &PlacementPolicy,
    sample: &[PlacementPolicy; PROVIDERS],
) -> Result<(f64, f64), GameError> {
    if policy.count() == 0 {
        return Ok((0.0, 0.0));
    }
    let mut market = sample.clone();
    market[k] = policy.clone();
    let out = evaluate_market(inputs, cfg, &market, k)?;
    Ok((out.revenue[k], out.impact))
}

/// 𝔼U_k of `policy` against opponents drawn around `known` placements.
pub fn expected_utility(
    inputs: &GameInputs<'_>,
    cfg: &GameConfig,
    k: usize,
    policy: &PlacementPolicy,
    known: &[PlacementPolicy; PROVIDERS],
) -> Result<PolicyEvaluation, GameError> {
    cfg.validate(inputs.candidates.len())?;
    let samples = opponent_samples(inputs, cfg, k, known);
    let results = samples
        .par_iter()
        .map(|s| sample_value(inputs, cfg, k, policy, s))
        .collect();
    summarise(cfg, k, policy, results)
}

/// Υ_k and Ξ_k of `policy` with opponents at their known placements.
pub fn policy_qos(
    inputs: &GameInputs<'_>,
    cfg: &GameConfig,
    k: usize,
    policy: &PlacementPolicy,
    known: &[PlacementPolicy; PROVIDERS],
) -> Result<QosEstimate, GameError> {
    let mut market = known.clone();
    market[k] = policy.clone();
    let state = MarketState::new(inputs.ctx, market.clone(), inputs.lmp.clone())?;
    let prices = solve_bertrand(&state)?.prices.dense();
    let q = simulate_qos(
        inputs.ctx,
        inputs.net,
        inputs.distances,
        inputs.candidates,
        &market,
        &prices,
        &cfg.qos,
    )?;
    Ok(q[k])
}

/// Utility-descending, then fewer stations, then the smaller bit vector.
fn preference(a: &PolicyEvaluation, b: &PolicyEvaluation) -> Ordering {
    b.expected_utility
        .total_cmp(&a.expected_utility)
        .then(a.policy.count().cmp(&b.policy.count()))
        .then(a.policy.cmp(&b.policy))
}

/// Every policy that keeps `locked` and only uses sites open to provider `k`.
pub fn candidate_policies(
    candidates: &[Candidate],
    k: usize,
    locked: &PlacementPolicy,
) -> Result<Vec<PlacementPolicy>, GameError> {
    let free: Vec<usize> = (0..candidates.len())
        .filter(|&j| candidates[j].allows(k) && !locked.get(j))
        .collect();
    if free.len() > MAX_FREE_BITS {
        return Err(GameError::Config(format!(
            "{} free sites exceed the enumeration limit of {MAX_FREE_BITS}",
            free.len()
        )));
    }
    Ok((0..1u64 << free.len())
        .map(|mask| {
            let mut bits = locked.0.clone();
            for (b, &j) in free.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    bits[j] = true;
                }
            }
            PlacementPolicy(bits)
        })
        .collect())
}

/// Enumerates and evaluates every admissible policy of provider `k` and
/// returns the feasible argmax.
pub fn best_response(
    inputs: &GameInputs<'_>,
    cfg: &GameConfig,
    k: usize,
    known: &[PlacementPolicy; PROVIDERS],
    previous: &PlacementPolicy,
) -> Result<BestResponse, GameError> {
    let l = inputs.candidates.len();
    cfg.validate(l)?;
    if previous.len() != l || known.iter().any(|p| p.len() != l) {
        return Err(GameError::Config(format!("policies must have length {l}")));
    }
    let policies = candidate_policies(inputs.candidates, k, previous)?;
    let samples = opponent_samples(inputs, cfg, k, known);

    let pairs: Vec<(usize, usize)> = (0..policies.len())
        .flat_map(|p| (0..samples.len()).map(move |s| (p, s)))
        .collect();
    let values: Vec<Result<(f64, f64), GameError>> = pairs
        .par_iter()
        .map(|&(p, s)| sample_value(inputs, cfg, k, &policies[p], &samples[s]))
        .collect();
    let mut values = values.into_iter();
    let mut entries = Vec::with_capacity(policies.len());
    for policy in &policies {
        let chunk: Vec<_> = values.by_ref().take(samples.len()).collect();
        entries.push(summarise(cfg, k, policy, chunk)?);
    }

    if cfg.qos_binding() {
        let qos: Vec<Result<QosEstimate, GameError>> = policies
            .par_iter()
            .map(|p| policy_qos(inputs, cfg, k, p, known))
            .collect();
        for (e, q) in entries.iter_mut().zip(qos) {
            let q = q?;
            e.feasible = cfg.violation(&q) == 0.0;
            e.qos = Some(q);
        }
    }

    let best = entries
        .iter()
        .filter(|e| e.feasible)
        .min_by(|a, b| preference(a, b))
        .map(|e| e.policy.clone());
    let Some(policy) = best else {
        let nearest = entries
            .iter()
            .filter_map(|e| e.qos.map(|q| (e, q, cfg.violation(&q))))
            .min_by(|a, b| a.2.total_cmp(&b.2).then(preference(a.0, b.0)))
            .map(|(e, q, v)| NearestFeasible {
                policy: e.policy.clone(),
                delay_probability: q.delay_probability,
                coverage: q.coverage,
                violation: v,
            })
            .expect("at least the locked policy is evaluated");
        return Err(GameError::Infeasible { provider: k, nearest });
    };

    let mut evaluation = StrategyEvaluation { provider: k, entries };
    if !cfg.qos_binding() {
        let q = policy_qos(inputs, cfg, k, &policy, known)?;
        if let Some(e) = evaluation.entries.iter_mut().find(|e| e.policy == policy) {
            e.qos = Some(q);
        }
    }
    Ok(BestResponse { policy, evaluation })
}

/// Result of one stage of sequential best responses.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub policies: [PlacementPolicy; PROVIDERS],
    pub evaluations: [StrategyEvaluation; PROVIDERS],
    pub rounds: usize,
    /// False only when the fixed-point iteration hit its round limit.
    pub converged: bool,
}

/// Providers respond in order 1→2→3, each seeing the updates before it.
/// Placements from `previous` are never removed.
pub fn play_stage(
    inputs: &GameInputs<'_>,
    cfg: &GameConfig,
    previous: &[PlacementPolicy; PROVIDERS],
) -> Result<StageOutcome, GameError> {
    let rounds = if cfg.fixed_point { cfg.max_rounds } else { 1 };
    let mut current = previous.clone();
    let mut evaluations: Vec<StrategyEvaluation> = Vec::new();
    for round in 1..=rounds {
        let before = current.clone();
        evaluations.clear();
        for k in 0..PROVIDERS {
            // later rounds keep this stage's own additions open for revision
            let br = best_response(inputs, cfg, k, &current, &previous[k])?;
            current[k] = br.policy;
            evaluations.push(br.evaluation);
        }
        if !cfg.fixed_point || current == before {
            return Ok(StageOutcome {
                policies: current,
                evaluations: evaluations.try_into().expect("one per provider"),
                rounds: round,
                converged: true,
            });
        }
    }
    Ok(StageOutcome {
        policies: current,
        evaluations: evaluations.try_into().expect("one per provider"),
        rounds,
        converged: false,
    })
}

/// Type-space test: true iff, for every other strategy j,
/// `Θᵀ(S_j − S_l) − (𝔼R_j − 𝔼R_l) + w (B_j − B_l) > 0`.
pub fn hypervolume_contains(theta: &[f64], l: &PlacementPolicy, evals: &StrategyEvaluation, w: f64) -> bool {
    let Some(base) = evals.find(l) else {
        return false;
    };
    let cost = |p: &PlacementPolicy| -> f64 { p.active().iter().map(|&j| theta[j]).sum() };
    let cost_l = cost(l);
    evals.entries.iter().filter(|e| &e.policy != l).all(|e| {
        cost(&e.policy) - cost_l - (e.expected_revenue - base.expected_revenue)
            + w * (e.expected_impact - base.expected_impact)
            > 0.0
    })
}
