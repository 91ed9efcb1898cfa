use super::report::{heatmap, ProviderReport, ReportWriter, StageReport, Summary};
use super::{Scenario, ScenarioError};
use crate::placement_game::{evaluate_market, play_stage};
use crate::pricing_game::{provider_profit, solve_bertrand, MarketState};
use crate::qos_sim::simulate_qos;
use crate::sites::{PlacementPolicy, PROVIDERS};

/// Plays stage `stage` (0-based) starting from `previous` placements.
pub fn run_stage(
    sc: &Scenario,
    stage: usize,
    previous: &[PlacementPolicy; PROVIDERS],
) -> Result<StageReport, ScenarioError> {
    let ctx = sc.choice_context(stage)?;
    let inputs = sc.inputs(&ctx);
    let game = sc.stage_game(stage);
    let outcome = play_stage(&inputs, &game, previous).map_err(|source| ScenarioError::Game {
        stage: stage + 1,
        source,
    })?;
    let policies = outcome.policies;

    let state = MarketState::new(&ctx, policies.clone(), sc.lmp.clone())?;
    let prices = solve_bertrand(&state)?.prices;
    let dense = prices.dense();
    let demand = state.demand(&dense)?;
    let profits = provider_profit(&state, &dense, &game.costs)?;
    let qos = simulate_qos(
        &ctx,
        &sc.network,
        &sc.distances,
        &sc.candidates,
        &policies,
        &dense,
        &game.qos,
    )?;

    let ids = |p: &PlacementPolicy| -> Vec<u32> { p.active().iter().map(|&j| sc.candidates[j].id).collect() };
    let mut providers = Vec::with_capacity(PROVIDERS);
    for k in 0..PROVIDERS {
        let impact = if policies[k].count() == 0 {
            0.0
        } else {
            evaluate_market(&inputs, &game, &policies, k)
                .map_err(|source| ScenarioError::Game {
                    stage: stage + 1,
                    source,
                })?
                .impact
        };
        let chosen = outcome.evaluations[k].find(&policies[k]);
        let new_stations = policies[k]
            .active()
            .into_iter()
            .filter(|&j| !previous[k].get(j))
            .map(|j| sc.candidates[j].id)
            .collect();
        providers.push(ProviderReport {
            level: k + 1,
            policy: policies[k].to_string(),
            stations: ids(&policies[k]),
            new_stations,
            price: prices.0[k],
            demand_kwh: demand.demand_kwh[k].clone(),
            revenue: profits[k].revenue,
            placement_cost: profits[k].revenue - profits[k].profit,
            profit: profits[k].profit,
            impact,
            expected_utility: chosen.map_or(0.0, |e| e.expected_utility),
            utility_se: chosen.map_or(0.0, |e| e.utility_se),
            qos: qos[k],
        });
    }

    let station_counts = std::array::from_fn(|k| policies[k].count());
    Ok(StageReport {
        stage: stage + 1,
        ev_count: ctx.agents().len(),
        seed: sc.stage_seed(stage),
        config_hash: sc.config_hash.clone(),
        providers,
        cumulative_stations: station_counts.iter().sum(),
        station_counts,
        heatmap: heatmap(&sc.network, ctx.agents(), &sc.config.heatmap)?,
    })
}

/// Runs every stage in order, locking each stage's placements into the
/// next. With a writer, each stage report is written as soon as it is done
/// and the summary records any error, so completed stages survive a failure.
pub fn run_multistage(sc: &Scenario, writer: Option<&ReportWriter>) -> Result<Vec<StageReport>, ScenarioError> {
    let l = sc.candidates.len();
    let mut previous: [PlacementPolicy; PROVIDERS] = std::array::from_fn(|_| PlacementPolicy::empty(l));
    let mut reports = Vec::with_capacity(sc.stage_count());
    let mut failure = None;
    for stage in 0..sc.stage_count() {
        match run_stage(sc, stage, &previous) {
            Ok(report) => {
                if let Some(w) = writer {
                    w.write_stage(&report)?;
                }
                previous = std::array::from_fn(|k| report.providers[k].policy.parse().expect("own output"));
                reports.push(report);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(w) = writer {
        w.write_summary(&Summary::new(&sc.config_hash, sc.config.seed, &reports, failure.as_ref()))?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(reports),
    }
}
