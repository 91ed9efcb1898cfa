//! Competitive EV charging-station siting on a coupled road and power network.
//!
//! Three providers (Level 1, 2 and 3 charging) choose station sites from a
//! shared candidate list over several planning stages. Each stage combines:
//!
//! - [`demand_model`]: nested-logit station choice and expected energy demand,
//! - [`pricing_game`]: Bertrand equilibrium retail prices for fixed placements,
//! - [`power_grid`]: AC power flow and the generator-deviation impact metric,
//! - [`qos_sim`]: Monte-Carlo service delay and coverage estimates,
//! - [`placement_game`]: Bayesian best responses over all placement policies,
//! - [`scenario`]: configuration, multi-stage orchestration and reports.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod demand_model;
pub mod placement_game;
pub mod power_grid;
pub mod pricing_game;
pub mod qos_sim;
pub mod road_network;
pub mod scenario;
pub mod seed;
pub mod sites;
