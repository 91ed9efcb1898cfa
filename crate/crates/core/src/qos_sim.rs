//! Monte-Carlo estimates of service delay probability Υ_k and route
//! coverage Ξ_k.
//!
//! Each replication replays one day: every EV departs at a uniform time,
//! picks a station (or home charging) from its nested-logit probabilities
//! and occupies a charger for its session. An arrival that finds every
//! charger busy counts as delayed and leaves without charging.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand_model::{ChoiceContext, DemandError};
use crate::road_network::{DistanceTable, NodeId, RoadError, RoadNetwork};
use crate::seed;
use crate::sites::{active_stations, Candidate, PlacementPolicy, PROVIDERS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QosError {
    #[error("invalid QoS configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Road(#[from] RoadError),
}

fn default_replications() -> usize {
    20
}

fn one() -> usize {
    1
}

fn default_capacity() -> u32 {
    4
}

fn default_window() -> f64 {
    24.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "one")]
    pub trips_per_ev: usize,
    /// Chargers per station.
    #[serde(default = "default_capacity")]
    pub capacity: u32,
    /// Accessibility radius, km; `None` uses the choice model's d_th.
    #[serde(default)]
    pub radius_km: Option<f64>,
    /// Departures are uniform over `[0, window)` hours; 0 makes every EV leave at t = 0.
    #[serde(default = "default_window")]
    pub departure_window_h: f64,
    /// When set, arrival at a station is delayed by the origin→station drive.
    #[serde(default)]
    pub speed_kmh: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for QosConfig {
    fn default() -> Self {
        Self {
            replications: default_replications(),
            trips_per_ev: 1,
            capacity: default_capacity(),
            radius_km: None,
            departure_window_h: default_window(),
            speed_kmh: None,
            seed: 0,
        }
    }
}

impl QosConfig {
    pub fn validate(&self) -> Result<(), QosError> {
        if self.replications == 0 {
            return Err(QosError::Config("replications must be ≥ 1".into()));
        }
        if self.capacity == 0 {
            return Err(QosError::Config("capacity must be ≥ 1".into()));
        }
        if !(self.departure_window_h >= 0.0) {
            return Err(QosError::Config("departure window must be ≥ 0".into()));
        }
        if matches!(self.radius_km, Some(r) if !(r >= 0.0)) {
            return Err(QosError::Config("radius must be ≥ 0".into()));
        }
        if matches!(self.speed_kmh, Some(v) if !(v > 0.0)) {
            return Err(QosError::Config("speed must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QosEstimate {
    /// Υ_k: delayed / attempts, 0 when there were no attempts.
    pub delay_probability: f64,
    pub delay_se: f64,
    /// Ξ_k: mean number of accessible stations per route.
    pub coverage: f64,
    pub coverage_se: f64,
    pub attempts: u64,
    pub delayed: u64,
}

/// One charging attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time_h: f64,
    pub duration_h: f64,
    pub station: usize,
}

/// Replays arrivals in time order (stable for ties) against stations with
/// `capacity` chargers each; returns the delayed flag of every arrival in
/// input order.
pub fn replay_arrivals(arrivals: &[Arrival], capacity: u32) -> Vec<bool> {
    let mut order: Vec<usize> = (0..arrivals.len()).collect();
    order.sort_by(|&a, &b| arrivals[a].time_h.total_cmp(&arrivals[b].time_h));
    let mut busy_until: std::collections::HashMap<usize, Vec<f64>> = Default::default();
    let mut delayed = vec![false; arrivals.len()];
    for i in order {
        let a = arrivals[i];
        let busy = busy_until.entry(a.station).or_default();
        busy.retain(|&end| end > a.time_h);
        if busy.len() < capacity as usize {
            busy.push(a.time_h + a.duration_h);
        } else {
            delayed[i] = true;
        }
    }
    delayed
}

/// Number of `stations` (road nodes) within `radius` of some node on `route`.
fn accessible(route: &[NodeId], stations: &[NodeId], radius: f64, d: &DistanceTable) -> Result<usize, RoadError> {
    let mut count = 0;
    for &s in stations {
        for &r in route {
            if d.get(r, s)? <= radius {
                count += 1;
                break;
            }
        }
    }
    Ok(count)
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Υ_k and Ξ_k for the population in `ctx` under the given placements and prices.
pub fn simulate_qos(
    ctx: &ChoiceContext,
    net: &RoadNetwork,
    distances: &DistanceTable,
    candidates: &[Candidate],
    policies: &[PlacementPolicy; PROVIDERS],
    prices: &[f64; PROVIDERS],
    cfg: &QosConfig,
) -> Result<[QosEstimate; PROVIDERS], QosError> {
    cfg.validate()?;
    let active = active_stations(policies);
    let agents = ctx.agents();
    let radius = cfg.radius_km.unwrap_or(ctx.coefficients().d_th);

    let station_nodes: [Vec<NodeId>; PROVIDERS] =
        std::array::from_fn(|k| active[k].iter().map(|&j| candidates[j].node).collect());
    let mut coverage: [Vec<f64>; PROVIDERS] = Default::default();
    for a in agents {
        let route = net.shortest_path(a.origin, a.destination)?;
        for k in 0..PROVIDERS {
            coverage[k].push(accessible(&route.nodes, &station_nodes[k], radius, distances)? as f64);
        }
    }

    // (provider, station slot, probability) per agent; remaining mass is home charging
    let menus: Vec<Vec<(usize, usize, f64)>> = if active.iter().all(Vec::is_empty) {
        vec![Vec::new(); agents.len()]
    } else {
        ctx.choice_matrix(&active, prices)?
            .rows
            .iter()
            .map(|row| {
                (0..PROVIDERS)
                    .flat_map(|k| row.stations[k].iter().enumerate().map(move |(s, &p)| (k, s, p)))
                    .collect()
            })
            .collect()
    };
    let levels = ctx.levels();
    let offsets: [usize; PROVIDERS] = [0, active[0].len(), active[0].len() + active[1].len()];

    let per_rep: Vec<([u64; PROVIDERS], [u64; PROVIDERS])> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| -> Result<_, QosError> {
            let mut rng = seed::rng(seed::derive(cfg.seed, r as u64));
            let mut arrivals = Vec::new();
            let mut owner = Vec::new();
            for (n, a) in agents.iter().enumerate() {
                for _ in 0..cfg.trips_per_ev {
                    let depart = cfg.departure_window_h * rng.random::<f64>();
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let Some(&(k, s, _)) = menus[n].iter().find(|&&(_, _, p)| {
                        acc += p;
                        u < acc
                    }) else {
                        continue;
                    };
                    let drive = match cfg.speed_kmh {
                        Some(v) => distances.get(a.origin, station_nodes[k][s])? / v,
                        None => 0.0,
                    };
                    arrivals.push(Arrival {
                        time_h: depart + drive,
                        duration_h: levels[k].session_hours(a.demand_kwh),
                        station: offsets[k] + s,
                    });
                    owner.push(k);
                }
            }
            let delayed = replay_arrivals(&arrivals, cfg.capacity);
            let mut att = [0u64; PROVIDERS];
            let mut del = [0u64; PROVIDERS];
            for (&k, &d) in owner.iter().zip(&delayed) {
                att[k] += 1;
                del[k] += u64::from(d);
            }
            Ok((att, del))
        })
        .collect::<Result<_, _>>()?;

    Ok(std::array::from_fn(|k| {
        let attempts: u64 = per_rep.iter().map(|(a, _)| a[k]).sum();
        let delayed: u64 = per_rep.iter().map(|(_, d)| d[k]).sum();
        let (delay_probability, delay_se) = if attempts == 0 {
            (0.0, 0.0)
        } else {
            let p = delayed as f64 / attempts as f64;
            (p, (p * (1.0 - p) / attempts as f64).sqrt())
        };
        let (coverage, coverage_se) = mean_se(&coverage[k]);
        QosEstimate {
            delay_probability,
            delay_se,
            coverage,
            coverage_se,
            attempts,
            delayed,
        }
    }))
}
