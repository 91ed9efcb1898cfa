#![allow(dead_code)]

use evcity_core::demand_model::{
    ChoiceCoefficients, ChoiceContext, EvAgent, NestCoefficients, StationObservables,
};
use evcity_core::road_network::{Amenities, Edge, Node, NodeId, RoadNetwork};
use rand::Rng;

pub fn node(id: u32, x: f64, y: f64) -> Node {
    Node {
        id: NodeId(id),
        x,
        y,
        restaurant: false,
        shopping: false,
        supermarket: false,
    }
}

pub fn edge(a: u32, b: u32, length: f64) -> Edge {
    Edge {
        a: NodeId(a),
        b: NodeId(b),
        length,
    }
}

/// Every simple path from `from` to `to`, by depth-first enumeration.
pub fn all_simple_paths(n: usize, edges: &[(u32, u32, f64)], from: u32, to: u32) -> Vec<(Vec<u32>, f64)> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b, w) in edges {
        adj[a as usize].push((b, w));
        adj[b as usize].push((a, w));
    }
    let mut out = Vec::new();
    let mut path = vec![from];
    let mut seen = vec![false; n];
    seen[from as usize] = true;
    fn dfs(
        adj: &[Vec<(u32, f64)>],
        to: u32,
        path: &mut Vec<u32>,
        len: f64,
        seen: &mut [bool],
        out: &mut Vec<(Vec<u32>, f64)>,
    ) {
        let cur = *path.last().unwrap();
        if cur == to {
            out.push((path.clone(), len));
            return;
        }
        for &(nb, w) in &adj[cur as usize] {
            if !seen[nb as usize] {
                seen[nb as usize] = true;
                path.push(nb);
                dfs(adj, to, path, len + w, seen, out);
                path.pop();
                seen[nb as usize] = false;
            }
        }
    }
    dfs(&adj, to, &mut path, 0.0, &mut seen, &mut out);
    out
}

pub fn nest(sigma: f64) -> NestCoefficients {
    NestCoefficients {
        sigma,
        mu: -0.5,
        eta: 0.5,
        gamma: 0.2,
        lambda: 0.3,
        delta: 0.1,
    }
}

pub fn coefficients(beta: f64, sigmas: [f64; 3]) -> ChoiceCoefficients {
    ChoiceCoefficients {
        alpha: 1.0,
        beta,
        nests: sigmas.map(nest),
        d_th: 1.0,
        q_a: 10.0,
        q_b: 40.0,
        include_outside: true,
        levels: None,
    }
}

/// A random population with random station observables over `l` candidates.
pub fn random_context<R: Rng>(rng: &mut R, agents: usize, l: usize, beta: f64, sigmas: [f64; 3]) -> ChoiceContext {
    let agents: Vec<EvAgent> = (0..agents)
        .map(|i| EvAgent {
            id: i as u32,
            income: rng.random_range(30.0..90.0),
            origin: NodeId(0),
            destination: NodeId(1),
            demand_kwh: rng.random_range(10.0..40.0),
        })
        .collect();
    let observables = (0..agents.len())
        .map(|_| {
            (0..l)
                .map(|_| StationObservables {
                    deviation_km: rng.random_range(0.0..3.0),
                    near_destination: rng.random_bool(0.3),
                    amenities: Amenities {
                        restaurant: rng.random_bool(0.5),
                        shopping: rng.random_bool(0.5),
                        supermarket: rng.random_bool(0.5),
                    },
                })
                .collect()
        })
        .collect();
    ChoiceContext::new(coefficients(beta, sigmas), agents, observables).unwrap()
}

/// Grid of `cols × rows` unit blocks, ids row-major.
pub fn grid_network(cols: u32, rows: u32) -> RoadNetwork {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let id = r * cols + c;
            nodes.push(node(id, c as f64, r as f64));
            if c + 1 < cols {
                edges.push(edge(id, id + 1, 1.0));
            }
            if r + 1 < rows {
                edges.push(edge(id, id + cols, 1.0));
            }
        }
    }
    RoadNetwork::new(nodes, edges).unwrap()
}

pub fn bundled_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Positive stable variate with Laplace transform `exp(−t^α)`, 0 < α < 1
/// (Kanter's representation).
pub fn positive_stable<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    let u = rng.random_range(0.0..std::f64::consts::PI);
    let w: f64 = rand_distr::Distribution::sample(&rand_distr::Exp1, rng);
    let a = (alpha * u).sin().powf(alpha / (1.0 - alpha)) * ((1.0 - alpha) * u).sin()
        / u.sin().powf(1.0 / (1.0 - alpha));
    (a / w).powf((1.0 - alpha) / alpha)
}

/// Simulates utility maximisation with GEV errors whose CDF is
/// `exp(−Σ_k (Σ_j e^{−ε_j/σ_k})^{σ_k})`, plus an independent Gumbel outside
/// good, and returns choice frequencies `(per nest, outside)`.
pub fn gev_frequencies<R: Rng>(
    utilities: &[Vec<f64>],
    sigmas: &[f64],
    outside: Option<f64>,
    draws: usize,
    rng: &mut R,
) -> (Vec<Vec<f64>>, f64) {
    use rand_distr::{Distribution, Exp1};
    let mut counts: Vec<Vec<u64>> = utilities.iter().map(|u| vec![0; u.len()]).collect();
    let mut outside_count = 0u64;
    for _ in 0..draws {
        let mut best = f64::NEG_INFINITY;
        let mut arg = None;
        if let Some(u0) = outside {
            let e: f64 = Exp1.sample(rng);
            best = u0 - e.ln();
        }
        for (k, (u, &s)) in utilities.iter().zip(sigmas).enumerate() {
            // ε_j = σ (ln S − ln E_j) has the nest's joint GEV law
            let ln_s = if s < 1.0 { positive_stable(s, rng).ln() } else { 0.0 };
            for (j, &uj) in u.iter().enumerate() {
                let e: f64 = Exp1.sample(rng);
                let v = uj + s * (ln_s - e.ln());
                if v > best {
                    best = v;
                    arg = Some((k, j));
                }
            }
        }
        match arg {
            Some((k, j)) => counts[k][j] += 1,
            None => outside_count += 1,
        }
    }
    let n = draws as f64;
    (
        counts.iter().map(|c| c.iter().map(|&x| x as f64 / n).collect()).collect(),
        outside_count as f64 / n,
    )
}

/// Closed-form nested-logit probabilities written out directly, with a
/// per-nest max shift for range safety.
pub fn naive_nested_logit(utilities: &[Vec<f64>], sigmas: &[f64], outside: Option<f64>) -> (Vec<Vec<f64>>, f64) {
    let mut terms = Vec::new();
    let mut inner = Vec::new();
    let mut shift = f64::NEG_INFINITY;
    for (u, &s) in utilities.iter().zip(sigmas) {
        let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = u.iter().map(|x| ((x - m) / s).exp()).sum();
        // log of (Σ e^{U/σ})^σ
        let log_term = m + s * sum.ln();
        terms.push(log_term);
        inner.push((m, sum));
        shift = shift.max(log_term);
    }
    if let Some(u0) = outside {
        shift = shift.max(u0);
    }
    let denom: f64 = terms.iter().map(|t| (t - shift).exp()).sum::<f64>()
        + outside.map_or(0.0, |u0| (u0 - shift).exp());
    let probs = utilities
        .iter()
        .zip(sigmas)
        .zip(terms.iter().zip(&inner))
        .map(|((u, &s), (t, &(m, sum)))| {
            let nest_share = (t - shift).exp() / denom;
            u.iter().map(|x| nest_share * ((x - m) / s).exp() / sum).collect()
        })
        .collect();
    (probs, outside.map_or(0.0, |u0| (u0 - shift).exp() / denom))
}

/// Random nested instance: 1–3 nests, 1–10 alternatives, σ ∈ (0, 1], U ∈ [−20, 20].
pub fn random_instance<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, Vec<f64>) {
    let nests = rng.random_range(1..=3);
    let utilities = (0..nests)
        .map(|_| {
            let n = rng.random_range(1..=10);
            (0..n).map(|_| rng.random_range(-20.0..=20.0)).collect()
        })
        .collect();
    // (0, 1]: 1 − U[0, 1)
    let sigmas = (0..nests).map(|_| 1.0 - rng.random::<f64>()).collect();
    (utilities, sigmas)
}

/// A small self-contained market: grid road network, candidates on IEEE-14
/// load buses and a random population.
pub struct World {
    pub net: RoadNetwork,
    pub distances: evcity_core::road_network::DistanceTable,
    pub candidates: Vec<evcity_core::sites::Candidate>,
    pub ctx: ChoiceContext,
    pub grid: evcity_core::power_grid::GridModel,
    pub lmp: [Vec<f64>; 3],
}

impl World {
    pub fn random<R: Rng>(rng: &mut R, l: usize, agents: usize) -> Self {
        use evcity_core::power_grid::{DispatchOptions, GridModel, PowerSystem};
        use evcity_core::sites::Candidate;
        const BUSES: [u32; 6] = [4, 5, 9, 10, 13, 14];
        let net = grid_network(4, 3);
        let distances = net.distance_table();
        let mut nodes: Vec<u32> = (0..12).collect();
        rand::seq::SliceRandom::shuffle(nodes.as_mut_slice(), rng);
        let candidates: Vec<Candidate> = (0..l)
            .map(|j| Candidate {
                id: j as u32,
                node: NodeId(nodes[j]),
                bus: BUSES[j % BUSES.len()],
                levels: vec![1, 2, 3],
                restaurant: Some(rng.random_bool(0.5)),
                shopping: None,
                supermarket: None,
            })
            .collect();
        let agents = (0..agents)
            .map(|i| EvAgent {
                id: i as u32,
                income: rng.random_range(40.0..80.0),
                origin: NodeId(rng.random_range(0..12)),
                destination: NodeId(rng.random_range(0..12)),
                demand_kwh: rng.random_range(10.0..40.0),
            })
            .collect();
        let ctx = ChoiceContext::build(&net, &distances, &candidates, agents, coefficients(-150.0, [0.5, 0.7, 0.9]))
            .unwrap();
        let grid = GridModel::new(PowerSystem::ieee14(), DispatchOptions::default()).unwrap();
        let lmp = std::array::from_fn(|_| (0..l).map(|_| rng.random_range(0.04..0.07)).collect());
        Self {
            net,
            distances,
            candidates,
            ctx,
            grid,
            lmp,
        }
    }

    pub fn inputs(&self) -> evcity_core::placement_game::GameInputs<'_> {
        evcity_core::placement_game::GameInputs {
            ctx: &self.ctx,
            net: &self.net,
            distances: &self.distances,
            candidates: &self.candidates,
            grid: &self.grid,
            lmp: &self.lmp,
        }
    }
}

/// Exact 𝔼R_k and 𝔼B_k of `policy` by enumerating every opponent
/// completion of `known`, each free allowed bit on with probability ρ.
pub fn exact_expectation(
    world: &World,
    cfg: &evcity_core::placement_game::GameConfig,
    k: usize,
    policy: &evcity_core::sites::PlacementPolicy,
    known: &[evcity_core::sites::PlacementPolicy; 3],
) -> (f64, f64) {
    use evcity_core::sites::PlacementPolicy;
    let l = world.candidates.len();
    let free: Vec<(usize, usize)> = (0..3)
        .filter(|&m| m != k)
        .flat_map(|m| (0..l).map(move |j| (m, j)))
        .filter(|&(m, j)| !known[m].get(j) && world.candidates[j].allows(m))
        .collect();
    let (mut revenue, mut impact) = (0.0, 0.0);
    for mask in 0u64..1 << free.len() {
        let mut market: [PlacementPolicy; 3] = known.clone();
        market[k] = policy.clone();
        let mut weight = 1.0;
        for (b, &(m, j)) in free.iter().enumerate() {
            let on = mask >> b & 1 == 1;
            market[m].0[j] = on;
            weight *= if on { cfg.rho } else { 1.0 - cfg.rho };
        }
        if policy.count() == 0 {
            continue;
        }
        let out = evcity_core::placement_game::evaluate_market(&world.inputs(), cfg, &market, k).unwrap();
        revenue += weight * out.revenue[k];
        impact += weight * out.impact;
    }
    (revenue, impact)
}
