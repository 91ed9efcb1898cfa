mod common;

use evcity_core::power_grid::{
    branch_flows, solve_power_flow, Branch, Bus, BusKind, BusLoad, CaseFile, DispatchOptions, Generator,
    GridModel, PowerFlowSolution, PowerSystem,
};
use num_complex::Complex64;
use proptest::prelude::*;

#[derive(serde::Deserialize)]
struct Reference {
    vm: Vec<f64>,
    va_deg: Vec<f64>,
    pg_mw: Vec<f64>,
    qg_mvar: Vec<f64>,
}

fn reference(name: &str) -> Reference {
    serde_json::from_str(&std::fs::read_to_string(common::fixture(name)).unwrap()).unwrap()
}

fn bus(id: u32, kind: BusKind, pd: f64, qd: f64) -> Bus {
    Bus {
        id,
        kind,
        pd_mw: pd,
        qd_mvar: qd,
        gs_mw: 0.0,
        bs_mvar: 0.0,
        vm_setpoint: (kind != BusKind::Pq).then_some(1.0),
    }
}

/// Slack at 1.0 p.u. feeding a PQ load over a lossless x = 0.1 line.
fn two_bus(pd: f64, qd: f64) -> PowerSystem {
    PowerSystem::new(CaseFile {
        name: "two-bus".into(),
        base_mva: 100.0,
        buses: vec![bus(1, BusKind::Slack, 0.0, 0.0), bus(2, BusKind::Pq, pd, qd)],
        branches: vec![Branch {
            from: 1,
            to: 2,
            r: 0.0,
            x: 0.1,
            b: 0.0,
            tap: 0.0,
            shift_deg: 0.0,
        }],
        generators: vec![Generator {
            bus: 1,
            p_mw: 0.0,
            q_mvar: 0.0,
            q_min_mvar: None,
            q_max_mvar: None,
            participation: None,
        }],
    })
    .unwrap()
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) * f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest bus power mismatch in MW/MVAr, with the bus admittance matrix
/// assembled here from the case data.
fn mismatch(sys: &PowerSystem, sol: &PowerFlowSolution, extra: &[BusLoad]) -> f64 {
    let n = sys.buses().len();
    let base = sys.base_mva();
    let idx = |id: u32| sys.buses().iter().position(|b| b.id == id).unwrap();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in sys.branches() {
        let (f, t) = (idx(br.from), idx(br.to));
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let bc = Complex64::new(0.0, br.b / 2.0);
        let a = if br.tap == 0.0 { 1.0 } else { br.tap };
        let tap = Complex64::from_polar(a, br.shift_deg.to_radians());
        y[f][f] += (ys + bc) / (a * a);
        y[t][t] += ys + bc;
        y[f][t] -= ys / tap.conj();
        y[t][f] -= ys / tap;
    }
    for (i, b) in sys.buses().iter().enumerate() {
        y[i][i] += Complex64::new(b.gs_mw, b.bs_mvar) / base;
    }
    let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(sol.vm[i], sol.va[i])).collect();
    let mut net: Vec<Complex64> = sys.buses().iter().map(|b| -Complex64::new(b.pd_mw, b.qd_mvar)).collect();
    for (g, (p, q)) in sys.generators().iter().zip(sol.gen_p_mw.iter().zip(&sol.gen_q_mvar)) {
        net[idx(g.bus)] += Complex64::new(*p, *q);
    }
    for l in extra {
        net[idx(l.bus)] -= Complex64::new(l.p_mw, l.q_mvar);
    }
    (0..n)
        .map(|i| {
            let current: Complex64 = (0..n).map(|k| y[i][k] * v[k]).sum();
            let s = v[i] * current.conj() * base;
            let d = s - net[i];
            d.re.abs().max(d.im.abs())
        })
        .fold(0.0, f64::max)
}

fn check_against_reference(sys: &PowerSystem, name: &str) {
    let sol = solve_power_flow(sys, &[]).unwrap();
    let r = reference(name);
    assert!(sol.iterations <= 12, "{} iterations", sol.iterations);
    assert!(sol.residual <= 1e-8);
    // angles are compared relative to the slack, whose reference angle may be nonzero
    let s = sys.slack_index();
    for i in 0..r.vm.len() {
        assert!((sol.vm[i] - r.vm[i]).abs() < 1e-6, "vm at {i}");
        let va = (sol.va[i] - sol.va[s]).to_degrees();
        assert!((va - (r.va_deg[i] - r.va_deg[s])).abs() < 1e-4, "va at {i}");
    }
    for i in 0..r.pg_mw.len() {
        assert!((sol.gen_p_mw[i] - r.pg_mw[i]).abs() < 1e-4, "pg at {i}");
        assert!((sol.gen_q_mvar[i] - r.qg_mvar[i]).abs() < 1e-4, "qg at {i}");
    }
    assert!(mismatch(sys, &sol, &[]) <= 1e-6 * sys.base_mva());
}

#[test]
fn ieee14_matches_reference_solution() {
    check_against_reference(&PowerSystem::ieee14(), "ieee14_reference.json");
}

#[test]
fn ieee118_matches_reference_solution() {
    check_against_reference(&PowerSystem::ieee118(), "ieee118_reference.json");
}

#[test]
fn two_bus_matches_bisection() {
    // 10 V cos δ − 10 V² = Q, 10 V sin δ = −P with P = 0.5, Q = 0.2 p.u.
    let sys = two_bus(50.0, 20.0);
    let sol = solve_power_flow(&sys, &[]).unwrap();
    let v = bisect(|v| 10.0 * v * v - 10.0 * (v * v - 0.0025).sqrt() + 0.2, 0.5, 1.0);
    let delta = (-0.05 / v).asin();
    assert!((sol.vm[1] - v).abs() <= 1e-8, "{} vs {v}", sol.vm[1]);
    assert!((sol.va[1] - delta).abs() <= 1e-8);
}

#[test]
fn unloaded_flat_system_is_already_solved() {
    let sol = solve_power_flow(&two_bus(0.0, 0.0), &[]).unwrap();
    assert_eq!(sol.iterations, 0);
    assert_eq!(sol.gen_p_mw, vec![0.0]);
}

#[test]
fn ev_case_balances_power() {
    let model = GridModel::new(PowerSystem::ieee118(), DispatchOptions::default()).unwrap();
    let pq: Vec<u32> = model
        .system()
        .buses()
        .iter()
        .filter(|b| b.kind == BusKind::Pq)
        .map(|b| b.id)
        .take(6)
        .collect();
    let load: Vec<(u32, f64)> = pq.iter().map(|&b| (b, 15.0)).collect();
    let sol = model.ev_case(&load).unwrap();
    let sys = model.system();
    let pf = 0.98f64;
    let extra: Vec<BusLoad> = load
        .iter()
        .map(|&(bus, p)| BusLoad {
            bus,
            p_mw: p,
            q_mvar: p * (1.0 - pf * pf).sqrt() / pf,
        })
        .collect();
    assert!(mismatch(sys, &sol, &extra) <= 1e-6 * sys.base_mva());

    let losses: f64 = branch_flows(sys, &sol).unwrap().iter().map(|f| f.loss_mw()).sum();
    let shunt: f64 = sys.buses().iter().zip(&sol.vm).map(|(b, v)| b.gs_mw * v * v).sum();
    let demand: f64 = sys.buses().iter().map(|b| b.pd_mw).sum::<f64>() + 90.0;
    assert!((sol.total_generation_mw() - demand - losses - shunt).abs() < 1e-5);
}

#[test]
fn no_ev_load_means_no_impact() {
    let model = GridModel::new(PowerSystem::ieee14(), DispatchOptions::default()).unwrap();
    assert_eq!(model.impact(&[]).unwrap().b, 0.0);
    assert_eq!(model.impact(&[(9, 0.0)]).unwrap().b, 0.0);
}

#[test]
fn ev_load_on_generator_bus_is_rejected() {
    let model = GridModel::new(PowerSystem::ieee14(), DispatchOptions::default()).unwrap();
    assert!(model.impact(&[(2, 5.0)]).is_err());
    assert!(model.impact(&[(99, 5.0)]).is_err());
    assert!(model.impact(&[(9, -1.0)]).is_err());
}

fn pq_buses() -> Vec<u32> {
    PowerSystem::ieee14()
        .buses()
        .iter()
        .filter(|b| b.kind == BusKind::Pq)
        .map(|b| b.id)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn impact_is_nonnegative_and_grows_with_load(mw in proptest::collection::vec(0.0f64..20.0, 9)) {
        let model = GridModel::new(PowerSystem::ieee14(), DispatchOptions::default()).unwrap();
        let load: Vec<(u32, f64)> = pq_buses().into_iter().zip(mw).collect();
        let b1 = model.impact(&load).unwrap().b;
        let doubled: Vec<(u32, f64)> = load.iter().map(|&(b, p)| (b, 2.0 * p)).collect();
        let b2 = model.impact(&doubled).unwrap().b;
        prop_assert!(b1 >= 0.0);
        prop_assert!(b2 >= b1);
    }
}
