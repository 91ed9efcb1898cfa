//! Polar Newton–Raphson power flow.
//!
//! Mismatch equations, one pair per bus:
//!
//! ```text
//! 0 = −P_i + Σ_k |v_i||v_k| (G_ik cos φ_ik + B_ik sin φ_ik)
//! 0 = −Q_i + Σ_k |v_i||v_k| (G_ik sin φ_ik − B_ik cos φ_ik)
//! ```
//!
//! Unknowns are the angles of all non-slack buses and the magnitudes of PQ
//! buses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::admittance::branch_admittances;
use super::{build_admittance, AdmittanceMatrix, BusKind, BusLoad, GridError, PowerSystem};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QLimitMode {
    /// Solve with PV buses held at their setpoints; violations are listed in
    /// the solution but not acted on.
    #[default]
    Ignore,
    /// Fail with [`GridError::QLimitViolation`] when a limit is exceeded.
    Strict,
    /// Convert violating PV buses to PQ at the limit and re-solve.
    Switch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowOptions {
    /// Mismatch infinity-norm, p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub q_limits: QLimitMode,
    /// Initial `(|v|, angle rad)` per bus; flat start when absent.
    pub warm_start: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
            q_limits: QLimitMode::Ignore,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<u32>,
    /// p.u.
    pub vm: Vec<f64>,
    /// rad, slack = 0
    pub va: Vec<f64>,
    /// Per generator, MW.
    pub gen_p_mw: Vec<f64>,
    /// Per generator, MVAr.
    pub gen_q_mvar: Vec<f64>,
    /// Newton steps taken (0 when the start point already satisfies the tolerance).
    pub iterations: usize,
    /// Final mismatch infinity-norm, p.u.
    pub residual: f64,
    /// Buses whose generators end outside their reactive limits.
    pub q_limit_violations: Vec<u32>,
    /// Buses converted from PV to PQ during limit enforcement.
    pub switched_to_pq: Vec<u32>,
}

impl PowerFlowSolution {
    pub fn voltage(&self, i: usize) -> Complex64 {
        Complex64::from_polar(self.vm[i], self.va[i])
    }

    pub fn total_generation_mw(&self) -> f64 {
        self.gen_p_mw.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub from: u32,
    pub to: u32,
    pub p_from_mw: f64,
    pub q_from_mvar: f64,
    pub p_to_mw: f64,
    pub q_to_mvar: f64,
}

impl BranchFlow {
    pub fn loss_mw(&self) -> f64 {
        self.p_from_mw + self.p_to_mw
    }
}

/// Solves with default options.
pub fn solve_power_flow(sys: &PowerSystem, extra_load: &[BusLoad]) -> Result<PowerFlowSolution, GridError> {
    let y = build_admittance(sys)?;
    solve_power_flow_with(sys, &y, extra_load, &PowerFlowOptions::default())
}

struct Problem<'a> {
    y: &'a AdmittanceMatrix,
    kinds: Vec<BusKind>,
    p_spec: Vec<f64>,
    q_spec: Vec<f64>,
}

/// Complex power injections `S_i = V_i · conj((Y V)_i)` in p.u.
fn injections(y: &AdmittanceMatrix, vm: &[f64], va: &[f64]) -> Vec<Complex64> {
    let v: Vec<Complex64> = vm
        .iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let i = y.currents(&v);
    v.iter().zip(&i).map(|(v, i)| v * i.conj()).collect()
}

impl Problem<'_> {
    fn mismatch(&self, s: &[Complex64], pvpq: &[usize], pq: &[usize]) -> DVector<f64> {
        DVector::from_iterator(
            pvpq.len() + pq.len(),
            pvpq.iter()
                .map(|&i| s[i].re - self.p_spec[i])
                .chain(pq.iter().map(|&i| s[i].im - self.q_spec[i])),
        )
    }

    fn jacobian(&self, vm: &[f64], va: &[f64], s: &[Complex64], pvpq: &[usize], pq: &[usize]) -> DMatrix<f64> {
        let n = vm.len();
        let mut col_theta = vec![usize::MAX; n];
        let mut col_vm = vec![usize::MAX; n];
        for (c, &i) in pvpq.iter().enumerate() {
            col_theta[i] = c;
        }
        for (c, &i) in pq.iter().enumerate() {
            col_vm[i] = pvpq.len() + c;
        }
        let dim = pvpq.len() + pq.len();
        let mut jac = DMatrix::zeros(dim, dim);
        let y = self.y;
        let rows_p = pvpq.iter().enumerate().map(|(r, &i)| (r, i, true));
        let rows_q = pq.iter().enumerate().map(|(r, &i)| (pvpq.len() + r, i, false));
        for (row, i, is_p) in rows_p.chain(rows_q) {
            let (p_i, q_i) = (s[i].re, s[i].im);
            for k in 0..n {
                let (g, b) = (y.g(i, k), y.b(i, k));
                if k == i {
                    let (d_theta, d_vm) = if is_p {
                        (-q_i - b * vm[i] * vm[i], p_i / vm[i] + g * vm[i])
                    } else {
                        (p_i - g * vm[i] * vm[i], q_i / vm[i] - b * vm[i])
                    };
                    if col_theta[i] != usize::MAX {
                        jac[(row, col_theta[i])] = d_theta;
                    }
                    if col_vm[i] != usize::MAX {
                        jac[(row, col_vm[i])] = d_vm;
                    }
                    continue;
                }
                if g == 0.0 && b == 0.0 {
                    continue;
                }
                let (sin, cos) = (va[i] - va[k]).sin_cos();
                let a = g * cos + b * sin;
                let c = g * sin - b * cos;
                let (d_theta, d_vm) = if is_p {
                    (vm[i] * vm[k] * c, vm[i] * a)
                } else {
                    (-vm[i] * vm[k] * a, vm[i] * c)
                };
                if col_theta[k] != usize::MAX {
                    jac[(row, col_theta[k])] = d_theta;
                }
                if col_vm[k] != usize::MAX {
                    jac[(row, col_vm[k])] = d_vm;
                }
            }
        }
        jac
    }

    /// Newton iterations from `(vm, va)` in place; returns steps and residual.
    fn newton(&self, vm: &mut [f64], va: &mut [f64], opts: &PowerFlowOptions) -> Result<(usize, f64), GridError> {
        let pvpq: Vec<usize> = (0..vm.len()).filter(|&i| self.kinds[i] != BusKind::Slack).collect();
        let pq: Vec<usize> = (0..vm.len()).filter(|&i| self.kinds[i] == BusKind::Pq).collect();
        let mut s = injections(self.y, vm, va);
        let mut f = self.mismatch(&s, &pvpq, &pq);
        let mut residual = f.amax();
        let mut steps = 0;
        while residual > opts.tolerance {
            if steps >= opts.max_iterations {
                return Err(GridError::NonConvergence {
                    iterations: steps,
                    residual,
                });
            }
            let jac = self.jacobian(vm, va, &s, &pvpq, &pq);
            let dx = jac.lu().solve(&(-f)).ok_or(GridError::SingularJacobian)?;
            for (c, &i) in pvpq.iter().enumerate() {
                va[i] += dx[c];
            }
            for (c, &i) in pq.iter().enumerate() {
                vm[i] += dx[pvpq.len() + c];
            }
            steps += 1;
            s = injections(self.y, vm, va);
            f = self.mismatch(&s, &pvpq, &pq);
            residual = f.amax();
            if !residual.is_finite() {
                return Err(GridError::NonConvergence {
                    iterations: steps,
                    residual,
                });
            }
        }
        Ok((steps, residual))
    }
}

fn extra_per_bus(sys: &PowerSystem, extra_load: &[BusLoad]) -> Result<Vec<(f64, f64)>, GridError> {
    let mut extra = vec![(0.0, 0.0); sys.buses().len()];
    for l in extra_load {
        let i = sys.bus_index(l.bus)?;
        extra[i].0 += l.p_mw;
        extra[i].1 += l.q_mvar;
    }
    Ok(extra)
}

/// Sum of each bus's generator reactive limits; `None` when any unit is unbounded.
fn bus_q_limits(sys: &PowerSystem, bus: usize) -> (Option<f64>, Option<f64>) {
    let gens = sys
        .generators()
        .iter()
        .filter(|g| sys.bus_index(g.bus).ok() == Some(bus));
    gens.fold((Some(0.0), Some(0.0)), |(lo, hi), g| {
        (
            lo.zip(g.q_min_mvar).map(|(a, b)| a + b),
            hi.zip(g.q_max_mvar).map(|(a, b)| a + b),
        )
    })
}

pub fn solve_power_flow_with(
    sys: &PowerSystem,
    y: &AdmittanceMatrix,
    extra_load: &[BusLoad],
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, GridError> {
    let n = sys.buses().len();
    if y.dim() != n {
        return Err(GridError::DimensionMismatch {
            expected: n,
            actual: y.dim(),
        });
    }
    let base = sys.base_mva();
    let extra = extra_per_bus(sys, extra_load)?;
    let mut gen_p_bus = vec![0.0; n];
    let mut gen_q_bus = vec![0.0; n];
    for g in sys.generators() {
        let i = sys.bus_index(g.bus)?;
        gen_p_bus[i] += g.p_mw;
        gen_q_bus[i] += g.q_mvar;
    }
    let kinds: Vec<BusKind> = sys.buses().iter().map(|b| b.kind).collect();
    let p_spec = (0..n)
        .map(|i| (gen_p_bus[i] - sys.buses()[i].pd_mw - extra[i].0) / base)
        .collect();
    let q_spec = (0..n)
        .map(|i| {
            let fixed = if kinds[i] == BusKind::Pq { gen_q_bus[i] } else { 0.0 };
            (fixed - sys.buses()[i].qd_mvar - extra[i].1) / base
        })
        .collect();
    let mut problem = Problem {
        y,
        kinds,
        p_spec,
        q_spec,
    };

    let (mut vm, mut va) = match &opts.warm_start {
        Some((m, a)) if m.len() == n && a.len() == n => (m.clone(), a.clone()),
        Some((m, _)) => {
            return Err(GridError::DimensionMismatch {
                expected: n,
                actual: m.len(),
            })
        }
        None => (vec![1.0; n], vec![0.0; n]),
    };
    for (i, b) in sys.buses().iter().enumerate() {
        if let Some(v) = b.vm_setpoint.filter(|_| b.kind != BusKind::Pq) {
            vm[i] = v;
        }
    }
    va[sys.slack_index()] = 0.0;

    let mut switched: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let (residual, violations) = loop {
        let (steps, residual) = problem.newton(&mut vm, &mut va, opts).map_err(|e| match e {
            GridError::NonConvergence { residual, .. } => GridError::NonConvergence {
                iterations: iterations + opts.max_iterations,
                residual,
            },
            other => other,
        })?;
        iterations += steps;
        let s = injections(y, &vm, &va);
        let mut violations = Vec::new();
        for i in 0..n {
            if problem.kinds[i] != BusKind::Pv {
                continue;
            }
            let q_gen = s[i].im * base + sys.buses()[i].qd_mvar + extra[i].1;
            let (lo, hi) = bus_q_limits(sys, i);
            if let Some(hi) = hi.filter(|&h| q_gen > h + 1e-9) {
                violations.push((i, hi));
            } else if let Some(lo) = lo.filter(|&l| q_gen < l - 1e-9) {
                violations.push((i, lo));
            }
        }
        if opts.q_limits != QLimitMode::Switch || violations.is_empty() {
            break (residual, violations);
        }
        for &(i, limit) in &violations {
            problem.kinds[i] = BusKind::Pq;
            problem.q_spec[i] = (limit - sys.buses()[i].qd_mvar - extra[i].1) / base;
            switched.push(i);
        }
    };
    let violation_ids: Vec<u32> = violations.iter().map(|&(i, _)| sys.buses()[i].id).collect();
    if opts.q_limits == QLimitMode::Strict && !violation_ids.is_empty() {
        return Err(GridError::QLimitViolation(violation_ids));
    }

    let s = injections(y, &vm, &va);
    let (gen_p_mw, gen_q_mvar) = generator_outputs(sys, &s, &extra, &switched);
    Ok(PowerFlowSolution {
        bus_ids: sys.buses().iter().map(|b| b.id).collect(),
        vm,
        va,
        gen_p_mw,
        gen_q_mvar,
        iterations,
        residual,
        q_limit_violations: violation_ids,
        switched_to_pq: switched.iter().map(|&i| sys.buses()[i].id).collect(),
    })
}

/// Splits each bus's net generation among its units: non-slack units keep
/// their P setpoints, the first slack unit takes the balance, and reactive
/// output is shared equally on voltage-controlled buses.
fn generator_outputs(
    sys: &PowerSystem,
    s: &[Complex64],
    extra: &[(f64, f64)],
    switched: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let base = sys.base_mva();
    let gens = sys.generators();
    let bus_of: Vec<usize> = gens.iter().map(|g| sys.bus_index(g.bus).expect("validated")).collect();
    let mut p = vec![0.0; gens.len()];
    let mut q = vec![0.0; gens.len()];
    for i in 0..sys.buses().len() {
        let units: Vec<usize> = (0..gens.len()).filter(|&g| bus_of[g] == i).collect();
        if units.is_empty() {
            continue;
        }
        let bus = &sys.buses()[i];
        let p_total = s[i].re * base + bus.pd_mw + extra[i].0;
        let q_total = s[i].im * base + bus.qd_mvar + extra[i].1;
        if i == sys.slack_index() {
            let others: f64 = units[1..].iter().map(|&g| gens[g].p_mw).sum();
            p[units[0]] = p_total - others;
            for &g in &units[1..] {
                p[g] = gens[g].p_mw;
            }
        } else {
            for &g in &units {
                p[g] = gens[g].p_mw;
            }
        }
        if bus.kind == BusKind::Pq {
            for &g in &units {
                q[g] = gens[g].q_mvar;
            }
        } else if switched.contains(&i) && units.len() > 1 {
            // all units pinned at the same side of their limits
            let at_max = units.iter().all(|&g| gens[g].q_max_mvar.is_some())
                && q_total >= units.iter().filter_map(|&g| gens[g].q_max_mvar).sum::<f64>() - 1e-9;
            for &g in &units {
                q[g] = if at_max {
                    gens[g].q_max_mvar.unwrap_or(0.0)
                } else {
                    gens[g].q_min_mvar.unwrap_or(0.0)
                };
            }
        } else {
            for &g in &units {
                q[g] = q_total / units.len() as f64;
            }
        }
    }
    (p, q)
}

/// Complex flows at both ends of every branch, MW / MVAr.
pub fn branch_flows(sys: &PowerSystem, sol: &PowerFlowSolution) -> Result<Vec<BranchFlow>, GridError> {
    let base = sys.base_mva();
    sys.branches()
        .iter()
        .map(|br| {
            let [yff, yft, ytf, ytt] = branch_admittances(br)?;
            let f = sys.bus_index(br.from)?;
            let t = sys.bus_index(br.to)?;
            let (vf, vt) = (sol.voltage(f), sol.voltage(t));
            let sf = vf * (yff * vf + yft * vt).conj() * base;
            let st = vt * (ytf * vf + ytt * vt).conj() * base;
            Ok(BranchFlow {
                from: br.from,
                to: br.to,
                p_from_mw: sf.re,
                q_from_mvar: sf.im,
                p_to_mw: st.re,
                q_to_mvar: st.im,
            })
        })
        .collect()
}
