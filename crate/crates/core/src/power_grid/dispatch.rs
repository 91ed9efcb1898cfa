use serde::{Deserialize, Serialize};

use super::newton::{solve_power_flow_with, PowerFlowOptions, PowerFlowSolution};
use super::{build_admittance, AdmittanceMatrix, BusKind, BusLoad, GridError, PowerSystem};

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchOptions {
    /// Lagging power factor of EV charging load.
    pub power_factor: f64,
    pub flow: PowerFlowOptions,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self {
            power_factor: 0.98,
            flow: PowerFlowOptions::default(),
        }
    }
}

/// Units in which B is reported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactBasis {
    /// MW² + MVAr²
    #[default]
    Raw,
    /// p.u.² on the case MVA base
    PerUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactResult {
    pub p_base_mw: Vec<f64>,
    pub p_ev_mw: Vec<f64>,
    pub q_base_mvar: Vec<f64>,
    pub q_ev_mvar: Vec<f64>,
    /// ‖ΔP‖² + ‖ΔQ‖², MW² + MVAr²
    pub b: f64,
}

impl ImpactResult {
    pub fn in_basis(&self, basis: ImpactBasis, base_mva: f64) -> f64 {
        match basis {
            ImpactBasis::Raw => self.b,
            ImpactBasis::PerUnit => self.b / (base_mva * base_mva),
        }
    }
}

/// B = ‖P_base − P_ev‖₂² + ‖Q_base − Q_ev‖₂²
pub fn impact_metric(base: &PowerFlowSolution, ev: &PowerFlowSolution) -> Result<ImpactResult, GridError> {
    let n = base.gen_p_mw.len();
    for len in [base.gen_q_mvar.len(), ev.gen_p_mw.len(), ev.gen_q_mvar.len()] {
        if len != n {
            return Err(GridError::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    Ok(ImpactResult {
        b: sq(&base.gen_p_mw, &ev.gen_p_mw) + sq(&base.gen_q_mvar, &ev.gen_q_mvar),
        p_base_mw: base.gen_p_mw.clone(),
        p_ev_mw: ev.gen_p_mw.clone(),
        q_base_mvar: base.gen_q_mvar.clone(),
        q_ev_mvar: ev.gen_q_mvar.clone(),
    })
}

/// A power system with its admittance matrix and base-case solution cached,
/// ready to evaluate many EV load patterns.
#[derive(Debug, Clone)]
pub struct GridModel {
    sys: PowerSystem,
    y: AdmittanceMatrix,
    base: PowerFlowSolution,
    opts: DispatchOptions,
}

impl GridModel {
    pub fn new(sys: PowerSystem, opts: DispatchOptions) -> Result<Self, GridError> {
        if !(opts.power_factor > 0.0 && opts.power_factor <= 1.0) {
            return Err(GridError::InvalidEvLoad(format!(
                "power factor {} outside (0, 1]",
                opts.power_factor
            )));
        }
        let y = build_admittance(&sys)?;
        let base = solve_power_flow_with(&sys, &y, &[], &opts.flow)?;
        Ok(Self { sys, y, base, opts })
    }

    pub fn system(&self) -> &PowerSystem {
        &self.sys
    }

    pub fn base(&self) -> &PowerFlowSolution {
        &self.base
    }

    /// Solves the system with `ev_load` (bus id, MW) superposed on the base
    /// load. The added active power is pre-allocated to the generators by
    /// participation factor; the slack picks up the remainder and losses.
    pub fn ev_case(&self, ev_load: &[(u32, f64)]) -> Result<PowerFlowSolution, GridError> {
        let tan_phi = (1.0 - self.opts.power_factor.powi(2)).sqrt() / self.opts.power_factor;
        let mut loads = Vec::with_capacity(ev_load.len());
        let mut added = 0.0;
        for &(bus, p) in ev_load {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(GridError::InvalidEvLoad(format!("{p} MW at bus {bus}")));
            }
            if self.sys.bus(bus)?.kind != BusKind::Pq {
                return Err(GridError::InvalidEvLoad(format!("bus {bus} is not a PQ bus")));
            }
            added += p;
            loads.push(BusLoad {
                bus,
                p_mw: p,
                q_mvar: p * tan_phi,
            });
        }
        let mut case = self.sys.to_case();
        for (g, f) in case.generators.iter_mut().zip(self.sys.participation()) {
            g.p_mw += added * f;
        }
        let redispatched = PowerSystem::new(case)?;
        solve_power_flow_with(&redispatched, &self.y, &loads, &self.opts.flow)
    }

    pub fn impact(&self, ev_load: &[(u32, f64)]) -> Result<ImpactResult, GridError> {
        impact_metric(&self.base, &self.ev_case(ev_load)?)
    }
}

/// Base and EV-loaded solutions for one load pattern.
pub fn dispatch_with_ev(
    sys: &PowerSystem,
    ev_load: &[(u32, f64)],
    opts: &DispatchOptions,
) -> Result<(PowerFlowSolution, PowerFlowSolution), GridError> {
    let model = GridModel::new(sys.clone(), opts.clone())?;
    let ev = model.ev_case(ev_load)?;
    Ok((model.base, ev))
}
