//! AC power flow and the generator-deviation impact metric.
//!
//! Quantities on the public surface are in MW / MVAr; the solver works in
//! per unit on the case's MVA base.

mod admittance;
mod dispatch;
mod newton;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use dispatch::{
    dispatch_with_ev, impact_metric, DispatchOptions, GridModel, ImpactBasis, ImpactResult,
};
pub use newton::{
    branch_flows, solve_power_flow, solve_power_flow_with, BranchFlow, PowerFlowOptions,
    PowerFlowSolution, QLimitMode,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("branch {from}-{to} has zero impedance")]
    SingularBranch { from: u32, to: u32 },
    #[error("power flow did not converge after {iterations} iterations (mismatch {residual:.3e} p.u.)")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("reactive limits violated at buses {0:?}")]
    QLimitViolation(Vec<u32>),
    #[error("singular Jacobian")]
    SingularJacobian,
    #[error("unknown bus {0}")]
    UnknownBus(u32),
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error("invalid EV load: {0}")]
    InvalidEvLoad(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("failed to read case: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    #[serde(default)]
    pub pd_mw: f64,
    #[serde(default)]
    pub qd_mvar: f64,
    /// Shunt conductance, MW consumed at 1 p.u.
    #[serde(default)]
    pub gs_mw: f64,
    /// Shunt susceptance, MVAr injected at 1 p.u.
    #[serde(default)]
    pub bs_mvar: f64,
    /// Voltage magnitude setpoint for slack and PV buses, p.u.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_setpoint: Option<f64>,
}

fn unit_tap() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    /// p.u.
    pub r: f64,
    /// p.u.
    pub x: f64,
    /// Total line-charging susceptance, p.u.
    #[serde(default)]
    pub b: f64,
    /// Off-nominal turns ratio on the from side; 0 means 1.
    #[serde(default = "unit_tap")]
    pub tap: f64,
    #[serde(default)]
    pub shift_deg: f64,
}

impl Branch {
    pub fn ratio(&self) -> f64 {
        if self.tap == 0.0 {
            1.0
        } else {
            self.tap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: u32,
    /// Active-power setpoint, MW (ignored for the slack generator).
    pub p_mw: f64,
    /// Fixed reactive output for generators on PQ buses, MVAr.
    #[serde(default)]
    pub q_mvar: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min_mvar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_mvar: Option<f64>,
    /// Share of any load increase picked up by this unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participation: Option<f64>,
}

/// On-disk case layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    #[serde(default)]
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    #[serde(default)]
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub generators: Vec<Generator>,
}

/// Validated power system.
#[derive(Debug, Clone)]
pub struct PowerSystem {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    index: HashMap<u32, usize>,
    slack: usize,
    participation: Vec<f64>,
}

const PARTICIPATION_TOL: f64 = 1e-9;

impl PowerSystem {
    pub fn new(case: CaseFile) -> Result<Self, GridError> {
        let CaseFile {
            name,
            base_mva,
            buses,
            branches,
            generators,
        } = case;
        if !(base_mva > 0.0) {
            return Err(GridError::InvalidCase(format!("base MVA {base_mva}")));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(GridError::InvalidCase(format!("duplicate bus {}", b.id)));
            }
            if b.kind != BusKind::Pq && !b.vm_setpoint.is_some_and(|v| v > 0.0) {
                return Err(GridError::InvalidCase(format!(
                    "bus {} needs a positive voltage setpoint",
                    b.id
                )));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        if slacks.len() != 1 {
            return Err(GridError::InvalidCase(format!(
                "expected exactly one slack bus, found {}",
                slacks.len()
            )));
        }
        let slack = slacks[0];
        for br in &branches {
            for id in [br.from, br.to] {
                if !index.contains_key(&id) {
                    return Err(GridError::UnknownBus(id));
                }
            }
        }
        for g in &generators {
            if !index.contains_key(&g.bus) {
                return Err(GridError::UnknownBus(g.bus));
            }
            if g.participation.is_some_and(|p| !(p >= 0.0)) {
                return Err(GridError::InvalidCase(format!(
                    "negative participation at bus {}",
                    g.bus
                )));
            }
        }
        if !generators.iter().any(|g| index[&g.bus] == slack) {
            return Err(GridError::InvalidCase("slack bus has no generator".into()));
        }
        let participation = resolve_participation(&generators, &index, slack)?;
        Ok(Self {
            name,
            base_mva,
            buses,
            branches,
            generators,
            index,
            slack,
            participation,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self, GridError> {
        let case: CaseFile =
            serde_json::from_str(s).map_err(|e| GridError::InvalidCase(e.to_string()))?;
        Self::new(case)
    }

    pub fn load(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GridError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_case(&self) -> CaseFile {
        CaseFile {
            name: self.name.clone(),
            base_mva: self.base_mva,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            generators: self.generators.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    /// Resolved participation factors, one per generator, summing to 1.
    pub fn participation(&self) -> &[f64] {
        &self.participation
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn bus_index(&self, id: u32) -> Result<usize, GridError> {
        self.index.get(&id).copied().ok_or(GridError::UnknownBus(id))
    }

    pub fn bus(&self, id: u32) -> Result<&Bus, GridError> {
        Ok(&self.buses[self.bus_index(id)?])
    }

    /// Replaces the participation factors (must be ≥ 0 and sum to 1).
    pub fn with_participation(mut self, factors: Vec<f64>) -> Result<Self, GridError> {
        if factors.len() != self.generators.len() {
            return Err(GridError::DimensionMismatch {
                expected: self.generators.len(),
                actual: factors.len(),
            });
        }
        check_participation_sum(&factors)?;
        for (g, &f) in self.generators.iter_mut().zip(&factors) {
            g.participation = Some(f);
        }
        self.participation = factors;
        Ok(self)
    }

    /// Bundled IEEE 14-bus test case.
    pub fn ieee14() -> Self {
        Self::from_json_str(include_str!("../../data/ieee14.json")).expect("bundled case is valid")
    }

    /// Bundled IEEE 118-bus test case.
    pub fn ieee118() -> Self {
        Self::from_json_str(include_str!("../../data/ieee118.json")).expect("bundled case is valid")
    }

    /// Looks up a bundled case by name (`ieee14`, `ieee118`).
    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "ieee14" => Some(Self::ieee14()),
            "ieee118" => Some(Self::ieee118()),
            _ => None,
        }
    }
}

fn check_participation_sum(factors: &[f64]) -> Result<(), GridError> {
    if factors.iter().any(|f| !(*f >= 0.0)) {
        return Err(GridError::InvalidCase("negative participation factor".into()));
    }
    let total: f64 = factors.iter().sum();
    if (total - 1.0).abs() > PARTICIPATION_TOL {
        return Err(GridError::InvalidCase(format!(
            "participation factors sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Explicit factors must sum to 1. Without any, the increase is shared
/// uniformly by the non-slack units (or taken entirely by the slack when
/// there are none).
fn resolve_participation(
    generators: &[Generator],
    index: &HashMap<u32, usize>,
    slack: usize,
) -> Result<Vec<f64>, GridError> {
    if generators.iter().any(|g| g.participation.is_some()) {
        let f: Vec<f64> = generators
            .iter()
            .map(|g| g.participation.unwrap_or(0.0))
            .collect();
        check_participation_sum(&f)?;
        return Ok(f);
    }
    let non_slack = generators.iter().filter(|g| index[&g.bus] != slack).count();
    Ok(generators
        .iter()
        .map(|g| {
            let on_slack = index[&g.bus] == slack;
            match (non_slack, on_slack) {
                (0, _) => {
                    let at_slack = generators.iter().filter(|g| index[&g.bus] == slack).count();
                    if on_slack {
                        1.0 / at_slack as f64
                    } else {
                        0.0
                    }
                }
                (_, true) => 0.0,
                (n, false) => 1.0 / n as f64,
            }
        })
        .collect())
}

/// Extra load at a bus, MW / MVAr.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusLoad {
    pub bus: u32,
    pub p_mw: f64,
    pub q_mvar: f64,
}

/// Per-bus locational marginal prices, currency per kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmpTable {
    pub lmp: Vec<LmpEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmpEntry {
    pub bus: u32,
    pub price: f64,
}

impl LmpTable {
    pub fn price(&self, bus: u32) -> Option<f64> {
        self.lmp.iter().find(|e| e.bus == bus).map(|e| e.price)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus_case(load_p: f64, load_q: f64) -> CaseFile {
        CaseFile {
            name: "two-bus".into(),
            base_mva: 100.0,
            buses: vec![
                Bus {
                    id: 1,
                    kind: BusKind::Slack,
                    pd_mw: 0.0,
                    qd_mvar: 0.0,
                    gs_mw: 0.0,
                    bs_mvar: 0.0,
                    vm_setpoint: Some(1.0),
                },
                Bus {
                    id: 2,
                    kind: BusKind::Pq,
                    pd_mw: load_p,
                    qd_mvar: load_q,
                    gs_mw: 0.0,
                    bs_mvar: 0.0,
                    vm_setpoint: None,
                },
            ],
            branches: vec![Branch {
                from: 1,
                to: 2,
                r: 0.0,
                x: 0.1,
                b: 0.0,
                tap: 1.0,
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
        }
    }

    #[test]
    fn bundled_cases_load() {
        let c14 = PowerSystem::ieee14();
        assert_eq!(c14.buses().len(), 14);
        assert_eq!(c14.generators().len(), 5);
        let c118 = PowerSystem::ieee118();
        assert_eq!(c118.buses().len(), 118);
        assert_eq!(c118.branches().len(), 186);
        assert_eq!(c118.buses()[c118.slack_index()].id, 69);
        assert!(PowerSystem::bundled("ieee30").is_none());
    }

    #[test]
    fn default_participation_uniform_over_non_slack() {
        let c14 = PowerSystem::ieee14();
        assert_eq!(c14.participation(), &[0.0, 0.25, 0.25, 0.25, 0.25]);
        // a lone slack generator takes everything
        let sys = PowerSystem::new(two_bus_case(10.0, 0.0)).unwrap();
        assert_eq!(sys.participation(), &[1.0]);
    }

    #[test]
    fn participation_must_sum_to_one() {
        let c14 = PowerSystem::ieee14();
        assert!(c14.clone().with_participation(vec![0.2; 5]).is_ok());
        assert!(c14.clone().with_participation(vec![0.3; 5]).is_err());
        assert!(c14.with_participation(vec![1.0]).is_err());
    }

    #[test]
    fn invalid_cases() {
        let mut c = two_bus_case(0.0, 0.0);
        c.buses[1].kind = BusKind::Slack;
        c.buses[1].vm_setpoint = Some(1.0);
        assert!(PowerSystem::new(c).is_err());

        let mut c = two_bus_case(0.0, 0.0);
        c.buses[0].vm_setpoint = None;
        assert!(PowerSystem::new(c).is_err());

        let mut c = two_bus_case(0.0, 0.0);
        c.branches[0].to = 7;
        assert_eq!(PowerSystem::new(c).unwrap_err(), GridError::UnknownBus(7));

        let mut c = two_bus_case(0.0, 0.0);
        c.generators[0].bus = 2;
        assert!(PowerSystem::new(c).is_err());
    }

    #[test]
    fn lmp_lookup() {
        let t: LmpTable =
            serde_json::from_str(r#"{"lmp":[{"bus":3,"price":0.04},{"bus":5,"price":0.05}]}"#).unwrap();
        assert_eq!(t.price(5), Some(0.05));
        assert_eq!(t.price(4), None);
    }
}
