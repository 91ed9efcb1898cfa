//! Nested-logit charging demand.
//!
//! Each provider is one nest; its stations are the alternatives. Home
//! charging is an optional outside good with utility 0. Observable utility
//! splits into a provider part (charging time and price relative to income)
//! and a station part (detour, destination proximity, amenities).

mod context;
mod nested_logit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road_network::{Amenities, NodeId};
use crate::sites::PROVIDERS;

pub use context::{aggregate_demand, ChoiceContext, ChoiceMatrix, DemandForecast, PriceGradient};
pub use nested_logit::{
    choice_probabilities, choice_probabilities_decomposed, log_sum_exp, nest_shift_gradient,
    AgentChoice, Decomposition, Nest,
};

/// Utility of home charging.
pub const OUTSIDE_GOOD_UTILITY: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandError {
    #[error("nest {0} has no alternatives")]
    EmptyNest(usize),
    #[error("no alternatives to choose from")]
    NoAlternatives,
    #[error("nest dissimilarity {0} outside (0, 1]")]
    InvalidSigma(f64),
    #[error("non-finite utility in nest {0}")]
    NonFiniteUtility(usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Road(#[from] crate::road_network::RoadError),
}

/// Electrical rating and typical charging time of one charging level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelAttributes {
    pub level: u8,
    /// Average charging time, hours.
    pub charging_time_h: f64,
    pub voltage_v: f64,
    pub current_a: f64,
}

impl LevelAttributes {
    /// SAE J1772 ratings with range midpoints for the charging time.
    pub fn standard() -> [LevelAttributes; PROVIDERS] {
        [
            LevelAttributes {
                level: 1,
                charging_time_h: 17.0,
                voltage_v: 120.0,
                current_a: 12.0,
            },
            LevelAttributes {
                level: 2,
                charging_time_h: 5.5,
                voltage_v: 224.0,
                current_a: 32.0,
            },
            LevelAttributes {
                level: 3,
                charging_time_h: 0.5,
                voltage_v: 600.0,
                current_a: 400.0,
            },
        ]
    }

    /// Charger power in kW.
    pub fn power_kw(&self) -> f64 {
        self.voltage_v * self.current_a / 1000.0
    }

    /// Hours needed to deliver `energy_kwh`, capped at the average charging time.
    pub fn session_hours(&self, energy_kwh: f64) -> f64 {
        let p = self.power_kw();
        if p > 0.0 {
            (energy_kwh / p).min(self.charging_time_h)
        } else {
            self.charging_time_h
        }
    }
}

/// Station-level weights of one nest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestCoefficients {
    pub sigma: f64,
    /// per km of detour
    pub mu: f64,
    /// destination proximity
    pub eta: f64,
    /// restaurant
    pub gamma: f64,
    /// shopping center
    pub lambda: f64,
    /// supermarket
    pub delta: f64,
}

fn default_q_a() -> f64 {
    10.0
}

fn default_q_b() -> f64 {
    40.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceCoefficients {
    /// Weight on 1 / charging time.
    pub alpha: f64,
    /// Weight on price / income; negative for sensible demand.
    pub beta: f64,
    pub nests: [NestCoefficients; PROVIDERS],
    /// Destination proximity threshold, km.
    pub d_th: f64,
    /// Lower bound of the per-EV energy draw, kWh.
    #[serde(default = "default_q_a")]
    pub q_a: f64,
    /// Upper bound of the per-EV energy draw, kWh.
    #[serde(default = "default_q_b")]
    pub q_b: f64,
    /// Include home charging as an outside alternative.
    #[serde(default = "default_true")]
    pub include_outside: bool,
    /// Overrides for the standard level table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<[LevelAttributes; PROVIDERS]>,
}

impl ChoiceCoefficients {
    pub fn validate(&self) -> Result<(), DemandError> {
        for n in &self.nests {
            if !(n.sigma > 0.0 && n.sigma <= 1.0) {
                return Err(DemandError::InvalidSigma(n.sigma));
            }
        }
        if !(self.d_th >= 0.0) {
            return Err(DemandError::Domain(format!("d_th = {} < 0", self.d_th)));
        }
        if !(self.q_a >= 0.0 && self.q_a <= self.q_b) {
            return Err(DemandError::Domain(format!(
                "invalid demand range [{}, {}]",
                self.q_a, self.q_b
            )));
        }
        for l in self.level_attributes() {
            if !(l.charging_time_h > 0.0) {
                return Err(DemandError::Domain(format!(
                    "level {} charging time {} ≤ 0",
                    l.level, l.charging_time_h
                )));
            }
        }
        let finite = [self.alpha, self.beta].iter().all(|v| v.is_finite())
            && self
                .nests
                .iter()
                .all(|n| [n.mu, n.eta, n.gamma, n.lambda, n.delta].iter().all(|v| v.is_finite()));
        if !finite {
            return Err(DemandError::Domain("non-finite coefficient".into()));
        }
        Ok(())
    }

    pub fn level_attributes(&self) -> [LevelAttributes; PROVIDERS] {
        self.levels.unwrap_or_else(LevelAttributes::standard)
    }

    pub fn outside_utility(&self) -> Option<f64> {
        self.include_outside.then_some(OUTSIDE_GOOD_UTILITY)
    }
}

/// One EV owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvAgent {
    pub id: u32,
    /// Income, currency per period; strictly positive.
    pub income: f64,
    pub origin: NodeId,
    pub destination: NodeId,
    /// Energy bought per period, kWh.
    pub demand_kwh: f64,
}

/// Everything the station part of the utility looks at for one
/// (agent, station) pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StationObservables {
    /// Detour distance, km.
    pub deviation_km: f64,
    pub near_destination: bool,
    pub amenities: Amenities,
}

/// α / t_k + β · p_k / i_n
pub fn provider_utility(
    level: &LevelAttributes,
    price: f64,
    income: f64,
    coeffs: &ChoiceCoefficients,
) -> Result<f64, DemandError> {
    if !(level.charging_time_h > 0.0) {
        return Err(DemandError::Domain(format!(
            "charging time {} ≤ 0",
            level.charging_time_h
        )));
    }
    if !(income > 0.0) {
        return Err(DemandError::Domain(format!("income {income} ≤ 0")));
    }
    Ok(coeffs.alpha / level.charging_time_h + coeffs.beta * price / income)
}

/// μ·d + η·z + γ·r + λ·g + δ·m
pub fn station_utility(obs: &StationObservables, nest: &NestCoefficients) -> f64 {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    nest.mu * obs.deviation_km
        + nest.eta * flag(obs.near_destination)
        + nest.gamma * flag(obs.amenities.restaurant)
        + nest.lambda * flag(obs.amenities.shopping)
        + nest.delta * flag(obs.amenities.supermarket)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn coeffs(alpha: f64, beta: f64) -> ChoiceCoefficients {
        let nest = NestCoefficients {
            sigma: 1.0,
            mu: 0.0,
            eta: 1.0,
            gamma: 1.0,
            lambda: 1.0,
            delta: 1.0,
        };
        ChoiceCoefficients {
            alpha,
            beta,
            nests: [nest; 3],
            d_th: 1.0,
            q_a: 10.0,
            q_b: 40.0,
            include_outside: true,
            levels: None,
        }
    }

    fn level(t: f64) -> LevelAttributes {
        LevelAttributes {
            level: 1,
            charging_time_h: t,
            voltage_v: 120.0,
            current_a: 12.0,
        }
    }

    #[test]
    fn provider_utility_values() {
        assert_eq!(OUTSIDE_GOOD_UTILITY, 0.0);
        assert_eq!(provider_utility(&level(3.0), 7.0, 2.0, &coeffs(0.0, 0.0)).unwrap(), 0.0);
        let u = provider_utility(&level(2.0), 10.0, 5.0, &coeffs(1.0, -1.0)).unwrap();
        assert_eq!(u, -1.5);
    }

    #[test]
    fn provider_utility_domain_errors() {
        assert!(provider_utility(&level(0.0), 1.0, 1.0, &coeffs(1.0, -1.0)).is_err());
        assert!(provider_utility(&level(1.0), 1.0, 0.0, &coeffs(1.0, -1.0)).is_err());
        assert!(provider_utility(&level(1.0), 1.0, -3.0, &coeffs(1.0, -1.0)).is_err());
    }

    #[test]
    fn station_utility_values() {
        let c = coeffs(0.0, 0.0);
        assert_eq!(station_utility(&StationObservables::default(), &c.nests[0]), 0.0);
        let all = StationObservables {
            deviation_km: 0.0,
            near_destination: true,
            amenities: Amenities {
                restaurant: true,
                shopping: true,
                supermarket: true,
            },
        };
        assert_eq!(station_utility(&all, &c.nests[0]), 4.0);
        let mut n = c.nests[0];
        n.mu = -0.5;
        let detour = StationObservables {
            deviation_km: 2.0,
            ..Default::default()
        };
        assert_eq!(station_utility(&detour, &n), -1.0);
    }

    #[test]
    fn standard_levels() {
        let l = LevelAttributes::standard();
        assert_eq!(
            l.map(|x| x.charging_time_h),
            [17.0, 5.5, 0.5]
        );
        assert!((l[0].power_kw() - 1.44).abs() < 1e-12);
        // 40 kWh at 1.44 kW would take 27.8 h; capped at 17 h
        assert_eq!(l[0].session_hours(40.0), 17.0);
        assert!((l[2].session_hours(24.0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn coefficient_validation() {
        let mut c = coeffs(1.0, -1.0);
        assert!(c.validate().is_ok());
        c.nests[1].sigma = 1.2;
        assert_eq!(c.validate(), Err(DemandError::InvalidSigma(1.2)));
        let mut c = coeffs(1.0, -1.0);
        c.d_th = -0.1;
        assert!(c.validate().is_err());
        let mut c = coeffs(1.0, -1.0);
        c.q_a = 50.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn coefficients_parse_from_toml() {
        let text = r#"
            alpha = 2.0
            beta = -50.0
            d_th = 1.5
            [[nests]]
            sigma = 0.5
            mu = -0.4
            eta = 0.6
            gamma = 0.2
            lambda = 0.3
            delta = 0.1
            [[nests]]
            sigma = 0.6
            mu = -0.4
            eta = 0.6
            gamma = 0.2
            lambda = 0.3
            delta = 0.1
            [[nests]]
            sigma = 0.7
            mu = -0.4
            eta = 0.6
            gamma = 0.2
            lambda = 0.3
            delta = 0.1
        "#;
        let c: ChoiceCoefficients = toml::from_str(text).unwrap();
        assert_eq!(c.q_a, 10.0);
        assert_eq!(c.q_b, 40.0);
        assert!(c.include_outside);
        assert_eq!(c.nests[2].sigma, 0.7);
        c.validate().unwrap();
    }
}
