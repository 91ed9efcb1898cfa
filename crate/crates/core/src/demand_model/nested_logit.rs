//! Closed-form nested-logit probabilities, evaluated in the log domain.
//!
//! For nest `k` with dissimilarity `σ_k` and full utilities `U_jk`:
//!
//! ```text
//! A_k   = σ_k · log Σ_l exp(U_lk / σ_k)
//! log D = log( Σ_k exp(A_k) + exp(U_0) )          (outside term optional)
//! Φ_jk  = exp(U_jk/σ_k − A_k/σ_k + A_k − log D)
//! ```

use super::DemandError;

/// One nest of the choice tree: the provider-level utility shared by every
/// alternative in the nest plus the per-station utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Nest {
    pub sigma: f64,
    pub provider_utility: f64,
    pub station_utilities: Vec<f64>,
}

impl Nest {
    pub fn new(sigma: f64, provider_utility: f64, station_utilities: Vec<f64>) -> Self {
        Self {
            sigma,
            provider_utility,
            station_utilities,
        }
    }

    /// A nest whose full utilities are given directly (provider part 0).
    pub fn from_utilities(sigma: f64, utilities: Vec<f64>) -> Self {
        Self::new(sigma, 0.0, utilities)
    }

    fn full_utility(&self, j: usize) -> f64 {
        self.provider_utility + self.station_utilities[j]
    }
}

/// Choice probabilities of one decision maker.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentChoice {
    /// `stations[k][j]`, aligned with the input nests.
    pub stations: Vec<Vec<f64>>,
    /// Total probability of each nest.
    pub nest_shares: Vec<f64>,
    /// Probability of the outside good (0 when it is excluded).
    pub outside: f64,
}

impl AgentChoice {
    pub fn total(&self) -> f64 {
        self.stations.iter().flatten().sum::<f64>() + self.outside
    }
}

/// Conditional and marginal pieces of the nested-logit probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// P(station j | nest k)
    pub conditional: Vec<Vec<f64>>,
    /// P(nest k)
    pub nest_shares: Vec<f64>,
    /// P(outside good)
    pub outside: f64,
    /// I_k = log Σ_l exp(V_lk / σ_k)
    pub inclusive_values: Vec<f64>,
}

impl Decomposition {
    pub fn joint(&self) -> Vec<Vec<f64>> {
        self.conditional
            .iter()
            .zip(&self.nest_shares)
            .map(|(cond, share)| cond.iter().map(|c| c * share).collect())
            .collect()
    }
}

pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = values.into_iter();
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + it.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn validate(nests: &[Nest], outside: Option<f64>) -> Result<(), DemandError> {
    if nests.is_empty() && outside.is_none() {
        return Err(DemandError::NoAlternatives);
    }
    for (k, nest) in nests.iter().enumerate() {
        if nest.station_utilities.is_empty() {
            return Err(DemandError::EmptyNest(k));
        }
        if !(nest.sigma > 0.0 && nest.sigma <= 1.0) {
            return Err(DemandError::InvalidSigma(nest.sigma));
        }
        let finite = nest.provider_utility.is_finite()
            && nest.station_utilities.iter().all(|u| u.is_finite());
        if !finite {
            return Err(DemandError::NonFiniteUtility(k));
        }
    }
    if let Some(u0) = outside {
        if !u0.is_finite() {
            return Err(DemandError::NonFiniteUtility(nests.len()));
        }
    }
    Ok(())
}

/// Direct nested-logit probabilities.
///
/// `outside` is the utility of the outside good (normally 0.0); `None`
/// drops the outside alternative so the nests share all probability mass.
pub fn choice_probabilities(nests: &[Nest], outside: Option<f64>) -> Result<AgentChoice, DemandError> {
    validate(nests, outside)?;
    let scaled: Vec<Vec<f64>> = nests
        .iter()
        .map(|n| {
            (0..n.station_utilities.len())
                .map(|j| n.full_utility(j) / n.sigma)
                .collect()
        })
        .collect();
    let within: Vec<f64> = scaled.iter().map(|s| log_sum_exp(s.iter().copied())).collect();
    let nest_terms: Vec<f64> = within
        .iter()
        .zip(nests)
        .map(|(w, n)| n.sigma * w)
        .collect();
    let log_denominator = log_sum_exp(nest_terms.iter().copied().chain(outside));

    let stations = scaled
        .iter()
        .zip(within.iter().zip(&nest_terms))
        .map(|(s, (&w, &a))| {
            s.iter()
                .map(|&x| (x - w + a - log_denominator).exp())
                .collect()
        })
        .collect();
    let nest_shares = nest_terms
        .iter()
        .map(|&a| (a - log_denominator).exp())
        .collect();
    let outside = outside.map_or(0.0, |u0| (u0 - log_denominator).exp());
    Ok(AgentChoice {
        stations,
        nest_shares,
        outside,
    })
}

/// The same probabilities written as P(j | k) · P(k).
pub fn choice_probabilities_decomposed(
    nests: &[Nest],
    outside: Option<f64>,
) -> Result<Decomposition, DemandError> {
    validate(nests, outside)?;
    let mut conditional = Vec::with_capacity(nests.len());
    let mut inclusive_values = Vec::with_capacity(nests.len());
    for n in nests {
        let scaled: Vec<f64> = n.station_utilities.iter().map(|v| v / n.sigma).collect();
        let iv = log_sum_exp(scaled.iter().copied());
        conditional.push(scaled.iter().map(|x| (x - iv).exp()).collect());
        inclusive_values.push(iv);
    }
    let upper: Vec<f64> = nests
        .iter()
        .zip(&inclusive_values)
        .map(|(n, iv)| n.provider_utility + n.sigma * iv)
        .collect();
    let log_denominator = log_sum_exp(upper.iter().copied().chain(outside));
    let nest_shares = upper.iter().map(|u| (u - log_denominator).exp()).collect();
    let outside = outside.map_or(0.0, |u0| (u0 - log_denominator).exp());
    Ok(Decomposition {
        conditional,
        nest_shares,
        outside,
        inclusive_values,
    })
}

/// Derivative of every probability with respect to a shift of nest `nest`'s
/// provider utility, scaled by `d_utility` (the chain-rule factor
/// ∂W/∂p). Returns station derivatives and the outside-good derivative.
///
/// Shifting a whole nest leaves P(j | k) unchanged, so
/// ∂Φ_jt = Φ_jt · d_utility · (1[t = nest] − P(nest)).
pub fn nest_shift_gradient(choice: &AgentChoice, nest: usize, d_utility: f64) -> (Vec<Vec<f64>>, f64) {
    let share = choice.nest_shares[nest];
    let stations = choice
        .stations
        .iter()
        .enumerate()
        .map(|(t, probs)| {
            let own = if t == nest { 1.0 } else { 0.0 };
            probs.iter().map(|p| p * d_utility * (own - share)).collect()
        })
        .collect();
    let outside = -choice.outside * d_utility * share;
    (stations, outside)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_nest_equal_utilities() {
        let nests = [Nest::from_utilities(1.0, vec![0.3; 4])];
        let p = choice_probabilities(&nests, None).unwrap();
        for v in &p.stations[0] {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(p.outside, 0.0);
    }

    #[test]
    fn outside_good_takes_share() {
        // one nest, one alternative of utility 0, outside utility 0 → 1/2 each
        let nests = [Nest::from_utilities(0.7, vec![0.0])];
        let p = choice_probabilities(&nests, Some(0.0)).unwrap();
        assert!((p.stations[0][0] - 0.5).abs() < 1e-15);
        assert!((p.outside - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            choice_probabilities(&[Nest::from_utilities(0.5, vec![])], Some(0.0)),
            Err(DemandError::EmptyNest(0))
        );
        assert_eq!(
            choice_probabilities(&[Nest::from_utilities(1.5, vec![1.0])], Some(0.0)),
            Err(DemandError::InvalidSigma(1.5))
        );
        assert_eq!(
            choice_probabilities(&[Nest::from_utilities(0.0, vec![1.0])], Some(0.0)),
            Err(DemandError::InvalidSigma(0.0))
        );
        assert!(choice_probabilities(&[Nest::from_utilities(0.5, vec![f64::NAN])], None).is_err());
        assert_eq!(choice_probabilities(&[], None), Err(DemandError::NoAlternatives));
    }

    #[test]
    fn decomposed_single_nest() {
        let nests = [Nest::new(0.6, 1.3, vec![0.1, -0.4, 2.0])];
        let d = choice_probabilities_decomposed(&nests, None).unwrap();
        assert!((d.nest_shares[0] - 1.0).abs() < 1e-15);
        let direct = choice_probabilities(&nests, None).unwrap();
        for (a, b) in d.joint()[0].iter().zip(&direct.stations[0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_nests_share_equally() {
        let n = Nest::new(0.4, 0.5, vec![1.0, 2.0]);
        let d = choice_probabilities_decomposed(&[n.clone(), n.clone(), n], Some(0.0)).unwrap();
        assert!((d.nest_shares[0] - d.nest_shares[1]).abs() < 1e-15);
        assert!((d.nest_shares[1] - d.nest_shares[2]).abs() < 1e-15);
    }

    #[test]
    fn large_utilities_stay_finite() {
        let nests = [
            Nest::from_utilities(0.05, vec![500.0, -500.0, 499.0]),
            Nest::from_utilities(1.0, vec![-500.0]),
        ];
        let p = choice_probabilities(&nests, Some(0.0)).unwrap();
        assert!(p.stations.iter().flatten().all(|v| v.is_finite()));
        assert!((p.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let nests = [
            Nest::from_utilities(0.5, vec![1.0, 2.0]),
            Nest::from_utilities(0.8, vec![0.0, 1.0]),
        ];
        let p = choice_probabilities(&nests, Some(0.0)).unwrap();
        let (g, g0) = nest_shift_gradient(&p, 1, -0.3);
        let s: f64 = g.iter().flatten().sum::<f64>() + g0;
        assert!(s.abs() < 1e-15);
    }
}
