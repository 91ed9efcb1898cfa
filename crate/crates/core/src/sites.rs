//! Candidate sites and binary placement policies.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::road_network::{Amenities, NodeId};

/// Number of competing providers; provider `k` (0-based) offers Level `k + 1`.
pub const PROVIDERS: usize = 3;

fn all_levels() -> Vec<u8> {
    vec![1, 2, 3]
}

/// A location where stations may be built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    /// Road-network node the station sits on.
    pub node: NodeId,
    /// Grid bus feeding the station.
    pub bus: u32,
    /// Charging levels (1..=3) allowed to build here.
    #[serde(default = "all_levels")]
    pub levels: Vec<u8>,
    /// Amenity overrides; when absent the road node's flags are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restaurant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shopping: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supermarket: Option<bool>,
}

impl Candidate {
    pub fn allows(&self, provider: usize) -> bool {
        self.levels.iter().any(|&l| usize::from(l) == provider + 1)
    }

    pub fn amenities(&self, node_flags: Amenities) -> Amenities {
        Amenities {
            restaurant: self.restaurant.unwrap_or(node_flags.restaurant),
            shopping: self.shopping.unwrap_or(node_flags.shopping),
            supermarket: self.supermarket.unwrap_or(node_flags.supermarket),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateFile {
    pub candidates: Vec<Candidate>,
}

/// `s_j ∈ {0,1}` for every candidate `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlacementPolicy(pub Vec<bool>);

impl PlacementPolicy {
    pub fn empty(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn full(len: usize) -> Self {
        Self(vec![true; len])
    }

    /// Policy number `index` of `2^len`; bit `j` of `index` is candidate `j`.
    pub fn from_index(index: u64, len: usize) -> Self {
        Self((0..len).map(|j| index >> j & 1 == 1).collect())
    }

    pub fn index(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (j, &b)| acc | (u64::from(b) << j))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn active(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
            .collect()
    }

    pub fn contains(&self, other: &PlacementPolicy) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(&a, &b)| a || !b)
    }

    pub fn union(&self, other: &PlacementPolicy) -> PlacementPolicy {
        PlacementPolicy(self.0.iter().zip(&other.0).map(|(&a, &b)| a || b).collect())
    }
}

impl fmt::Display for PlacementPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PlacementPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("invalid policy character {other:?}")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(PlacementPolicy)
    }
}

/// Active candidate indices per provider.
pub type ActiveStations = [Vec<usize>; PROVIDERS];

pub fn active_stations(policies: &[PlacementPolicy; PROVIDERS]) -> ActiveStations {
    [policies[0].active(), policies[1].active(), policies[2].active()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for i in 0..16 {
            assert_eq!(PlacementPolicy::from_index(i, 4).index(), i);
        }
        let p: PlacementPolicy = "101".parse().unwrap();
        assert_eq!(p.index(), 0b101);
        assert_eq!(p.to_string(), "101");
        assert_eq!(p.active(), vec![0, 2]);
    }

    #[test]
    fn containment() {
        let a: PlacementPolicy = "110".parse().unwrap();
        let b: PlacementPolicy = "100".parse().unwrap();
        assert!(a.contains(&b));
        assert!(!b.contains(&a));
        assert_eq!(b.union(&"001".parse().unwrap()).to_string(), "101");
    }
}
