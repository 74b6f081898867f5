//! Student-to-teacher layer mapping strategies for hidden-state transfer.
//!
//! A mapping assigns each student layer `i` a set of teacher layers `g(i)`
//! whose hidden states it must predict. All indices are 1-based.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mapping strategy.
///
/// - `Last1`: only the last student layer, mapped to the last teacher layer.
/// - `Last`: student layer `i` maps to teacher layer `L_T − L_S + i`.
/// - `Uniform` (a.k.a. "skip"): student layer `i` maps to teacher layer
///   `(i−1)·⌈L_T/L_S⌉ + 1`.
/// - `UniformLast`: the union of `Uniform` and `Last`, giving every student
///   layer two teacher layers (one when both coincide at equal depths).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingStrategy {
    Last1,
    Last,
    Uniform,
    UniformLast,
}

impl MappingStrategy {
    pub const ALL: [MappingStrategy; 4] = [
        MappingStrategy::Last1,
        MappingStrategy::Last,
        MappingStrategy::Uniform,
        MappingStrategy::UniformLast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MappingStrategy::Last1 => "last1",
            MappingStrategy::Last => "last",
            MappingStrategy::Uniform => "uniform",
            MappingStrategy::UniformLast => "uniform_last",
        }
    }
}

impl fmt::Display for MappingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MappingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last1" => Ok(MappingStrategy::Last1),
            "last" => Ok(MappingStrategy::Last),
            "uniform" => Ok(MappingStrategy::Uniform),
            "uniform_last" => Ok(MappingStrategy::UniformLast),
            other => Err(Error::Config(format!("unknown mapping strategy {other:?}"))),
        }
    }
}

/// The realized mapping: per student layer, the set of teacher layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMapping {
    pub strategy: MappingStrategy,
    /// `(student layer, teacher layers)` pairs, ascending in student layer.
    pub pairs: Vec<(usize, BTreeSet<usize>)>,
}

impl LayerMapping {
    /// All `(student, teacher)` index pairs in deterministic order.
    pub fn flat_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .flat_map(|(i, g)| g.iter().map(move |&j| (*i, j)))
            .collect()
    }
}

/// Build the mapping for given teacher and student depths.
pub fn build_mapping(
    strategy: MappingStrategy,
    teacher_layers: usize,
    student_layers: usize,
) -> Result<LayerMapping> {
    if teacher_layers == 0 || student_layers == 0 {
        return Err(Error::Config("layer counts must be positive".into()));
    }
    if student_layers > teacher_layers {
        return Err(Error::Config(format!(
            "unsupported configuration: student depth {student_layers} exceeds teacher depth {teacher_layers}"
        )));
    }
    let lt = teacher_layers;
    let ls = student_layers;
    let skip = lt.div_ceil(ls);
    let uniform = |i: usize| (i - 1) * skip + 1;
    let last = |i: usize| lt - ls + i;

    let pairs: Vec<(usize, BTreeSet<usize>)> = match strategy {
        MappingStrategy::Last1 => vec![(ls, BTreeSet::from([lt]))],
        MappingStrategy::Last => (1..=ls).map(|i| (i, BTreeSet::from([last(i)]))).collect(),
        MappingStrategy::Uniform => (1..=ls)
            .map(|i| (i, BTreeSet::from([uniform(i)])))
            .collect(),
        MappingStrategy::UniformLast => (1..=ls)
            .map(|i| (i, BTreeSet::from([uniform(i), last(i)])))
            .collect(),
    };
    debug_assert!(pairs
        .iter()
        .flat_map(|(_, g)| g)
        .all(|&j| (1..=lt).contains(&j)));
    Ok(LayerMapping { strategy, pairs })
}
