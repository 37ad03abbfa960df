//! Cartesian product of adjustable values, addressed by mixed-radix id.
//!
//! The first declared adjustable is the most significant digit, so ids are
//! stable for a given spec and can be cached or used as URL components.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{AdjustableParam, Bindings, CriterionSpec, Literal};

pub const DEFAULT_MAX_CANDIDATES: u64 = 100_000;

pub type CandidateId = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid has {size} candidates, more than the limit of {limit}")]
    TooLarge { size: u128, limit: u64 },
    #[error("unknown adjustable `${0}`")]
    UnknownAdjustable(String),
    #[error("value {value} is not in the value set of `${name}`")]
    ValueNotInSet { name: String, value: Literal },
    #[error("candidate id {id} outside grid of {count}")]
    OutOfRange { id: CandidateId, count: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAssignment {
    pub candidate_id: CandidateId,
    pub bindings: Bindings,
}

/// Constraints keyed by adjustable name; a candidate passes when each named
/// adjustable's value is in its set.
pub type Constraints = BTreeMap<String, Vec<Literal>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub adjustables: Vec<AdjustableParam>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    adjustables: Vec<AdjustableParam>,
    count: u64,
}

/// Number of candidates a spec expands to, without limit checks.
pub fn grid_size(spec: &CriterionSpec) -> u128 {
    spec.adjustables.iter().map(|a| a.values.len() as u128).product()
}

/// Enumerates every candidate of `spec`, refusing grids above `max`.
pub fn enumerate(spec: &CriterionSpec, max: u64) -> Result<CandidateGrid, GridError> {
    let size = grid_size(spec);
    if size > u128::from(max) {
        return Err(GridError::TooLarge { size, limit: max });
    }
    Ok(CandidateGrid { adjustables: spec.adjustables.clone(), count: size as u64 })
}

impl CandidateGrid {
    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn adjustables(&self) -> &[AdjustableParam] {
        &self.adjustables
    }

    pub fn manifest(&self) -> GridManifest {
        GridManifest { adjustables: self.adjustables.clone(), count: self.count }
    }

    /// Value index per adjustable, most significant first.
    pub fn digits(&self, id: CandidateId) -> Result<Vec<usize>, GridError> {
        if id >= self.count {
            return Err(GridError::OutOfRange { id, count: self.count });
        }
        let mut rest = id;
        let mut digits = vec![0; self.adjustables.len()];
        for (slot, adj) in digits.iter_mut().zip(&self.adjustables).rev() {
            let radix = adj.values.len() as u64;
            *slot = (rest % radix) as usize;
            rest /= radix;
        }
        Ok(digits)
    }

    pub fn assignment(&self, id: CandidateId) -> Result<CandidateAssignment, GridError> {
        let digits = self.digits(id)?;
        let bindings = self
            .adjustables
            .iter()
            .zip(digits)
            .map(|(a, d)| (a.name.clone(), a.values[d]))
            .collect();
        Ok(CandidateAssignment { candidate_id: id, bindings })
    }

    /// Inverse of [`assignment`](Self::assignment).
    pub fn id_of(&self, bindings: &Bindings) -> Result<CandidateId, GridError> {
        let mut id = 0u64;
        for a in &self.adjustables {
            let v = bindings.get(&a.name).ok_or_else(|| GridError::UnknownAdjustable(a.name.clone()))?;
            let d = a
                .values
                .iter()
                .position(|x| x == v)
                .ok_or_else(|| GridError::ValueNotInSet { name: a.name.clone(), value: *v })?;
            id = id * a.values.len() as u64 + d as u64;
        }
        Ok(id)
    }

    pub fn assignments(&self) -> impl Iterator<Item = CandidateAssignment> + '_ {
        (0..self.count).map(|id| self.assignment(id).expect("id in range"))
    }

    /// Per-adjustable allowed value indices; `None` means unconstrained.
    fn allowed(&self, constraints: &Constraints) -> Result<Vec<Option<Vec<bool>>>, GridError> {
        for name in constraints.keys() {
            if !self.adjustables.iter().any(|a| &a.name == name) {
                return Err(GridError::UnknownAdjustable(name.clone()));
            }
        }
        self.adjustables
            .iter()
            .map(|a| {
                let Some(set) = constraints.get(&a.name) else { return Ok(None) };
                let mut mask = vec![false; a.values.len()];
                for v in set {
                    let d = a.values.iter().position(|x| x == v).ok_or_else(|| {
                        GridError::ValueNotInSet { name: a.name.clone(), value: *v }
                    })?;
                    mask[d] = true;
                }
                Ok(Some(mask))
            })
            .collect()
    }

    /// Ids whose bindings satisfy every constraint, ascending.
    pub fn filter_by_binding(&self, constraints: &Constraints) -> Result<Vec<CandidateId>, GridError> {
        let allowed = self.allowed(constraints)?;
        let mut out = Vec::new();
        for id in 0..self.count {
            let digits = self.digits(id)?;
            if digits.iter().zip(&allowed).all(|(&d, m)| m.as_ref().is_none_or(|m| m[d])) {
                out.push(id);
            }
        }
        Ok(out)
    }

    /// For each adjustable, how many candidates satisfying the *other*
    /// constraints take each of its values. Backs the slider heatmaps.
    pub fn tick_counts(&self, constraints: &Constraints) -> Result<BTreeMap<String, Vec<u64>>, GridError> {
        let allowed = self.allowed(constraints)?;
        let mut out = BTreeMap::new();
        for (i, a) in self.adjustables.iter().enumerate() {
            let others: u64 = allowed
                .iter()
                .zip(&self.adjustables)
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (m, adj))| m.as_ref().map_or(adj.values.len() as u64, |m| m.iter().filter(|&&b| b).count() as u64))
                .product();
            out.insert(a.name.clone(), vec![others; a.values.len()]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_spec;

    fn spec_3x4x2() -> CriterionSpec {
        parse_spec(
            "INTERVENTION: has_event(\"h\")\n\
             INCLUDE a: age >= $age_min\n\
             EXCLUDE s: has_event(\"cardiac_surgery\") within_last $m months\n\
             INCLUDE v: mechanical_ventilation = $vent\n\
             ADJUST $age_min IN {18, 60, 65}\n\
             ADJUST $m IN {0, 3, 6, 12}\n\
             ADJUST $vent IN {true, false}\n",
        )
        .unwrap()
    }

    #[test]
    fn product_size_and_order() {
        let g = enumerate(&spec_3x4x2(), DEFAULT_MAX_CANDIDATES).unwrap();
        assert_eq!(g.len(), 24);
        let a0 = g.assignment(0).unwrap();
        assert_eq!(a0.bindings["age_min"], Literal::Number(18.0));
        assert_eq!(a0.bindings["vent"], Literal::Bool(true));
        let a1 = g.assignment(1).unwrap();
        assert_eq!(a1.bindings["vent"], Literal::Bool(false));
        assert_eq!(a1.bindings["age_min"], Literal::Number(18.0));
        let last = g.assignment(23).unwrap();
        assert_eq!(last.bindings["age_min"], Literal::Number(65.0));
        assert_eq!(last.bindings["m"], Literal::Number(12.0));
        assert!(g.assignment(24).is_err());
    }

    #[test]
    fn single_boolean_and_empty() {
        let s = parse_spec("INTERVENTION: has_event(\"h\")\nINCLUDE v: mechanical_ventilation = $v\nADJUST $v IN {true, false}").unwrap();
        let g = enumerate(&s, 10).unwrap();
        assert_eq!(g.assignment(0).unwrap().bindings["v"], Literal::Bool(true));
        assert_eq!(g.assignment(1).unwrap().bindings["v"], Literal::Bool(false));
        let s = parse_spec("INTERVENTION: has_event(\"h\")").unwrap();
        let g = enumerate(&s, 10).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.assignment(0).unwrap().bindings.is_empty());
    }

    #[test]
    fn too_large_refused() {
        let err = enumerate(&spec_3x4x2(), 10).unwrap_err();
        assert_eq!(err, GridError::TooLarge { size: 24, limit: 10 });
    }

    #[test]
    fn filtering() {
        let g = enumerate(&spec_3x4x2(), 100).unwrap();
        let mut c = Constraints::new();
        assert_eq!(g.filter_by_binding(&c).unwrap().len(), 24);
        c.insert("age_min".into(), vec![Literal::Number(60.0)]);
        assert_eq!(g.filter_by_binding(&c).unwrap().len(), 8);
        c.insert("vent".into(), vec![]);
        assert!(g.filter_by_binding(&c).unwrap().is_empty());
        let mut bad = Constraints::new();
        bad.insert("nope".into(), vec![]);
        assert_eq!(g.filter_by_binding(&bad), Err(GridError::UnknownAdjustable("nope".into())));
        let mut bad = Constraints::new();
        bad.insert("age_min".into(), vec![Literal::Number(1.0)]);
        assert!(matches!(g.filter_by_binding(&bad), Err(GridError::ValueNotInSet { .. })));
    }

    #[test]
    fn tick_counts_match_filter() {
        let g = enumerate(&spec_3x4x2(), 100).unwrap();
        let mut c = Constraints::new();
        c.insert("m".into(), vec![Literal::Number(3.0), Literal::Number(6.0)]);
        let ticks = g.tick_counts(&c).unwrap();
        for a in g.adjustables() {
            for (i, v) in a.values.iter().enumerate() {
                let mut c2 = c.clone();
                c2.insert(a.name.clone(), vec![*v]);
                assert_eq!(ticks[&a.name][i], g.filter_by_binding(&c2).unwrap().len() as u64);
            }
        }
    }
}
