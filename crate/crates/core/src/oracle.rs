//! Brute-force reference semantics: exhaustive search over variable
//! partitions and quotient labelings. Used by tests and cross-checks only;
//! instances beyond the variable budget are rejected.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::minimality::{Constraint, Instance};
use crate::relations::{self, TypedRelation, Var};
use crate::structures::{GroundStructure, LabeledStructure};

pub const DEFAULT_BUDGET: usize = 7;

/// A solution as orbit data: an equality partition of the instance variables
/// plus a realizable full labeling of the quotient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub class_of: BTreeMap<Var, u32>,
    pub quotient: LabeledStructure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleVerdict {
    Sat(Labeling),
    Unsat,
}

impl OracleVerdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, OracleVerdict::Sat(_))
    }
}

/// Decides satisfiability by exhausting partitions first, labelings second.
/// The first satisfying labeling in enumeration order is returned, so the
/// verdict is deterministic.
pub fn brute_solve(i: &Instance, g: &GroundStructure, budget: usize) -> Result<OracleVerdict> {
    if i.vars.len() > budget {
        return Err(Error::Budget(format!(
            "{} variables exceed the oracle budget {budget}",
            i.vars.len()
        )));
    }
    if i.is_trivial() {
        return Ok(OracleVerdict::Unsat);
    }
    for partition in relations::set_partitions(i.vars.len()) {
        let classes = partition.iter().map(|c| c + 1).max().unwrap_or(0) as usize;
        let class_of: BTreeMap<Var, u32> = i
            .vars
            .iter()
            .cloned()
            .zip(partition.iter().copied())
            .collect();
        let watchers: Vec<ConstraintWatch> = i
            .constraints
            .iter()
            .map(|c| ConstraintWatch::new(g, c, &class_of))
            .collect();
        if watchers.iter().any(|w| w.rows.is_empty()) {
            continue;
        }
        let subsets: Vec<Vec<u32>> = (0..classes as u32).combinations(g.sig().k()).collect();
        let mut quotient = LabeledStructure::new(classes);
        if let Some(solution) = assign(g, &watchers, &subsets, 0, &mut quotient) {
            return Ok(OracleVerdict::Sat(Labeling { class_of, quotient: solution }));
        }
    }
    Ok(OracleVerdict::Unsat)
}

/// Per-partition view of one constraint: the rows compatible with the
/// induced equality pattern and the quotient subsets that decide it.
struct ConstraintWatch<'a> {
    rows: Vec<&'a crate::relations::TypeRow>,
    /// quotient subset -> positions of the row carrying its label
    needs: Vec<(Vec<u32>, Vec<usize>)>,
}

impl<'a> ConstraintWatch<'a> {
    fn new(g: &GroundStructure, c: &'a Constraint, class_of: &BTreeMap<Var, u32>) -> Self {
        let sig = g.sig();
        let classes: Vec<u32> = c.scope.iter().map(|v| class_of[v]).collect();
        // first-occurrence normalization of the induced equality pattern
        let mut rename: BTreeMap<u32, u32> = BTreeMap::new();
        let pattern: Vec<u32> = classes
            .iter()
            .map(|&c| {
                let next = rename.len() as u32;
                *rename.entry(c).or_insert(next)
            })
            .collect();
        let rows: Vec<&crate::relations::TypeRow> = c
            .rel
            .rows
            .iter()
            .filter(|row| row.partition() == pattern.as_slice())
            .collect();
        let mut distinct: Vec<u32> = classes.iter().copied().unique().collect();
        distinct.sort_unstable();
        let needs = distinct
            .into_iter()
            .combinations(sig.k())
            .map(|subset| {
                let positions: Vec<usize> = subset
                    .iter()
                    .map(|cls| classes.iter().position(|c| c == cls).unwrap())
                    .collect();
                (subset, positions)
            })
            .collect();
        ConstraintWatch { rows, needs }
    }

    /// Some compatible row matches every labeled quotient subset so far.
    fn consistent(&self, g: &GroundStructure, quotient: &LabeledStructure) -> bool {
        let sig = g.sig();
        self.rows.iter().any(|row| {
            self.needs.iter().all(|(subset, positions)| {
                let Some(assigned) = quotient.get(sig, subset) else { return true };
                let row_classes: Vec<u32> =
                    positions.iter().map(|&p| row.class_of(p)).collect();
                row.quotient().get(sig, &row_classes) == Some(assigned)
            })
        })
    }
}

fn assign(
    g: &GroundStructure,
    watchers: &[ConstraintWatch],
    subsets: &[Vec<u32>],
    next: usize,
    quotient: &mut LabeledStructure,
) -> Option<LabeledStructure> {
    let sig = g.sig();
    if next == subsets.len() {
        if !g.realizable_unchecked(quotient) {
            return None;
        }
        return Some(quotient.clone());
    }
    for label in 0..sig.label_count() {
        let mut candidate = quotient.clone();
        candidate.set(sig, &subsets[next], label);
        if !g.realizable_unchecked(&candidate) {
            continue;
        }
        if !watchers.iter().all(|w| w.consistent(g, &candidate)) {
            continue;
        }
        if let Some(found) = assign(g, watchers, subsets, next + 1, &mut candidate) {
            return Some(found);
        }
    }
    None
}

/// Reproducible pseudo-random instance with orbit-union constraints of
/// arity k over the given number of variables.
pub fn random_instance(
    g: &GroundStructure,
    n_vars: usize,
    n_constraints: usize,
    seed: u64,
) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars: Vec<Var> = (0..n_vars).map(|i| format!("x{i}")).collect();
    let labels: Vec<usize> = (0..g.sig().label_count()).collect();
    let mut constraints = Vec::new();
    if n_vars >= g.k() {
        for _ in 0..n_constraints {
            let mut scope = vars.clone();
            scope.shuffle(&mut rng);
            scope.truncate(g.k());
            scope.sort();
            let mut chosen: Vec<usize> = labels
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(0.5))
                .collect();
            if chosen.is_empty() {
                chosen.push(labels[rng.gen_range(0..labels.len())]);
            }
            constraints.push(Constraint::new(TypedRelation::uniform_orbit(g, scope, &chosen)));
        }
    }
    Instance::new(vars, constraints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minimality::{saturate, MinimalityParams};
    use crate::relations::vars;
    use crate::structures::{henson_k3_free, hypergraph_3, random_graph};

    fn edge_instance(g: &GroundStructure, edges: &[(&str, &str)], label: usize) -> Instance {
        let mut all: BTreeSet<Var> = BTreeSet::new();
        let mut constraints = Vec::new();
        for (a, b) in edges {
            all.insert(a.to_string());
            all.insert(b.to_string());
            constraints.push(Constraint::new(TypedRelation::uniform_orbit(
                g,
                vars(&[a, b]),
                &[label],
            )));
        }
        Instance::new(all.into_iter().collect(), constraints)
    }

    #[test]
    fn single_edge_is_sat() {
        let g = random_graph();
        let i = edge_instance(&g, &[("x", "y")], 0);
        assert!(brute_solve(&i, &g, DEFAULT_BUDGET).unwrap().is_sat());
    }

    #[test]
    fn triangle_verdicts() {
        let henson = henson_k3_free();
        let i = edge_instance(&henson, &[("x", "y"), ("y", "z"), ("x", "z")], 0);
        assert!(!brute_solve(&i, &henson, DEFAULT_BUDGET).unwrap().is_sat());

        let rg = random_graph();
        let i = edge_instance(&rg, &[("x", "y"), ("y", "z"), ("x", "z")], 0);
        assert!(brute_solve(&i, &rg, DEFAULT_BUDGET).unwrap().is_sat());
    }

    #[test]
    fn budget_is_enforced() {
        let g = random_graph();
        let i = random_instance(&g, 8, 2, 1);
        assert!(matches!(brute_solve(&i, &g, 7), Err(Error::Budget(_))));
    }

    #[test]
    fn random_instance_is_reproducible() {
        let g = hypergraph_3();
        let a = random_instance(&g, 5, 4, 42);
        let b = random_instance(&g, 5, 4, 42);
        assert_eq!(a, b);
        let c = random_instance(&g, 5, 4, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn no_constraints_is_sat() {
        let g = random_graph();
        let i = random_instance(&g, 4, 0, 7);
        assert!(brute_solve(&i, &g, DEFAULT_BUDGET).unwrap().is_sat());
    }

    #[test]
    fn oracle_agrees_with_saturation_on_small_instances() {
        let g = henson_k3_free();
        let p = MinimalityParams::for_structure(&g);
        for seed in 0..40 {
            let i = random_instance(&g, 5, 5, seed);
            let direct = brute_solve(&i, &g, DEFAULT_BUDGET).unwrap();
            let saturated = saturate(&i, p, &g).unwrap();
            let after = brute_solve(&saturated, &g, DEFAULT_BUDGET).unwrap();
            assert_eq!(direct.is_sat(), after.is_sat(), "seed {seed}");
            if saturated.is_trivial() {
                assert!(!direct.is_sat(), "refutation soundness, seed {seed}");
            }
        }
    }
}
