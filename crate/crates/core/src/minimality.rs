//! The instance model and the (k,ℓ)-minimality propagation engine.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::relations::{self, TypedRelation, Var};
use crate::structures::GroundStructure;

/// One constraint: an ordered scope and a relation over exactly that scope.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Constraint {
    pub scope: Vec<Var>,
    pub rel: TypedRelation,
}

impl Constraint {
    pub fn new(rel: TypedRelation) -> Self {
        Constraint { scope: rel.vars.clone(), rel }
    }

    fn covers(&self, subset: &BTreeSet<Var>) -> bool {
        subset.iter().all(|v| self.scope.contains(v))
    }
}

/// A CSP instance: variables plus constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub vars: Vec<Var>,
    pub constraints: Vec<Constraint>,
}

impl Instance {
    pub fn new(vars: Vec<Var>, constraints: Vec<Constraint>) -> Self {
        let mut vars = vars;
        vars.sort();
        vars.dedup();
        Instance { vars, constraints }
    }

    /// Trivial means some constraint has emptied out.
    pub fn is_trivial(&self) -> bool {
        self.constraints.iter().any(|c| c.rel.is_empty())
    }

    /// Validates scopes against the ground structure and the width bound.
    pub fn validate(&self, g: &GroundStructure, ell: usize) -> Result<()> {
        for c in &self.constraints {
            if c.scope.iter().duplicates().next().is_some() {
                return Err(Error::Shape(format!("repeated variable in scope {:?}", c.scope)));
            }
            if c.scope != c.rel.vars {
                return Err(Error::Shape(format!(
                    "constraint relation variables {:?} differ from scope {:?}",
                    c.rel.vars, c.scope
                )));
            }
            if c.scope.len() > ell {
                return Err(Error::Shape(format!(
                    "constraint arity {} exceeds the width parameter {}; decompose the constraint explicitly",
                    c.scope.len(),
                    ell
                )));
            }
            for v in &c.scope {
                if !self.vars.contains(v) {
                    return Err(Error::UnknownVariable(v.clone()));
                }
            }
            for row in &c.rel.rows {
                if !row.is_realizable(g) {
                    return Err(Error::Shape("constraint contains an unrealizable row".into()));
                }
            }
        }
        Ok(())
    }
}

/// Width parameters of the minimality engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinimalityParams {
    pub k: usize,
    pub ell: usize,
}

impl MinimalityParams {
    pub fn new(k: usize, ell: usize) -> Result<Self> {
        if k > ell {
            return Err(Error::Precondition(format!("k = {k} must not exceed ell = {ell}")));
        }
        Ok(MinimalityParams { k, ell })
    }

    /// The solver pipeline parameters for a presentation: `(k, max(k+1, b))`.
    pub fn for_structure(g: &GroundStructure) -> Self {
        MinimalityParams { k: g.k(), ell: g.ell() }
    }
}

/// Computes an equivalent (k,ℓ)-minimal instance.
///
/// Missing ℓ-subsets are seeded with full relations, then projections of
/// covering constraint pairs are intersected to a fixpoint, smallest subsets
/// first. Propagation stops early once any constraint empties; the returned
/// instance is trivial in that case and refutes the input.
pub fn saturate(i: &Instance, p: MinimalityParams, g: &GroundStructure) -> Result<Instance> {
    saturate_with_order(i, p, g, None)
}

/// [`saturate`] with a seeded shuffle of the propagation order; the fixpoint
/// is order-independent, which the test suite checks through this entry.
pub fn saturate_with_order(
    i: &Instance,
    p: MinimalityParams,
    g: &GroundStructure,
    shuffle_seed: Option<u64>,
) -> Result<Instance> {
    i.validate(g, p.ell)?;
    let mut constraints = i.constraints.clone();

    // seed full constraints so that every ≤ℓ subset is covered; the full row
    // set depends only on the arity and is enumerated at most once
    let cover = p.ell.min(i.vars.len()).max(1);
    let mut full_rows: Option<BTreeSet<relations::TypeRow>> = None;
    for subset in i.vars.iter().cloned().combinations(cover) {
        let set: BTreeSet<Var> = subset.iter().cloned().collect();
        if !constraints.iter().any(|c| c.covers(&set)) {
            let rows = full_rows
                .get_or_insert_with(|| {
                    relations::enumerate_full_rows(g, cover).into_iter().collect()
                })
                .clone();
            constraints.push(Constraint::new(TypedRelation::new(subset, rows)));
        }
    }

    // static structure: the ≤k subsets and which constraints cover them
    let mut subsets: Vec<Vec<Var>> = (1..=p.k.min(i.vars.len()))
        .flat_map(|m| i.vars.iter().cloned().combinations(m))
        .collect();
    subsets.sort_by(|a, b| (a.len(), a).cmp(&(b.len(), b)));
    let covering: Vec<Vec<usize>> = subsets
        .iter()
        .map(|s| {
            let set: BTreeSet<Var> = s.iter().cloned().collect();
            constraints
                .iter()
                .enumerate()
                .filter(|(_, c)| c.covers(&set))
                .map(|(idx, _)| idx)
                .collect()
        })
        .collect();
    let subsets_of_constraint: Vec<Vec<usize>> = constraints
        .iter()
        .map(|c| {
            let scope: BTreeSet<&Var> = c.scope.iter().collect();
            subsets
                .iter()
                .enumerate()
                .filter(|(_, s)| s.iter().all(|v| scope.contains(v)))
                .map(|(si, _)| si)
                .collect()
        })
        .collect();
    let positions_in: Vec<Vec<Vec<usize>>> = constraints
        .iter()
        .map(|c| {
            subsets
                .iter()
                .map(|s| {
                    s.iter()
                        .filter_map(|v| c.rel.vars.iter().position(|w| w == v))
                        .collect()
                })
                .collect()
        })
        .collect();

    // projections cached per (constraint, subset), invalidated on shrink
    let sig = g.sig();
    let mut proj_cache: Vec<BTreeMap<usize, BTreeSet<relations::TypeRow>>> =
        vec![BTreeMap::new(); constraints.len()];
    let mut projection = |constraints: &Vec<Constraint>,
                          cache: &mut Vec<BTreeMap<usize, BTreeSet<relations::TypeRow>>>,
                          ci: usize,
                          si: usize,
                          positions: &[usize]|
     -> BTreeSet<relations::TypeRow> {
        if let Some(rows) = cache[ci].get(&si) {
            return rows.clone();
        }
        let rows: BTreeSet<relations::TypeRow> = constraints[ci]
            .rel
            .rows
            .iter()
            .map(|r| r.restricted(sig, positions))
            .collect();
        cache[ci].insert(si, rows.clone());
        rows
    };

    let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    // work items: (subset index, covering constraint index to shrink)
    let mut queue: Vec<(usize, usize)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (si, cover_list) in covering.iter().enumerate() {
        for &ci in cover_list {
            if seen.insert((si, ci)) {
                queue.push((si, ci));
            }
        }
    }
    if let Some(rng) = rng.as_mut() {
        queue.shuffle(rng);
    }

    while let Some((si, target)) = pop_item(&mut queue, rng.as_mut()) {
        seen.remove(&(si, target));
        let mut common: Option<BTreeSet<relations::TypeRow>> = None;
        for &ci in &covering[si] {
            let proj = projection(&constraints, &mut proj_cache, ci, si, &positions_in[ci][si]);
            common = Some(match common {
                None => proj,
                Some(acc) => acc.intersection(&proj).cloned().collect(),
            });
        }
        let Some(common) = common else { continue };
        let proj_t = projection(&constraints, &mut proj_cache, target, si, &positions_in[target][si]);
        if proj_t == common {
            continue;
        }
        // shrink the target to rows whose projection lies in the intersection
        let positions = &positions_in[target][si];
        let kept: BTreeSet<relations::TypeRow> = constraints[target]
            .rel
            .rows
            .iter()
            .filter(|row| common.contains(&row.restricted(sig, positions)))
            .cloned()
            .collect();
        constraints[target].rel.rows = kept;
        proj_cache[target].clear();
        if constraints[target].rel.is_empty() {
            return Ok(Instance { vars: i.vars.clone(), constraints });
        }
        // requeue everything that can see the change
        for &s2 in &subsets_of_constraint[target] {
            for &ci in &covering[s2] {
                if seen.insert((s2, ci)) {
                    queue.push((s2, ci));
                }
            }
        }
        if let Some(rng) = rng.as_mut() {
            queue.shuffle(rng);
        }
    }
    Ok(Instance { vars: i.vars.clone(), constraints })
}

fn pop_item<T>(queue: &mut Vec<T>, rng: Option<&mut ChaCha8Rng>) -> Option<T> {
    if queue.is_empty() {
        return None;
    }
    match rng {
        Some(rng) => {
            let idx = rand::Rng::gen_range(rng, 0..queue.len());
            Some(queue.swap_remove(idx))
        }
        None => Some(queue.remove(0)),
    }
}

/// The common projection of a k-minimal instance onto a tuple of length ≤ k.
/// Disagreement between covering constraints reports non-minimal input.
pub fn projection(g: &GroundStructure, i: &Instance, t: &[Var]) -> Result<TypedRelation> {
    if t.len() > g.k() {
        return Err(Error::Precondition(format!(
            "projection tuples must have length at most k = {}",
            g.k()
        )));
    }
    let set: BTreeSet<Var> = t.iter().cloned().collect();
    let mut result: Option<TypedRelation> = None;
    for c in &i.constraints {
        if !c.covers(&set) {
            continue;
        }
        let proj = relations::project(g, &c.rel, t)?;
        match &result {
            None => result = Some(proj),
            Some(prev) => {
                if prev.rows != proj.rows {
                    return Err(Error::Precondition(format!(
                        "covering constraints disagree on {:?}: the instance is not k-minimal",
                        t
                    )));
                }
            }
        }
    }
    result.ok_or_else(|| Error::Precondition(format!("no constraint covers {:?}", t)))
}

/// True iff all covering constraints agree on every ≤k-subset and every
/// ≤ℓ-subset is covered.
pub fn is_minimal(g: &GroundStructure, i: &Instance, p: MinimalityParams) -> bool {
    let cover = p.ell.min(i.vars.len()).max(1);
    for subset in i.vars.iter().cloned().combinations(cover) {
        let set: BTreeSet<Var> = subset.iter().cloned().collect();
        if !i.constraints.iter().any(|c| c.covers(&set)) {
            return false;
        }
    }
    for m in 1..=p.k.min(i.vars.len()) {
        for subset in i.vars.iter().cloned().combinations(m) {
            if projection(g, i, &subset).is_err() {
                return false;
            }
        }
    }
    true
}

/// Merges variables whose pairwise projection lies inside the diagonal and
/// intersects every remaining constraint with pairwise injectivity. Returns
/// the reduced instance together with the variable quotient map.
pub fn injectivize(
    g: &GroundStructure,
    i: &Instance,
) -> Result<(Instance, BTreeMap<Var, Var>)> {
    if i.is_trivial() {
        return Err(Error::Precondition("instance is trivial".into()));
    }
    // representative per diagonal-equivalence class, smallest name wins
    let mut repr: BTreeMap<Var, Var> = i.vars.iter().map(|v| (v.clone(), v.clone())).collect();
    fn find(repr: &mut BTreeMap<Var, Var>, v: &Var) -> Var {
        let parent = repr[v].clone();
        if &parent == v {
            return parent;
        }
        let root = find(repr, &parent);
        repr.insert(v.clone(), root.clone());
        root
    }
    for pair in i.vars.iter().combinations(2) {
        let (a, b) = (pair[0].clone(), pair[1].clone());
        let proj = projection(g, i, &[a.clone(), b.clone()])?;
        let diagonal_only = proj.rows.iter().all(|row| row.class_of(0) == row.class_of(1));
        if diagonal_only {
            let ra = find(&mut repr, &a);
            let rb = find(&mut repr, &b);
            if ra != rb {
                let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
                repr.insert(drop, keep);
            }
        }
    }
    let mapping: BTreeMap<Var, Var> = i
        .vars
        .iter()
        .map(|v| (v.clone(), find(&mut repr, v)))
        .collect();

    let sig = g.sig();
    let mut constraints = Vec::new();
    for c in &i.constraints {
        let mapped: Vec<Var> = c.scope.iter().map(|v| mapping[v].clone()).collect();
        let mut new_scope: Vec<Var> = Vec::new();
        for v in &mapped {
            if !new_scope.contains(v) {
                new_scope.push(v.clone());
            }
        }
        // keep rows that respect the identifications, restricted to the
        // first occurrence of every merged variable
        let keep_positions: Vec<usize> = new_scope
            .iter()
            .map(|v| mapped.iter().position(|w| w == v).unwrap())
            .collect();
        let rows: BTreeSet<relations::TypeRow> = c
            .rel
            .rows
            .iter()
            .filter(|row| {
                // identified positions must share a class
                (0..mapped.len()).all(|p| {
                    let first = mapped.iter().position(|w| w == &mapped[p]).unwrap();
                    row.class_of(p) == row.class_of(first)
                })
            })
            .map(|row| row.restricted(sig, &keep_positions))
            .filter(|row| row.is_injective())
            .collect();
        constraints.push(Constraint {
            scope: new_scope.clone(),
            rel: TypedRelation::new(new_scope, rows),
        });
    }
    let vars: Vec<Var> = mapping.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    Ok((Instance { vars, constraints }, mapping))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::vars;
    use crate::structures::{henson_k3_free, random_graph};

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
    fn triangle_over_henson_trivializes() {
        let g = henson_k3_free();
        let i = edge_instance(&g, &[("x", "y"), ("y", "z"), ("x", "z")], 0);
        let out = saturate(&i, MinimalityParams::for_structure(&g), &g).unwrap();
        assert!(out.is_trivial());
    }

    #[test]
    fn triangle_over_random_graph_stays_nontrivial() {
        let g = random_graph();
        let i = edge_instance(&g, &[("x", "y"), ("y", "z"), ("x", "z")], 0);
        let out = saturate(&i, MinimalityParams::for_structure(&g), &g).unwrap();
        assert!(!out.is_trivial());
        let p = projection(&g, &out, &vars(&["x", "y"])).unwrap();
        assert_eq!(p, TypedRelation::uniform_orbit(&g, vars(&["x", "y"]), &[0]));
    }

    #[test]
    fn single_edge_projection() {
        let g = random_graph();
        let i = edge_instance(&g, &[("x", "y")], 0);
        let out = saturate(&i, MinimalityParams::for_structure(&g), &g).unwrap();
        assert!(!out.is_trivial());
        let p = projection(&g, &out, &vars(&["x", "y"])).unwrap();
        assert_eq!(p.rows.len(), 1);
    }

    #[test]
    fn saturate_is_idempotent() {
        let g = random_graph();
        let i = edge_instance(&g, &[("x", "y"), ("y", "z")], 0);
        let p = MinimalityParams::for_structure(&g);
        let once = saturate(&i, p, &g).unwrap();
        let twice = saturate(&once, p, &g).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn saturate_confluent_under_random_orders() {
        let g = henson_k3_free();
        let i = edge_instance(&g, &[("x", "y"), ("y", "z"), ("z", "w")], 0);
        let p = MinimalityParams::for_structure(&g);
        let reference = saturate(&i, p, &g).unwrap();
        for seed in 0..10 {
            let shuffled = saturate_with_order(&i, p, &g, Some(seed)).unwrap();
            assert_eq!(reference, shuffled, "seed {seed}");
        }
    }

    #[test]
    fn saturation_output_is_minimal() {
        let g = random_graph();
        let i = edge_instance(&g, &[("x", "y"), ("y", "z")], 0);
        let p = MinimalityParams::for_structure(&g);
        let out = saturate(&i, p, &g).unwrap();
        assert!(is_minimal(&g, &out, p));
    }

    #[test]
    fn monotone_row_subsets() {
        let g = henson_k3_free();
        let i = edge_instance(&g, &[("x", "y"), ("y", "z")], 0);
        let p = MinimalityParams::for_structure(&g);
        let out = saturate(&i, p, &g).unwrap();
        for c in &i.constraints {
            let after = out
                .constraints
                .iter()
                .find(|c2| c2.scope == c.scope)
                .expect("input constraints survive saturation");
            assert!(after.rel.rows.is_subset(&c.rel.rows));
        }
    }

    #[test]
    fn rejects_overwide_constraints() {
        let g = random_graph();
        let quad = Constraint::new(TypedRelation::full(&g, vars(&["a", "b", "c", "d"])));
        let i = Instance::new(vars(&["a", "b", "c", "d"]), vec![quad]);
        let p = MinimalityParams::for_structure(&g);
        assert!(matches!(saturate(&i, p, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn injectivize_merges_diagonal_pairs() {
        let g = random_graph();
        // constrain (x, y) to the diagonal: rows with merged classes only
        let full = TypedRelation::full(&g, vars(&["x", "y"]));
        let diag_rows = full
            .rows
            .iter()
            .filter(|r| r.class_count() == 1)
            .cloned()
            .collect();
        let c = Constraint::new(TypedRelation::new(vars(&["x", "y"]), diag_rows));
        let i = Instance::new(vars(&["x", "y", "z"]), vec![c]);
        let p = MinimalityParams::for_structure(&g);
        let sat = saturate(&i, p, &g).unwrap();
        let (inj, map) = injectivize(&g, &sat).unwrap();
        assert_eq!(map["y"], "x");
        assert_eq!(map["x"], "x");
        assert!(inj.vars == vars(&["x", "z"]));
    }

    #[test]
    fn injectivize_identity_on_injective_instances() {
        let g = random_graph();
        let i = edge_instance(&g, &[("x", "y")], 0);
        let p = MinimalityParams::for_structure(&g);
        let sat = saturate(&i, p, &g).unwrap();
        let (inj, map) = injectivize(&g, &sat).unwrap();
        assert!(map.iter().all(|(a, b)| a == b));
        assert_eq!(inj.vars, sat.vars);
    }
}
