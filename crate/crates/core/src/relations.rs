//! Typed relations over a ground presentation and the implication calculus.
//!
//! Relations are never kept as formula syntax: a relation is its satisfying
//! set, materialized as a finite set of type rows. A row is an equality
//! partition of the positions together with an orbit labeling of the
//! quotient, so conjunction, projection and existential quantification all
//! reduce to finite row manipulation plus realizability filtering.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::structures::{GroundStructure, LabeledStructure, Signature};

/// Variable names are plain strings; instances and formulas share them.
pub type Var = String;

/// One satisfying assignment up to the group action: an equality partition of
/// the positions and the orbit labels of the quotient's injective k-subsets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TypeRow {
    /// Class id per position, normalized to first-occurrence numbering.
    partition: Vec<u32>,
    /// Fully labeled quotient structure on the classes.
    quotient: LabeledStructure,
}

fn normalize_partition(raw: &[u32]) -> (Vec<u32>, BTreeMap<u32, u32>) {
    let mut rename = BTreeMap::new();
    let mut out = Vec::with_capacity(raw.len());
    for &c in raw {
        let next = rename.len() as u32;
        let id = *rename.entry(c).or_insert(next);
        out.push(id);
    }
    (out, rename)
}

impl TypeRow {
    /// Starts a row of arity m with pairwise distinct positions.
    pub fn discrete(m: usize) -> TypeRowBuilder {
        TypeRowBuilder { m, merges: Vec::new(), labels: Vec::new() }
    }

    pub fn arity(&self) -> usize {
        self.partition.len()
    }

    pub fn class_count(&self) -> usize {
        self.quotient.n()
    }

    pub fn class_of(&self, position: usize) -> u32 {
        self.partition[position]
    }

    pub fn partition(&self) -> &[u32] {
        &self.partition
    }

    pub fn quotient(&self) -> &LabeledStructure {
        &self.quotient
    }

    pub fn is_injective(&self) -> bool {
        self.class_count() == self.arity()
    }

    /// Restriction of the row to the listed positions (repeats permitted).
    pub fn restricted(&self, sig: &Signature, positions: &[usize]) -> TypeRow {
        if positions.len() == self.arity() && positions.iter().enumerate().all(|(i, &p)| i == p) {
            return self.clone();
        }
        let raw: Vec<u32> = positions.iter().map(|&p| self.partition[p]).collect();
        let (normalized, rename) = normalize_partition(&raw);
        let mut quotient = LabeledStructure::new(rename.len());
        let back: BTreeMap<u32, u32> = rename.iter().map(|(&old, &new)| (new, old)).collect();
        if rename.len() >= sig.k() {
            for subset in (0..rename.len() as u32).combinations(sig.k()) {
                let old_tuple: Vec<u32> = subset.iter().map(|c| back[c]).collect();
                if let Some(labels) = self.quotient.get(sig, &old_tuple) {
                    for l in labels {
                        quotient.set(sig, &subset, l);
                    }
                }
            }
        }
        TypeRow { partition: normalized, quotient }
    }

    /// Whether the quotient labels all of its injective k-subsets.
    pub fn is_full(&self, sig: &Signature) -> bool {
        self.quotient.is_fully_labeled(sig)
    }

    pub fn is_realizable(&self, g: &GroundStructure) -> bool {
        g.realizable_unchecked(&self.quotient)
    }

    pub fn render(&self, sig: &Signature) -> String {
        format!("{:?}{}", self.partition, self.quotient.render(sig))
    }
}

/// Builder used by tests and parsers to assemble rows label by label.
/// Merges and labels are recorded and resolved when the row is built.
#[derive(Debug, Clone)]
pub struct TypeRowBuilder {
    m: usize,
    merges: Vec<(usize, usize)>,
    labels: Vec<(Vec<usize>, usize)>,
}

impl TypeRowBuilder {
    /// Puts all listed positions into one equality class.
    pub fn merged(mut self, positions: &[usize]) -> Self {
        for w in positions.windows(2) {
            self.merges.push((w[0], w[1]));
        }
        self
    }

    /// Labels the k-subset of classes holding the given positions; the
    /// positions must end up in pairwise distinct classes.
    pub fn labeled(mut self, _sig: &Signature, positions: &[usize], label: usize) -> Self {
        self.labels.push((positions.to_vec(), label));
        self
    }

    pub fn build(self, sig: &Signature) -> TypeRow {
        let mut class: Vec<u32> = (0..self.m as u32).collect();
        for (p, q) in &self.merges {
            let (from, to) = (class[*p], class[*q]);
            for c in &mut class {
                if *c == from {
                    *c = to;
                }
            }
        }
        let (partition, rename) = normalize_partition(&class);
        let mut quotient = LabeledStructure::new(rename.len());
        for (positions, label) in &self.labels {
            let classes: Vec<u32> = positions.iter().map(|&p| partition[p]).collect();
            assert!(
                classes.iter().duplicates().next().is_none(),
                "labeled positions must lie in distinct classes"
            );
            quotient.set(sig, &classes, *label);
        }
        TypeRow { partition, quotient }
    }
}

/// A relation as an ordered variable list plus a set of type rows.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TypedRelation {
    pub vars: Vec<Var>,
    pub rows: BTreeSet<TypeRow>,
}

impl TypedRelation {
    pub fn new(vars: Vec<Var>, rows: BTreeSet<TypeRow>) -> Self {
        TypedRelation { vars, rows }
    }

    pub fn empty(vars: Vec<Var>) -> Self {
        TypedRelation { vars, rows: BTreeSet::new() }
    }

    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn position_of(&self, var: &str) -> Result<usize> {
        self.vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| Error::UnknownVariable(var.to_string()))
    }

    /// All realizable full rows over `vars`.
    pub fn full(g: &GroundStructure, vars: Vec<Var>) -> Self {
        let rows = enumerate_full_rows(g, vars.len()).into_iter().collect();
        TypedRelation { vars, rows }
    }

    /// Single-orbit rows: injective rows whose every k-subset carries the
    /// same label, one row per listed label.
    pub fn uniform_orbit(g: &GroundStructure, vars: Vec<Var>, labels: &[usize]) -> Self {
        let sig = g.sig();
        let m = vars.len();
        let mut rows = BTreeSet::new();
        for &label in labels {
            let mut quotient = LabeledStructure::new(m);
            for subset in (0..m as u32).combinations(sig.k()) {
                quotient.set(sig, &subset, label);
            }
            let row = TypeRow { partition: (0..m as u32).collect(), quotient };
            if row.is_realizable(g) {
                rows.insert(row);
            }
        }
        TypedRelation { vars, rows }
    }
}

/// The row induced on a scope by an assignment: `class_ids[p]` is the class
/// of position `p` inside `quotient`, which must label every injective
/// k-subset it mentions.
pub fn induced_row(sig: &Signature, class_ids: &[u32], quotient: &LabeledStructure) -> TypeRow {
    let (partition, rename) = normalize_partition(class_ids);
    let back: BTreeMap<u32, u32> = rename.iter().map(|(&old, &new)| (new, old)).collect();
    let mut q = LabeledStructure::new(rename.len());
    if rename.len() >= sig.k() {
        for subset in (0..rename.len() as u32).combinations(sig.k()) {
            let original: Vec<u32> = subset.iter().map(|c| back[c]).collect();
            if let Some(labels) = quotient.get(sig, &original) {
                for l in labels {
                    q.set(sig, &subset, l);
                }
            }
        }
    }
    TypeRow { partition, quotient: q }
}

/// Enumerates every set partition of `m` positions as restricted-growth
/// class vectors.
pub fn set_partitions(m: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; m];
    fn rec(current: &mut Vec<u32>, pos: usize, max_used: u32, out: &mut Vec<Vec<u32>>) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for c in 0..=max_used + 1 {
            current[pos] = c;
            rec(current, pos + 1, max_used.max(c), out);
        }
    }
    if m == 0 {
        out.push(Vec::new());
        return out;
    }
    current[0] = 0;
    rec(&mut current, 1, 0, &mut out);
    out
}

/// All realizable fully labeled quotients on `classes` vertices.
pub fn enumerate_quotients(g: &GroundStructure, classes: usize) -> Vec<LabeledStructure> {
    let sig = g.sig();
    let subsets: Vec<Vec<u32>> = (0..classes as u32).combinations(sig.k()).collect();
    if subsets.is_empty() {
        return vec![LabeledStructure::new(classes)];
    }
    let mut out = Vec::new();
    for combo in vec![0..sig.label_count(); subsets.len()]
        .into_iter()
        .multi_cartesian_product()
    {
        let mut q = LabeledStructure::new(classes);
        for (subset, label) in subsets.iter().zip(&combo) {
            q.set(sig, subset, *label);
        }
        if g.realizable_unchecked(&q) {
            out.push(q);
        }
    }
    out
}

/// All realizable full rows of arity `m` over the presentation.
pub fn enumerate_full_rows(g: &GroundStructure, m: usize) -> Vec<TypeRow> {
    let mut out = Vec::new();
    for partition in set_partitions(m) {
        let classes = partition.iter().map(|c| c + 1).max().unwrap_or(0) as usize;
        for quotient in enumerate_quotients(g, classes) {
            out.push(TypeRow { partition: partition.clone(), quotient });
        }
    }
    out
}

/// Projection `proj_t(R)`: rows restricted to the tuple `t`, which may repeat
/// variables.
pub fn project(g: &GroundStructure, r: &TypedRelation, t: &[Var]) -> Result<TypedRelation> {
    let positions: Vec<usize> = t.iter().map(|v| r.position_of(v)).collect::<Result<_>>()?;
    let sig = g.sig();
    let rows = r
        .rows
        .iter()
        .map(|row| row.restricted(sig, &positions))
        .collect();
    Ok(TypedRelation { vars: t.to_vec(), rows })
}

/// Row-set intersection of two relations over identical variable lists.
pub fn intersect(r1: &TypedRelation, r2: &TypedRelation) -> Result<TypedRelation> {
    if r1.vars != r2.vars {
        return Err(Error::VarMismatch(format!("{:?} vs {:?}", r1.vars, r2.vars)));
    }
    Ok(TypedRelation {
        vars: r1.vars.clone(),
        rows: r1.rows.intersection(&r2.rows).cloned().collect(),
    })
}

/// Drops every row with a merged pair of positions.
pub fn restrict_injective(r: &TypedRelation) -> TypedRelation {
    TypedRelation {
        vars: r.vars.clone(),
        rows: r.rows.iter().filter(|row| row.is_injective()).cloned().collect(),
    }
}

/// Conjunction of two relations followed by existential quantification of
/// everything outside `keep`.
///
/// Shared variables are matched by name. For every compatible row pair the
/// full types over the union are enumerated: the partitions extending both
/// sides (including identifications of a left-only class with a right-only
/// class) and all realizable labelings of the k-subsets that neither side
/// determines. The result is exactly the set of restrictions to `keep` of
/// realizable full types consistent with both inputs.
pub fn join_exists(
    g: &GroundStructure,
    r1: &TypedRelation,
    r2: &TypedRelation,
    keep: &[Var],
) -> Result<TypedRelation> {
    let sig = g.sig();
    let shared: Vec<Var> = r1.vars.iter().filter(|v| r2.vars.contains(v)).cloned().collect();
    let union_vars: Vec<Var> = r1
        .vars
        .iter()
        .cloned()
        .chain(r2.vars.iter().filter(|v| !r1.vars.contains(v)).cloned())
        .collect();
    for v in keep {
        if !union_vars.contains(v) {
            return Err(Error::UnknownVariable(v.clone()));
        }
    }
    let keep_positions: Vec<usize> = keep
        .iter()
        .map(|v| union_vars.iter().position(|w| w == v).unwrap())
        .collect();

    let shared_pos1: Vec<usize> = shared.iter().map(|v| r1.position_of(v).unwrap()).collect();
    let shared_pos2: Vec<usize> = shared.iter().map(|v| r2.position_of(v).unwrap()).collect();

    let mut rows = BTreeSet::new();
    for a in &r1.rows {
        let a_shared = a.restricted(sig, &shared_pos1);
        for b in &r2.rows {
            if b.restricted(sig, &shared_pos2) != a_shared {
                continue;
            }
            for row in complete_pair(g, r1, r2, &union_vars, a, b) {
                rows.insert(row.restricted(sig, &keep_positions));
            }
        }
    }
    Ok(TypedRelation { vars: keep.to_vec(), rows })
}

/// All realizable full rows over `union_vars` whose restrictions to the two
/// factors are exactly `a` and `b`.
fn complete_pair(
    g: &GroundStructure,
    r1: &TypedRelation,
    r2: &TypedRelation,
    union_vars: &[Var],
    a: &TypeRow,
    b: &TypeRow,
) -> Vec<TypeRow> {
    let sig = g.sig();
    let m = union_vars.len();

    // base partition: classes of `a` and `b` glued along shared variables
    let mut slot_of_var: Vec<(Option<u32>, Option<u32>)> = Vec::with_capacity(m);
    for v in union_vars {
        let ca = r1.vars.iter().position(|w| w == v).map(|p| a.class_of(p));
        let cb = r2.vars.iter().position(|w| w == v).map(|p| b.class_of(p));
        slot_of_var.push((ca, cb));
    }
    // union-find over slots: a-classes get ids 0.., b-classes follow
    let a_classes = a.class_count();
    let b_classes = b.class_count();
    let total = a_classes + b_classes;
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let root = find(parent, parent[x]);
            parent[x] = root;
        }
        parent[x]
    }
    for (ca, cb) in &slot_of_var {
        if let (Some(ca), Some(cb)) = (ca, cb) {
            let ra = find(&mut parent, *ca as usize);
            let rb = find(&mut parent, a_classes + *cb as usize);
            if ra != rb {
                parent[ra] = rb;
            }
        }
    }
    // classes untouched by sharing, eligible for optional cross merges
    let mut pure_a = Vec::new();
    let mut pure_b = Vec::new();
    for c in 0..a_classes {
        let root = find(&mut parent, c);
        if (0..b_classes).all(|d| find(&mut parent, a_classes + d) != root) {
            pure_a.push(c);
        }
    }
    for d in 0..b_classes {
        let root = find(&mut parent, a_classes + d);
        if (0..a_classes).all(|c| find(&mut parent, c) != root) {
            pure_b.push(d);
        }
    }

    let mut results = Vec::new();
    for matching in partial_matchings(pure_a.len(), pure_b.len()) {
        let mut parent = parent.clone();
        for (ia, ib) in &matching {
            let ra = find(&mut parent, pure_a[*ia]);
            let rb = find(&mut parent, a_classes + pure_b[*ib]);
            if ra != rb {
                parent[ra] = rb;
            }
        }
        // class vector over union variables
        let raw: Vec<u32> = slot_of_var
            .iter()
            .map(|(ca, cb)| match (ca, cb) {
                (Some(c), _) => find(&mut parent, *c as usize) as u32,
                (None, Some(d)) => find(&mut parent, a_classes + *d as usize) as u32,
                (None, None) => unreachable!("every union variable occurs in a factor"),
            })
            .collect();
        let (partition, rename) = normalize_partition(&raw);
        let classes = rename.len();

        // labels forced by the factors
        let mut forced = LabeledStructure::new(classes);
        let mut conflict = false;
        let mut free_subsets = Vec::new();
        'subsets: for subset in (0..classes as u32).combinations(sig.k()) {
            let mut found: Option<usize> = None;
            for (rel, row) in [(r1, a), (r2, b)] {
                // a subset is determined by a factor when each class has a
                // representative variable in that factor
                let mut reps = Vec::with_capacity(subset.len());
                for &cls in &subset {
                    let rep = union_vars
                        .iter()
                        .enumerate()
                        .find(|(i, v)| partition[*i] == cls && rel.vars.contains(v))
                        .map(|(_, v)| v);
                    match rep {
                        Some(v) => reps.push(v.clone()),
                        None => {
                            reps.clear();
                            break;
                        }
                    }
                }
                if reps.len() != subset.len() {
                    continue;
                }
                let factor_classes: Vec<u32> = reps
                    .iter()
                    .map(|v| row.class_of(rel.vars.iter().position(|w| w == v).unwrap()))
                    .collect();
                debug_assert!(
                    factor_classes.iter().duplicates().next().is_none(),
                    "factor partitions refine the union partition"
                );
                if let Some(labels) = row.quotient().get(sig, &factor_classes) {
                    let l = *labels.iter().next().unwrap();
                    match found {
                        None => found = Some(l),
                        Some(prev) if prev != l => {
                            conflict = true;
                            break 'subsets;
                        }
                        _ => {}
                    }
                }
            }
            match found {
                Some(l) => forced.set(sig, &subset, l),
                None => free_subsets.push(subset),
            }
        }
        if conflict {
            continue;
        }

        if free_subsets.is_empty() {
            if g.realizable_unchecked(&forced) {
                results.push(TypeRow { partition, quotient: forced });
            }
            continue;
        }
        for combo in vec![0..sig.label_count(); free_subsets.len()]
            .into_iter()
            .multi_cartesian_product()
        {
            let mut quotient = forced.clone();
            for (subset, label) in free_subsets.iter().zip(&combo) {
                quotient.set(sig, subset, *label);
            }
            if g.realizable_unchecked(&quotient) {
                results.push(TypeRow { partition: partition.clone(), quotient });
            }
        }
    }
    results
}

/// All partial matchings between `na` left items and `nb` right items,
/// including the empty one.
fn partial_matchings(na: usize, nb: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn rec(
        ia: usize,
        na: usize,
        nb: usize,
        used_b: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if ia == na {
            out.push(current.clone());
            return;
        }
        // leave ia unmatched
        rec(ia + 1, na, nb, used_b, current, out);
        for ib in 0..nb {
            if !used_b[ib] {
                used_b[ib] = true;
                current.push((ia, ib));
                rec(ia + 1, na, nb, used_b, current, out);
                current.pop();
                used_b[ib] = false;
            }
        }
    }
    let mut used_b = vec![false; nb];
    rec(0, na, nb, &mut used_b, &mut current, &mut out);
    out
}

/// The outcome of checking the five implication conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImplicationCheck {
    /// First violated condition (1-5), if any.
    pub failed_item: Option<u8>,
}

impl ImplicationCheck {
    pub fn is_implication(&self) -> bool {
        self.failed_item.is_none()
    }

    /// Conditions (2)-(5) only.
    pub fn is_pre_implication(&self) -> bool {
        matches!(self.failed_item, None | Some(1))
    }
}

/// A materialized `(C, u, D, v)`-implication candidate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Implication {
    pub rel: TypedRelation,
    pub u: Vec<Var>,
    pub v: Vec<Var>,
    pub c: TypedRelation,
    pub d: TypedRelation,
}

impl Implication {
    pub fn var_count(&self) -> usize {
        self.rel.arity()
    }

    pub fn check(&self, g: &GroundStructure) -> Result<ImplicationCheck> {
        is_implication(g, &self.rel, &self.u, &self.v, &self.c, &self.d)
    }

    pub fn proj_u(&self, g: &GroundStructure) -> TypedRelation {
        project(g, &self.rel, &self.u).expect("u is drawn from rel.vars")
    }

    pub fn proj_v(&self, g: &GroundStructure) -> TypedRelation {
        project(g, &self.rel, &self.v).expect("v is drawn from rel.vars")
    }

    /// Keeps only injective rows of the satisfying set.
    pub fn restricted_injective(&self) -> Implication {
        Implication {
            rel: restrict_injective(&self.rel),
            u: self.u.clone(),
            v: self.v.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }

    /// `I_phi`: positions of `u` whose variable also occurs in `v`.
    pub fn shared_u_positions(&self) -> Vec<usize> {
        (0..self.u.len())
            .filter(|&i| self.v.contains(&self.u[i]))
            .collect()
    }
}

/// Checks conditions (1)-(5) of an implication; conditions (2)-(5) form the
/// pre-implication check. Shape violations are errors, condition violations
/// are reported through [`ImplicationCheck`].
pub fn is_implication(
    g: &GroundStructure,
    rel: &TypedRelation,
    u: &[Var],
    v: &[Var],
    c: &TypedRelation,
    d: &TypedRelation,
) -> Result<ImplicationCheck> {
    let sig = g.sig();
    for t in [u, v] {
        if t.iter().duplicates().next().is_some() {
            return Err(Error::Shape("tuple variables must be pairwise distinct".into()));
        }
        for var in t {
            rel.position_of(var)?;
        }
    }
    let scope: BTreeSet<&Var> = u.iter().chain(v.iter()).collect();
    if scope.len() != rel.arity() {
        return Err(Error::Shape(format!(
            "scope(u) ∪ scope(v) must equal the variables of the relation ({} vs {})",
            scope.len(),
            rel.arity()
        )));
    }
    if u.len() >= rel.arity() || v.len() >= rel.arity() {
        return Err(Error::Shape("tuple lengths must be smaller than the variable count".into()));
    }
    if c.arity() != u.len() || d.arity() != v.len() {
        return Err(Error::ArityMismatch(format!(
            "C has arity {} for |u| = {}, D has arity {} for |v| = {}",
            c.arity(),
            u.len(),
            d.arity(),
            v.len()
        )));
    }
    if c.is_empty() || d.is_empty() {
        return Err(Error::Precondition("C and D must be non-empty".into()));
    }

    // (1) no pair of variables is forced to the diagonal
    let n = rel.arity();
    for i in 0..n {
        for j in (i + 1)..n {
            let separated = rel
                .rows
                .iter()
                .any(|row| row.class_of(i) != row.class_of(j));
            if !separated {
                return Ok(ImplicationCheck { failed_item: Some(1) });
            }
        }
    }

    let pos_u: Vec<usize> = u.iter().map(|w| rel.position_of(w).unwrap()).collect();
    let pos_v: Vec<usize> = v.iter().map(|w| rel.position_of(w).unwrap()).collect();
    let proj_u: BTreeSet<TypeRow> = rel.rows.iter().map(|r| r.restricted(sig, &pos_u)).collect();
    let proj_v: BTreeSet<TypeRow> = rel.rows.iter().map(|r| r.restricted(sig, &pos_v)).collect();

    // (2) C is a proper subset of proj_u
    if !(c.rows.is_subset(&proj_u) && c.rows != proj_u) {
        return Ok(ImplicationCheck { failed_item: Some(2) });
    }
    // (3) D is a proper subset of proj_v
    if !(d.rows.is_subset(&proj_v) && d.rows != proj_v) {
        return Ok(ImplicationCheck { failed_item: Some(3) });
    }
    // (4) membership in C forces membership in D
    for row in &rel.rows {
        if c.rows.contains(&row.restricted(sig, &pos_u))
            && !d.rows.contains(&row.restricted(sig, &pos_v))
        {
            return Ok(ImplicationCheck { failed_item: Some(4) });
        }
    }
    // (5) every row of D is witnessed from C
    for target in &d.rows {
        let witnessed = rel.rows.iter().any(|row| {
            c.rows.contains(&row.restricted(sig, &pos_u)) && &row.restricted(sig, &pos_v) == target
        });
        if !witnessed {
            return Ok(ImplicationCheck { failed_item: Some(5) });
        }
    }
    Ok(ImplicationCheck { failed_item: None })
}

/// All `(O, P)` pairs realized by rows of the relation: the orbit row of the
/// u-image together with the orbit row of the v-image. With
/// `injective_only`, rows with merged positions are skipped.
pub fn op_mappings(
    g: &GroundStructure,
    rel: &TypedRelation,
    u: &[Var],
    v: &[Var],
    injective_only: bool,
) -> Result<BTreeSet<(TypeRow, TypeRow)>> {
    let sig = g.sig();
    let pos_u: Vec<usize> = u.iter().map(|w| rel.position_of(w)).collect::<Result<_>>()?;
    let pos_v: Vec<usize> = v.iter().map(|w| rel.position_of(w)).collect::<Result<_>>()?;
    Ok(rel
        .rows
        .iter()
        .filter(|row| !injective_only || row.is_injective())
        .map(|row| (row.restricted(sig, &pos_u), row.restricted(sig, &pos_v)))
        .collect())
}

/// Renames `phi2` apart so that its `u` tuple coincides with `v1` and no
/// other variable collides with `used`.
fn rename_apart(phi2: &Implication, v1: &[Var], used: &BTreeSet<Var>) -> Implication {
    let mut mapping: BTreeMap<Var, Var> = BTreeMap::new();
    for (old, new) in phi2.u.iter().zip(v1.iter()) {
        mapping.insert(old.clone(), new.clone());
    }
    let mut taken: BTreeSet<Var> = used.clone();
    taken.extend(v1.iter().cloned());
    for var in &phi2.rel.vars {
        if mapping.contains_key(var) {
            continue;
        }
        let mut candidate = var.clone();
        let mut i = 0;
        while taken.contains(&candidate) {
            i += 1;
            candidate = format!("{var}_{i}");
        }
        taken.insert(candidate.clone());
        mapping.insert(var.clone(), candidate);
    }
    let rename = |vars: &[Var]| vars.iter().map(|w| mapping[w].clone()).collect::<Vec<_>>();
    Implication {
        rel: TypedRelation { vars: rename(&phi2.rel.vars), rows: phi2.rel.rows.clone() },
        u: rename(&phi2.u),
        v: rename(&phi2.v),
        c: phi2.c.clone(),
        d: phi2.d.clone(),
    }
}

/// Composition of implications: rename `phi2` so that `v1 = u2`, conjoin,
/// and existentially quantify everything outside `scope(u1) ∪ scope(v2)`.
pub fn compose(g: &GroundStructure, phi1: &Implication, phi2: &Implication) -> Result<Implication> {
    if phi1.d.rows != phi2.c.rows {
        return Err(Error::Precondition("D of the first factor must equal C of the second".into()));
    }
    if phi1.v.len() != phi2.u.len() {
        return Err(Error::ArityMismatch("v1 and u2 must have equal length".into()));
    }
    if phi1.proj_v(g).rows != phi2.proj_u(g).rows {
        return Err(Error::Precondition(
            "projection of the first factor onto v must equal the projection of the second onto u"
                .into(),
        ));
    }
    let used: BTreeSet<Var> = phi1.rel.vars.iter().cloned().collect();
    let phi2 = rename_apart(phi2, &phi1.v, &used);
    let mut keep: Vec<Var> = phi1.u.clone();
    for w in &phi2.v {
        if !keep.contains(w) {
            keep.push(w.clone());
        }
    }
    let rel = join_exists(g, &phi1.rel, &phi2.rel, &keep)?;
    Ok(Implication {
        rel,
        u: phi1.u.clone(),
        v: phi2.v.clone(),
        c: phi1.c.clone(),
        d: phi2.d.clone(),
    })
}

/// `phi^{∘n}`: n-fold composition of an implication with itself.
pub fn power(g: &GroundStructure, phi: &Implication, n: usize) -> Result<Implication> {
    assert!(n >= 1);
    let mut acc = phi.clone();
    for _ in 1..n {
        acc = compose(g, &acc, phi)?;
    }
    Ok(acc)
}

/// Identifies variable `drop` with variable `keep`: rows that place the two
/// in one class survive with the `drop` position removed.
pub fn identify_vars(
    g: &GroundStructure,
    phi: &Implication,
    keep: &Var,
    drop: &Var,
) -> Result<Implication> {
    let sig = g.sig();
    let pk = phi.rel.position_of(keep)?;
    let pd = phi.rel.position_of(drop)?;
    let remaining: Vec<usize> = (0..phi.rel.arity()).filter(|&p| p != pd).collect();
    let vars: Vec<Var> = remaining.iter().map(|&p| phi.rel.vars[p].clone()).collect();
    let rows = phi
        .rel
        .rows
        .iter()
        .filter(|row| row.class_of(pk) == row.class_of(pd))
        .map(|row| row.restricted(sig, &remaining))
        .collect();
    let subst = |t: &[Var]| -> Vec<Var> {
        t.iter()
            .map(|w| if w == drop { keep.clone() } else { w.clone() })
            .collect()
    };
    Ok(Implication {
        rel: TypedRelation { vars, rows },
        u: subst(&phi.u),
        v: subst(&phi.v),
        c: phi.c.clone(),
        d: phi.d.clone(),
    })
}

pub fn vars(names: &[&str]) -> Vec<Var> {
    names.iter().map(|s| s.to_string()).collect()
}
