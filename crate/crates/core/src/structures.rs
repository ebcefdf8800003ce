//! Finite presentations of orbit-labeled homogeneous templates.
//!
//! A ground structure is given syntactically: a signature of orbit labels for
//! injective k-tuples together with a permutation action, a finite list of
//! labeled patterns forbidden under embeddings, and a finite list of patterns
//! forbidden under homomorphisms. The automorphism group itself is never
//! represented; every algorithm downstream consumes orbit data only.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use itertools::Itertools;

use crate::error::{Error, Result};

/// Identifier of an orbit label, dense in `0..label_count`.
pub type LabelId = usize;

/// A named orbit of injective k-tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrbitLabel {
    pub id: LabelId,
    pub name: String,
}

/// A permutation of `[k]`, stored as `perm[i] = j` meaning position `i` of the
/// permuted tuple is taken from position `j` of the original.
pub type Perm = Vec<u8>;

pub fn identity_perm(k: usize) -> Perm {
    (0..k as u8).collect()
}

pub fn all_perms(k: usize) -> Vec<Perm> {
    (0..k as u8).permutations(k).collect()
}

/// `compose(p, q)` is the permutation that first applies `p`, then `q`:
/// `apply(compose(p,q), t) = apply(q, apply(p, t))`.
pub fn compose_perms(p: &Perm, q: &Perm) -> Perm {
    q.iter().map(|&i| p[i as usize]).collect()
}

pub fn invert_perm(p: &Perm) -> Perm {
    let mut inv = vec![0u8; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j as usize] = i as u8;
    }
    inv
}

pub fn apply_perm<T: Copy>(p: &Perm, t: &[T]) -> Vec<T> {
    p.iter().map(|&j| t[j as usize]).collect()
}

/// Signature of a presentation: orbit labels of injective k-tuples plus the
/// action of tuple permutations on labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    k: usize,
    labels: Vec<OrbitLabel>,
    action: BTreeMap<(Perm, LabelId), LabelId>,
}

impl Signature {
    /// Builds a signature. `action_entries` may be partial; unspecified
    /// `(perm, label)` pairs default to fixing the label.
    pub fn new(k: usize, label_names: &[&str], action_entries: &[(Perm, LabelId, LabelId)]) -> Self {
        assert!(k >= 2, "orbit arity must be at least 2");
        let labels = label_names
            .iter()
            .enumerate()
            .map(|(id, name)| OrbitLabel { id, name: (*name).to_string() })
            .collect::<Vec<_>>();
        let mut action = BTreeMap::new();
        for perm in all_perms(k) {
            for l in 0..labels.len() {
                action.insert((perm.clone(), l), l);
            }
        }
        for (perm, l_in, l_out) in action_entries {
            action.insert((perm.clone(), *l_in), *l_out);
        }
        Signature { k, labels, action }
    }

    /// Fully symmetric signature: every permutation fixes every label.
    pub fn symmetric(k: usize, label_names: &[&str]) -> Self {
        Signature::new(k, label_names, &[])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[OrbitLabel] {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label_by_name(&self, name: &str) -> Option<LabelId> {
        self.labels.iter().find(|l| l.name == name).map(|l| l.id)
    }

    pub fn label_name(&self, id: LabelId) -> &str {
        &self.labels[id].name
    }

    /// Action of a tuple permutation on a label: if a tuple `t` carries label
    /// `l`, then `apply_perm(p, t)` carries `act(p, l)`.
    pub fn act(&self, p: &Perm, l: LabelId) -> LabelId {
        *self.action.get(&(p.clone(), l)).unwrap_or(&l)
    }

    /// Checks the group-action laws by enumeration over all permutation pairs.
    pub fn action_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let id = identity_perm(self.k);
        for l in 0..self.labels.len() {
            if self.act(&id, l) != l {
                out.push(format!("identity permutation moves label {}", self.label_name(l)));
            }
        }
        for p in all_perms(self.k) {
            // each permutation must act bijectively on labels
            let image: BTreeSet<LabelId> = (0..self.labels.len()).map(|l| self.act(&p, l)).collect();
            if image.len() != self.labels.len() {
                out.push(format!("permutation {:?} does not act bijectively on labels", p));
            }
            for q in all_perms(self.k) {
                let pq = compose_perms(&p, &q);
                for l in 0..self.labels.len() {
                    let via_comp = self.act(&pq, l);
                    let via_steps = self.act(&q, self.act(&p, l));
                    if via_comp != via_steps {
                        out.push(format!(
                            "action law fails: act({:?}∘{:?}, {}) = {} but stepwise {}",
                            p,
                            q,
                            self.label_name(l),
                            self.label_name(via_comp),
                            self.label_name(via_steps),
                        ));
                    }
                }
            }
        }
        out
    }
}

/// A finite structure over a signature: a vertex count plus a partial
/// labeling of k-tuples.
///
/// Candidate structures label injective tuples only, one label per k-subset;
/// bound patterns may additionally carry repeated-vertex tuples and several
/// labels on the same tuple. Labels are stored for a canonical (sorted)
/// arrangement of each tuple and derived for the other arrangements through
/// the signature action.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LabeledStructure {
    n: usize,
    labeling: BTreeMap<Vec<u32>, BTreeSet<LabelId>>,
}

/// Decomposes `t` as `apply_perm(p, sorted(t))`; for tuples with repeated
/// entries the lexicographically least such permutation is chosen.
fn canonical_decompose(t: &[u32]) -> (Vec<u32>, Perm) {
    let mut sorted = t.to_vec();
    sorted.sort_unstable();
    // p[i] = smallest unused sorted-position holding t[i]
    let mut used = [false; 16];
    debug_assert!(t.len() <= 16);
    let mut p = Vec::with_capacity(t.len());
    for &value in t {
        let j = sorted
            .iter()
            .enumerate()
            .position(|(j, &s)| s == value && !used[j])
            .expect("sorted copy is a permutation of the tuple");
        used[j] = true;
        p.push(j as u8);
    }
    (sorted, p)
}

impl LabeledStructure {
    pub fn new(n: usize) -> Self {
        LabeledStructure { n, labeling: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, sig: &Signature, tuple: &[u32], label: LabelId) {
        assert_eq!(tuple.len(), sig.k(), "labeled tuples must have arity k");
        assert!(tuple.iter().all(|&v| (v as usize) < self.n), "tuple vertex out of range");
        let (sorted, p) = canonical_decompose(tuple);
        let stored = sig.act(&invert_perm(&p), label);
        self.labeling.entry(sorted).or_default().insert(stored);
    }

    pub fn with(mut self, sig: &Signature, tuple: &[u32], label: LabelId) -> Self {
        self.set(sig, tuple, label);
        self
    }

    /// Labels carried by `tuple`, derived through the action when the tuple is
    /// not in canonical arrangement. `None` when the tuple is unlabeled.
    pub fn get(&self, sig: &Signature, tuple: &[u32]) -> Option<BTreeSet<LabelId>> {
        let (sorted, p) = canonical_decompose(tuple);
        self.labeling
            .get(&sorted)
            .map(|set| set.iter().map(|&l| sig.act(&p, l)).collect())
    }

    /// Iterates over the canonically stored entries.
    pub fn entries(&self) -> impl Iterator<Item = (&Vec<u32>, &BTreeSet<LabelId>)> {
        self.labeling.iter()
    }

    fn sorted_injective_subsets(&self, k: usize) -> impl Iterator<Item = Vec<u32>> + '_ {
        (0..self.n as u32).combinations(k)
    }

    /// True iff every injective k-subset carries exactly one label and no
    /// repeated-vertex tuple is labeled.
    pub fn is_fully_labeled(&self, sig: &Signature) -> bool {
        if self
            .labeling
            .iter()
            .any(|(t, set)| t.iter().duplicates().next().is_some() || set.len() != 1)
        {
            return false;
        }
        self.sorted_injective_subsets(sig.k()).all(|s| self.labeling.contains_key(&s))
    }

    /// Checks the action-compatibility of the stored labeling: deriving the
    /// label of a permuted arrangement and re-canonicalizing must agree.
    pub fn respects_action(&self, sig: &Signature) -> bool {
        for (t, set) in &self.labeling {
            for p in all_perms(t.len()) {
                let permuted = apply_perm(&p, t);
                let derived = self.get(sig, &permuted);
                let expected: BTreeSet<LabelId> = set.iter().map(|&l| sig.act(&p, l)).collect();
                if derived.as_ref() != Some(&expected) {
                    return false;
                }
            }
        }
        true
    }

    pub fn render(&self, sig: &Signature) -> String {
        let body = self
            .labeling
            .iter()
            .map(|(t, set)| {
                let names = set.iter().map(|&l| sig.label_name(l)).join("&");
                format!("{:?}:{}", t, names)
            })
            .join(", ");
        format!("[n={}; {}]", self.n, body)
    }
}

/// Searches for an injective map from `f` into `x` matching every defined
/// label of `f`. Both structures must share the signature by construction.
pub fn embeds(f: &LabeledStructure, x: &LabeledStructure, sig: &Signature) -> bool {
    search_map(f, x, sig, true)
}

/// Searches for an arbitrary vertex map from `f` into `x` preserving all
/// defined labels. Tuples collapsed by the map match only if `x` itself
/// defines labels on the collapsed arrangement, which consistent candidate
/// structures never do.
pub fn maps_hom(f: &LabeledStructure, x: &LabeledStructure, sig: &Signature) -> bool {
    search_map(f, x, sig, false)
}

fn search_map(f: &LabeledStructure, x: &LabeledStructure, sig: &Signature, injective: bool) -> bool {
    let mut assignment: Vec<Option<u32>> = vec![None; f.n()];
    extend_map(f, x, sig, injective, &mut assignment, 0)
}

fn extend_map(
    f: &LabeledStructure,
    x: &LabeledStructure,
    sig: &Signature,
    injective: bool,
    assignment: &mut Vec<Option<u32>>,
    next: usize,
) -> bool {
    if next == f.n() {
        return true;
    }
    'cand: for cand in 0..x.n() as u32 {
        if injective && assignment.iter().flatten().any(|&v| v == cand) {
            continue;
        }
        assignment[next] = Some(cand);
        // check every labeled tuple of f that is fully assigned and mentions `next`
        for (t, required) in f.entries() {
            if !t.contains(&(next as u32)) {
                continue;
            }
            let image: Option<Vec<u32>> = t.iter().map(|&v| assignment[v as usize]).collect();
            let Some(image) = image else { continue };
            match x.get(sig, &image) {
                Some(present) if required.is_subset(&present) => {}
                _ => {
                    assignment[next] = None;
                    continue 'cand;
                }
            }
        }
        if extend_map(f, x, sig, injective, assignment, next + 1) {
            return true;
        }
        assignment[next] = None;
    }
    false
}

/// Validation report of [`validate_presentation`].
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum Violation {
    /// The declared action is not a group action.
    Action(String),
    /// A realizable structure below the checked depth admits no one-point
    /// extension.
    MissingExtension { structure: String, size: usize },
    /// A (k-1)-element structure admits no realizable completion at all.
    DeadEndSubset { structure: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Action(msg) => write!(out, "action: {msg}"),
            Violation::MissingExtension { structure, size } => {
                write!(out, "no one-point extension of size-{size} structure {structure}")
            }
            Violation::DeadEndSubset { structure } => {
                write!(out, "(k-1)-subset with no realizable completion: {structure}")
            }
        }
    }
}

/// A finite presentation of a ground template: signature plus bound sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundStructure {
    name: String,
    sig: Signature,
    embed_bounds: Vec<LabeledStructure>,
    hom_bounds: Vec<LabeledStructure>,
    b: usize,
    d: usize,
}

impl GroundStructure {
    pub fn new(
        name: &str,
        sig: Signature,
        embed_bounds: Vec<LabeledStructure>,
        hom_bounds: Vec<LabeledStructure>,
    ) -> Self {
        let b = embed_bounds.iter().map(|f| f.n()).max().unwrap_or(0).max(2);
        let d = hom_bounds
            .iter()
            .map(|f| f.n())
            .max()
            .map(|m| m + 2)
            .unwrap_or(0)
            .max(3);
        GroundStructure { name: name.to_string(), sig, embed_bounds, hom_bounds, b, d }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sig(&self) -> &Signature {
        &self.sig
    }

    pub fn k(&self) -> usize {
        self.sig.k()
    }

    /// Size of the largest embedding bound, floored at 2.
    pub fn b(&self) -> usize {
        self.b
    }

    /// Duality depth: size of the largest homomorphism bound plus 2, floored
    /// at 3.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Width parameter of the solver pipeline: `max(k+1, b)`.
    pub fn ell(&self) -> usize {
        (self.k() + 1).max(self.b)
    }

    pub fn embed_bounds(&self) -> &[LabeledStructure] {
        &self.embed_bounds
    }

    pub fn hom_bounds(&self) -> &[LabeledStructure] {
        &self.hom_bounds
    }

    /// True iff no embedding bound embeds into the fully labeled `x`.
    pub fn realizable(&self, x: &LabeledStructure) -> Result<bool> {
        if !x.is_fully_labeled(&self.sig) {
            return Err(Error::NotFullyLabeled(x.render(&self.sig)));
        }
        Ok(self.realizable_unchecked(x))
    }

    /// Same as [`GroundStructure::realizable`] without the labeling check;
    /// used on candidates that are fully labeled by construction.
    pub(crate) fn realizable_unchecked(&self, x: &LabeledStructure) -> bool {
        !self.embed_bounds.iter().any(|f| embeds(f, x, &self.sig))
    }

    /// All realizable full labelings of `x` extended by one fresh vertex.
    pub fn one_point_extensions(&self, x: &LabeledStructure) -> Result<Vec<LabeledStructure>> {
        if !self.realizable(x)? {
            return Ok(Vec::new());
        }
        let k = self.k();
        let fresh = x.n() as u32;
        let new_subsets: Vec<Vec<u32>> = if x.n() + 1 < k {
            Vec::new()
        } else {
            (0..fresh)
                .combinations(k - 1)
                .map(|mut s| {
                    s.push(fresh);
                    s
                })
                .collect()
        };
        // the empty product must still yield the bare extension
        let combos: Vec<Vec<LabelId>> = if new_subsets.is_empty() {
            vec![Vec::new()]
        } else {
            vec![0..self.sig.label_count(); new_subsets.len()]
                .into_iter()
                .multi_cartesian_product()
                .collect()
        };
        let mut out = Vec::new();
        for combo in combos {
            let mut candidate = x.clone();
            candidate.n += 1;
            for (subset, label) in new_subsets.iter().zip(&combo) {
                candidate.set(&self.sig, subset, *label);
            }
            if self.realizable_unchecked(&candidate) {
                out.push(candidate);
            }
        }
        Ok(out)
    }

    /// Bounded-depth sanity checks of the presentation: the action laws, and
    /// the extension property on every realizable structure below `depth`.
    pub fn validate_presentation(&self, depth: usize) -> Result<ValidationReport> {
        if depth < self.k() {
            return Err(Error::Precondition(format!(
                "validation depth {depth} below arity {}",
                self.k()
            )));
        }
        let mut report = ValidationReport::default();
        for msg in self.sig.action_violations() {
            report.violations.push(Violation::Action(msg));
        }
        for bound in self.embed_bounds.iter().chain(&self.hom_bounds) {
            if !bound.respects_action(&self.sig) {
                report
                    .violations
                    .push(Violation::Action(format!("bound labeling breaks the action: {}", bound.render(&self.sig))));
            }
        }
        if !report.is_empty() {
            // the extension checks below derive labels through the action and
            // would report noise when the action itself is broken
            return Ok(report);
        }

        let budget: usize = 500_000;
        let mut frontier = vec![LabeledStructure::new(0)];
        for size in 0..depth {
            let mut next = Vec::new();
            for x in &frontier {
                let exts = self.one_point_extensions(x)?;
                if exts.is_empty() {
                    if x.n() + 1 == self.k() {
                        report
                            .violations
                            .push(Violation::DeadEndSubset { structure: x.render(&self.sig) });
                    } else {
                        report.violations.push(Violation::MissingExtension {
                            structure: x.render(&self.sig),
                            size: x.n(),
                        });
                    }
                }
                next.extend(exts);
                if next.len() > budget {
                    return Err(Error::Budget(format!(
                        "more than {budget} realizable structures at size {}",
                        size + 1
                    )));
                }
            }
            frontier = next;
        }
        Ok(report)
    }
}

/// The countable random graph: two symmetric pair orbits, adjacency and
/// non-adjacency.
pub fn random_graph() -> GroundStructure {
    let sig = Signature::symmetric(2, &["E", "N"]);
    let e = 0;
    let n = 1;
    let double_pair = LabeledStructure::new(2).with(&sig, &[0, 1], e).with(&sig, &[0, 1], n);
    let e_loop = LabeledStructure::new(1).with(&sig, &[0, 0], e);
    let n_loop = LabeledStructure::new(1).with(&sig, &[0, 0], n);
    GroundStructure::new(
        "random-graph",
        sig,
        vec![double_pair.clone()],
        vec![e_loop, n_loop, double_pair],
    )
}

/// The universal homogeneous triangle-free graph: the random graph plus the
/// all-edge triangle in both bound sets.
pub fn henson_k3_free() -> GroundStructure {
    let rg = random_graph();
    let sig = rg.sig.clone();
    let e = 0;
    let triangle = LabeledStructure::new(3)
        .with(&sig, &[0, 1], e)
        .with(&sig, &[0, 2], e)
        .with(&sig, &[1, 2], e);
    let mut embed = rg.embed_bounds.clone();
    embed.push(triangle.clone());
    let mut hom = rg.hom_bounds.clone();
    hom.push(triangle);
    GroundStructure::new("henson-k3-free", sig, embed, hom)
}

/// The universal homogeneous 3-uniform hypergraph: two fully symmetric triple
/// orbits, hyperedge and non-hyperedge, with consistency bounds only.
pub fn hypergraph_3() -> GroundStructure {
    let sig = Signature::symmetric(3, &["H", "N"]);
    let h = 0;
    let n = 1;
    let double_triple = LabeledStructure::new(3)
        .with(&sig, &[0, 1, 2], h)
        .with(&sig, &[0, 1, 2], n);
    let h_collapsed = LabeledStructure::new(2).with(&sig, &[0, 0, 1], h);
    let n_collapsed = LabeledStructure::new(2).with(&sig, &[0, 0, 1], n);
    GroundStructure::new(
        "hypergraph-3",
        sig,
        vec![double_triple.clone()],
        vec![h_collapsed, n_collapsed, double_triple],
    )
}

/// The homogeneous complete 3-edge-colored graph with free amalgamation:
/// pairs carry one of three symmetric colors, consistency bounds only.
pub fn three_graph() -> GroundStructure {
    let sig = Signature::symmetric(2, &["O", "P", "Q"]);
    let mut embed = Vec::new();
    let mut hom = Vec::new();
    for a in 0..3 {
        hom.push(LabeledStructure::new(1).with(&sig, &[0, 0], a));
        for b in (a + 1)..3 {
            let double = LabeledStructure::new(2).with(&sig, &[0, 1], a).with(&sig, &[0, 1], b);
            embed.push(double.clone());
            hom.push(double);
        }
    }
    GroundStructure::new("three-graph", sig, embed, hom)
}

/// Looks up a builtin presentation by its addressable name.
pub fn builtin(name: &str) -> Option<GroundStructure> {
    match name {
        "random-graph" => Some(random_graph()),
        "henson-k3-free" => Some(henson_k3_free()),
        "hypergraph-3" => Some(hypergraph_3()),
        _ => None,
    }
}
