//! Orbit digraphs of implications, completion through powers, critical
//! relations, and the instance-level implication graph driving the solver.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::minimality::{projection, Instance};
use crate::relations::{
    self, compose, identify_vars, op_mappings, power, project, restrict_injective, Implication,
    TypeRow, TypedRelation, Var,
};
use crate::structures::GroundStructure;

/// The digraph on the orbit rows of `E = proj_u(φ) = proj_v(φ)` with an arc
/// `(O, P)` for every OP-mapping of the implication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrbitDigraph {
    pub vertices: Vec<TypeRow>,
    pub arcs: BTreeSet<(usize, usize)>,
}

impl OrbitDigraph {
    pub fn vertex_index(&self, row: &TypeRow) -> Option<usize> {
        self.vertices.binary_search(row).ok()
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.arcs.contains(&(from, to))
    }

    /// Every vertex has an incoming and an outgoing arc.
    pub fn is_smooth(&self) -> bool {
        (0..self.vertices.len()).all(|v| {
            self.arcs.iter().any(|&(a, _)| a == v) && self.arcs.iter().any(|&(_, b)| b == v)
        })
    }

    pub fn to_dot(&self, g: &GroundStructure) -> String {
        let mut out = String::from("digraph orbit {\n");
        for (i, v) in self.vertices.iter().enumerate() {
            out.push_str(&format!("  v{} [label=\"{}\"];\n", i, v.render(g.sig())));
        }
        for (a, b) in &self.arcs {
            out.push_str(&format!("  v{a} -> v{b};\n"));
        }
        out.push_str("}\n");
        out
    }
}

/// Builds `B_φ`; the projections of the implication onto `u` and `v` must
/// coincide.
pub fn build_orbit_digraph(g: &GroundStructure, phi: &Implication) -> Result<OrbitDigraph> {
    let e_u = phi.proj_u(g).rows;
    let e_v = phi.proj_v(g).rows;
    if e_u != e_v {
        return Err(Error::Precondition(
            "orbit digraphs require equal projections onto u and v".into(),
        ));
    }
    let vertices: Vec<TypeRow> = e_u.into_iter().collect();
    let mut arcs = BTreeSet::new();
    for (o, p) in op_mappings(g, &phi.rel, &phi.u, &phi.v, false)? {
        let a = vertices.binary_search(&o).expect("mapping image lies in the projection");
        let b = vertices.binary_search(&p).expect("mapping image lies in the projection");
        arcs.insert((a, b));
    }
    Ok(OrbitDigraph { vertices, arcs })
}

/// Strongly connected components in the cycle sense: a vertex belongs to a
/// component only if some cycle passes through it, so loop-free isolated
/// vertices are reported separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SccAnalysis {
    pub components: Vec<BTreeSet<usize>>,
    pub sinks: Vec<usize>,
    pub sources: Vec<usize>,
    pub component_free: BTreeSet<usize>,
}

pub fn scc_analysis(digraph: &OrbitDigraph) -> SccAnalysis {
    let n = digraph.vertices.len();
    let mut components = tarjan(n, &digraph.arcs);
    // keep only components carrying a cycle
    let mut component_free = BTreeSet::new();
    components.retain(|comp| {
        let cyclic = comp.len() > 1
            || comp.iter().any(|&v| digraph.arcs.contains(&(v, v)));
        if !cyclic {
            component_free.extend(comp.iter().copied());
        }
        cyclic
    });
    components.sort();
    let mut sinks = Vec::new();
    let mut sources = Vec::new();
    for (idx, comp) in components.iter().enumerate() {
        let is_sink = digraph
            .arcs
            .iter()
            .all(|(a, b)| !comp.contains(a) || comp.contains(b));
        let is_source = digraph
            .arcs
            .iter()
            .all(|(a, b)| !comp.contains(b) || comp.contains(a));
        if is_sink {
            sinks.push(idx);
        }
        if is_source {
            sources.push(idx);
        }
    }
    SccAnalysis { components, sinks, sources, component_free }
}

fn tarjan(n: usize, arcs: &BTreeSet<(usize, usize)>) -> Vec<BTreeSet<usize>> {
    struct State<'a> {
        arcs: &'a BTreeSet<(usize, usize)>,
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        counter: usize,
        out: Vec<BTreeSet<usize>>,
    }
    fn visit(s: &mut State, v: usize) {
        s.index[v] = Some(s.counter);
        s.low[v] = s.counter;
        s.counter += 1;
        s.stack.push(v);
        s.on_stack[v] = true;
        let succ: Vec<usize> = s.arcs.range((v, 0)..=(v, usize::MAX)).map(|&(_, b)| b).collect();
        for w in succ {
            match s.index[w] {
                None => {
                    visit(s, w);
                    s.low[v] = s.low[v].min(s.low[w]);
                }
                Some(iw) => {
                    if s.on_stack[w] {
                        s.low[v] = s.low[v].min(iw);
                    }
                }
            }
        }
        if s.low[v] == s.index[v].unwrap() {
            let mut comp = BTreeSet::new();
            while let Some(w) = s.stack.pop() {
                s.on_stack[w] = false;
                comp.insert(w);
                if w == v {
                    break;
                }
            }
            s.out.push(comp);
        }
    }
    let mut state = State {
        arcs,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        counter: 0,
        out: Vec::new(),
    };
    for v in 0..n {
        if state.index[v].is_none() {
            visit(&mut state, v);
        }
    }
    state.out
}

/// The index permutation of a variable-count-stable implication: for every
/// shared position `i` of `u`, `sigma[i]` is the position of `u[i]` in `v`.
fn shared_index_bijection(phi: &Implication) -> BTreeMap<usize, usize> {
    let mut sigma = BTreeMap::new();
    for (i, var) in phi.u.iter().enumerate() {
        if let Some(j) = phi.v.iter().position(|w| w == var) {
            sigma.insert(i, j);
        }
    }
    sigma
}

fn permutation_order(sigma: &BTreeMap<usize, usize>) -> usize {
    let mut order = 1usize;
    let mut seen = BTreeSet::new();
    for &start in sigma.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut len = 1usize;
        let mut cur = sigma[&start];
        while cur != start {
            seen.insert(cur);
            cur = *sigma.get(&cur).unwrap_or(&start);
            len += 1;
        }
        order = lcm(order, len);
    }
    order
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Completeness per the three-part criterion: stable variable count under
/// self-composition, matching shared coordinates of `u` and `v`, and every
/// strongly connected component of `B_φ` fully saturated with arcs and loops.
pub fn is_complete(g: &GroundStructure, phi: &Implication) -> Result<bool> {
    if phi.c.rows != phi.d.rows {
        return Err(Error::Precondition("completeness is defined for (C,C)-implications".into()));
    }
    let digraph = build_orbit_digraph(g, phi)?;
    let squared = compose(g, phi, phi)?;
    if squared.var_count() != phi.var_count() {
        return Ok(false);
    }
    for (i, j) in shared_index_bijection(phi) {
        if i != j {
            return Ok(false);
        }
    }
    let analysis = scc_analysis(&digraph);
    for comp in &analysis.components {
        for &a in comp {
            for &b in comp {
                if !digraph.has_arc(a, b) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn compose_injective(g: &GroundStructure, a: &Implication, b: &Implication) -> Result<Implication> {
    Ok(compose(g, a, b)?.restricted_injective())
}

fn power_injective(g: &GroundStructure, phi: &Implication, n: usize) -> Result<Implication> {
    let mut acc = phi.clone();
    for _ in 1..n {
        acc = compose_injective(g, &acc, phi)?;
    }
    Ok(acc)
}

/// Builds a complete injective (C,C)-implication from an injective one by
/// iterated powers: the variable count is stabilized, the shared-index
/// bijection is driven to the identity, the component count of the orbit
/// digraph is maximized, and loops and arcs are saturated by a final power.
///
/// The step budget is factorial in the orbit count; exceeding it signals a
/// representation bug and reports a stabilization-guard error.
pub fn complete(g: &GroundStructure, phi: &Implication) -> Result<Implication> {
    if phi.c.rows != phi.d.rows {
        return Err(Error::Precondition("completion expects a (C,C)-implication".into()));
    }
    let vertex_count = phi.proj_u(g).rows.len();
    let mut budget = StepBudget::new((1..=vertex_count.max(3)).product::<usize>() * 8 + 64);

    let mut psi = phi.restricted_injective();
    if psi.check(g)?.failed_item.is_some() {
        return Err(Error::Precondition("completion expects an implication".into()));
    }

    // stabilize the variable count
    loop {
        budget.step()?;
        let next = compose_injective(g, &psi, &psi)?;
        if next.var_count() > psi.var_count() {
            psi = next;
        } else {
            break;
        }
    }

    // make the shared-index bijection the identity
    let sigma = shared_index_bijection(&psi);
    let order = permutation_order(&sigma);
    if order > 1 {
        budget.consume(order)?;
        psi = power_injective(g, &psi, order)?;
    }

    // maximize the number of strongly connected components
    loop {
        let current = scc_analysis(&build_orbit_digraph(g, &psi)?).components.len();
        let verts = build_orbit_digraph(g, &psi)?.vertices.len().max(2);
        let mut best: Option<(usize, Implication)> = None;
        for m in 2..=verts {
            budget.consume(m)?;
            let cand = power_injective(g, &psi, m)?;
            let count = scc_analysis(&build_orbit_digraph(g, &cand)?).components.len();
            if count > current && best.as_ref().map_or(true, |(c, _)| count > *c) {
                best = Some((count, cand));
            }
        }
        match best {
            Some((_, cand)) => psi = cand,
            None => break,
        }
    }

    // saturate loops within the components
    loop {
        let digraph = build_orbit_digraph(g, &psi)?;
        let analysis = scc_analysis(&digraph);
        let all_loops = analysis
            .components
            .iter()
            .all(|comp| comp.iter().all(|&v| digraph.has_arc(v, v)));
        if all_loops {
            break;
        }
        budget.step()?;
        psi = compose_injective(g, &psi, &psi)?;
    }

    // a final power by the vertex count saturates all arcs
    let p = build_orbit_digraph(g, &psi)?.vertices.len();
    if p > 1 {
        budget.consume(p)?;
        psi = power_injective(g, &psi, p)?;
    }

    while !is_complete(g, &psi)? {
        budget.step()?;
        psi = compose_injective(g, &psi, &psi)?;
    }
    Ok(psi)
}

struct StepBudget {
    left: usize,
}

impl StepBudget {
    fn new(left: usize) -> Self {
        StepBudget { left }
    }

    fn step(&mut self) -> Result<()> {
        self.consume(1)
    }

    fn consume(&mut self, n: usize) -> Result<()> {
        if self.left < n {
            return Err(Error::StabilizationGuard(
                "completion did not stabilize within the orbit-count budget".into(),
            ));
        }
        self.left -= n;
        Ok(())
    }
}

/// Outcome of the two-part criticality check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticalCheck {
    pub failed_item: Option<u8>,
}

impl CriticalCheck {
    pub fn is_critical(&self) -> bool {
        self.failed_item.is_none()
    }
}

/// Checks criticality of `phi` over `(C, D, u, v)`: item (1) asks for a
/// complete (C,u,C,v)-implication, item (2) for containment of every
/// assignment landing in C on both tuples, and likewise for D.
pub fn is_critical(
    g: &GroundStructure,
    phi: &Implication,
    c: &TypedRelation,
    d: &TypedRelation,
    u: &[Var],
    v: &[Var],
) -> Result<CriticalCheck> {
    let k = g.k();
    if c.arity() != k || d.arity() != k {
        return Err(Error::Shape("C and D must be k-ary".into()));
    }
    if c.is_empty() || d.is_empty() {
        return Err(Error::Precondition("C and D must be non-empty".into()));
    }
    if !c.rows.iter().all(|r| r.is_injective()) || !d.rows.iter().all(|r| r.is_injective()) {
        return Err(Error::Shape("C and D must be injective relations".into()));
    }
    if c.rows.intersection(&d.rows).next().is_some() {
        return Err(Error::Shape("C and D must be disjoint".into()));
    }
    if phi.rel.arity() != k + 1 {
        return Err(Error::Shape(format!(
            "critical relations have k+1 = {} variables, got {}",
            k + 1,
            phi.rel.arity()
        )));
    }
    let shared: BTreeSet<&Var> = u.iter().filter(|w| v.contains(*w)).collect();
    if shared.contains(&u[0]) || shared.contains(&v[0]) {
        return Err(Error::Shape(
            "the first coordinates of u and v must lie outside the shared scope".into(),
        ));
    }

    // (1) complete (C, u, C, v)-implication
    let cc = Implication {
        rel: phi.rel.clone(),
        u: u.to_vec(),
        v: v.to_vec(),
        c: c.clone(),
        d: TypedRelation { vars: v.to_vec(), rows: c.rows.clone() },
    };
    if !cc.check(g)?.is_implication() || !is_complete(g, &cc)? {
        return Ok(CriticalCheck { failed_item: Some(1) });
    }

    // (2) fullness on C and on D
    let sig = g.sig();
    let pos_u: Vec<usize> = u
        .iter()
        .map(|w| phi.rel.vars.iter().position(|x| x == w).unwrap())
        .collect();
    let pos_v: Vec<usize> = v
        .iter()
        .map(|w| phi.rel.vars.iter().position(|x| x == w).unwrap())
        .collect();
    for side in [c, d] {
        for row in relations::enumerate_full_rows(g, k + 1) {
            if side.rows.contains(&row.restricted(sig, &pos_u))
                && side.rows.contains(&row.restricted(sig, &pos_v))
                && !phi.rel.rows.contains(&row)
            {
                return Ok(CriticalCheck { failed_item: Some(2) });
            }
        }
    }
    Ok(CriticalCheck { failed_item: None })
}

/// The output of the critical pipeline.
#[derive(Debug, Clone)]
pub struct CriticalTuple {
    pub phi: Implication,
    pub c: TypedRelation,
    pub d: TypedRelation,
    pub u: Vec<Var>,
    pub v: Vec<Var>,
}

/// Runs the critical-relation pipeline on a closed chain of injective
/// implications: compose around the cycle, restrict to injective rows,
/// complete, pick the sink component as C and the source component as D,
/// raise to the duality power, and identify the shared coordinates.
pub fn build_critical_from_cycle(
    g: &GroundStructure,
    cycle: &[Implication],
) -> Result<CriticalTuple> {
    if cycle.is_empty() {
        return Err(Error::Precondition("empty cycle".into()));
    }
    for (i, phi) in cycle.iter().enumerate() {
        if !phi.check(g)?.is_implication() {
            return Err(Error::Precondition(format!("cycle element {i} is not an implication")));
        }
        let next = &cycle[(i + 1) % cycle.len()];
        if phi.d.rows != next.c.rows {
            return Err(Error::Precondition(format!(
                "cycle endpoints mismatch between elements {i} and {}",
                (i + 1) % cycle.len()
            )));
        }
    }

    let mut phi = cycle[0].clone();
    for next in &cycle[1..] {
        phi = compose(g, &phi, next)?;
    }
    let phi = phi.restricted_injective();
    if !phi.check(g)?.is_implication() {
        return Err(Error::Precondition(
            "the injective restriction of the cycle composition is not an implication".into(),
        ));
    }
    let psi = complete(g, &phi)?;

    // sink component inside C, source component outside
    let digraph = build_orbit_digraph(g, &psi)?;
    let analysis = scc_analysis(&digraph);
    let rows_of = |comp: &BTreeSet<usize>| -> BTreeSet<TypeRow> {
        comp.iter().map(|&i| digraph.vertices[i].clone()).collect()
    };
    let c_rows = analysis
        .sinks
        .iter()
        .map(|&i| rows_of(&analysis.components[i]))
        .find(|rows| rows.is_subset(&psi.c.rows))
        .ok_or_else(|| Error::StabilizationGuard("no sink component inside C".into()))?;
    let d_rows = analysis
        .sources
        .iter()
        .map(|&i| rows_of(&analysis.components[i]))
        .find(|rows| rows.is_disjoint(&psi.c.rows))
        .ok_or_else(|| Error::StabilizationGuard("no source component outside C".into()))?;

    let c_rel = TypedRelation { vars: psi.u.clone(), rows: c_rows };
    let d_rel = TypedRelation { vars: psi.v.clone(), rows: d_rows };
    let psi_c = Implication {
        rel: psi.rel.clone(),
        u: psi.u.clone(),
        v: psi.v.clone(),
        c: c_rel.clone(),
        d: TypedRelation { vars: psi.v.clone(), rows: c_rel.rows.clone() },
    };

    // duality power, then identification of the shared coordinates
    let rho = power(g, &psi_c, g.d())?;
    let free: Vec<usize> = (0..rho.u.len())
        .filter(|&i| !rho.v.contains(&rho.u[i]) && !rho.u.contains(&rho.v[i]))
        .collect();
    let &j = free
        .first()
        .ok_or_else(|| Error::StabilizationGuard("no free coordinate for identification".into()))?;
    // move the free coordinate to the front of both tuples
    let order: Vec<usize> = std::iter::once(j).chain((0..rho.u.len()).filter(|&i| i != j)).collect();
    let sig = g.sig();
    let reorder_rel = |rel: &TypedRelation| -> TypedRelation {
        TypedRelation {
            vars: order.iter().map(|&i| rel.vars[i].clone()).collect(),
            rows: rel.rows.iter().map(|r| r.restricted(sig, &order)).collect(),
        }
    };
    let mut rho = Implication {
        rel: rho.rel.clone(),
        u: order.iter().map(|&i| rho.u[i].clone()).collect(),
        v: order.iter().map(|&i| rho.v[i].clone()).collect(),
        c: reorder_rel(&rho.c),
        d: reorder_rel(&rho.d),
    };
    let d_reordered: BTreeSet<TypeRow> =
        d_rel.rows.iter().map(|r| r.restricted(sig, &order)).collect();
    for i in 1..rho.u.len() {
        let (keep, drop) = (rho.u[i].clone(), rho.v[i].clone());
        if keep != drop {
            rho = identify_vars(g, &rho, &keep, &drop)?;
        }
    }
    let c_final = TypedRelation { vars: rho.u.clone(), rows: rho.c.rows.clone() };
    let d_final = TypedRelation { vars: rho.u.clone(), rows: d_reordered };
    Ok(CriticalTuple { u: rho.u.clone(), v: rho.v.clone(), phi: rho, c: c_final, d: d_final })
}

/// A label-propagation implication over k+1 variables: rows whose u-image
/// carries `label` on every k-subset are forced to carry it on the v-image
/// too. A self-cycle for the critical pipeline and the demo input of the
/// CLI.
pub fn label_propagation_implication(g: &GroundStructure, label: usize) -> Result<Implication> {
    let sig = g.sig();
    let k = g.k();
    let names: Vec<Var> = (1..=k + 1).map(|i| format!("x{i}")).collect();
    let u: Vec<Var> = std::iter::once(names[0].clone()).chain(names[2..].iter().cloned()).collect();
    let v: Vec<Var> = names[1..].to_vec();
    let full = restrict_injective(&TypedRelation::full(g, names.clone()));
    let pos_u: Vec<usize> = u.iter().map(|w| names.iter().position(|x| x == w).unwrap()).collect();
    let pos_v: Vec<usize> = v.iter().map(|w| names.iter().position(|x| x == w).unwrap()).collect();
    let uniform = |row: &TypeRow, positions: &[usize]| -> bool {
        let r = row.restricted(sig, positions);
        r.quotient()
            .entries()
            .all(|(_, labels)| labels.contains(&label))
            && r.quotient().is_fully_labeled(sig)
    };
    let rows: BTreeSet<TypeRow> = full
        .rows
        .iter()
        .filter(|row| !uniform(row, &pos_u) || uniform(row, &pos_v))
        .cloned()
        .collect();
    let rel = TypedRelation { vars: names, rows };
    let phi = Implication {
        c: TypedRelation::uniform_orbit(g, u.clone(), &[label]),
        d: TypedRelation::uniform_orbit(g, v.clone(), &[label]),
        rel,
        u,
        v,
    };
    if !phi.check(g)?.is_implication() {
        return Err(Error::Precondition(
            "the label-propagation relation is not an implication over this structure".into(),
        ));
    }
    Ok(phi)
}

/// A vertex of the instance-level implication graph: a k-subset projection
/// together with a proper non-empty union of its rows, deduplicated across
/// the tuples that realize the projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphVertex {
    pub projection: BTreeSet<TypeRow>,
    pub subset: BTreeSet<TypeRow>,
    pub tuples: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct GraphArc {
    pub from: usize,
    pub to: usize,
    pub witness: Implication,
}

#[derive(Debug, Clone)]
pub struct ImplGraph {
    pub vertices: Vec<GraphVertex>,
    pub arcs: Vec<GraphArc>,
}

impl ImplGraph {
    pub fn arc_endpoints(&self) -> BTreeSet<(usize, usize)> {
        self.arcs.iter().map(|a| (a.from, a.to)).collect()
    }

    pub fn is_acyclic(&self) -> bool {
        self.find_cycle().is_none()
    }

    /// Some directed cycle as a list of arc indices, if one exists.
    pub fn find_cycle(&self) -> Option<Vec<usize>> {
        let n = self.vertices.len();
        let mut color = vec![0u8; n];
        let mut stack: Vec<(usize, usize)> = Vec::new(); // (vertex, arc into it)
        for start in 0..n {
            if color[start] != 0 {
                continue;
            }
            if let Some(cycle) = self.dfs_cycle(start, &mut color, &mut stack) {
                return Some(cycle);
            }
        }
        None
    }

    fn dfs_cycle(
        &self,
        v: usize,
        color: &mut Vec<u8>,
        stack: &mut Vec<(usize, usize)>,
    ) -> Option<Vec<usize>> {
        color[v] = 1;
        for (ai, arc) in self.arcs.iter().enumerate() {
            if arc.from != v {
                continue;
            }
            if color[arc.to] == 1 {
                // unwind the stack back to arc.to
                let mut cycle = vec![ai];
                for &(w, into) in stack.iter().rev() {
                    if w == arc.to {
                        break;
                    }
                    cycle.push(into);
                }
                cycle.reverse();
                return Some(cycle);
            }
            if color[arc.to] == 0 {
                stack.push((arc.to, ai));
                if let Some(c) = self.dfs_cycle(arc.to, color, stack) {
                    return Some(c);
                }
                stack.pop();
            }
        }
        color[v] = 2;
        None
    }

    pub fn to_dot(&self, g: &GroundStructure) -> String {
        let sig = g.sig();
        let mut out = String::from("digraph implications {\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let tuples = v.tuples.iter().map(|t| t.join(",")).join(" | ");
            let rows = v.subset.iter().map(|r| r.render(sig)).join("; ");
            out.push_str(&format!("  v{i} [label=\"({tuples}) ↦ {rows}\"];\n"));
        }
        for arc in &self.arcs {
            out.push_str(&format!("  v{} -> v{};\n", arc.from, arc.to));
        }
        out.push_str("}\n");
        out
    }
}

const MAX_PROJECTION_ROWS: usize = 6;

/// Builds the depth-bounded instance implication graph of a k-minimal
/// injective instance.
///
/// Vertices are pairs of a k-subset projection and a proper non-empty union
/// of its rows. Arc witnesses are implications found among projections of
/// single constraints onto combined tuples and their compositions up to the
/// given depth, every one checked by the implication conditions. Absence of
/// an arc at a given depth does not prove absence in general.
pub fn build_instance_impl_graph(
    g: &GroundStructure,
    instance: &Instance,
    depth: usize,
) -> Result<ImplGraph> {
    let k = g.k();
    let subsets: Vec<Vec<Var>> = instance.vars.iter().cloned().combinations(k).collect();
    let mut projections: BTreeMap<Vec<Var>, BTreeSet<TypeRow>> = BTreeMap::new();
    for t in &subsets {
        let proj = projection(g, instance, t)?;
        if proj.rows.iter().any(|r| !r.is_injective()) {
            return Err(Error::Precondition(
                "the implication graph is built on injective instances".into(),
            ));
        }
        projections.insert(t.clone(), proj.rows);
    }

    let mut vertices: Vec<GraphVertex> = Vec::new();
    let mut vertex_index: BTreeMap<(Vec<TypeRow>, Vec<TypeRow>), usize> = BTreeMap::new();
    for (t, rows) in &projections {
        if rows.len() < 2 {
            continue;
        }
        if rows.len() > MAX_PROJECTION_ROWS {
            return Err(Error::Budget(format!(
                "projection at {:?} has {} rows; vertex enumeration refuses beyond {}",
                t,
                rows.len(),
                MAX_PROJECTION_ROWS
            )));
        }
        let row_list: Vec<TypeRow> = rows.iter().cloned().collect();
        for mask in 1..(1u32 << row_list.len()) - 1 {
            let subset: BTreeSet<TypeRow> = row_list
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, r)| r.clone())
                .collect();
            let key = (
                rows.iter().cloned().collect::<Vec<_>>(),
                subset.iter().cloned().collect::<Vec<_>>(),
            );
            match vertex_index.get(&key) {
                Some(&idx) => vertices[idx].tuples.push(t.clone()),
                None => {
                    vertex_index.insert(key, vertices.len());
                    vertices.push(GraphVertex {
                        projection: rows.clone(),
                        subset,
                        tuples: vec![t.clone()],
                    });
                }
            }
        }
    }

    // depth-1 arcs from single-constraint projections
    let mut arcs: Vec<GraphArc> = Vec::new();
    let mut endpoint_seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut cache = ProjCache::new();
    for (ta, tb) in subsets.iter().cartesian_product(subsets.iter()) {
        if ta == tb {
            continue;
        }
        for (from_idx, vertex) in vertices.iter().enumerate() {
            if !vertex.tuples.contains(ta) {
                continue;
            }
            for witness in single_constraint_implications_cached(
                g,
                instance,
                ta,
                &vertex.subset,
                tb,
                &mut cache,
            )? {
                let d_rows: Vec<TypeRow> = witness.d.rows.iter().cloned().collect();
                let key = (
                    projections[tb].iter().cloned().collect::<Vec<_>>(),
                    d_rows,
                );
                if let Some(&to_idx) = vertex_index.get(&key) {
                    if to_idx != from_idx && endpoint_seen.insert((from_idx, to_idx)) {
                        arcs.push(GraphArc { from: from_idx, to: to_idx, witness });
                    }
                }
            }
        }
    }

    // composition closure
    let base = arcs.clone();
    for _ in 1..depth {
        let mut fresh = Vec::new();
        for a in &arcs {
            for b in &base {
                if a.to != b.from {
                    continue;
                }
                if endpoint_seen.contains(&(a.from, b.to)) || a.from == b.to {
                    continue;
                }
                let Ok(composed) = compose(g, &a.witness, &b.witness) else { continue };
                let composed = composed.restricted_injective();
                if let Ok(check) = composed.check(g) {
                    if check.is_implication()
                        && composed.proj_u(g).rows == vertices[a.from].projection
                        && composed.proj_v(g).rows == vertices[b.to].projection
                    {
                        endpoint_seen.insert((a.from, b.to));
                        fresh.push(GraphArc { from: a.from, to: b.to, witness: composed });
                    }
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        arcs.extend(fresh);
    }
    Ok(ImplGraph { vertices, arcs })
}

/// Implication candidates from `(ta, from_rows)` to `tb` read off a single
/// constraint covering both tuples; every returned value passes the
/// implication conditions.
pub fn single_constraint_implications(
    g: &GroundStructure,
    instance: &Instance,
    ta: &[Var],
    from_rows: &BTreeSet<TypeRow>,
    tb: &[Var],
) -> Result<Vec<Implication>> {
    let mut cache = BTreeMap::new();
    single_constraint_implications_cached(g, instance, ta, from_rows, tb, &mut cache)
}

type ProjCache = BTreeMap<(usize, Vec<Var>), TypedRelation>;

fn single_constraint_implications_cached(
    g: &GroundStructure,
    instance: &Instance,
    ta: &[Var],
    from_rows: &BTreeSet<TypeRow>,
    tb: &[Var],
    cache: &mut ProjCache,
) -> Result<Vec<Implication>> {
    let sig = g.sig();
    let mut w: Vec<Var> = ta.to_vec();
    for v in tb {
        if !w.contains(v) {
            w.push(v.clone());
        }
    }
    if w.len() == ta.len() {
        // identical scopes cannot form an implication
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (ci, c) in instance.constraints.iter().enumerate() {
        if !w.iter().all(|v| c.scope.contains(v)) {
            continue;
        }
        let rel = match cache.get(&(ci, w.clone())) {
            Some(rel) => rel.clone(),
            None => {
                let rel = restrict_injective(&project(g, &c.rel, &w)?);
                cache.insert((ci, w.clone()), rel.clone());
                rel
            }
        };
        let pos_a: Vec<usize> = ta.iter().map(|v| w.iter().position(|x| x == v).unwrap()).collect();
        let pos_b: Vec<usize> = tb.iter().map(|v| w.iter().position(|x| x == v).unwrap()).collect();
        let image: BTreeSet<TypeRow> = rel
            .rows
            .iter()
            .filter(|row| from_rows.contains(&row.restricted(sig, &pos_a)))
            .map(|row| row.restricted(sig, &pos_b))
            .collect();
        if image.is_empty() {
            continue;
        }
        let cand = Implication {
            rel: rel.clone(),
            u: ta.to_vec(),
            v: tb.to_vec(),
            c: TypedRelation { vars: ta.to_vec(), rows: from_rows.clone() },
            d: TypedRelation { vars: tb.to_vec(), rows: image },
        };
        if cand.check(g)?.is_implication() {
            out.push(cand);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relations::vars;
    use crate::structures::{random_graph, three_graph};

    /// An implication over three variables materializing a given arc set on
    /// the pair orbits: rows over (x1, x2, x3) whose (x1x3, x2x3) label pair
    /// lies in `arcs`.
    fn arc_implication(
        g: &GroundStructure,
        arcs: &[(usize, usize)],
        c_labels: &[usize],
    ) -> Implication {
        let sig = g.sig();
        let full = restrict_injective(&TypedRelation::full(g, vars(&["x1", "x2", "x3"])));
        let rows: BTreeSet<TypeRow> = full
            .rows
            .iter()
            .filter(|row| {
                let o = *row.quotient().get(sig, &[0, 2]).unwrap().iter().next().unwrap();
                let p = *row.quotient().get(sig, &[1, 2]).unwrap().iter().next().unwrap();
                arcs.contains(&(o, p))
            })
            .cloned()
            .collect();
        Implication {
            rel: TypedRelation { vars: vars(&["x1", "x2", "x3"]), rows },
            u: vars(&["x1", "x3"]),
            v: vars(&["x2", "x3"]),
            c: TypedRelation::uniform_orbit(g, vars(&["x1", "x3"]), c_labels),
            d: TypedRelation::uniform_orbit(g, vars(&["x2", "x3"]), c_labels),
        }
    }

    #[test]
    fn digraph_of_two_loops() {
        let g = random_graph();
        let phi = arc_implication(&g, &[(0, 0), (1, 1)], &[0]);
        assert!(phi.check(&g).unwrap().is_implication());
        let digraph = build_orbit_digraph(&g, &phi).unwrap();
        assert!(digraph.is_smooth());
        let analysis = scc_analysis(&digraph);
        assert_eq!(analysis.components.len(), 2);
        assert_eq!(analysis.sinks.len(), 2);
        assert_eq!(analysis.sources.len(), 2);
    }

    #[test]
    fn digraph_sink_and_source_split() {
        let g = random_graph();
        // arcs E→N, N→N, E→E: sink {N}, source {E}
        let phi = arc_implication(&g, &[(0, 1), (1, 1), (0, 0)], &[1]);
        let digraph = build_orbit_digraph(&g, &phi).unwrap();
        let analysis = scc_analysis(&digraph);
        assert_eq!(analysis.components.len(), 2);
        assert_eq!(analysis.sinks.len(), 1);
        assert_eq!(analysis.sources.len(), 1);
        let sink_rows: Vec<&TypeRow> = analysis.components[analysis.sinks[0]]
            .iter()
            .map(|&i| &digraph.vertices[i])
            .collect();
        assert_eq!(
            sink_rows[0].quotient().get(g.sig(), &[0, 1]),
            Some(BTreeSet::from([1]))
        );
        assert!(digraph.is_smooth());
    }

    #[test]
    fn component_free_vertices_are_reported() {
        let digraph = OrbitDigraph {
            vertices: vec![
                TypeRow::discrete(2).labeled(random_graph().sig(), &[0, 1], 0).build(random_graph().sig()),
                TypeRow::discrete(2).labeled(random_graph().sig(), &[0, 1], 1).build(random_graph().sig()),
            ],
            arcs: BTreeSet::from([(0, 1), (1, 1)]),
        };
        let analysis = scc_analysis(&digraph);
        assert_eq!(analysis.components.len(), 1);
        assert_eq!(analysis.component_free, BTreeSet::from([0]));
        assert_eq!(analysis.sinks.len(), 1);
    }

    #[test]
    fn scc_matches_reachability_oracle_on_random_digraphs() {
        use rand::Rng;
        use rand::SeedableRng;
        let g = random_graph();
        let sig = g.sig();
        let rows: Vec<TypeRow> = (0..2)
            .map(|l| TypeRow::discrete(2).labeled(sig, &[0, 1], l).build(sig))
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..=6usize);
            let vertices: Vec<TypeRow> = (0..n).map(|i| rows[i % 2].clone()).collect();
            let mut arcs = BTreeSet::new();
            for a in 0..n {
                for b in 0..n {
                    if rng.gen_bool(0.3) {
                        arcs.insert((a, b));
                    }
                }
            }
            let digraph = OrbitDigraph { vertices, arcs: arcs.clone() };
            let analysis = scc_analysis(&digraph);
            // pairwise-reachability oracle
            let mut reach = vec![vec![false; n]; n];
            for &(a, b) in &arcs {
                reach[a][b] = true;
            }
            for m in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        if reach[a][m] && reach[m][b] {
                            reach[a][b] = true;
                        }
                    }
                }
            }
            for a in 0..n {
                for b in 0..n {
                    let same = analysis
                        .components
                        .iter()
                        .any(|c| c.contains(&a) && c.contains(&b));
                    let mutual = reach[a][b] && reach[b][a];
                    assert_eq!(same, mutual, "vertices {a},{b}");
                }
            }
        }
    }

    /// Rows reordered so that `u` comes first and the rest of `v` follows,
    /// making implications with differently ordered variable lists comparable.
    fn aligned_rows(g: &GroundStructure, phi: &Implication) -> BTreeSet<TypeRow> {
        let mut w = phi.u.clone();
        for x in &phi.v {
            if !w.contains(x) {
                w.push(x.clone());
            }
        }
        project(g, &phi.rel, &w).unwrap().rows
    }

    #[test]
    fn complete_returns_already_complete_implication() {
        let g = random_graph();
        // loops on both orbits plus N→E: sink {E}; a (E,E)-implication
        let phi = arc_implication(&g, &[(0, 0), (1, 1), (1, 0)], &[0]);
        assert!(phi.check(&g).unwrap().is_implication());
        assert!(is_complete(&g, &phi).unwrap());
        let completed = complete(&g, &phi).unwrap();
        assert_eq!(aligned_rows(&g, &completed), aligned_rows(&g, &phi));
    }

    #[test]
    fn complete_saturates_aperiodic_two_cycle() {
        // over the 3-colored graph: C = {O}, a 2-cycle P↔Q with a loop on P
        let g = three_graph();
        let phi = arc_implication(&g, &[(0, 0), (1, 2), (2, 1), (1, 1)], &[0]);
        assert!(phi.check(&g).unwrap().is_implication());
        assert!(!is_complete(&g, &phi).unwrap());
        let completed = complete(&g, &phi).unwrap();
        assert!(is_complete(&g, &completed).unwrap());
        let digraph = build_orbit_digraph(&g, &completed).unwrap();
        let analysis = scc_analysis(&digraph);
        // the {P,Q} component is saturated with all four arcs
        let big = analysis
            .components
            .iter()
            .find(|c| c.len() == 2)
            .expect("the aperiodic pair survives as one component");
        for &a in big {
            for &b in big {
                assert!(digraph.has_arc(a, b));
            }
        }
    }

    #[test]
    fn complete_is_idempotent() {
        let g = three_graph();
        let phi = arc_implication(&g, &[(0, 0), (1, 2), (2, 1), (1, 1)], &[0]);
        let once = complete(&g, &phi).unwrap();
        let twice = complete(&g, &once).unwrap();
        assert_eq!(aligned_rows(&g, &once), aligned_rows(&g, &twice));
    }

    #[test]
    fn reachability_matches_walks_in_powers() {
        let g = three_graph();
        let phi = arc_implication(&g, &[(0, 0), (1, 2), (2, 1)], &[0]);
        let base = build_orbit_digraph(&g, &phi).unwrap();
        for n in 2..=4usize {
            let pow = power(&g, &phi, n).unwrap();
            let digraph = build_orbit_digraph(&g, &pow).unwrap();
            // walk oracle: arcs of the n-th power are length-n walks
            let mut walks: BTreeSet<(usize, usize)> = base.arcs.clone();
            for _ in 1..n {
                walks = walks
                    .iter()
                    .flat_map(|&(a, b)| {
                        base.arcs
                            .iter()
                            .filter(move |&&(c, _)| c == b)
                            .map(move |&(_, d)| (a, d))
                    })
                    .collect();
            }
            let mapped: BTreeSet<(usize, usize)> = digraph
                .arcs
                .iter()
                .map(|&(a, b)| {
                    let ra = base.vertex_index(&digraph.vertices[a]).unwrap();
                    let rb = base.vertex_index(&digraph.vertices[b]).unwrap();
                    (ra, rb)
                })
                .collect();
            assert_eq!(mapped, walks, "power {n}");
        }
    }

    #[test]
    fn critical_pipeline_on_edge_propagation() {
        let g = random_graph();
        let phi = crate::relations::tests::edge_propagation(&g);
        let critical = build_critical_from_cycle(&g, &[phi]).unwrap();
        let check =
            is_critical(&g, &critical.phi, &critical.c, &critical.d, &critical.u, &critical.v)
                .unwrap();
        assert!(check.is_critical(), "failed item {:?}", check.failed_item);
    }

    #[test]
    fn critical_rejects_mismatched_chain() {
        let g = random_graph();
        let phi = arc_implication(&g, &[(0, 0), (1, 1), (1, 0)], &[0]);
        let other = arc_implication(&g, &[(0, 0), (1, 1), (0, 1)], &[1]);
        assert!(matches!(
            build_critical_from_cycle(&g, &[phi, other]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn missing_cc_row_fails_item_two() {
        let g = random_graph();
        let phi = crate::relations::tests::edge_propagation(&g);
        let critical = build_critical_from_cycle(&g, &[phi]).unwrap();
        let mut weakened = critical.phi.clone();
        // remove one row whose u- and v-images both lie in C
        let sig = g.sig();
        let pos_u: Vec<usize> = critical
            .u
            .iter()
            .map(|w| weakened.rel.vars.iter().position(|x| x == w).unwrap())
            .collect();
        let pos_v: Vec<usize> = critical
            .v
            .iter()
            .map(|w| weakened.rel.vars.iter().position(|x| x == w).unwrap())
            .collect();
        let victim = weakened
            .rel
            .rows
            .iter()
            .find(|r| {
                critical.c.rows.contains(&r.restricted(sig, &pos_u))
                    && critical.c.rows.contains(&r.restricted(sig, &pos_v))
            })
            .cloned()
            .unwrap();
        weakened.rel.rows.remove(&victim);
        let check =
            is_critical(&g, &weakened, &critical.c, &critical.d, &critical.u, &critical.v)
                .unwrap();
        assert_eq!(check.failed_item, Some(2));
    }
}
