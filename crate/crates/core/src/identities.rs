//! Verification of height-1 identity chains on explicit finite operation
//! tables, polymorphism preservation tests, and idempotentization over a
//! finite subset.
//!
//! All checks are pointwise over the finite domain; there is no term
//! rewriting. The published index ranges for the linking identities overrun
//! the chain by one at the top end; the checks below use the largest ranges
//! under which every chain length is well-formed, so a single operation must
//! satisfy exactly the three majority-style identities.

use std::collections::BTreeSet;

use itertools::Itertools;

use crate::error::{Error, Result};

/// A ternary operation table over `[n]`, row-major in `x, y, z`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct OpTable {
    n: usize,
    table: Vec<usize>,
}

impl OpTable {
    pub fn new(n: usize, table: Vec<usize>) -> Result<Self> {
        if table.len() != n * n * n {
            return Err(Error::ArityMismatch(format!(
                "a ternary table over [{n}] needs {} entries, got {}",
                n * n * n,
                table.len()
            )));
        }
        if table.iter().any(|&v| v >= n) {
            return Err(Error::Parse("table entry out of domain".into()));
        }
        Ok(OpTable { n, table })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize) -> usize) -> Self {
        let mut table = Vec::with_capacity(n * n * n);
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    table.push(f(x, y, z));
                }
            }
        }
        OpTable { n, table }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn apply(&self, x: usize, y: usize, z: usize) -> usize {
        self.table[(x * self.n + y) * self.n + z]
    }

    pub fn entries(&self) -> &[usize] {
        &self.table
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainKind {
    Pixley,
    DirectedJonsson,
    Jonsson,
}

impl ChainKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pixley" => Ok(ChainKind::Pixley),
            "directed-jonsson" => Ok(ChainKind::DirectedJonsson),
            "jonsson" => Ok(ChainKind::Jonsson),
            other => Err(Error::Parse(format!("unknown chain kind `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChainKind::Pixley => "pixley",
            ChainKind::DirectedJonsson => "directed-jonsson",
            ChainKind::Jonsson => "jonsson",
        }
    }
}

/// A chain of ternary operations over one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpChain {
    pub ops: Vec<OpTable>,
    pub kind: ChainKind,
}

impl OpChain {
    pub fn new(ops: Vec<OpTable>, kind: ChainKind) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::Precondition("a chain needs at least one operation".into()));
        }
        if ops.iter().map(|o| o.n).unique().count() != 1 {
            return Err(Error::ArityMismatch("all operations must share the domain".into()));
        }
        if kind == ChainKind::Jonsson && ops.len() % 2 == 0 {
            return Err(Error::OddLengthRequired(ops.len()));
        }
        Ok(OpChain { ops, kind })
    }

    pub fn domain(&self) -> usize {
        self.ops[0].n
    }
}

/// The first identity a chain violates: the equation number within its
/// kind's list, the 1-based operation index, and the witnessing pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailedIdentity {
    pub equation: u8,
    pub op_index: usize,
    pub x: usize,
    pub y: usize,
}

/// Exhaustively checks every identity of the declared kind over all pairs.
pub fn verify_chain(c: &OpChain) -> Option<FailedIdentity> {
    let n = c.domain();
    let ops = &c.ops;
    let m = ops.len();
    let pairs = || (0..n).cartesian_product(0..n);
    let fail = |equation: u8, op_index: usize, x: usize, y: usize| FailedIdentity {
        equation,
        op_index,
        x,
        y,
    };
    match c.kind {
        ChainKind::Jonsson => {
            let half = (m - 1) / 2;
            for (x, y) in pairs() {
                if ops[0].apply(x, x, y) != ops[0].apply(x, x, x) {
                    return Some(fail(1, 1, x, y));
                }
            }
            for (i, op) in ops.iter().enumerate() {
                for (x, y) in pairs() {
                    if op.apply(x, y, x) != op.apply(x, x, x) {
                        return Some(fail(2, i + 1, x, y));
                    }
                }
            }
            for i in 1..=half {
                for (x, y) in pairs() {
                    if ops[2 * i - 2].apply(x, y, y) != ops[2 * i - 1].apply(x, y, y) {
                        return Some(fail(3, 2 * i - 1, x, y));
                    }
                }
            }
            for i in 1..=half {
                for (x, y) in pairs() {
                    if ops[2 * i - 1].apply(x, x, y) != ops[2 * i].apply(x, x, y) {
                        return Some(fail(4, 2 * i, x, y));
                    }
                }
            }
            for (x, y) in pairs() {
                if ops[m - 1].apply(x, y, y) != ops[m - 1].apply(y, y, y) {
                    return Some(fail(5, m, x, y));
                }
            }
        }
        ChainKind::Pixley => {
            for (x, y) in pairs() {
                if ops[0].apply(x, y, y) != ops[0].apply(x, x, x) {
                    return Some(fail(1, 1, x, y));
                }
            }
            for (i, op) in ops.iter().enumerate() {
                for (x, y) in pairs() {
                    if op.apply(x, y, x) != op.apply(x, x, x) {
                        return Some(fail(2, i + 1, x, y));
                    }
                }
            }
            for i in 0..m - 1 {
                for (x, y) in pairs() {
                    if ops[i].apply(x, x, y) != ops[i + 1].apply(x, y, y) {
                        return Some(fail(3, i + 1, x, y));
                    }
                }
            }
            for (x, y) in pairs() {
                if ops[m - 1].apply(x, x, y) != ops[m - 1].apply(y, y, y) {
                    return Some(fail(4, m, x, y));
                }
            }
        }
        ChainKind::DirectedJonsson => {
            for (x, y) in pairs() {
                if ops[0].apply(x, x, y) != ops[0].apply(x, x, x) {
                    return Some(fail(1, 1, x, y));
                }
            }
            for (i, op) in ops.iter().enumerate() {
                for (x, y) in pairs() {
                    if op.apply(x, y, x) != op.apply(x, x, x) {
                        return Some(fail(2, i + 1, x, y));
                    }
                }
            }
            for i in 0..m - 1 {
                for (x, y) in pairs() {
                    if ops[i].apply(x, y, y) != ops[i + 1].apply(x, x, y) {
                        return Some(fail(3, i + 1, x, y));
                    }
                }
            }
            for (x, y) in pairs() {
                if ops[m - 1].apply(x, y, y) != ops[m - 1].apply(y, y, y) {
                    return Some(fail(4, m, x, y));
                }
            }
        }
    }
    None
}

/// True iff applying `f` coordinatewise to any three tuples of `r` lands in
/// `r` again.
pub fn preserves(f: &OpTable, r: &[Vec<usize>]) -> Result<bool> {
    let arity = match r.first() {
        Some(t) => t.len(),
        None => return Ok(true),
    };
    for t in r {
        if t.len() != arity {
            return Err(Error::ArityMismatch("relation tuples differ in length".into()));
        }
        if t.iter().any(|&v| v >= f.n) {
            return Err(Error::ArityMismatch("relation entry outside the domain".into()));
        }
    }
    let rows: BTreeSet<&Vec<usize>> = r.iter().collect();
    for a in r {
        for b in r {
            for c in r {
                let image: Vec<usize> =
                    (0..arity).map(|i| f.apply(a[i], b[i], c[i])).collect();
                if !rows.contains(&image) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Corrects a chain to one idempotent on `b`: for each operation, a
/// bijection from the pool agreeing with its diagonal on `b` is inverted
/// and composed on top. The chain identities link all diagonals, so the
/// first matching pool entry is shared across the chain.
pub fn idempotentize(c: &OpChain, b: &BTreeSet<usize>, pool: &[Vec<usize>]) -> Result<OpChain> {
    let n = c.domain();
    for alpha in pool {
        let ok = alpha.len() == n
            && alpha.iter().all(|&v| v < n)
            && alpha.iter().unique().count() == n;
        if !ok {
            return Err(Error::Precondition("pool entries must be bijections on [n]".into()));
        }
    }
    if b.iter().any(|&v| v >= n) {
        return Err(Error::Precondition("subset entry outside the domain".into()));
    }
    let mut ops = Vec::with_capacity(c.ops.len());
    for (i, op) in c.ops.iter().enumerate() {
        let alpha = pool
            .iter()
            .find(|alpha| b.iter().all(|&v| alpha[v] == op.apply(v, v, v)))
            .ok_or(Error::NoSuitableBijection { index: i + 1 })?;
        let mut inverse = vec![0usize; n];
        for (x, &fx) in alpha.iter().enumerate() {
            inverse[fx] = x;
        }
        ops.push(OpTable::from_fn(n, |x, y, z| inverse[op.apply(x, y, z)]));
    }
    OpChain::new(ops, c.kind)
}

/// Embeds a verified Pixley or directed chain into a quasi Jónsson chain by
/// interleaving argument-duplicated copies of the chain operations; Jónsson
/// chains pass through unchanged. Literal repetition of the operation list
/// does not satisfy the linking identities, so the duplication happens at
/// the argument level.
pub fn pad_to_jonsson(c: &OpChain) -> Result<OpChain> {
    let n = c.domain();
    match c.kind {
        ChainKind::Jonsson => OpChain::new(c.ops.clone(), ChainKind::Jonsson),
        ChainKind::DirectedJonsson => {
            // D_1, D_1(x,z,z), D_2, D_2(x,z,z), ..., D_m
            let mut ops = Vec::new();
            for (i, d) in c.ops.iter().enumerate() {
                ops.push(d.clone());
                if i + 1 < c.ops.len() {
                    ops.push(OpTable::from_fn(n, |x, _, z| d.apply(x, z, z)));
                }
            }
            OpChain::new(ops, ChainKind::Jonsson)
        }
        ChainKind::Pixley => {
            // P_i(x,z,z), P_i alternating, closed with P_m(x,x,z)
            let mut ops = Vec::new();
            for p in &c.ops {
                ops.push(OpTable::from_fn(n, |x, _, z| p.apply(x, z, z)));
                ops.push(p.clone());
            }
            let last = &c.ops[c.ops.len() - 1];
            ops.push(OpTable::from_fn(n, |x, _, z| last.apply(x, x, z)));
            OpChain::new(ops, ChainKind::Jonsson)
        }
    }
}

const ENUMERATION_BUDGET: u64 = 1 << 20;

/// Exhaustively counts the chains of a given length passing verification,
/// returning up to five examples.
pub fn enumerate_chains(
    n: usize,
    length: usize,
    kind: ChainKind,
) -> Result<(u64, Vec<OpChain>)> {
    if length == 0 {
        return Err(Error::Precondition("chain length must be positive".into()));
    }
    if kind == ChainKind::Jonsson && length % 2 == 0 {
        return Err(Error::OddLengthRequired(length));
    }
    let cube = n
        .checked_pow(3)
        .and_then(|c| (n as u64).checked_pow(c as u32))
        .ok_or_else(|| Error::Budget("domain too large to enumerate".into()))?;
    let total = cube
        .checked_pow(length as u32)
        .filter(|&t| t <= ENUMERATION_BUDGET)
        .ok_or_else(|| {
            Error::Budget(format!(
                "enumeration space exceeds the budget of {ENUMERATION_BUDGET} chains"
            ))
        })?;
    let tables: Vec<OpTable> = all_tables(n);
    let mut count = 0u64;
    let mut samples = Vec::new();
    let mut indices = vec![0usize; length];
    for _ in 0..total {
        let ops: Vec<OpTable> = indices.iter().map(|&i| tables[i].clone()).collect();
        let chain = OpChain { ops, kind };
        if verify_chain(&chain).is_none() {
            count += 1;
            if samples.len() < 5 {
                samples.push(chain);
            }
        }
        // odometer
        for slot in indices.iter_mut() {
            *slot += 1;
            if *slot < tables.len() {
                break;
            }
            *slot = 0;
        }
    }
    Ok((count, samples))
}

fn all_tables(n: usize) -> Vec<OpTable> {
    let size = n * n * n;
    let mut out = Vec::new();
    let mut table = vec![0usize; size];
    loop {
        out.push(OpTable { n, table: table.clone() });
        let mut pos = 0;
        loop {
            if pos == size {
                return out;
            }
            table[pos] += 1;
            if table[pos] < n {
                break;
            }
            table[pos] = 0;
            pos += 1;
        }
    }
}

pub fn majority2() -> OpTable {
    OpTable::from_fn(2, |x, y, z| if x == y || x == z { x } else { y })
}

pub fn projection2(coordinate: usize) -> OpTable {
    OpTable::from_fn(2, move |x, y, z| [x, y, z][coordinate])
}

/// The ternary discriminator: z when x = y, else x.
pub fn discriminator(n: usize) -> OpTable {
    OpTable::from_fn(n, |x, y, z| if x == y { z } else { x })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_is_a_jonsson_chain() {
        let chain = OpChain::new(vec![majority2()], ChainKind::Jonsson).unwrap();
        assert_eq!(verify_chain(&chain), None);
    }

    #[test]
    fn first_projection_fails_equation_five() {
        let chain = OpChain::new(vec![projection2(0)], ChainKind::Jonsson).unwrap();
        let failure = verify_chain(&chain).unwrap();
        assert_eq!(failure.equation, 5);
    }

    #[test]
    fn other_projections_fail_early_equations() {
        let second = OpChain::new(vec![projection2(1)], ChainKind::Jonsson).unwrap();
        assert_eq!(verify_chain(&second).unwrap().equation, 2);
        let third = OpChain::new(vec![projection2(2)], ChainKind::Jonsson).unwrap();
        assert_eq!(verify_chain(&third).unwrap().equation, 1);
    }

    #[test]
    fn discriminator_is_a_pixley_chain() {
        let chain = OpChain::new(vec![discriminator(2)], ChainKind::Pixley).unwrap();
        assert_eq!(verify_chain(&chain), None);
        let three = OpChain::new(vec![discriminator(3)], ChainKind::Pixley).unwrap();
        assert_eq!(verify_chain(&three), None);
    }

    #[test]
    fn majority_is_not_a_pixley_chain() {
        let chain = OpChain::new(vec![majority2()], ChainKind::Pixley).unwrap();
        assert!(verify_chain(&chain).is_some());
    }

    #[test]
    fn jonsson_chains_must_be_odd() {
        let ops = vec![majority2(), majority2()];
        assert!(matches!(
            OpChain::new(ops, ChainKind::Jonsson),
            Err(Error::OddLengthRequired(2))
        ));
    }

    #[test]
    fn preserves_cases() {
        let maj = majority2();
        let diseq = vec![vec![0, 1], vec![1, 0]];
        assert!(preserves(&maj, &diseq).unwrap());

        let proj = projection2(0);
        let anything = vec![vec![0, 0], vec![0, 1], vec![1, 1]];
        assert!(preserves(&proj, &anything).unwrap());

        let xor = OpTable::from_fn(2, |x, y, z| x ^ y ^ z);
        assert!(!preserves(&xor, &anything).unwrap());
    }

    #[test]
    fn preserved_operations_compose() {
        let r = vec![vec![0, 1], vec![1, 0]];
        let maj = majority2();
        let disc = discriminator(2);
        assert!(preserves(&maj, &r).unwrap());
        assert!(preserves(&disc, &r).unwrap());
        let composed = OpTable::from_fn(2, |x, y, z| maj.apply(disc.apply(x, y, z), y, z));
        assert!(preserves(&composed, &r).unwrap());
    }

    #[test]
    fn idempotentize_identity_pool() {
        let chain = OpChain::new(vec![majority2()], ChainKind::Jonsson).unwrap();
        let b = BTreeSet::from([0, 1]);
        let out = idempotentize(&chain, &b, &[vec![0, 1]]).unwrap();
        assert_eq!(out, chain);
    }

    #[test]
    fn idempotentize_corrects_twisted_diagonal() {
        // majority composed with a transposition: the diagonal swaps 0 and 1
        let maj = majority2();
        let twisted = OpTable::from_fn(2, |x, y, z| 1 - maj.apply(x, y, z));
        let chain = OpChain::new(vec![twisted], ChainKind::Jonsson).unwrap();
        let b = BTreeSet::from([0, 1]);
        let out = idempotentize(&chain, &b, &[vec![0, 1], vec![1, 0]]).unwrap();
        assert_eq!(verify_chain(&out), None);
        for &v in &b {
            assert_eq!(out.ops[0].apply(v, v, v), v);
        }
    }

    #[test]
    fn idempotentize_reports_missing_bijection() {
        let maj = majority2();
        let twisted = OpTable::from_fn(2, |x, y, z| 1 - maj.apply(x, y, z));
        let chain = OpChain::new(vec![twisted], ChainKind::Jonsson).unwrap();
        let b = BTreeSet::from([0, 1]);
        assert!(matches!(
            idempotentize(&chain, &b, &[]),
            Err(Error::NoSuitableBijection { index: 1 })
        ));
    }

    /// Independent recount of the single-operation quasi Jónsson tables on
    /// a two-element domain: the three majority-style identities checked
    /// directly against the raw table entries.
    fn independent_single_jonsson_count() -> u64 {
        let mut count = 0;
        for bits in 0u32..256 {
            let entry = |x: usize, y: usize, z: usize| -> usize {
                ((bits >> ((x * 2 + y) * 2 + z)) & 1) as usize
            };
            let mut ok = true;
            for x in 0..2 {
                for y in 0..2 {
                    ok &= entry(x, x, y) == entry(x, x, x);
                    ok &= entry(x, y, x) == entry(x, x, x);
                    ok &= entry(x, y, y) == entry(y, y, y);
                }
            }
            if ok {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn enumeration_matches_independent_count() {
        let (count, samples) = enumerate_chains(2, 1, ChainKind::Jonsson).unwrap();
        assert_eq!(count, independent_single_jonsson_count());
        assert!(!samples.is_empty());
        assert!(samples.iter().all(|c| verify_chain(c).is_none()));
    }

    #[test]
    fn enumeration_pixley_includes_discriminator() {
        let (_, samples) = enumerate_chains(2, 1, ChainKind::Pixley).unwrap();
        assert!(samples.iter().any(|c| c.ops[0] == discriminator(2)));
        let maj_chain = OpChain::new(vec![majority2()], ChainKind::Pixley).unwrap();
        assert!(verify_chain(&maj_chain).is_some());
    }

    #[test]
    fn singleton_domain_accepts_everything() {
        for kind in [ChainKind::Pixley, ChainKind::DirectedJonsson, ChainKind::Jonsson] {
            let (count, _) = enumerate_chains(1, 1, kind).unwrap();
            assert_eq!(count, 1);
        }
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        assert!(matches!(
            enumerate_chains(2, 3, ChainKind::Jonsson),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn padded_chains_remain_jonsson() {
        // exhaustive over domain 2 for lengths 1 and 2
        for kind in [ChainKind::Pixley, ChainKind::DirectedJonsson] {
            for length in 1..=2usize {
                let tables = all_tables(2);
                let mut indices = vec![0usize; length];
                let total = 256u64.pow(length as u32);
                for _ in 0..total {
                    let ops: Vec<OpTable> =
                        indices.iter().map(|&i| tables[i].clone()).collect();
                    let chain = OpChain { ops, kind };
                    if verify_chain(&chain).is_none() {
                        let padded = pad_to_jonsson(&chain).unwrap();
                        assert_eq!(padded.kind, ChainKind::Jonsson);
                        assert_eq!(
                            verify_chain(&padded),
                            None,
                            "padding broke a {} chain of length {}",
                            kind.name(),
                            length
                        );
                    }
                    for slot in indices.iter_mut() {
                        *slot += 1;
                        if *slot < 256 {
                            break;
                        }
                        *slot = 0;
                    }
                }
            }
        }
    }
}
