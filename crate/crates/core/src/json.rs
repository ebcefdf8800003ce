//! Structured-text schemas for ground structures, relations, instances,
//! operation chains, and certificates.
//!
//! Serialization is deterministic: maps are ordered, rows are emitted in row
//! order, and identical inputs produce byte-identical documents.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minimality::{Constraint, Instance};
use crate::oracle::Labeling;
use crate::relations::{TypeRow, TypedRelation, Var};
use crate::structures::{builtin, GroundStructure, LabeledStructure, Perm, Signature};

pub const SCHEMA_STRUCTURE: &str = "orbitmin.structure/1";
pub const SCHEMA_INSTANCE: &str = "orbitmin.instance/1";
pub const SCHEMA_RELATION: &str = "orbitmin.relation/1";
pub const SCHEMA_CHAIN: &str = "orbitmin.chain/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelEntryDoc {
    pub tuple: Vec<u32>,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundDoc {
    pub n: usize,
    #[serde(default)]
    pub labeling: Vec<LabelEntryDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureDoc {
    pub k: usize,
    pub labels: Vec<String>,
    #[serde(default)]
    pub action: Vec<(Perm, String, String)>,
    #[serde(default)]
    pub embed_bounds: Vec<BoundDoc>,
    #[serde(default)]
    pub hom_bounds: Vec<BoundDoc>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowDoc {
    pub partition: Vec<Vec<usize>>,
    #[serde(default)]
    pub types: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationDoc {
    pub vars: Vec<String>,
    pub rows: Vec<RowDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StructureRef {
    Name(String),
    Inline(StructureDoc),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RelSpec {
    /// `orbit:<label>` or `orbit:<label>|<label>`: uniform single-orbit rows.
    Shorthand(String),
    Full(RelationDoc),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintDoc {
    pub scope: Vec<String>,
    pub rel: RelSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceDoc {
    #[serde(default)]
    pub structure: Option<StructureRef>,
    pub vars: Vec<String>,
    pub constraints: Vec<ConstraintDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDoc {
    pub n: usize,
    pub tables: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImplicationDoc {
    pub rel: RelationDoc,
    pub u: Vec<String>,
    pub v: Vec<String>,
    pub c: RelationDoc,
    pub d: RelationDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleDoc {
    #[serde(default)]
    pub structure: Option<StructureRef>,
    pub implications: Vec<ImplicationDoc>,
}

pub fn implication_from_doc(
    g: &GroundStructure,
    doc: &ImplicationDoc,
) -> Result<crate::relations::Implication> {
    Ok(crate::relations::Implication {
        rel: relation_from_doc(g, &doc.rel)?,
        u: doc.u.clone(),
        v: doc.v.clone(),
        c: relation_from_doc(g, &doc.c)?,
        d: relation_from_doc(g, &doc.d)?,
    })
}

pub fn implication_to_doc(
    g: &GroundStructure,
    phi: &crate::relations::Implication,
) -> ImplicationDoc {
    ImplicationDoc {
        rel: relation_to_doc(g, &phi.rel),
        u: phi.u.clone(),
        v: phi.v.clone(),
        c: relation_to_doc(g, &phi.c),
        d: relation_to_doc(g, &phi.d),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateDoc {
    pub classes: BTreeMap<String, u32>,
    pub quotient: BoundDoc,
}

pub fn structure_from_doc(doc: &StructureDoc) -> Result<GroundStructure> {
    if doc.k < 2 {
        return Err(Error::Parse("orbit arity k must be at least 2".into()));
    }
    if doc.labels.is_empty() {
        return Err(Error::Parse("a signature needs at least one label".into()));
    }
    let names: Vec<&str> = doc.labels.iter().map(|s| s.as_str()).collect();
    let base = Signature::symmetric(doc.k, &names);
    let mut entries = Vec::new();
    for (perm, l_in, l_out) in &doc.action {
        if perm.len() != doc.k {
            return Err(Error::Parse(format!("action permutation {:?} has wrong length", perm)));
        }
        let li = base
            .label_by_name(l_in)
            .ok_or_else(|| Error::Parse(format!("unknown label `{l_in}` in action")))?;
        let lo = base
            .label_by_name(l_out)
            .ok_or_else(|| Error::Parse(format!("unknown label `{l_out}` in action")))?;
        entries.push((perm.clone(), li, lo));
    }
    let sig = Signature::new(doc.k, &names, &entries);
    let parse_bounds = |bounds: &[BoundDoc]| -> Result<Vec<LabeledStructure>> {
        bounds
            .iter()
            .map(|b| {
                let mut x = LabeledStructure::new(b.n);
                for entry in &b.labeling {
                    if entry.tuple.len() != doc.k {
                        return Err(Error::Parse(format!(
                            "bound tuple {:?} must have arity {}",
                            entry.tuple, doc.k
                        )));
                    }
                    if entry.tuple.iter().any(|&v| v as usize >= b.n) {
                        return Err(Error::Parse("bound tuple vertex out of range".into()));
                    }
                    let label = sig
                        .label_by_name(&entry.label)
                        .ok_or_else(|| Error::Parse(format!("unknown label `{}`", entry.label)))?;
                    x.set(&sig, &entry.tuple, label);
                }
                Ok(x)
            })
            .collect()
    };
    let embed = parse_bounds(&doc.embed_bounds)?;
    let hom = parse_bounds(&doc.hom_bounds)?;
    let name = doc.name.clone().unwrap_or_else(|| "custom".to_string());
    Ok(GroundStructure::new(&name, sig, embed, hom))
}

pub fn structure_to_doc(g: &GroundStructure) -> StructureDoc {
    let sig = g.sig();
    let bound_doc = |x: &LabeledStructure| BoundDoc {
        n: x.n(),
        labeling: x
            .entries()
            .flat_map(|(tuple, labels)| {
                labels.iter().map(|&l| LabelEntryDoc {
                    tuple: tuple.clone(),
                    label: sig.label_name(l).to_string(),
                })
            })
            .collect(),
    };
    let mut action = Vec::new();
    for perm in crate::structures::all_perms(sig.k()) {
        for l in 0..sig.label_count() {
            let out = sig.act(&perm, l);
            if out != l {
                action.push((
                    perm.clone(),
                    sig.label_name(l).to_string(),
                    sig.label_name(out).to_string(),
                ));
            }
        }
    }
    StructureDoc {
        k: sig.k(),
        labels: sig.labels().iter().map(|l| l.name.clone()).collect(),
        action,
        embed_bounds: g.embed_bounds().iter().map(bound_doc).collect(),
        hom_bounds: g.hom_bounds().iter().map(bound_doc).collect(),
        name: Some(g.name().to_string()),
    }
}

fn parse_class_tuple(key: &str) -> Result<Vec<usize>> {
    let inner = key.trim().trim_start_matches('(').trim_end_matches(')');
    inner
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad class tuple `{key}`")))
        })
        .collect()
}

pub fn row_from_doc(g: &GroundStructure, arity: usize, doc: &RowDoc) -> Result<TypeRow> {
    let sig = g.sig();
    let mut seen = vec![false; arity];
    for class in &doc.partition {
        if class.is_empty() {
            return Err(Error::Parse("empty partition class".into()));
        }
        for &p in class {
            if p >= arity {
                return Err(Error::Parse(format!("partition position {p} out of range")));
            }
            if seen[p] {
                return Err(Error::Parse(format!("position {p} listed twice in partition")));
            }
            seen[p] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::Parse("partition must cover every position".into()));
    }
    let mut builder = TypeRow::discrete(arity);
    for class in &doc.partition {
        builder = builder.merged(class);
    }
    for (key, label_name) in &doc.types {
        let classes = parse_class_tuple(key)?;
        if classes.len() != sig.k() {
            return Err(Error::Parse(format!("type key `{key}` must list k = {} classes", sig.k())));
        }
        let positions: Vec<usize> = classes
            .iter()
            .map(|&c| {
                doc.partition
                    .get(c)
                    .and_then(|cls| cls.first().copied())
                    .ok_or_else(|| Error::Parse(format!("type key `{key}` names class {c} beyond the partition")))
            })
            .collect::<Result<_>>()?;
        let label = sig
            .label_by_name(label_name)
            .ok_or_else(|| Error::Parse(format!("unknown label `{label_name}`")))?;
        builder = builder.labeled(sig, &positions, label);
    }
    let row = builder.build(sig);
    if !row.is_full(sig) {
        return Err(Error::Parse(
            "row does not label every injective k-subset of its classes".into(),
        ));
    }
    if !row.is_realizable(g) {
        return Err(Error::Parse("row is not realizable over the structure".into()));
    }
    Ok(row)
}

pub fn row_to_doc(g: &GroundStructure, row: &TypeRow) -> RowDoc {
    let sig = g.sig();
    let mut partition: Vec<Vec<usize>> = vec![Vec::new(); row.class_count()];
    for p in 0..row.arity() {
        partition[row.class_of(p) as usize].push(p);
    }
    let types = row
        .quotient()
        .entries()
        .flat_map(|(tuple, labels)| {
            let key = format!(
                "({})",
                tuple.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
            );
            labels
                .iter()
                .map(move |&l| (key.clone(), sig.label_name(l).to_string()))
        })
        .collect();
    RowDoc { partition, types }
}

pub fn relation_from_doc(g: &GroundStructure, doc: &RelationDoc) -> Result<TypedRelation> {
    let rows = doc
        .rows
        .iter()
        .map(|r| row_from_doc(g, doc.vars.len(), r))
        .collect::<Result<BTreeSet<_>>>()?;
    Ok(TypedRelation::new(doc.vars.clone(), rows))
}

pub fn relation_to_doc(g: &GroundStructure, rel: &TypedRelation) -> RelationDoc {
    RelationDoc {
        vars: rel.vars.clone(),
        rows: rel.rows.iter().map(|r| row_to_doc(g, r)).collect(),
    }
}

fn shorthand_relation(g: &GroundStructure, scope: &[Var], spec: &str) -> Result<TypedRelation> {
    let body = spec
        .strip_prefix("orbit:")
        .ok_or_else(|| Error::Parse(format!("unknown relation shorthand `{spec}`")))?;
    if scope.len() < g.k() {
        return Err(Error::Parse(format!(
            "orbit shorthand needs a scope of arity at least k = {}",
            g.k()
        )));
    }
    let labels: Vec<usize> = body
        .split('|')
        .map(|name| {
            g.sig()
                .label_by_name(name.trim())
                .ok_or_else(|| Error::Parse(format!("unknown label `{name}`")))
        })
        .collect::<Result<_>>()?;
    Ok(TypedRelation::uniform_orbit(g, scope.to_vec(), &labels))
}

/// Resolves the ground structure of an instance document; an explicit
/// override wins over the document's own reference.
pub fn resolve_structure(
    doc: &InstanceDoc,
    override_name: Option<&str>,
) -> Result<GroundStructure> {
    if let Some(name) = override_name {
        return builtin(name)
            .ok_or_else(|| Error::Parse(format!("unknown builtin structure `{name}`")));
    }
    match &doc.structure {
        Some(StructureRef::Name(name)) => builtin(name)
            .ok_or_else(|| Error::Parse(format!("unknown builtin structure `{name}`"))),
        Some(StructureRef::Inline(sdoc)) => structure_from_doc(sdoc),
        None => Err(Error::Parse(
            "no structure given: set `structure` in the document or pass --structure".into(),
        )),
    }
}

pub fn instance_from_doc(g: &GroundStructure, doc: &InstanceDoc) -> Result<Instance> {
    let mut constraints = Vec::new();
    for c in &doc.constraints {
        let rel = match &c.rel {
            RelSpec::Shorthand(s) => shorthand_relation(g, &c.scope, s)?,
            RelSpec::Full(rdoc) => {
                if rdoc.vars != c.scope {
                    return Err(Error::Parse(format!(
                        "relation variables {:?} must equal the scope {:?}",
                        rdoc.vars, c.scope
                    )));
                }
                relation_from_doc(g, rdoc)?
            }
        };
        constraints.push(Constraint::new(rel));
    }
    let instance = Instance::new(doc.vars.clone(), constraints);
    instance.validate(g, g.ell())?;
    Ok(instance)
}

pub fn instance_to_doc(g: &GroundStructure, i: &Instance) -> InstanceDoc {
    InstanceDoc {
        structure: Some(StructureRef::Name(g.name().to_string())),
        vars: i.vars.clone(),
        constraints: i
            .constraints
            .iter()
            .map(|c| ConstraintDoc {
                scope: c.scope.clone(),
                rel: RelSpec::Full(relation_to_doc(g, &c.rel)),
            })
            .collect(),
    }
}

pub fn chain_from_doc(doc: &ChainDoc, kind: crate::identities::ChainKind) -> Result<crate::identities::OpChain> {
    let ops = doc
        .tables
        .iter()
        .map(|t| crate::identities::OpTable::new(doc.n, t.clone()))
        .collect::<Result<Vec<_>>>()?;
    crate::identities::OpChain::new(ops, kind)
}

pub fn certificate_to_doc(g: &GroundStructure, cert: &Labeling) -> CertificateDoc {
    let sig = g.sig();
    CertificateDoc {
        classes: cert.class_of.iter().map(|(v, &c)| (v.clone(), c)).collect(),
        quotient: BoundDoc {
            n: cert.quotient.n(),
            labeling: cert
                .quotient
                .entries()
                .flat_map(|(tuple, labels)| {
                    labels.iter().map(|&l| LabelEntryDoc {
                        tuple: tuple.clone(),
                        label: sig.label_name(l).to_string(),
                    })
                })
                .collect(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::random_graph;

    #[test]
    fn structure_roundtrip() {
        for g in [
            crate::structures::random_graph(),
            crate::structures::henson_k3_free(),
            crate::structures::hypergraph_3(),
        ] {
            let doc = structure_to_doc(&g);
            let back = structure_from_doc(&doc).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn instance_roundtrip_through_docs() {
        let g = random_graph();
        let i = crate::oracle::random_instance(&g, 4, 3, 11);
        let doc = instance_to_doc(&g, &i);
        let back = instance_from_doc(&g, &doc).unwrap();
        assert_eq!(back, i);
    }

    #[test]
    fn shorthand_parses_unions() {
        let g = random_graph();
        let doc = InstanceDoc {
            structure: Some(StructureRef::Name("random-graph".into())),
            vars: vec!["x".into(), "y".into()],
            constraints: vec![ConstraintDoc {
                scope: vec!["x".into(), "y".into()],
                rel: RelSpec::Shorthand("orbit:E|N".into()),
            }],
        };
        let i = instance_from_doc(&g, &doc).unwrap();
        assert_eq!(i.constraints[0].rel.rows.len(), 2);
    }

    #[test]
    fn json_output_is_deterministic() {
        let g = random_graph();
        let i = crate::oracle::random_instance(&g, 5, 4, 3);
        let a = serde_json::to_string(&instance_to_doc(&g, &i)).unwrap();
        let b = serde_json::to_string(&instance_to_doc(&g, &i)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unrealizable_row_is_rejected() {
        let g = crate::structures::henson_k3_free();
        let doc = RelationDoc {
            vars: vec!["x".into(), "y".into(), "z".into()],
            rows: vec![RowDoc {
                partition: vec![vec![0], vec![1], vec![2]],
                types: BTreeMap::from([
                    ("(0,1)".into(), "E".into()),
                    ("(0,2)".into(), "E".into()),
                    ("(1,2)".into(), "E".into()),
                ]),
            }],
        };
        assert!(matches!(relation_from_doc(&g, &doc), Err(Error::Parse(_))));
    }
}
