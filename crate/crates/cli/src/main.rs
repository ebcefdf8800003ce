//! Batch front end: every subcommand reads structured-text inputs, prints a
//! machine-readable JSON block on stdout and human progress on stderr.
//!
//! Exit codes: 0 success or sat, 1 unsat or failed verification, 2 hardness
//! witness, 3 input error, 4 budget or stabilization guard.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use orbitmin::error::Error;
use orbitmin::identities::{enumerate_chains, pad_to_jonsson, verify_chain, ChainKind};
use orbitmin::implications::{
    build_critical_from_cycle, build_instance_impl_graph, is_critical,
    label_propagation_implication,
};
use orbitmin::json as schema;
use orbitmin::minimality::{saturate, MinimalityParams};
use orbitmin::oracle::{brute_solve, OracleVerdict, DEFAULT_BUDGET};
use orbitmin::solver::{solve, Verdict};
use orbitmin::structures::builtin;

const SCHEMAS: &[&str] = &[
    schema::SCHEMA_STRUCTURE,
    schema::SCHEMA_INSTANCE,
    schema::SCHEMA_RELATION,
    schema::SCHEMA_CHAIN,
];

#[derive(Parser)]
#[command(name = "orbitmin", version, about = "Local-consistency solver for orbit-labeled CSP templates")]
struct Cli {
    /// Print the schema versions understood by this build and exit.
    #[arg(long, global = true)]
    schemas: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance document (JSON).
    file: PathBuf,
    /// Builtin structure name overriding the document's reference.
    #[arg(long)]
    structure: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Decide an instance by saturation and sink refinement.
    Solve {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Implication-closure depth (env ORBITMIN_DEPTH).
        #[arg(long)]
        depth: Option<usize>,
        /// Write the per-iteration trace to a file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Saturate an instance to (k, max(k+1, b))-minimality and print it.
    Saturate {
        #[command(flatten)]
        instance: InstanceArgs,
    },
    /// Decide an instance by exhaustive search.
    Oracle {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Variable budget (env ORBITMIN_BUDGET).
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Build the instance implication graph and report its shape.
    ImplGraph {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long)]
        depth: Option<usize>,
        /// Write the graph in DOT format.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Run the critical-relation pipeline on a cycle of implications.
    Critical {
        /// Cycle document (JSON); omit with --demo.
        file: Option<PathBuf>,
        #[arg(long)]
        structure: Option<String>,
        /// Use the built-in label-propagation self-cycle.
        #[arg(long)]
        demo: bool,
    },
    /// Operations on identity chains.
    Identities {
        #[command(subcommand)]
        command: IdentitiesCommand,
    },
    /// Bounded-depth sanity checks of a presentation.
    Validate {
        /// Structure document (JSON); omit to validate a builtin.
        file: Option<PathBuf>,
        #[arg(long)]
        structure: Option<String>,
        #[arg(long, default_value_t = 5)]
        depth: usize,
    },
}

#[derive(Subcommand)]
enum IdentitiesCommand {
    /// Check the identities of a chain document.
    Verify {
        file: PathBuf,
        #[arg(long)]
        kind: String,
        /// Also check the padded embedding into a quasi Jónsson chain.
        #[arg(long)]
        pad: bool,
    },
    /// Exhaustively count chains over a small domain.
    Enumerate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        kind: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.schemas {
        for s in SCHEMAS {
            println!("{s}");
        }
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand; try --help");
        return ExitCode::from(3);
    };
    match run(command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Budget(_) | Error::StabilizationGuard(_) => 4,
        _ => 3,
    }
}

fn env_override(name: &str) -> Option<usize> {
    std::env::var(name).ok().and_then(|v| v.parse().ok())
}

fn load_instance(
    args: &InstanceArgs,
) -> Result<(orbitmin::structures::GroundStructure, orbitmin::minimality::Instance), Error> {
    let text = fs::read_to_string(&args.file)
        .map_err(|e| Error::Parse(format!("{}: {e}", args.file.display())))?;
    let doc: schema::InstanceDoc =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let g = schema::resolve_structure(&doc, args.structure.as_deref())?;
    let instance = schema::instance_from_doc(&g, &doc)?;
    Ok((g, instance))
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Solve { instance, depth, trace } => {
            let (g, i) = load_instance(&instance)?;
            let depth = depth.or_else(|| env_override("ORBITMIN_DEPTH")).unwrap_or(3);
            eprintln!("solving over {} at depth {depth}", g.name());
            let outcome = solve(&g, &i, depth)?;
            if let Some(path) = trace {
                let body = json!({
                    "log": outcome.trace.log,
                    "iterations": outcome.trace.iterations.iter().map(|step| json!({
                        "sink": step.sink_tuple,
                        "restricted_to": step.restricted_to,
                        "projections": step.projections,
                    })).collect::<Vec<_>>(),
                });
                fs::write(&path, serde_json::to_string_pretty(&body).unwrap_or_default())
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            }
            let (code, block) = match &outcome.verdict {
                Verdict::Sat(cert) => (
                    ExitCode::SUCCESS,
                    json!({
                        "verdict": "sat",
                        "certificate": schema::certificate_to_doc(&g, cert),
                        "iterations": outcome.trace.iterations.len(),
                    }),
                ),
                Verdict::Unsat(log) => (
                    ExitCode::from(1),
                    json!({ "verdict": "unsat", "log": log }),
                ),
                Verdict::HardWitness(arcs) => (
                    ExitCode::from(2),
                    json!({
                        "verdict": "hard-witness",
                        "arcs": arcs.iter().map(|a| json!({
                            "from": a.from_tuple,
                            "to": a.to_tuple,
                            "witness": schema::implication_to_doc(&g, &a.witness),
                        })).collect::<Vec<_>>(),
                    }),
                ),
            };
            emit(&block);
            Ok(code)
        }
        Command::Saturate { instance } => {
            let (g, i) = load_instance(&instance)?;
            let out = saturate(&i, MinimalityParams::for_structure(&g), &g)?;
            let trivial = out.is_trivial();
            emit(&json!({
                "trivial": trivial,
                "instance": schema::instance_to_doc(&g, &out),
            }));
            Ok(if trivial { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Oracle { instance, budget } => {
            let (g, i) = load_instance(&instance)?;
            let budget = budget
                .or_else(|| env_override("ORBITMIN_BUDGET"))
                .unwrap_or(DEFAULT_BUDGET);
            match brute_solve(&i, &g, budget)? {
                OracleVerdict::Sat(labeling) => {
                    emit(&json!({
                        "verdict": "sat",
                        "certificate": schema::certificate_to_doc(&g, &labeling),
                    }));
                    Ok(ExitCode::SUCCESS)
                }
                OracleVerdict::Unsat => {
                    emit(&json!({ "verdict": "unsat" }));
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::ImplGraph { instance, depth, dot } => {
            let (g, i) = load_instance(&instance)?;
            let depth = depth.or_else(|| env_override("ORBITMIN_DEPTH")).unwrap_or(3);
            let p = MinimalityParams::for_structure(&g);
            let saturated = saturate(&i, p, &g)?;
            if saturated.is_trivial() {
                emit(&json!({ "trivial": true }));
                return Ok(ExitCode::from(1));
            }
            let (injective, _) = orbitmin::minimality::injectivize(&g, &saturated)?;
            let resat = saturate(&injective, p, &g)?;
            if resat.is_trivial() {
                emit(&json!({ "trivial": true }));
                return Ok(ExitCode::from(1));
            }
            let graph = build_instance_impl_graph(&g, &resat, depth)?;
            if let Some(path) = dot {
                fs::write(&path, graph.to_dot(&g))
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            }
            emit(&json!({
                "vertices": graph.vertices.len(),
                "arcs": graph.arcs.len(),
                "acyclic": graph.is_acyclic(),
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Critical { file, structure, demo } => {
            let (g, cycle) = if demo {
                let name = structure.as_deref().unwrap_or("random-graph");
                let g = builtin(name)
                    .ok_or_else(|| Error::Parse(format!("unknown builtin structure `{name}`")))?;
                let phi = label_propagation_implication(&g, 0)?;
                (g, vec![phi])
            } else {
                let path = file.ok_or_else(|| {
                    Error::Parse("pass a cycle document or use --demo".into())
                })?;
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                let doc: schema::CycleDoc =
                    serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
                let g = match (&doc.structure, structure.as_deref()) {
                    (_, Some(name)) => builtin(name)
                        .ok_or_else(|| Error::Parse(format!("unknown builtin structure `{name}`")))?,
                    (Some(schema::StructureRef::Name(name)), None) => builtin(name)
                        .ok_or_else(|| Error::Parse(format!("unknown builtin structure `{name}`")))?,
                    (Some(schema::StructureRef::Inline(sdoc)), None) => {
                        schema::structure_from_doc(sdoc)?
                    }
                    (None, None) => {
                        return Err(Error::Parse("no structure given".into()));
                    }
                };
                let cycle = doc
                    .implications
                    .iter()
                    .map(|d| schema::implication_from_doc(&g, d))
                    .collect::<Result<Vec<_>, _>>()?;
                (g, cycle)
            };
            eprintln!("running the critical pipeline over {}", g.name());
            let tuple = build_critical_from_cycle(&g, &cycle)?;
            let check = is_critical(&g, &tuple.phi, &tuple.c, &tuple.d, &tuple.u, &tuple.v)?;
            emit(&json!({
                "critical": check.is_critical(),
                "failed_item": check.failed_item,
                "u": tuple.u,
                "v": tuple.v,
                "c": schema::relation_to_doc(&g, &tuple.c),
                "d": schema::relation_to_doc(&g, &tuple.d),
                "relation": schema::relation_to_doc(&g, &tuple.phi.rel),
            }));
            Ok(if check.is_critical() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Identities { command } => match command {
            IdentitiesCommand::Verify { file, kind, pad } => {
                let text = fs::read_to_string(&file)
                    .map_err(|e| Error::Parse(format!("{}: {e}", file.display())))?;
                let doc: schema::ChainDoc =
                    serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
                let kind = ChainKind::parse(&kind)?;
                let chain = schema::chain_from_doc(&doc, kind)?;
                let failure = verify_chain(&chain);
                let padded_ok = if pad && failure.is_none() {
                    let padded = pad_to_jonsson(&chain)?;
                    Some(verify_chain(&padded).is_none())
                } else {
                    None
                };
                emit(&json!({
                    "kind": kind.name(),
                    "valid": failure.is_none(),
                    "failure": failure.map(|f| json!({
                        "equation": f.equation,
                        "op_index": f.op_index,
                        "x": f.x,
                        "y": f.y,
                    })),
                    "padded_jonsson_valid": padded_ok,
                }));
                Ok(if failure.is_none() { ExitCode::SUCCESS } else { ExitCode::from(1) })
            }
            IdentitiesCommand::Enumerate { n, length, kind } => {
                let kind = ChainKind::parse(&kind)?;
                let (count, samples) = enumerate_chains(n, length, kind)?;
                emit(&json!({
                    "kind": kind.name(),
                    "n": n,
                    "length": length,
                    "count": count,
                    "samples": samples.iter().map(|c| json!({
                        "tables": c.ops.iter().map(|o| o.entries().to_vec()).collect::<Vec<_>>(),
                    })).collect::<Vec<_>>(),
                }));
                Ok(ExitCode::SUCCESS)
            }
        },
        Command::Validate { file, structure, depth } => {
            let g = match (file, structure) {
                (Some(path), None) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                    let doc: schema::StructureDoc =
                        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
                    schema::structure_from_doc(&doc)?
                }
                (None, Some(name)) => builtin(&name)
                    .ok_or_else(|| Error::Parse(format!("unknown builtin structure `{name}`")))?,
                _ => return Err(Error::Parse("pass exactly one of a file or --structure".into())),
            };
            let report = g.validate_presentation(depth)?;
            let messages: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            emit(&json!({
                "structure": g.name(),
                "depth": depth,
                "b": g.b(),
                "d": g.d(),
                "violations": messages,
            }));
            Ok(if report.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
    }
}

fn emit(block: &serde_json::Value) {
    // canonical single-line machine block on stdout
    let mut canonical = block.clone();
    sort_keys(&mut canonical);
    println!("{canonical}");
}

fn sort_keys(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            let sorted: serde_json::Map<String, serde_json::Value> = {
                let mut entries: Vec<(String, serde_json::Value)> =
                    map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
                entries.sort_by(|a, b| a.0.cmp(&b.0));
                entries
                    .into_iter()
                    .map(|(k, mut v)| {
                        sort_keys(&mut v);
                        (k, v)
                    })
                    .collect()
            };
            *map = sorted;
        }
        serde_json::Value::Array(items) => {
            for item in items {
                sort_keys(item);
            }
        }
        _ => {}
    }
}
