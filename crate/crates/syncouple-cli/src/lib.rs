//! Command-line front end: synthesize coupling collections, verify them,
//! run closed-loop scenarios, and regenerate the bundled comparison runs.
//! Machine-readable outputs (JSON reports, CSV trajectories) land under
//! `--out`; stdout carries human-readable status only.
//!
//! Exit codes are a stable contract: 0 success, 1 a verification or
//! simulation outcome failed, 2 the inputs were unusable.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::fmt;
use std::path::{Path, PathBuf};
use syncouple::collection::{
    synthesize_free, synthesize_graph, verify_collection, SpectralCollection,
};
use syncouple::graphs::{
    complete_graph, cycle_graph, path_graph, random_connected_graph, star_graph,
};
use syncouple::lyapunov::{certify_identity, certify_positivity, IDENTITY_TOL};
use syncouple::matrixcore::{parse_matrix_text, SymMatrix};
use syncouple::report::CheckReport;

mod scenario;

pub use scenario::ScenarioConfig;

#[derive(Debug)]
pub enum CliError {
    /// Unusable input: bad flags, malformed files, infeasible parameters.
    Config(String),
    /// The pipeline ran but the outcome failed its checks.
    Failure(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Failure(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "syncouple",
    about = "Synthesize, certify, and simulate distributed coupling for networks of companion-form agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a coupling collection and verify it.
    Synth {
        /// Generator spec kind:nodes[:seed] with kind one of
        /// path|cycle|complete|star|random-connected.
        #[arg(long)]
        graph: Option<String>,
        /// Laplacian from a matrix text file ("dim N" header plus rows).
        #[arg(long)]
        graph_file: Option<PathBuf>,
        /// Free-spectrum mode: comma-separated top eigenvalues, one per
        /// nontrivial mode (implies N = count + 1).
        #[arg(long, value_delimiter = ',')]
        top_eigs: Option<Vec<f64>>,
        /// Chain order n (at least 2).
        #[arg(long)]
        order: usize,
        /// Safety margin in (0, 1) applied to every feasibility bound.
        #[arg(long, default_value_t = 0.9)]
        margin: f64,
        /// Scalar applied to the graph Laplacian before synthesis.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Re-verify a serialized collection: structural checks, the coupling
    /// identity, and the energy floors.
    Verify {
        /// Collection JSON produced by synth.
        #[arg(long)]
        collection: PathBuf,
        /// Optional graph the collection must structurally match.
        #[arg(long)]
        graph: Option<String>,
        #[arg(long)]
        graph_file: Option<PathBuf>,
        /// Gain used for the scaled-matrix certifications (at least 1).
        #[arg(long, default_value_t = 2.0)]
        gain: f64,
        /// Random disagreement vectors per sampled certification.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Directory for the merged report JSON (stdout only if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a closed-loop scenario from a preset or a config file.
    Simulate {
        /// Bundled scenario name; see `simulate --preset list`.
        #[arg(long)]
        preset: Option<String>,
        /// Scenario config JSON (schema below the README).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Keep every k-th sample in the CSVs (the last is always kept).
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Regenerate a bundled comparison: uncoupled baseline against coupled
    /// variants, with a comparative summary.
    Reproduce {
        /// One of: vanderpol, linosc.
        target: String,
        #[arg(long, default_value_t = 20)]
        stride: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Entry point behind the binary: parses, dispatches, and maps errors to
/// the exit-code contract.
pub fn run(args: &[String]) -> u8 {
    let mut argv = vec!["syncouple".to_string()];
    argv.extend_from_slice(args);
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth {
            graph,
            graph_file,
            top_eigs,
            order,
            margin,
            scale,
            out,
        } => cmd_synth(graph, graph_file, top_eigs, order, margin, scale, &out),
        Command::Verify {
            collection,
            graph,
            graph_file,
            gain,
            trials,
            seed,
            out,
        } => cmd_verify(&collection, graph, graph_file, gain, trials, seed, out.as_deref()),
        Command::Simulate {
            preset,
            config,
            stride,
            out,
        } => scenario::cmd_simulate(preset, config, stride, &out),
        Command::Reproduce { target, stride, out } => {
            scenario::cmd_reproduce(&target, stride, &out)
        }
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

/// Parse a generator spec of the form kind:nodes[:seed].
fn parse_graph_spec(spec: &str) -> Result<SymMatrix> {
    let parts: Vec<&str> = spec.split(':').collect();
    let usage = "graph spec is kind:nodes[:seed] with kind one of path|cycle|complete|star|random-connected";
    let nodes_of = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| CliError::Config(format!("bad node count {s:?}; {usage}")))
    };
    let need = |n: usize, min: usize, kind: &str| -> Result<()> {
        if n < min {
            Err(CliError::Config(format!("{kind} graph needs at least {min} nodes, got {n}")))
        } else {
            Ok(())
        }
    };
    match parts.as_slice() {
        [kind, n] => {
            let nodes = nodes_of(n)?;
            match *kind {
                "path" => need(nodes, 2, "path").map(|_| path_graph(nodes)),
                "cycle" => need(nodes, 3, "cycle").map(|_| cycle_graph(nodes)),
                "complete" => need(nodes, 2, "complete").map(|_| complete_graph(nodes)),
                "star" => need(nodes, 2, "star").map(|_| star_graph(nodes)),
                "random-connected" => {
                    need(nodes, 2, "random-connected").map(|_| random_connected_graph(nodes, 0))
                }
                other => Err(CliError::Config(format!("unknown graph kind {other:?}; {usage}"))),
            }
        }
        [kind, n, seed] => {
            if *kind != "random-connected" {
                return Err(CliError::Config(format!(
                    "only random-connected takes a seed; {usage}"
                )));
            }
            let nodes = nodes_of(n)?;
            let seed = seed
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("bad seed {seed:?}; {usage}")))?;
            need(nodes, 2, "random-connected").map(|_| random_connected_graph(nodes, seed))
        }
        _ => Err(CliError::Config(usage.to_string())),
    }
}

fn read_graph_file(path: &Path) -> Result<SymMatrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_matrix_text(&text)
        .map_err(|e| CliError::Config(format!("{} is not a matrix text file: {e}", path.display())))
}

/// Resolve the optional graph inputs shared by synth and verify: at most one
/// source may be present.
fn resolve_graph(spec: Option<String>, file: Option<PathBuf>) -> Result<Option<SymMatrix>> {
    match (spec, file) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "--graph and --graph-file are mutually exclusive".into(),
        )),
        (Some(spec), None) => parse_graph_spec(&spec).map(Some),
        (None, Some(path)) => read_graph_file(&path).map(Some),
        (None, None) => Ok(None),
    }
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))
}

fn write_out(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Failure(format!("serialization failed: {e}")))
}

fn print_report(report: &CheckReport) {
    for check in &report.checks {
        let cmp = if check.sense == "ge" { ">=" } else { "<=" };
        println!(
            "  {:<52} {:>13.6e} {cmp} {:>10.3e}  {}",
            check.name,
            check.value,
            check.threshold,
            if check.pass { "pass" } else { "FAIL" }
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    graph: Option<String>,
    graph_file: Option<PathBuf>,
    top_eigs: Option<Vec<f64>>,
    order: usize,
    margin: f64,
    scale: f64,
    out: &Path,
) -> Result<()> {
    if order < 2 {
        return Err(CliError::Config(format!(
            "order must be at least 2, got {order}: a chain of coupled derivatives needs at least a position and a velocity"
        )));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(CliError::Config(format!(
            "margin must lie strictly inside (0, 1), got {margin}"
        )));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(CliError::Config(format!("scale must be positive, got {scale}")));
    }

    let base_graph = resolve_graph(graph, graph_file)?;
    if base_graph.is_some() && top_eigs.is_some() {
        return Err(CliError::Config(
            "give either a graph source or --top-eigs, not both".into(),
        ));
    }

    let (collection, pattern) = match (base_graph, top_eigs) {
        (Some(g), None) => {
            let scaled = g.scale(scale);
            let (c, schedule) = synthesize_graph(&scaled, order, margin)
                .map_err(|e| CliError::Config(format!("synthesis failed: {e}")))?;
            println!(
                "graph mode: N = {}, n = {order}, per-step ratios {:?}",
                c.agents(),
                schedule.rho_bar
            );
            (c, Some(g))
        }
        (None, Some(eigs)) => {
            let agents = eigs.len() + 1;
            let c = synthesize_free(agents, order, &eigs, None, margin)
                .map_err(|e| CliError::Config(format!("synthesis failed: {e}")))?;
            println!("free mode: N = {agents}, n = {order}");
            (c, None)
        }
        (None, None) => {
            return Err(CliError::Config(
                "need a graph (--graph or --graph-file) or --top-eigs".into(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("rejected above"),
    };

    let report = verify_collection(&collection, pattern.as_ref());
    ensure_out_dir(out)?;
    write_out(&out.join("collection.json"), &to_pretty_json(&collection)?)?;
    write_out(&out.join("verify-report.json"), &to_pretty_json(&report)?)?;
    print_report(&report);
    if report.pass {
        println!("synth: all {} checks pass", report.checks.len());
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::Failure(format!(
            "synthesized collection failed verification: {}",
            failed.join(", ")
        )))
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    collection_path: &Path,
    graph: Option<String>,
    graph_file: Option<PathBuf>,
    gain: f64,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<()> {
    let text = std::fs::read_to_string(collection_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", collection_path.display())))?;
    let collection: SpectralCollection = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!(
            "{} is not a valid collection document: {e}",
            collection_path.display()
        ))
    })?;
    let pattern = resolve_graph(graph, graph_file)?;

    let structure = verify_collection(&collection, pattern.as_ref());
    println!("structural checks:");
    print_report(&structure);

    let residual = certify_identity(&collection, gain, trials, seed)
        .map_err(|e| CliError::Config(format!("identity certification unavailable: {e}")))?;
    let identity_pass = residual <= IDENTITY_TOL;
    println!(
        "coupling identity: worst relative residual {residual:.3e} <= {IDENTITY_TOL:.0e}  {}",
        if identity_pass { "pass" } else { "FAIL" }
    );

    let certification = certify_positivity(&collection, gain, trials, seed)
        .map_err(|e| CliError::Config(format!("positivity certification unavailable: {e}")))?;
    println!("energy matrix checks (gain {gain}):");
    print_report(&certification);

    let pass = structure.pass && identity_pass && certification.pass;
    if let Some(dir) = out {
        ensure_out_dir(dir)?;
        let merged = serde_json::json!({
            "schema_version": "1",
            "collection": collection_path.display().to_string(),
            "gain": gain,
            "trials": trials,
            "seed": seed,
            "structure": structure,
            "identity": { "residual": residual, "threshold": IDENTITY_TOL, "pass": identity_pass },
            "certification": certification,
            "pass": pass,
        });
        write_out(&dir.join("verify-report.json"), &to_pretty_json(&merged)?)?;
    }
    if pass {
        println!("verify: PASS");
        Ok(())
    } else {
        Err(CliError::Failure("verification failed".into()))
    }
}
