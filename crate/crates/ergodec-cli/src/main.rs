//! Command-line driver for the `ergodec` library.
//!
//! Every subcommand reads JSON files, runs one library operation, and
//! emits a canonical JSON report (sorted keys, shortest round-trip float
//! encoding) so identical inputs always produce identical bytes.
//!
//! Exit codes: `0` success, `1` mathematical failure or hypothesis
//! violation, `2` malformed input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::Value;

use ergodec::decomposition::{
    ergodic_decompose, match_decompositions, validate_disintegration, NuMode,
};
use ergodec::intertwine::{assemble_intertwiner, check_intertwine, decompose_intertwiner};
use ergodec::json;
use ergodec::orderiso::OrderIso;
use ergodec::{validate_dirichlet, Error, StateSpace};

#[derive(Parser)]
#[command(
    name = "ergodec",
    version,
    about = "Ergodic decompositions of Dirichlet forms on finite weighted state spaces",
    long_about = "Validates Dirichlet forms, decomposes them into irreducible components, \
factorizes order isomorphisms into scale and point maps, checks semigroup intertwining, \
and transports decompositions along unitary intertwiners.\n\n\
Exit codes: 0 success, 1 mathematical failure or hypothesis violation, 2 malformed input."
)]
struct Cli {
    /// Tolerance for identity checks.
    #[arg(
        long,
        global = true,
        env = "ERGODEC_TOL",
        default_value_t = ergodec::DEFAULT_TOL,
        value_name = "TOL"
    )]
    tol: f64,

    /// Comma-separated times at which semigroups are sampled.
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        default_values_t = ergodec::DEFAULT_TIMES,
        value_name = "T1,T2,..."
    )]
    times: Vec<f64>,

    /// Pretty-print the JSON report.
    #[arg(long, global = true)]
    pretty: bool,

    /// Write the report to a file instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

fn parse_nu_mode(s: &str) -> Result<NuMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Check that a form file encodes a valid Dirichlet form.
    Validate {
        /// Form JSON: {"space": ..., "matrix": ...} or {"space": ..., "edges": ...}.
        form: PathBuf,
    },
    /// Decompose a valid form into its irreducible components.
    Decompose {
        /// Form JSON.
        form: PathBuf,
        /// Component weighting convention.
        #[arg(long, value_parser = parse_nu_mode, default_value = "uniform")]
        nu_mode: NuMode,
    },
    /// Factorize a nonnegative matrix as a scaled point map h·(f∘τ).
    Factorize {
        /// Isomorphism JSON: {"matrix": [[...]]} (or already-factored {"h", "tau"}).
        iso: PathBuf,
        /// Space JSON for the source of the point functions.
        #[arg(long)]
        domain: PathBuf,
        /// Space JSON for the target of the point functions.
        #[arg(long)]
        codomain: PathBuf,
    },
    /// Compute the adjoint of an order isomorphism with respect to the
    /// weighted inner products.
    Adjoint {
        /// Isomorphism JSON mapping functions on the domain to functions
        /// on the codomain.
        iso: PathBuf,
        /// Space JSON for the isomorphism's source.
        #[arg(long)]
        domain: PathBuf,
        /// Space JSON for the isomorphism's target.
        #[arg(long)]
        codomain: PathBuf,
    },
    /// Check that an isomorphism intertwines the semigroups of two forms.
    Intertwine {
        /// Source form JSON.
        #[arg(long)]
        form1: PathBuf,
        /// Target form JSON.
        #[arg(long)]
        form2: PathBuf,
        /// Isomorphism JSON from the first form's space to the second's.
        #[arg(long)]
        iso: PathBuf,
    },
    /// Transport the source form's ergodic decomposition along a unitary
    /// intertwining isomorphism.
    DecomposeIntertwiner {
        /// Source form JSON.
        #[arg(long)]
        form1: PathBuf,
        /// Target form JSON.
        #[arg(long)]
        form2: PathBuf,
        /// Isomorphism JSON from the first form's space to the second's.
        #[arg(long)]
        iso: PathBuf,
        /// Component weighting convention for the source decomposition.
        #[arg(long, value_parser = parse_nu_mode, default_value = "uniform")]
        nu_mode: NuMode,
    },
    /// Match two decompositions of the same form: recover the component
    /// relabeling and the positive scaling between them.
    Match {
        /// First decomposition JSON.
        #[arg(long)]
        dec1: PathBuf,
        /// Second decomposition JSON.
        #[arg(long)]
        dec2: PathBuf,
    },
    /// Assemble per-component isomorphisms into one global isomorphism
    /// along two decompositions.
    Assemble {
        /// Blocks JSON: {"blocks": [iso, ...]} or the output of
        /// decompose-intertwiner (its "U" fields are used).
        blocks: PathBuf,
        /// Source decomposition JSON.
        #[arg(long)]
        dec1: PathBuf,
        /// Target decomposition JSON.
        #[arg(long)]
        dec2: PathBuf,
    },
}

/// A report to print plus the verdict it carries. Failed checks still
/// print their report before exiting nonzero.
struct Outcome {
    report: Value,
    failure: Option<String>,
}

impl Outcome {
    fn pass(report: Value) -> Self {
        Outcome { report, failure: None }
    }

    fn new(report: Value, failure: Option<String>) -> Self {
        Outcome { report, failure }
    }
}

fn read_json(path: &Path) -> Result<Value, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    json::parse_value(&text)
}

fn read_space(path: &Path) -> Result<Arc<StateSpace>, Error> {
    json::parse_space(&read_json(path)?)
}

fn read_form(path: &Path) -> Result<ergodec::DirichletForm, Error> {
    json::parse_form(&read_json(path)?)
}

fn read_iso(
    path: &Path,
    domain: &Arc<StateSpace>,
    codomain: &Arc<StateSpace>,
) -> Result<OrderIso, Error> {
    json::parse_iso(&read_json(path)?, domain, codomain)
}

/// Extracts the per-component isomorphisms from a blocks file. Accepts
/// `{"blocks": [...]}` as well as the decompose-intertwiner report shape
/// `{"components": [{"U": ...}, ...]}`. Block `z` acts on source component
/// `z`; its target component is recognized by the ids its scale map names.
fn read_blocks(
    path: &Path,
    dec1: &ergodec::decomposition::ErgodicDecomposition,
    dec2: &ergodec::decomposition::ErgodicDecomposition,
) -> Result<Vec<OrderIso>, Error> {
    let v = read_json(path)?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse("a blocks file must be a JSON object".into()))?;
    let raw: Vec<Value> = if let Some(list) = obj.get("blocks") {
        list.as_array()
            .ok_or_else(|| Error::Parse("\"blocks\" must be an array".into()))?
            .clone()
    } else if let Some(list) = obj.get("components") {
        let list = list
            .as_array()
            .ok_or_else(|| Error::Parse("\"components\" must be an array".into()))?;
        list.iter()
            .map(|c| {
                c.get("U").cloned().ok_or_else(|| {
                    Error::Parse("every component needs a \"U\" isomorphism".into())
                })
            })
            .collect::<Result<_, _>>()?
    } else {
        return Err(Error::Parse(
            "a blocks file needs a \"blocks\" or \"components\" array".into(),
        ));
    };
    if raw.len() != dec1.len() {
        return Err(Error::Input(format!(
            "{} blocks for {} source components",
            raw.len(),
            dec1.len()
        )));
    }
    let mut blocks = Vec::with_capacity(raw.len());
    for (z, bv) in raw.iter().enumerate() {
        let keys: Option<Vec<&str>> = bv
            .as_object()
            .and_then(|o| o.get("h"))
            .and_then(|h| h.as_object())
            .map(|h| h.keys().map(String::as_str).collect());
        let keys = keys.ok_or_else(|| {
            Error::Parse(format!(
                "block {z} must use the maps encoding ({{\"h\", \"tau\"}}) so its target \
                 component can be recognized"
            ))
        })?;
        let mut keys = keys;
        keys.sort_unstable();
        let codomain = dec2
            .components()
            .iter()
            .map(|c| c.space())
            .find(|s| {
                let mut ids: Vec<&str> = s.ids().iter().map(String::as_str).collect();
                ids.sort_unstable();
                ids == keys
            })
            .ok_or_else(|| {
                Error::Input(format!(
                    "block {z}: no target component carries the points its scale map names"
                ))
            })?;
        blocks.push(json::parse_iso(
            bv,
            dec1.component(z).space(),
            &Arc::clone(codomain),
        )?);
    }
    Ok(blocks)
}

fn check_times(times: &[f64]) -> Result<(), Error> {
    if times.is_empty() {
        return Err(Error::Domain("at least one sampling time is required".into()));
    }
    for &t in times {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::Domain(format!(
                "sampling times must be finite and positive, got {t}"
            )));
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    if !cli.tol.is_finite() || cli.tol <= 0.0 {
        return Err(Error::Domain(format!(
            "tolerance must be finite and positive, got {}",
            cli.tol
        )));
    }
    check_times(&cli.times)?;

    match &cli.command {
        Command::Validate { form } => {
            let form = read_form(form)?;
            let diag = validate_dirichlet(&form, cli.tol)?;
            let failure = match diag.clone().into_result() {
                Ok(()) => None,
                Err(e) => Some(e.to_string()),
            };
            Ok(Outcome::new(json::diagnostics_to_value(&diag), failure))
        }
        Command::Decompose { form, nu_mode } => {
            let form = read_form(form)?;
            let dec = ergodic_decompose(&form, *nu_mode, cli.tol)?;
            validate_disintegration(&dec, cli.tol)?.into_result()?;
            Ok(Outcome::pass(json::decomposition_to_value(&dec)))
        }
        Command::Factorize { iso, domain, codomain } => {
            let domain = read_space(domain)?;
            let codomain = read_space(codomain)?;
            let iso = read_iso(iso, &domain, &codomain)?;
            Ok(Outcome::pass(json::iso_to_value(&iso)))
        }
        Command::Adjoint { iso, domain, codomain } => {
            let domain = read_space(domain)?;
            let codomain = read_space(codomain)?;
            let iso = read_iso(iso, &domain, &codomain)?;
            Ok(Outcome::pass(json::iso_to_value(&iso.adjoint())))
        }
        Command::Intertwine { form1, form2, iso } => {
            let form1 = read_form(form1)?;
            let form2 = read_form(form2)?;
            let iso = read_iso(iso, form1.space(), form2.space())?;
            let report = check_intertwine(&form1, &form2, &iso, &cli.times, cli.tol)?;
            let failure = if report.pass {
                None
            } else {
                let worst = report
                    .semigroup_defects
                    .iter()
                    .fold(report.generator_defect, |acc, &(_, d)| acc.max(d));
                Some(format!(
                    "the isomorphism does not intertwine the two semigroups \
                     (worst commutation defect {worst:.3e} at tolerance {:.3e})",
                    report.tol
                ))
            };
            Ok(Outcome::new(json::intertwine_report_to_value(&report), failure))
        }
        Command::DecomposeIntertwiner { form1, form2, iso, nu_mode } => {
            let form1 = read_form(form1)?;
            let form2 = read_form(form2)?;
            let iso = read_iso(iso, form1.space(), form2.space())?;
            let dec1 = ergodic_decompose(&form1, *nu_mode, cli.tol)?;
            let di = decompose_intertwiner(&dec1, &form2, &iso, &cli.times, cli.tol)?;
            Ok(Outcome::pass(json::decomposed_intertwiner_to_value(&di)))
        }
        Command::Match { dec1, dec2 } => {
            let dec1 = json::parse_decomposition(&read_json(dec1)?, None)?;
            let order: Vec<String> = dec1.space().ids().to_vec();
            let dec2 = json::parse_decomposition(&read_json(dec2)?, Some(&order))?;
            let m = match_decompositions(&dec1, &dec2, cli.tol)?;
            Ok(Outcome::pass(json::match_to_value(&m)))
        }
        Command::Assemble { blocks, dec1, dec2 } => {
            let dec1 = json::parse_decomposition(&read_json(dec1)?, None)?;
            let dec2 = json::parse_decomposition(&read_json(dec2)?, None)?;
            let blocks = read_blocks(blocks, &dec1, &dec2)?;
            let iso = assemble_intertwiner(&blocks, &dec1, &dec2)?;
            Ok(Outcome::pass(json::iso_to_value(&iso)))
        }
    }
}

fn emit(cli: &Cli, report: &Value) -> Result<(), Error> {
    let mut text = json::to_canonical_string(report, cli.pretty);
    text.push('\n');
    match &cli.out {
        Some(path) => std::fs::write(path, &text)
            .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if let Err(e) = emit(&cli, &outcome.report) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            match outcome.failure {
                None => ExitCode::SUCCESS,
                Some(msg) => {
                    eprintln!("error: {msg}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 1 })
        }
    }
}
