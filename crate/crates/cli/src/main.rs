use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use qecsdp::channel::{bit_flip_channel, compose, KrausChannel, TransferMatrix};
use qecsdp::code::{kl_check, perfect_recovery_gram, s_matrix_weighted, CodeSpace};
use qecsdp::io::{channel_from_json, code_from_json, result_from_json, result_to_json};
use qecsdp::numkernel::C64;
use qecsdp::sdp::{eliminate_equalities, SolverOptions};
use qecsdp::synth::{
    assemble_alternative, assemble_standard, certify, synthesize, Certificate, Formulation, SynthesisOptions,
    SynthesisResult, CERTIFICATE_TOL,
};
use qecsdp::verify::{relaxed_worst, reproduce_report, worst_fidelity, write_fidelity_sweep, Grid, ReproduceOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_CERTIFICATE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "qecsdp", version, about = "Recovery-channel synthesis for fixed codes via semidefinite programming")]
struct Cli {
    /// Print solver iterations and progress to stderr.
    #[arg(long, global = true)]
    log: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    /// `bitflip` or a path to a channel JSON file.
    #[arg(long, default_value = "bitflip")]
    channel: String,
    /// Flip probability for the builtin channel.
    #[arg(long, value_parser = parse_probability)]
    p: Option<f64>,
    /// Qubit count for the builtin channel and code.
    #[arg(long, default_value_t = 2)]
    qubits: usize,
    /// `repetition` or a path to a code JSON file.
    #[arg(long, default_value = "repetition")]
    code: String,
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    /// Search grid `THETAxPHI` for two-word codes.
    #[arg(long, default_value = "721x720", value_parser = parse_grid)]
    grid: (usize, usize),
    /// Random starts for codes with more than two words.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Seed for random starts and the S search.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GridArgs {
    fn grid(&self) -> Grid {
        Grid { theta: self.grid.0, phi: self.grid.1, samples: self.samples, seed: self.seed }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the recovery SDP and write the result JSON.
    Synthesize {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value = "standard")]
        formulation: Formulation,
        /// Relative duality-gap target.
        #[arg(long, default_value_t = 1e-7)]
        gap_tol: f64,
        /// Result JSON destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the equality-reduced SDP in SDPA sparse format.
        #[arg(long)]
        sdpa_export: Option<PathBuf>,
        /// Comma-separated nonnegative weights for `S = -(I-P) diag(w) (I-P)`.
        #[arg(long, value_delimiter = ',', conflicts_with = "s_search")]
        s_weights: Option<Vec<f64>>,
        /// Try this many random weight vectors besides the default S and keep the best certified one.
        #[arg(long)]
        s_search: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Audit a channel, or a recovery cascaded with it, by brute-force fidelity search.
    Verify {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Result JSON from `synthesize`; the bare channel is audited when absent.
        #[arg(long)]
        result: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        /// Write the fidelity over the grid as CSV (two-word codes).
        #[arg(long)]
        sweep: Option<PathBuf>,
        /// Report JSON destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test the Knill-Laflamme conditions and the perfect-recovery Gram matrix.
    Klcheck {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun the bit-flip case studies against their reference values.
    Reproduce {
        /// Include the three-qubit syntheses.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 1e-7)]
        gap_tol: f64,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is outside [0, 1]"))
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (t, p) = s.split_once('x').ok_or_else(|| format!("expected THETAxPHI, got {s:?}"))?;
    let t: usize = t.trim().parse().map_err(|e| format!("theta: {e}"))?;
    let p: usize = p.trim().parse().map_err(|e| format!("phi: {e}"))?;
    if t < 2 || p < 1 {
        return Err("grid needs theta >= 2 and phi >= 1".into());
    }
    Ok((t, p))
}

type BoxError = Box<dyn std::error::Error>;

struct Problem {
    channel: KrausChannel,
    code: CodeSpace,
}

impl ProblemArgs {
    fn load(&self) -> Result<Problem, BoxError> {
        let channel = match self.channel.as_str() {
            "bitflip" => {
                let p = self.p.ok_or("--p is required for the bitflip channel")?;
                bit_flip_channel(p, self.qubits)?
            }
            path => channel_from_json(&read(path)?).map_err(|e| format!("{path}: {e}"))?.kraus()?,
        };
        let code = match self.code.as_str() {
            "repetition" => {
                if !(2..=3).contains(&self.qubits) {
                    return Err(format!("repetition code needs 2 or 3 qubits, got {}", self.qubits).into());
                }
                CodeSpace::repetition(self.qubits)?
            }
            path => code_from_json(&read(path)?).map_err(|e| format!("{path}: {e}"))?,
        };
        if channel.dim() != code.ambient_dim() {
            return Err(format!("channel acts on dim {} but code lives in dim {}", channel.dim(), code.ambient_dim()).into());
        }
        Ok(Problem { channel, code })
    }
}

fn read(path: impl AsRef<Path>) -> Result<String, BoxError> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write(path: &Path, text: &str) -> Result<(), BoxError> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

/// Writes `json` to `out` or stdout, and the summary to whichever stream is left free.
fn emit(out: Option<&Path>, json: &str, summary: &str) -> Result<(), BoxError> {
    match out {
        Some(path) => {
            write(path, &format!("{json}\n"))?;
            print!("{summary}");
        }
        None => {
            println!("{json}");
            eprint!("{summary}");
        }
    }
    std::io::stdout().flush()?;
    Ok(())
}

fn table(rows: &[(&str, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn certificate_rows(c: &Certificate) -> Vec<(&'static str, String)> {
    vec![
        ("lmi min eigenvalue", format!("{:.3e}", c.lmi_min_eigenvalue)),
        ("compression min", format!("{:.9}", c.compression_min)),
        ("compression margin", format!("{:.3e}", c.compression_margin)),
        ("tp residual", format!("{:.3e}", c.tp_residual)),
        ("cp min eigenvalue", format!("{:.3e}", c.cp_min_eigenvalue)),
        ("certificate", if c.valid { "valid".into() } else { "FAILED".into() }),
    ]
}

fn random_weights(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(0.1..2.0)).collect()
}

#[allow(clippy::too_many_arguments)]
fn run_synthesize(
    problem: &ProblemArgs,
    formulation: Formulation,
    gap_tol: f64,
    out: Option<&Path>,
    sdpa_export: Option<&Path>,
    s_weights: Option<&[f64]>,
    s_search: Option<usize>,
    seed: u64,
) -> Result<bool, BoxError> {
    let Problem { channel, code } = problem.load()?;
    let transfer = channel.transfer();
    let solver = SolverOptions { gap_tol, ..SolverOptions::default() };
    let multiplier = s_weights.map(|w| s_matrix_weighted(&code, w)).transpose()?;
    let base = SynthesisOptions { solver, multiplier };

    if let Some(path) = sdpa_export {
        let s = base.multiplier.clone().unwrap_or_else(|| qecsdp::code::s_matrix(&code));
        let full = match formulation {
            Formulation::Standard => assemble_standard(&transfer, &code, &s)?,
            Formulation::Alternative => assemble_alternative(&channel, &code, &s)?,
        };
        let (reduced, _) = eliminate_equalities(&full)?;
        let mut buf = Vec::new();
        reduced.write_sdpa(&mut buf)?;
        fs::write(path, buf).map_err(|e| format!("{}: {e}", path.display()))?;
    }

    let mut best = solve_certified(&channel, &transfer, &code, formulation, &base)?;
    if let Some(trials) = s_search {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n2 = code.ambient_dim() * code.ambient_dim();
        for trial in 0..trials {
            let w = random_weights(&mut rng, n2);
            let opts = SynthesisOptions { multiplier: Some(s_matrix_weighted(&code, &w)?), ..base.clone() };
            let cand = solve_certified(&channel, &transfer, &code, formulation, &opts)?;
            info!("S trial {trial}: epsilon {:.9}, certificate {}", cand.0.epsilon, cand.1.valid);
            if cand.1.valid && (!best.1.valid || cand.0.epsilon < best.0.epsilon) {
                best = cand;
            }
        }
    }
    let (result, cert) = best;

    let mut rows = vec![
        ("formulation", result.formulation.to_string()),
        ("epsilon", format!("{:.9}", result.epsilon)),
        ("guaranteed fidelity", format!("{:.9}", result.guaranteed_fidelity)),
        ("tau", format!("{:.6e}", result.tau)),
        ("solver", format!("{:?} after {} iterations, gap {:.2e}", result.solver.status, result.solver.iterations, result.solver.gap)),
    ];
    rows.extend(certificate_rows(&cert));
    emit(out, &result_to_json(&result)?, &table(&rows))?;
    Ok(cert.valid)
}

fn solve_certified(
    channel: &KrausChannel,
    transfer: &TransferMatrix,
    code: &CodeSpace,
    formulation: Formulation,
    opts: &SynthesisOptions,
) -> Result<(SynthesisResult, Certificate), BoxError> {
    let result = synthesize(channel, code, formulation, opts)?;
    let cert = certify(&result, transfer, code)?;
    Ok((result, cert))
}

#[derive(Serialize)]
struct VerifyReport {
    min_fidelity: f64,
    argmin_state: Vec<C64>,
    grid: String,
    refined: bool,
    relaxed_min: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound_holds: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate: Option<Certificate>,
}

fn run_verify(
    problem: &ProblemArgs,
    result: Option<&Path>,
    grid: &GridArgs,
    sweep: Option<&Path>,
    out: Option<&Path>,
) -> Result<bool, BoxError> {
    let Problem { channel, code } = problem.load()?;
    let transfer = channel.transfer();
    let synthesis = result
        .map(|path| -> Result<SynthesisResult, BoxError> {
            Ok(result_from_json(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?)
        })
        .transpose()?;
    let audited = match &synthesis {
        Some(r) => compose(&r.recovery, &transfer)?,
        None => transfer.clone(),
    };

    if let Some(path) = sweep {
        let file = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        write_fidelity_sweep(std::io::BufWriter::new(file), &audited, &code, grid.grid.0, grid.grid.1)?;
    }

    let found = worst_fidelity(&audited, &code, &grid.grid())?;
    let relaxed_min = relaxed_worst(&audited, &code)?;
    let certificate = synthesis.as_ref().map(|r| certify(r, &transfer, &code)).transpose()?;
    let epsilon = synthesis.as_ref().map(|r| r.epsilon);
    let bound_holds = epsilon.map(|eps| found.min_fidelity >= 1.0 - eps - CERTIFICATE_TOL);

    let mut rows = vec![
        ("min fidelity", format!("{:.9}", found.min_fidelity)),
        ("relaxed min", format!("{:.9}", relaxed_min)),
        ("grid", found.grid.clone()),
    ];
    if let (Some(eps), Some(holds)) = (epsilon, bound_holds) {
        rows.push(("bound 1 - epsilon", format!("{:.9}", 1.0 - eps)));
        rows.push(("bound holds", holds.to_string()));
    }
    if let Some(c) = &certificate {
        rows.extend(certificate_rows(c));
    }
    let ok = bound_holds.unwrap_or(true) && certificate.as_ref().is_none_or(|c| c.valid);
    let report = VerifyReport {
        min_fidelity: found.min_fidelity,
        argmin_state: found.argmin_state,
        grid: found.grid,
        refined: found.refined,
        relaxed_min,
        epsilon,
        bound_holds,
        certificate,
    };
    emit(out, &serde_json::to_string_pretty(&report)?, &table(&rows))?;
    Ok(ok)
}

#[derive(Serialize)]
struct KlOutput {
    satisfied: bool,
    max_violation: f64,
    gram: Vec<Vec<f64>>,
    gram_passes: bool,
}

fn run_klcheck(problem: &ProblemArgs, out: Option<&Path>) -> Result<bool, BoxError> {
    let Problem { channel, code } = problem.load()?;
    let kl = kl_check(&channel, &code)?;
    let gram = perfect_recovery_gram(&channel.transfer(), &code)?;
    let rows: Vec<Vec<f64>> =
        (0..gram.gram.nrows()).map(|i| (0..gram.gram.ncols()).map(|j| gram.gram[(i, j)]).collect()).collect();

    let mut summary = format!(
        "{}\nmax violation  {:.3e}\ngram matrix ({}):\n",
        if kl.satisfied { "perfectly correctable" } else { "not perfectly correctable" },
        kl.max_violation,
        if gram.passes { "passes" } else { "fails" },
    );
    for row in &rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:>10.6}")).collect();
        summary.push_str(&format!("  {}\n", cells.join(" ")));
    }
    let off = (0..rows.len())
        .flat_map(|i| (0..rows.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| rows[i][j].abs())
        .fold(0.0, f64::max);
    summary.push_str(&format!("gram off-diagonal  {off:.6}\n"));

    let output = KlOutput { satisfied: kl.satisfied, max_violation: kl.max_violation, gram: rows, gram_passes: gram.passes };
    emit(out, &serde_json::to_string_pretty(&output)?, &summary)?;
    Ok(true)
}

fn run_reproduce(all: bool, gap_tol: f64, grid: &GridArgs, out: Option<&Path>) -> Result<bool, BoxError> {
    let opts = ReproduceOptions {
        three_qubit: all,
        synthesis: SynthesisOptions { solver: SolverOptions { gap_tol, ..SolverOptions::default() }, multiplier: None },
        grid: grid.grid(),
    };
    let report = reproduce_report(&opts)?;
    let table = report.to_table();
    match out {
        Some(path) => {
            write(path, &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
            print!("{table}");
        }
        None => print!("{table}"),
    }
    Ok(report.all_pass())
}

fn run(cli: Cli) -> Result<bool, BoxError> {
    match cli.command {
        Command::Synthesize { problem, formulation, gap_tol, out, sdpa_export, s_weights, s_search, seed } => {
            run_synthesize(
                &problem,
                formulation,
                gap_tol,
                out.as_deref(),
                sdpa_export.as_deref(),
                s_weights.as_deref(),
                s_search,
                seed,
            )
        }
        Command::Verify { problem, result, grid, sweep, out } => {
            run_verify(&problem, result.as_deref(), &grid, sweep.as_deref(), out.as_deref())
        }
        Command::Klcheck { problem, out } => run_klcheck(&problem, out.as_deref()),
        Command::Reproduce { all, gap_tol, grid, out } => run_reproduce(all, gap_tol, &grid, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = if cli.log { log::LevelFilter::Debug } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(log::LevelFilter::Warn).filter_module("qecsdp", level).init();

    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CERTIFICATE),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
