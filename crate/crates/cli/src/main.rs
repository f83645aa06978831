//! Command-line front end: validate, convert, compute probabilities,
//! simulate the preparation circuits, and run the randomized theorem checks.
//!
//! Machine-readable JSON goes to standard output (or `--out`); a short
//! human summary goes to standard error. Exit codes: 0 success/pass,
//! 1 verification failure (the report is still emitted), 2 input or usage
//! error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::RngCore;

use procmat::channels::{sample_instrument, InstrumentDoc};
use procmat::process::{prob_w, random_valid_w, validate_w, ProcessMatrix};
use procmat::report::{ReportDoc, RunManifest};
use procmat::sim::{conditional_stats, sample_shots, PreparationProtocol};
use procmat::tensor::{LabeledTensor, System};
use procmat::twotime::{
    eta_to_w, is_linear, prob_eta, validate_eta_conditions, w_to_eta, PureTwoTimeState,
    TwoTimeDensityVector,
};
use procmat::verify::{run_theorem_eta, run_theorem_w, TheoremCheckConfig, TheoremRun};

#[derive(Parser)]
#[command(
    name = "procmat",
    version,
    about = "Process matrices and two-time quantum states: validation, conversion, probabilities, simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a process matrix against the five validity conditions.
    ValidateW {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a two-time density vector against the translated conditions
    /// and a sampled linearity witness.
    ValidateEta {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a process matrix to its two-time density vector.
    W2eta {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a two-time density vector back to a process matrix.
    Eta2w {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Joint outcome probabilities from a process matrix (trace rule) or a
    /// density vector (bullet rule).
    Prob {
        #[arg(long, conflicts_with = "eta")]
        w: Option<PathBuf>,
        #[arg(long)]
        eta: Option<PathBuf>,
        #[arg(long)]
        alice: PathBuf,
        #[arg(long)]
        bob: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact simulation of the preparation circuits, optionally with shot
    /// sampling.
    Simulate {
        #[arg(long)]
        protocol: Protocol,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        alice: PathBuf,
        #[arg(long)]
        bob: Option<PathBuf>,
        #[arg(long)]
        shots: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized check of the generalized channel identities on a process
    /// matrix or density vector file.
    CheckTheorem {
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate input files.
    Gen {
        #[command(subcommand)]
        target: GenTarget,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    /// Pure single-party preparation (entangled ancilla, maximally
    /// entangled post-selection).
    Fig1,
    /// Mixed bipartite preparation (large ancilla, product post-selection).
    Fig3,
}

#[derive(Subcommand)]
enum GenTarget {
    /// Random valid process matrix.
    W {
        #[arg(long, value_delimiter = ',', default_value = "2,2,2,2")]
        dims: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random CPTP instrument (dims are input,output).
    Instrument {
        #[arg(long, value_delimiter = ',', default_value = "2,2")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        outcomes: usize,
        #[arg(long, default_value_t = 1)]
        kraus: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// What a subcommand hands back to the emitter.
enum Output {
    /// A report document; exit 1 unless it passes.
    Report(Box<ReportDoc>),
    /// A converted/generated object file; always exit 0.
    Object { json: String, summary: String },
}

enum Failure {
    /// Input or usage problem → exit 2.
    Usage(String),
    /// Verification-level failure with no report to show → exit 1.
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (out_path, result) = execute(cli.command);
    match result {
        Ok(Output::Report(doc)) => {
            let mut doc = *doc;
            let mut ok = doc.pass();
            if !doc.all_finite() {
                doc.notes.push(
                    "NumericalFailure: a non-finite number appeared in the report".to_string(),
                );
                ok = false;
            }
            if emit(&doc.to_json(), out_path.as_deref()).is_err() {
                return ExitCode::from(2);
            }
            summarize(&doc);
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Ok(Output::Object { json, summary }) => {
            if emit(&json, out_path.as_deref()).is_err() {
                return ExitCode::from(2);
            }
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn emit(payload: &str, out: Option<&Path>) -> Result<(), ()> {
    match out {
        Some(path) => std::fs::write(path, payload).map_err(|e| {
            eprintln!("error: cannot write {}: {e}", path.display());
        }),
        None => {
            println!("{payload}");
            Ok(())
        }
    }
}

fn summarize(doc: &ReportDoc) {
    for check in &doc.checks {
        eprintln!(
            "{} {:<32} residual {:>12.4e}  (tol {:.1e})",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.residual,
            check.tol
        );
    }
    for table in &doc.tables {
        if table.values.len() <= 8 {
            eprintln!("{}: {:?}", table.name, table.values);
        } else {
            eprintln!("{}: {:?} values (shape {:?})", table.name, table.values.len(), table.shape);
        }
    }
    for note in &doc.notes {
        eprintln!("note: {note}");
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (n, l) in text.lines().enumerate() {
        if n + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

fn parse_failure(path: &Path, text: &str, err: &serde_json::Error) -> Failure {
    Failure::Usage(format!(
        "parse error in {} at byte {}: {err}",
        path.display(),
        byte_offset(text, err.line(), err.column())
    ))
}

fn load_w(path: &Path) -> Result<ProcessMatrix, Failure> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_failure(path, &text, &e))
}

fn load_tensor(path: &Path) -> Result<LabeledTensor, Failure> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_failure(path, &text, &e))
}

fn load_eta(path: &Path) -> Result<TwoTimeDensityVector, Failure> {
    let tensor = load_tensor(path)?;
    TwoTimeDensityVector::new(tensor)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_bipartite_eta(path: &Path) -> Result<TwoTimeDensityVector, Failure> {
    let eta = load_eta(path)?;
    if !eta.is_bipartite() {
        return Err(Failure::Usage(format!(
            "{}: needs the bipartite slot set (A1/A2 and B1/B2 pairs)",
            path.display()
        )));
    }
    Ok(eta)
}

fn load_instrument(path: &Path, input: System, output: System) -> Result<procmat::channels::Instrument, Failure> {
    let text = read_text(path)?;
    let doc: InstrumentDoc =
        serde_json::from_str(&text).map_err(|e| parse_failure(path, &text, &e))?;
    doc.bind(input, output)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

/// Classifies library errors: malformed or incompatible inputs are usage
/// errors, physics-level failures are runtime failures.
fn core_failure(err: procmat::Error) -> Failure {
    use procmat::Error::*;
    match err {
        Parse(_) | DimensionMismatch { .. } | DuplicateSlot(_) | MissingSlots { .. }
        | IndexOutOfRange { .. } | EmptySubset | NotCptp { .. } => Failure::Usage(err.to_string()),
        ForbiddenPostselection { .. } | NonNormalized { .. } | SamplerExhausted { .. }
        | EpsilonNotFound { .. } => Failure::Runtime(err.to_string()),
    }
}

/// Resolves the run seed, drawing one from system entropy (and logging it)
/// when none was given.
fn resolve_seed(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s = rand::rng().next_u64();
            eprintln!("no --seed given; using entropy-derived seed {s}");
            s
        }
    }
}

fn manifest(subcommand: &str, inputs: &[&Path]) -> RunManifest {
    RunManifest {
        subcommand: subcommand.to_string(),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        ..RunManifest::default()
    }
}

fn execute(command: Command) -> (Option<PathBuf>, Result<Output, Failure>) {
    match command {
        Command::ValidateW { input, tol, out } => (out, validate_w_cmd(&input, tol)),
        Command::ValidateEta { input, tol, seed, trials, out } => {
            (out, validate_eta_cmd(&input, tol, seed, trials))
        }
        Command::W2eta { input, out } => (out, w2eta_cmd(&input)),
        Command::Eta2w { input, out } => (out, eta2w_cmd(&input)),
        Command::Prob { w, eta, alice, bob, tol, out } => {
            (out, prob_cmd(w.as_deref(), eta.as_deref(), &alice, bob.as_deref(), tol))
        }
        Command::Simulate { protocol, state, alice, bob, shots, seed, out } => {
            (out, simulate_cmd(protocol, &state, &alice, bob.as_deref(), shots, seed))
        }
        Command::CheckTheorem { target, trials, seed, tol, out } => {
            (out, check_theorem_cmd(&target, trials, seed, tol))
        }
        Command::Gen { target } => match target {
            GenTarget::W { dims, seed, out } => (out, gen_w_cmd(&dims, seed)),
            GenTarget::Instrument { dims, outcomes, kraus, seed, out } => {
                (out, gen_instrument_cmd(&dims, outcomes, kraus, seed))
            }
        },
    }
}

fn validate_w_cmd(input: &Path, tol: f64) -> Result<Output, Failure> {
    let w = load_w(input)?;
    let mut manifest = manifest("validate-w", &[input]);
    manifest.tol = Some(tol);
    manifest.dims = Some(w.dims().to_vec());
    let mut doc = ReportDoc::new(manifest);
    doc.attach(&validate_w(&w, tol));
    Ok(Output::Report(Box::new(doc)))
}

fn validate_eta_cmd(
    input: &Path,
    tol: f64,
    seed: Option<u64>,
    trials: usize,
) -> Result<Output, Failure> {
    let eta = load_bipartite_eta(input)?;
    let seed = resolve_seed(seed);
    let mut manifest = manifest("validate-eta", &[input]);
    manifest.tol = Some(tol);
    manifest.seed = Some(seed);
    manifest.trials = Some(trials);
    let mut doc = ReportDoc::new(manifest);
    doc.attach(&validate_eta_conditions(&eta, tol));
    doc.attach(&is_linear(&eta, trials, seed, tol.max(1e-9)));
    Ok(Output::Report(Box::new(doc)))
}

fn w2eta_cmd(input: &Path) -> Result<Output, Failure> {
    let w = load_w(input)?;
    let eta = w_to_eta(&w);
    finite_tensor(eta.tensor())?;
    Ok(Output::Object {
        json: eta.tensor().to_json(),
        summary: format!("two-time density vector on dims {:?}", w.dims()),
    })
}

fn eta2w_cmd(input: &Path) -> Result<Output, Failure> {
    let eta = load_eta(input)?;
    let w = eta_to_w(&eta).map_err(core_failure)?;
    Ok(Output::Object {
        json: w.to_json(),
        summary: format!(
            "process matrix on dims {:?}{}",
            w.dims(),
            if w.checked_tol().is_some() { " (valid)" } else { " (fails validation)" }
        ),
    })
}

fn finite_tensor(t: &LabeledTensor) -> Result<(), Failure> {
    if t.data().iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Failure::Runtime("NumericalFailure: non-finite coefficient".into()))
    }
}

fn prob_cmd(
    w: Option<&Path>,
    eta: Option<&Path>,
    alice: &Path,
    bob: Option<&Path>,
    tol: f64,
) -> Result<Output, Failure> {
    let alice_inst = load_instrument(alice, System::A1, System::A2)?;
    let bob_inst = bob.map(|p| load_instrument(p, System::B1, System::B2)).transpose()?;
    let mut inputs: Vec<&Path> = vec![alice];
    if let Some(b) = bob {
        inputs.push(b);
    }
    let (table, source, dims) = match (w, eta) {
        (Some(w_path), None) => {
            inputs.insert(0, w_path);
            let w = load_w(w_path)?;
            let bob_inst = bob_inst.ok_or_else(|| {
                Failure::Usage("the trace rule needs Bob's instrument (--bob)".into())
            })?;
            let table = prob_w(&w, &alice_inst.cj_operators(), &bob_inst.cj_operators(), tol)
                .map_err(core_failure)?;
            (table, "trace rule tr[W (M_a ⊗ N_b)]", w.dims().to_vec())
        }
        (None, Some(eta_path)) => {
            inputs.insert(0, eta_path);
            let eta = load_eta(eta_path)?;
            let table = prob_eta(&eta, &alice_inst, bob_inst.as_ref()).map_err(core_failure)?;
            let ([a1, a2], b_dims) = eta.dims();
            let mut dims = vec![a1, a2];
            if let Some([b1, b2]) = b_dims {
                dims.extend([b1, b2]);
            }
            (table, "bullet rule η•(J_a ⊗ K_b)", dims)
        }
        _ => return Err(Failure::Usage("give exactly one of --w or --eta".into())),
    };
    let mut manifest = manifest("prob", &inputs);
    manifest.tol = Some(tol);
    manifest.dims = Some(dims);
    let mut doc = ReportDoc::new(manifest);
    doc.notes.push(format!("probabilities from the {source}"));
    let (rows, cols) = table.dim();
    doc.push_table("probability", vec![rows, cols], table.iter().copied().collect());
    Ok(Output::Report(Box::new(doc)))
}

fn simulate_cmd(
    protocol: Protocol,
    state: &Path,
    alice: &Path,
    bob: Option<&Path>,
    shots: Option<u64>,
    seed: Option<u64>,
) -> Result<Output, Failure> {
    let alice_inst = load_instrument(alice, System::A1, System::A2)?;
    let bob_inst = bob.map(|p| load_instrument(p, System::B1, System::B2)).transpose()?;
    let proto = match protocol {
        Protocol::Fig1 => {
            let tensor = load_tensor(state)?;
            let psi = PureTwoTimeState::new(tensor)
                .map_err(|e| Failure::Usage(format!("{}: {e}", state.display())))?;
            PreparationProtocol::pure_single_party(&psi)
        }
        Protocol::Fig3 => {
            let eta = load_eta(state)?;
            PreparationProtocol::mixed_bipartite(&eta).map_err(core_failure)?
        }
    };
    let stats = conditional_stats(&proto, &alice_inst, bob_inst.as_ref()).map_err(core_failure)?;

    let mut inputs: Vec<&Path> = vec![state, alice];
    if let Some(b) = bob {
        inputs.push(b);
    }
    let mut manifest = manifest("simulate", &inputs);
    manifest.shots = shots;
    let mut doc = ReportDoc::new(manifest);
    let (rows, cols) = stats.table.dim();
    doc.push_table("conditional", vec![rows, cols], stats.table.iter().copied().collect());
    doc.push_table("success-probability", vec![1], vec![stats.success_probability]);
    if stats.shifted {
        doc.notes.push(
            "the state was not positive; the prepared density matrix was shifted and the \
             statistics deviate from the ratio rule"
                .to_string(),
        );
    }
    if let Some(shots) = shots {
        let seed = resolve_seed(seed);
        doc.manifest.seed = Some(seed);
        let counts =
            sample_shots(&proto, &alice_inst, bob_inst.as_ref(), shots, seed).map_err(core_failure)?;
        doc.push_table(
            "kept-counts",
            vec![rows, cols],
            counts.kept.iter().map(|&n| n as f64).collect(),
        );
        doc.push_table("discarded", vec![1], vec![counts.discarded as f64]);
    }
    doc.notes.push(
        "success probability uses the normalized post-selection state; the stored vector's \
         normalization only rescales bookkeeping"
            .to_string(),
    );
    Ok(Output::Report(Box::new(doc)))
}

fn check_theorem_cmd(
    target: &Path,
    trials: usize,
    seed: Option<u64>,
    tol: f64,
) -> Result<Output, Failure> {
    let seed = resolve_seed(seed);
    let cfg = TheoremCheckConfig::new(trials, seed, tol);
    let text = read_text(target)?;
    // the target may hold either representation; try the matrix form first
    let run: TheoremRun = match serde_json::from_str::<ProcessMatrix>(&text) {
        Ok(w) => run_theorem_w(&w, &cfg),
        Err(w_err) => match serde_json::from_str::<LabeledTensor>(&text) {
            Ok(tensor) => {
                let eta = TwoTimeDensityVector::new(tensor)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", target.display())))?;
                if !eta.is_bipartite() {
                    return Err(Failure::Usage(format!(
                        "{}: the identities are bipartite; the state needs B1/B2 slots",
                        target.display()
                    )));
                }
                run_theorem_eta(&eta, &cfg)
            }
            Err(_) => return Err(parse_failure(target, &text, &w_err)),
        },
    };
    let mut manifest = manifest("check-theorem", &[target]);
    manifest.tol = Some(tol);
    manifest.seed = Some(seed);
    manifest.trials = Some(trials);
    let mut doc = ReportDoc::new(manifest);
    doc.attach(&run.report);
    for (k, name) in procmat::verify::IDENTITY_NAMES.iter().enumerate() {
        doc.push_table(
            &format!("residual-histogram-{name}"),
            vec![16],
            histogram(run.per_trial.iter().map(|row| row[k])),
        );
    }
    Ok(Output::Report(Box::new(doc)))
}

/// Counts per decade of log10(residual) from 1e-16 up to 1.
fn histogram(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut bins = vec![0.0; 16];
    for v in values {
        let log = v.max(1e-300).log10();
        let bin = ((log + 16.0).floor().max(0.0) as usize).min(15);
        bins[bin] += 1.0;
    }
    bins
}

fn gen_w_cmd(dims: &[usize], seed: Option<u64>) -> Result<Output, Failure> {
    let dims: [usize; 4] = dims
        .try_into()
        .map_err(|_| Failure::Usage(format!("--dims needs four entries, got {}", dims.len())))?;
    let seed = resolve_seed(seed);
    let w = random_valid_w(dims, seed).map_err(core_failure)?;
    Ok(Output::Object {
        json: w.to_json(),
        summary: format!("valid process matrix, dims {dims:?}, seed {seed}"),
    })
}

fn gen_instrument_cmd(
    dims: &[usize],
    outcomes: usize,
    kraus: usize,
    seed: Option<u64>,
) -> Result<Output, Failure> {
    let [d_in, d_out]: [usize; 2] = dims
        .try_into()
        .map_err(|_| Failure::Usage(format!("--dims needs two entries, got {}", dims.len())))?;
    if outcomes == 0 || kraus == 0 {
        return Err(Failure::Usage("--outcomes and --kraus must be positive".into()));
    }
    let seed = resolve_seed(seed);
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let sizes = vec![kraus; outcomes];
    let inst = sample_instrument((System::A1, d_in), (System::A2, d_out), &sizes, &mut rng)
        .map_err(core_failure)?;
    let doc = InstrumentDoc::from_instrument(&inst);
    Ok(Output::Object {
        json: serde_json::to_string(&doc).expect("instrument serialization cannot fail"),
        summary: format!(
            "CPTP instrument {d_in}→{d_out}, {outcomes} outcomes × {kraus} Kraus, seed {seed}"
        ),
    })
}
