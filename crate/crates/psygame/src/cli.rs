//! Command-line front end.
//!
//! `psygame` exposes the solver over bundled or on-disk `.pg` models:
//! `solve` and `sweep` handle one-shot games, `csg` runs finite-horizon
//! induction and repeated-selection experiments, `verify` checks a given
//! profile, and `stats` sizes a stochastic game. Exit codes: 0 success,
//! 1 usage or model errors, 2 solver failures (no equilibrium found).
//!
//! Reports are human-readable and go to stdout. Result records go to
//! `--output` as CSV or JSON; with `--format` but no `--output` the records
//! claim stdout instead and only metadata lines appear on stderr, so piped
//! output stays machine-parseable. Identical command lines produce
//! byte-identical records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use itertools::Itertools;
use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use crate::expr::Rat;
use crate::game::{verify_pe, EquilibriumCandidate, Nfpg, StrategyProfile, IDLE};
use crate::modelio::{
    self, elaborate, fmt_sig, parse_model, resolve_constants, EquilibriumRecord, Model, ModelAst,
    OutputFormat, ResultRecord,
};
use crate::nlp::{find_swpe, SolverConfig};
use crate::pcsg::{
    backward_induction, model_stats, run_experiments, ExperimentReport, Pcsg, PcsgError, Selection,
};

#[derive(Parser)]
#[command(
    name = "psygame",
    version,
    about = "Solve psychological games: belief-dependent equilibria of one-shot and stochastic games"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Find equilibria of a one-shot game and report the welfare-optimal one
    Solve(SolveArgs),
    /// Check whether a given strategy profile is an equilibrium
    Verify(VerifyArgs),
    /// Solve a one-shot game across a parameter grid
    Sweep(SweepArgs),
    /// Solve a stochastic game by backward induction, or run experiments
    Csg(CsgArgs),
    /// Count reachable states and transitions of a stochastic game, then time a solve
    Stats(StatsArgs),
    /// List the bundled models
    ListModels,
}

#[derive(Args)]
struct ModelArgs {
    /// Bundled model name or path to a .pg file
    model: String,
    /// Set a model constant, e.g. `-c mu=5` or `-c gamma=1/3` (repeatable)
    #[arg(short = 'c', long = "constant", value_name = "NAME=VALUE")]
    constants: Vec<String>,
}

#[derive(Args)]
struct SolverArgs {
    /// Seed for solver starts and random equilibrium selection
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random interior starts per support
    #[arg(long)]
    starts: Option<usize>,
    /// Feasibility and optimality tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads (default: PG_THREADS, else all cores)
    #[arg(long)]
    threads: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, Failure> {
        let mut cfg = SolverConfig::seeded(self.seed);
        if let Some(s) = self.starts {
            if s == 0 {
                return Err(Failure::Usage("--starts must be at least 1".into()));
            }
            cfg.starts = s;
        }
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(Failure::Usage("--tol must be positive".into()));
            }
            cfg.feas_tol = t;
            cfg.opt_tol = t;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Write result records to this file
    #[arg(short = 'o', long, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Record format (csv or json); without --output, records go to stdout
    #[arg(long)]
    format: Option<OutputFormat>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Emit every equilibrium candidate, not only the welfare-optimal one
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Probability of a named action, e.g. `-p fair=1` (repeatable;
    /// unnamed actions get 0, idle players are implicit)
    #[arg(short = 'p', long = "prob", value_name = "ACTION=PROB")]
    probs: Vec<String>,
    /// Residual tolerance for the equilibrium verdict
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Grid over a constant, e.g. `--sweep mu=1:5:1` (repeatable; the
    /// product of all specs is solved in order)
    #[arg(long = "sweep", value_name = "NAME=LO:HI:STEP", required = true)]
    sweeps: Vec<String>,
    /// Record every equilibrium candidate per point, not only the best
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct CsgArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Horizon; shorthand for `-c k=<K>`, which must be the model's step bound
    #[arg(short = 'k', long = "horizon")]
    horizon: Option<i64>,
    /// Number of experiment runs with random equilibrium selection
    #[arg(short = 'r', long = "runs")]
    runs: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Horizon; shorthand for `-c k=<K>`
    #[arg(short = 'k', long = "horizon")]
    horizon: Option<i64>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug)]
enum Failure {
    /// Exit 1: bad flags, unknown models, elaboration errors.
    Usage(String),
    /// Exit 2: the solver gave up or rejected the profile.
    Solver(String),
}

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn solver_failure(e: impl Display) -> Failure {
    Failure::Solver(e.to_string())
}

fn pcsg_failure(e: PcsgError) -> Failure {
    match e {
        PcsgError::NoEquilibriumFound { .. } => Failure::Solver(e.to_string()),
        other => Failure::Usage(other.to_string()),
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` and runs the selected command, returning the process exit
/// code. Clap's own usage failures are remapped to exit 1; help and version
/// requests exit 0.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Csg(a) => cmd_csg(a),
        Cmd::Stats(a) => cmd_stats(a),
        Cmd::ListModels => cmd_list_models(),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Exact rational from `3`, `-2/5`, or `0.45` (decimals are exact, not
/// float-rounded).
fn parse_rat(s: &str) -> Result<Rat, Failure> {
    let bad = || Failure::Usage(format!("`{s}` is not a number (use e.g. 2, -1/3, or 0.45)"));
    let t = s.trim();
    if let Some((n, d)) = t.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(Failure::Usage(format!("`{s}` divides by zero")));
        }
        return Ok(Rat::new(n, d));
    }
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return Err(bad());
    }
    if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int}{frac}");
    let num: BigInt = digits.parse().map_err(|_| bad())?;
    let den = BigInt::from(10u32).pow(frac.len() as u32);
    let v = Rat::new(num, den);
    Ok(if neg { -v } else { v })
}

fn parse_bindings(pairs: &[String]) -> Result<BTreeMap<String, Rat>, Failure> {
    let mut out = BTreeMap::new();
    for pair in pairs {
        let Some((name, value)) = pair.split_once('=') else {
            return Err(Failure::Usage(format!(
                "`-c {pair}` is not of the form name=value"
            )));
        };
        let name = name.trim().to_string();
        let value = parse_rat(value)?;
        if out.insert(name.clone(), value).is_some() {
            return Err(Failure::Usage(format!("`{name}` is set twice")));
        }
    }
    Ok(out)
}

/// Resolves a model argument: bundled names win, then the filesystem.
fn load_model(spec: &str) -> Result<(String, ModelAst), Failure> {
    if let Some(b) = modelio::builtin(spec) {
        return Ok((b.name.to_string(), b.ast()));
    }
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let ast = parse_model(&text)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| spec.to_string());
        return Ok((name, ast));
    }
    Err(Failure::Usage(format!(
        "`{spec}` is neither a bundled model nor a file (see `psygame list-models`)"
    )))
}

fn init_threads(threads: Option<usize>) -> Result<(), Failure> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var("PG_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Failure::Usage(format!("PG_THREADS=`{v}` is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::Usage("thread count must be at least 1".into()));
        }
        // A pool may already exist (e.g. repeated in-process runs); results
        // do not depend on the thread count, so that is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn params_from(env: &BTreeMap<String, Rat>) -> BTreeMap<String, f64> {
    env.iter().map(|(k, v)| (k.clone(), to_f64(v))).collect()
}

fn render_env(env: &BTreeMap<String, Rat>) -> String {
    env.iter().map(|(k, v)| format!("{k}={v}")).join(" ")
}

/// Report text split so that metadata can go to stderr when the records
/// claim stdout: `head` holds command, seed and parameters; `body` holds
/// result lines.
struct Report {
    head: String,
    body: String,
}

impl Report {
    fn new(command: &str, seed: Option<u64>) -> Self {
        let mut head = String::new();
        let _ = writeln!(head, "{command}");
        if let Some(seed) = seed {
            let _ = writeln!(head, "seed: {seed}");
        }
        Report {
            head,
            body: String::new(),
        }
    }

    fn headline(&mut self, line: impl Display) {
        let _ = writeln!(self.head, "{line}");
    }

    fn line(&mut self, line: impl Display) {
        let _ = writeln!(self.body, "{line}");
    }

    /// Prints the report, routing around `data_on_stdout`: result lines are
    /// dropped there (the records carry them) and metadata moves to stderr.
    fn finish(self, data_on_stdout: bool) {
        if data_on_stdout {
            eprint!("{}", self.head);
        } else {
            print!("{}{}", self.head, self.body);
        }
    }
}

impl OutputArgs {
    fn data_on_stdout(&self) -> bool {
        self.output.is_none() && self.format.is_some()
    }

    /// Writes records to the file or stdout; returns a note for the report.
    fn write_records(&self, records: &[ResultRecord]) -> Result<Option<String>, Failure> {
        let format = self.format.unwrap_or(OutputFormat::Csv);
        match &self.output {
            Some(path) => {
                let file = File::create(path)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                modelio::write_results(records, format, BufWriter::new(file)).map_err(usage)?;
                Ok(Some(format!(
                    "wrote {} record{} to {}",
                    records.len(),
                    if records.len() == 1 { "" } else { "s" },
                    path.display()
                )))
            }
            None if self.format.is_some() => {
                let stdout = std::io::stdout();
                modelio::write_results(records, format, stdout.lock()).map_err(usage)?;
                Ok(None)
            }
            None => Ok(None),
        }
    }
}

fn support_text(rec: &EquilibriumRecord) -> String {
    rec.support
        .iter()
        .map(|names| format!("{{{}}}", names.join(",")))
        .join(" x ")
}

fn named_values(names: &[String], values: &[f64]) -> String {
    names
        .iter()
        .zip(values)
        .map(|(n, v)| format!("{n}={}", fmt_sig(*v)))
        .join(" ")
}

fn push_equilibrium(report: &mut Report, idx: usize, players: &[String], rec: &EquilibriumRecord) {
    report.line(format!("[{idx}] support: {}", support_text(rec)));
    for (pi, row) in rec.strategy.iter().enumerate() {
        let cells = row
            .iter()
            .map(|(a, p)| format!("{a}={}", fmt_sig(*p)))
            .join(" ");
        report.line(format!("    {}: {cells}", players[pi]));
    }
    report.line(format!(
        "    utilities: {}",
        named_values(players, &rec.utilities)
    ));
    report.line(format!(
        "    welfare: {}  residual: {}",
        fmt_sig(rec.welfare),
        fmt_sig(rec.residual)
    ));
}

fn require_nfpg(model: Model, name: &str) -> Result<Nfpg, Failure> {
    match model {
        Model::Nfpg(g) => Ok(g),
        Model::Pcsg(_) => Err(Failure::Usage(format!(
            "`{name}` is a stochastic game; use `psygame csg`"
        ))),
    }
}

fn require_pcsg(model: Model, name: &str) -> Result<Pcsg, Failure> {
    match model {
        Model::Pcsg(g) => Ok(g),
        Model::Nfpg(_) => Err(Failure::Usage(format!(
            "`{name}` is a one-shot game; use `psygame solve`"
        ))),
    }
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn cmd_solve(a: SolveArgs) -> CmdResult {
    init_threads(a.solver.threads)?;
    let cfg = a.solver.config()?;
    let (name, ast) = load_model(&a.model.model)?;
    let bindings = parse_bindings(&a.model.constants)?;
    let env = resolve_constants(&ast, &bindings).map_err(usage)?;
    let game = require_nfpg(elaborate(&ast, &bindings).map_err(usage)?, &name)?;

    let mut report = Report::new(&format!("solve {name}"), Some(cfg.seed));
    if !env.is_empty() {
        report.headline(format!("parameters: {}", render_env(&env)));
    }

    let (best, candidates) = find_swpe(&game, &cfg).map_err(solver_failure)?;
    let shown: Vec<EquilibriumCandidate> = if a.all {
        candidates
    } else {
        vec![best.clone()]
    };
    let best_idx = shown
        .iter()
        .position(|c| c.support == best.support)
        .unwrap_or(0);

    let record = ResultRecord::new(name, params_from(&env), &game, &shown);
    report.headline(format!("equilibria: {}", record.equilibria.len()));
    for (i, eq) in record.equilibria.iter().enumerate() {
        push_equilibrium(&mut report, i, &record.players, eq);
    }
    report.line(format!(
        "best: [{best_idx}] welfare {}",
        fmt_sig(best.welfare)
    ));

    let note = a.output.write_records(&[record])?;
    if let Some(note) = note {
        report.line(note);
    }
    report.finish(a.output.data_on_stdout());
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    if !(a.tol > 0.0) {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    let (name, ast) = load_model(&a.model.model)?;
    let bindings = parse_bindings(&a.model.constants)?;
    let game = require_nfpg(elaborate(&ast, &bindings).map_err(usage)?, &name)?;

    // Idle players play their one action; every named probability must hit
    // a declared action.
    let mut rows: Vec<Vec<f64>> = (0..game.num_players())
        .map(|i| {
            if game.action_count(i) == 1 && game.action_name(i, 0) == IDLE {
                vec![1.0]
            } else {
                vec![0.0; game.action_count(i)]
            }
        })
        .collect();
    for pair in &a.probs {
        let Some((action, value)) = pair.split_once('=') else {
            return Err(Failure::Usage(format!(
                "`-p {pair}` is not of the form action=prob"
            )));
        };
        let action = action.trim();
        if action == IDLE {
            return Err(Failure::Usage(
                "idle players are implicit; name a declared action".into(),
            ));
        }
        let Some((pi, ai)) = game.action_lookup(action) else {
            return Err(Failure::Usage(format!(
                "`{action}` is not an action of `{name}`"
            )));
        };
        rows[pi][ai] = to_f64(&parse_rat(value)?);
    }
    let profile = StrategyProfile::from_rows(&game, rows).map_err(usage)?;
    let assessed =
        EquilibriumCandidate::assess(&game, profile.clone()).map_err(usage)?;
    let (is_pe, residual) = verify_pe(&game, &profile, a.tol).map_err(usage)?;

    let mut report = Report::new(&format!("verify {name}"), None);
    report.line("profile:");
    for (pi, row) in profile.rows().iter().enumerate() {
        let cells = row
            .iter()
            .map(|(a, p)| format!("{a}={}", fmt_sig(*p)))
            .join(" ");
        report.line(format!("  {}: {cells}", game.player_name(pi)));
    }
    report.line(format!(
        "utilities: {}",
        named_values(game.player_names(), &assessed.payoffs)
    ));
    report.line(format!("welfare: {}", fmt_sig(assessed.welfare)));
    report.line(format!("residual: {}", fmt_sig(residual)));
    report.line(format!(
        "verdict: {} (tol {})",
        if is_pe { "equilibrium" } else { "not an equilibrium" },
        fmt_sig(a.tol)
    ));
    report.finish(false);
    if is_pe {
        Ok(())
    } else {
        Err(Failure::Solver(format!(
            "profile is not an equilibrium (residual {} > tol {})",
            fmt_sig(residual),
            fmt_sig(a.tol)
        )))
    }
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepSpec {
    name: String,
    points: Vec<Rat>,
}

fn parse_sweep(spec: &str) -> Result<SweepSpec, Failure> {
    let bad = || {
        Failure::Usage(format!(
            "`--sweep {spec}` is not of the form name=lo:hi:step"
        ))
    };
    let (name, range) = spec.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = range.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(bad());
    };
    let (lo, hi, step) = (parse_rat(lo)?, parse_rat(hi)?, parse_rat(step)?);
    if lo > hi {
        return Err(Failure::Usage(format!(
            "sweep `{name}`: lower bound {lo} exceeds upper bound {hi}"
        )));
    }
    if step <= Rat::from(BigInt::from(0)) {
        return Err(Failure::Usage(format!(
            "sweep `{name}`: step {step} must be positive"
        )));
    }
    let n = ((hi - lo.clone()) / step.clone())
        .to_integer()
        .to_usize()
        .filter(|&n| n < 100_000)
        .ok_or_else(|| Failure::Usage(format!("sweep `{name}` has too many points")))?
        + 1;
    let points = (0..n)
        .map(|i| lo.clone() + step.clone() * Rat::from(BigInt::from(i)))
        .collect();
    Ok(SweepSpec {
        name: name.trim().to_string(),
        points,
    })
}

fn cmd_sweep(a: SweepArgs) -> CmdResult {
    init_threads(a.solver.threads)?;
    let cfg = a.solver.config()?;
    let (name, ast) = load_model(&a.model.model)?;
    let base = parse_bindings(&a.model.constants)?;
    let specs: Vec<SweepSpec> = a
        .sweeps
        .iter()
        .map(|s| parse_sweep(s))
        .collect::<Result<_, _>>()?;
    let mut seen = BTreeSet::new();
    for s in &specs {
        if !seen.insert(s.name.as_str()) {
            return Err(Failure::Usage(format!("`{}` is swept twice", s.name)));
        }
        if base.contains_key(&s.name) {
            return Err(Failure::Usage(format!(
                "`{}` is both fixed with -c and swept",
                s.name
            )));
        }
    }
    if ast.kind != modelio::ModelKind::Nfpg {
        return Err(Failure::Usage(format!(
            "`{name}` is a stochastic game; use `psygame csg`"
        )));
    }

    let mut report = Report::new(&format!("sweep {name}"), Some(cfg.seed));
    let total: usize = specs.iter().map(|s| s.points.len()).product();
    report.headline(format!("points: {total}"));

    let mut records = Vec::with_capacity(total);
    let mut failures = 0usize;
    for combo in specs
        .iter()
        .map(|s| s.points.iter().cloned())
        .multi_cartesian_product()
    {
        let mut bindings = base.clone();
        for (spec, value) in specs.iter().zip(&combo) {
            bindings.insert(spec.name.clone(), value.clone());
        }
        let point = specs
            .iter()
            .zip(&combo)
            .map(|(s, v)| format!("{}={v}", s.name))
            .join(" ");
        let outcome = resolve_constants(&ast, &bindings)
            .map_err(|e| e.to_string())
            .and_then(|env| {
                let model = elaborate(&ast, &bindings).map_err(|e| e.to_string())?;
                let game = model.as_nfpg().expect("kind checked above").clone();
                let (best, candidates) = find_swpe(&game, &cfg).map_err(|e| e.to_string())?;
                let shown = if a.all { candidates } else { vec![best] };
                Ok(ResultRecord::new(
                    name.clone(),
                    params_from(&env),
                    &game,
                    &shown,
                ))
            });
        match outcome {
            Ok(record) => {
                let best_welfare = record
                    .equilibria
                    .iter()
                    .map(|e| e.welfare)
                    .fold(f64::NEG_INFINITY, f64::max);
                report.line(format!(
                    "{point} -> {} equilibri{}, best welfare {}",
                    record.equilibria.len(),
                    if record.equilibria.len() == 1 { "um" } else { "a" },
                    fmt_sig(best_welfare)
                ));
                records.push(record);
            }
            Err(msg) => {
                failures += 1;
                eprintln!("sweep point {point}: {msg}");
                report.line(format!("{point} -> failed: {msg}"));
                let params = bindings
                    .iter()
                    .map(|(k, v)| (k.clone(), to_f64(v)))
                    .collect();
                records.push(ResultRecord::failed(name.clone(), params, msg));
            }
        }
    }
    report.headline(format!("failures: {failures}"));

    let note = a.output.write_records(&records)?;
    if let Some(note) = note {
        report.line(note);
    }
    report.finish(a.output.data_on_stdout());
    Ok(())
}

// ---------------------------------------------------------------------------
// csg
// ---------------------------------------------------------------------------

/// Applies `-k` as a binding on the model constant `k` and returns the
/// effective integer horizon.
fn resolve_horizon(
    ast: &ModelAst,
    bindings: &mut BTreeMap<String, Rat>,
    flag: Option<i64>,
) -> Result<(i64, BTreeMap<String, Rat>), Failure> {
    if let Some(k) = flag {
        if k < 1 {
            return Err(Failure::Usage(format!("horizon {k} must be at least 1")));
        }
        if bindings.contains_key("k") {
            return Err(Failure::Usage("`k` given both as -k and with -c".into()));
        }
        bindings.insert("k".into(), Rat::from(BigInt::from(k)));
    }
    let env = resolve_constants(ast, bindings).map_err(usage)?;
    let Some(k) = env.get("k") else {
        return Err(Failure::Usage(
            "model declares no constant `k`; pass the horizon with -k".into(),
        ));
    };
    if !k.is_integer() {
        return Err(Failure::Usage(format!("horizon k={k} is not an integer")));
    }
    let k = k
        .to_integer()
        .to_i64()
        .filter(|&k| k >= 1)
        .ok_or_else(|| Failure::Usage(format!("horizon k={k} must be at least 1")))?;
    Ok((k, env))
}

fn eq_record_from_pcsg(g: &Pcsg, c: &EquilibriumCandidate) -> EquilibriumRecord {
    EquilibriumRecord {
        support: (0..g.num_players())
            .map(|i| {
                c.support
                    .indices(i)
                    .into_iter()
                    .map(|a| g.actions(i)[a].clone())
                    .collect()
            })
            .collect(),
        strategy: c.profile.rows().to_vec(),
        utilities: c.payoffs.clone(),
        welfare: c.welfare,
        residual: c.residual,
    }
}

fn cmd_csg(a: CsgArgs) -> CmdResult {
    init_threads(a.solver.threads)?;
    let cfg = a.solver.config()?;
    let (name, ast) = load_model(&a.model.model)?;
    let mut bindings = parse_bindings(&a.model.constants)?;
    let (k, env) = resolve_horizon(&ast, &mut bindings, a.horizon)?;
    let game = require_pcsg(elaborate(&ast, &bindings).map_err(usage)?, &name)?;
    let players = game.player_names().to_vec();

    let mut report = Report::new(&format!("csg {name}"), Some(cfg.seed));
    report.headline(format!("parameters: {}", render_env(&env)));
    report.headline(format!("horizon: {k}"));

    match a.runs {
        None => {
            let vt = backward_induction(&game, k as usize, &cfg, Selection::SwOptimal)
                .map_err(pcsg_failure)?;
            report.line(format!(
                "initial values: {}",
                named_values(&players, vt.initial_values(&game))
            ));
            report.line("stage strategies (t = steps remaining):");
            let mut records = Vec::new();
            for t in (1..=vt.horizon).rev() {
                for (s, c) in &vt.strategies[t] {
                    let eq = eq_record_from_pcsg(&game, c);
                    let strat = eq
                        .strategy
                        .iter()
                        .flatten()
                        .map(|(a, p)| format!("{a}={}", fmt_sig(*p)))
                        .join(" ");
                    report.line(format!(
                        "t={t} {} {strat} | values {}",
                        game.describe_state(s),
                        named_values(&players, &eq.utilities)
                    ));
                    let mut params = params_from(&env);
                    params.insert("t".into(), t as f64);
                    for (v, &val) in game.vars().iter().zip(s) {
                        params.insert(v.name.clone(), val as f64);
                    }
                    records.push(ResultRecord {
                        model: name.clone(),
                        params,
                        players: players.clone(),
                        equilibria: vec![eq],
                        error: None,
                    });
                }
            }
            let note = a.output.write_records(&records)?;
            if let Some(note) = note {
                report.line(note);
            }
        }
        Some(runs) => {
            if runs == 0 {
                return Err(Failure::Usage("--runs must be at least 1".into()));
            }
            let exp = run_experiments(&game, k as usize, runs, &cfg, cfg.seed)
                .map_err(pcsg_failure)?;
            report.headline(format!("runs: {runs}"));
            report.line(format!(
                "utility mean: {}",
                named_values(&players, &exp.utility_mean)
            ));
            report.line(format!(
                "utility std: {}",
                named_values(&players, &exp.utility_std)
            ));
            let probs = exp
                .action_prob_mean
                .iter()
                .map(|(a, p)| format!("{a}={}", fmt_sig(*p)))
                .join(" ");
            report.line(format!("action probabilities (mean): {probs}"));
            report.line("per-run utilities:");
            for (i, u) in exp.per_run_utilities.iter().enumerate() {
                report.line(format!("  run {i}: {}", named_values(&players, u)));
            }
            let note = write_experiment(&a.output, &exp)?;
            if let Some(note) = note {
                report.line(note);
            }
        }
    }
    report.finish(a.output.data_on_stdout());
    Ok(())
}

/// Experiment output: JSON mirrors [`ExperimentReport`]; CSV is long-format
/// `run,metric,name,value` with aggregate rows carrying an empty run.
fn write_experiment(
    out: &OutputArgs,
    exp: &ExperimentReport,
) -> Result<Option<String>, Failure> {
    let format = out.format.unwrap_or(OutputFormat::Csv);
    let write_to = |dest: &mut dyn Write| -> Result<(), Failure> {
        match format {
            OutputFormat::Json => {
                serde_json::to_writer_pretty(&mut *dest, exp)
                    .map_err(|e| Failure::Usage(e.to_string()))?;
                dest.write_all(b"\n").map_err(usage)?;
            }
            OutputFormat::Csv => {
                let mut w = csv::Writer::from_writer(dest);
                let write =
                    |w: &mut csv::Writer<&mut dyn Write>, row: [&str; 4]| -> Result<(), Failure> {
                        w.write_record(row).map_err(|e| Failure::Usage(e.to_string()))
                    };
                write(&mut w, ["run", "metric", "name", "value"])?;
                for (i, utilities) in exp.per_run_utilities.iter().enumerate() {
                    let run = i.to_string();
                    for (p, u) in exp.player_names.iter().zip(utilities) {
                        write(&mut w, [&run, "utility", p, &fmt_sig(*u)])?;
                    }
                    for (a, p) in &exp.per_run_action_probs[i] {
                        write(&mut w, [&run, "action_prob", a, &fmt_sig(*p)])?;
                    }
                }
                for (p, u) in exp.player_names.iter().zip(&exp.utility_mean) {
                    write(&mut w, ["", "utility_mean", p, &fmt_sig(*u)])?;
                }
                for (p, u) in exp.player_names.iter().zip(&exp.utility_std) {
                    write(&mut w, ["", "utility_std", p, &fmt_sig(*u)])?;
                }
                for (a, p) in &exp.action_prob_mean {
                    write(&mut w, ["", "action_prob_mean", a, &fmt_sig(*p)])?;
                }
                w.flush().map_err(usage)?;
            }
        }
        Ok(())
    };
    match &out.output {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let mut buf = BufWriter::new(file);
            write_to(&mut buf)?;
            buf.flush().map_err(usage)?;
            Ok(Some(format!("wrote experiment data to {}", path.display())))
        }
        None if out.format.is_some() => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_to(&mut lock)?;
            Ok(None)
        }
        None => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

fn cmd_stats(a: StatsArgs) -> CmdResult {
    init_threads(a.solver.threads)?;
    let cfg = a.solver.config()?;
    let (name, ast) = load_model(&a.model.model)?;
    let mut bindings = parse_bindings(&a.model.constants)?;
    let (k, env) = resolve_horizon(&ast, &mut bindings, a.horizon)?;
    let game = require_pcsg(elaborate(&ast, &bindings).map_err(usage)?, &name)?;

    let (states, transitions) = model_stats(&game, k as usize).map_err(pcsg_failure)?;
    let start = std::time::Instant::now();
    backward_induction(&game, k as usize, &cfg, Selection::SwOptimal).map_err(pcsg_failure)?;
    let elapsed = start.elapsed();

    let mut report = Report::new(&format!("stats {name}"), Some(cfg.seed));
    report.headline(format!("parameters: {}", render_env(&env)));
    report.line(format!("states: {states}"));
    report.line(format!("transitions: {transitions}"));
    report.line(format!("solve time: {:.3} s", elapsed.as_secs_f64()));
    report.finish(false);
    Ok(())
}

// ---------------------------------------------------------------------------
// list-models
// ---------------------------------------------------------------------------

fn cmd_list_models() -> CmdResult {
    let mut report = Report::new("bundled models", None);
    for m in modelio::builtin_models() {
        let kind = match m.kind {
            modelio::ModelKind::Nfpg => "nfpg",
            modelio::ModelKind::Pcsg => "pcsg",
        };
        let params = m
            .params()
            .iter()
            .map(|(n, v)| match v {
                Some(v) => format!("{n}={v}"),
                None => n.clone(),
            })
            .join(", ");
        let params = if params.is_empty() {
            String::new()
        } else {
            format!(" ({params})")
        };
        report.line(format!("{:<17} {kind}{params}", m.name));
        report.line(format!("{:<17}   {}", "", m.summary));
    }
    report.finish(false);
    Ok(())
}
