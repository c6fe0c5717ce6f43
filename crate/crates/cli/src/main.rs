//! `ehsel`: generate scenarios, run the offline and online policies, and
//! sweep parameters. Exit codes: 0 success, 2 bad arguments or invalid
//! parameters, 3 a solver did not converge (outputs are still written),
//! 4 the scenario file could not be read, 1 an output file could not be written.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ehsel_core::baselines::{lower_bound, solve_ss};
use ehsel_core::jsseh::{solve_jsseh, InitKind};
use ehsel_core::online::{run_online, Event, OnlineConfig, Policy as OnlinePolicy, Window};
use ehsel_core::scenario::{self, ACovariance, GeneratorParams};
use ehsel_core::sseh::solve_sseh;
use ehsel_core::{Error, RunResult, Scenario, SolverOptions};
use rayon::prelude::*;
use serde_json::json;

#[derive(Parser)]
#[command(name = "ehsel", version, about = "Sensor selection and power allocation under energy harvesting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a seeded random scenario and write it to a file.
    Generate(GenerateArgs),
    /// Solve a scenario offline with one policy.
    Solve(SolveArgs),
    /// Simulate the event-driven online policy.
    Online(OnlineArgs),
    /// Run seeded replicates over a list of parameter values.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct GenParams {
    /// Number of sensors.
    #[arg(long = "M")]
    sensors: usize,
    /// Number of slots.
    #[arg(long = "T")]
    slots: usize,
    /// Sensors selected per slot.
    #[arg(long = "K")]
    k: usize,
    /// Source dimension.
    #[arg(long = "m", default_value_t = 5)]
    dim: usize,
    /// Poisson arrival intensity per second.
    #[arg(long, default_value_t = 0.5)]
    mu: f64,
    /// Energy per arrival.
    #[arg(long = "Eamp", default_value_t = 1.0)]
    e_amp: f64,
    #[arg(long = "sigma-w2", default_value_t = 0.1)]
    sigma_w2: f64,
    /// Slot duration.
    #[arg(long = "Ts", default_value_t = 1.0)]
    ts: f64,
    /// Covariance of the observation vectors.
    #[arg(long = "a-cov", value_enum, default_value_t = ACov::InvSqrtM)]
    a_cov: ACov,
}

#[derive(Clone, Copy, ValueEnum)]
enum ACov {
    InvSqrtM,
    InvM,
}

impl GenParams {
    fn with_seed(&self, seed: u64) -> GeneratorParams {
        GeneratorParams {
            sensors: self.sensors,
            slots: self.slots,
            k: self.k,
            dim: self.dim,
            mu: self.mu,
            e_amp: self.e_amp,
            sigma_w2: self.sigma_w2,
            ts: self.ts,
            seed,
            a_cov: match self.a_cov {
                ACov::InvSqrtM => ACovariance::InvSqrtDim,
                ACov::InvM => ACovariance::InvDim,
            },
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    params: GenParams,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Ss,
    SsEh,
    JssEh,
    Lb,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Sseh,
    Zero,
    Random,
}

#[derive(Args)]
struct SolveCommon {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = InitArg::Sseh)]
    init: InitArg,
    /// Seed of the random initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stopping residual of the power-allocation iteration.
    #[arg(long)]
    tol: Option<f64>,
    /// Output files are `<prefix>.summary.json`, `<prefix>.alloc.csv`, and
    /// `<prefix>.trace.csv` when an iterate trace exists.
    #[arg(long)]
    out_prefix: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    policy: PolicyArg,
    #[command(flatten)]
    common: SolveCommon,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnlinePolicyArg {
    SsEh,
    JssEh,
}

#[derive(Args)]
struct OnlineArgs {
    #[arg(long, value_enum)]
    policy: OnlinePolicyArg,
    /// Planning window in slots, or `full`.
    #[arg(long, value_parser = parse_window)]
    window: Window,
    #[command(flatten)]
    common: SolveCommon,
}

fn parse_window(text: &str) -> Result<Window, String> {
    if text == "full" {
        return Ok(Window::FullHorizon);
    }
    match text.parse::<usize>() {
        Ok(w) if w >= 1 => Ok(Window::Slots(w)),
        _ => Err(format!("expected a positive integer or `full`, got `{text}`")),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    #[value(name = "K")]
    K,
    #[value(name = "mu")]
    Mu,
    #[value(name = "Tw")]
    Tw,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    params: GenParams,
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Seeds `seed..seed+repeats`.
    #[arg(long, default_value_t = 10)]
    repeats: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated policies. For a `Tw` sweep only `ss-eh` and `jss-eh`
    /// apply and run online with that window.
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    policies: Vec<PolicyArg>,
    /// One row per (policy, value, seed).
    #[arg(long)]
    out: PathBuf,
    /// Mean and standard error per (policy, value).
    #[arg(long)]
    aggregate: PathBuf,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    fn write(path: &Path, err: impl Display) -> Self {
        Self::new(1, format!("cannot write {}: {err}", path.display()))
    }
}

fn solver_failure(err: Error) -> Failure {
    match err {
        Error::NonConvergence { .. } => Failure::new(3, err),
        other => Failure::new(2, other),
    }
}

fn policy_name(p: PolicyArg) -> &'static str {
    match p {
        PolicyArg::Ss => "ss",
        PolicyArg::SsEh => "ss-eh",
        PolicyArg::JssEh => "jss-eh",
        PolicyArg::Lb => "lb",
    }
}

fn init_kind(init: InitArg, seed: u64) -> InitKind {
    match init {
        InitArg::Sseh => InitKind::FromSseh,
        InitArg::Zero => InitKind::UniformZero,
        InitArg::Random => InitKind::Random(seed),
    }
}

fn options(common: &SolveCommon) -> SolverOptions {
    let mut opts = SolverOptions {
        seed: common.seed,
        ..Default::default()
    };
    if let Some(tol) = common.tol {
        opts.tol = tol;
    }
    opts
}

fn solve_offline(sc: &Scenario, policy: PolicyArg, init: InitKind, opts: &SolverOptions) -> Result<RunResult, Error> {
    match policy {
        PolicyArg::Ss => solve_ss(sc, opts),
        PolicyArg::SsEh => solve_sseh(sc, opts),
        PolicyArg::JssEh => solve_jsseh(sc, init, opts),
        PolicyArg::Lb => lower_bound(sc, opts),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    scenario::load(path).map_err(|e| Failure::new(4, format!("cannot read {}: {e}", path.display())))
}

/// Writes to a sibling temporary file and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Failure::write(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Failure::write(path, e))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Vec<u8>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    fill(&mut w).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

fn allocation_csv(r: &RunResult) -> Vec<u8> {
    csv_bytes(&["t", "sensor", "z", "p", "s", "D_slot"], |w| {
        let a = &r.allocation;
        for t in 0..a.z.ncols() {
            for i in 0..a.z.nrows() {
                w.write_record(&[
                    t.to_string(),
                    i.to_string(),
                    a.z[[i, t]].to_string(),
                    a.p[[i, t]].to_string(),
                    a.s[[i, t]].to_string(),
                    r.per_slot_distortion[t].to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

/// Summary, allocation and (if present) trace files for one result.
fn write_result(prefix: &Path, r: &RunResult, label: serde_json::Value) -> Result<PathBuf, Failure> {
    let summary = json!({
        "run": label,
        "totalDistortion": r.total_distortion,
        "perSlotDistortion": r.per_slot_distortion,
        "preCropObjective": r.pre_crop_objective,
        "residuals": r.residuals,
        "iterations": r.residuals.iterations,
        "converged": r.residuals.converged,
        "wallTime": r.wall_time,
    });
    let path = with_suffix(prefix, ".summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("serializable summary");
    write_atomic(&path, text.as_bytes())?;
    write_atomic(&with_suffix(prefix, ".alloc.csv"), &allocation_csv(r))?;
    if let Some(trace) = &r.iterates {
        let bytes = csv_bytes(&["iter", "objective", "constraint_residual"], |w| {
            for (k, rec) in trace.iter().enumerate() {
                w.write_record(&[k.to_string(), rec.objective.to_string(), rec.constraint_residual.to_string()])?;
            }
            Ok(())
        });
        write_atomic(&with_suffix(prefix, ".trace.csv"), &bytes)?;
    }
    Ok(path)
}

/// Writes whatever result exists and turns the outcome into an exit code.
fn finish(prefix: &Path, outcome: Result<RunResult, Error>, label: serde_json::Value) -> Result<(), Failure> {
    match outcome {
        Ok(r) => {
            let path = write_result(prefix, &r, label)?;
            println!("status=ok total={} summary={}", r.total_distortion, path.display());
            Ok(())
        }
        Err(Error::NonConvergence {
            residual,
            iterations,
            partial,
        }) => {
            if let Some(r) = partial {
                let path = write_result(prefix, &r, label)?;
                println!("status=nonconvergence total={} summary={}", r.total_distortion, path.display());
            }
            Err(Failure::new(
                3,
                format!("solver did not converge after {iterations} iterations (residual {residual:e})"),
            ))
        }
        Err(e) => Err(solver_failure(e)),
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let sc = scenario::generate(&args.params.with_seed(args.seed)).map_err(|e| Failure::new(2, e))?;
    write_atomic(&args.out, scenario::to_json_string(&sc).as_bytes())?;
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let c = &args.common;
    let sc = load_scenario(&c.scenario)?;
    let opts = options(c);
    let outcome = solve_offline(&sc, args.policy, init_kind(c.init, c.seed), &opts);
    let label = json!({ "policy": policy_name(args.policy), "init": format!("{:?}", init_kind(c.init, c.seed)) });
    finish(&c.out_prefix, outcome, label)
}

fn events_csv(events: &[Event]) -> Vec<u8> {
    csv_bytes(&["slot", "sensors", "start", "end"], |w| {
        for e in events {
            let sensors: Vec<String> = e.sensors.iter().map(usize::to_string).collect();
            w.write_record(&[e.slot.to_string(), sensors.join(";"), e.start.to_string(), e.end.to_string()])?;
        }
        Ok(())
    })
}

fn cmd_online(args: OnlineArgs) -> Result<(), Failure> {
    let c = &args.common;
    let sc = load_scenario(&c.scenario)?;
    let cfg = OnlineConfig {
        policy: match args.policy {
            OnlinePolicyArg::SsEh => OnlinePolicy::SsEh,
            OnlinePolicyArg::JssEh => OnlinePolicy::JssEh,
        },
        window: args.window,
        options: options(c),
    };
    let window = match args.window {
        Window::FullHorizon => "full".to_string(),
        Window::Slots(w) => w.to_string(),
    };
    let label = json!({ "policy": format!("online-{:?}", cfg.policy), "window": window });
    match run_online(&sc, &cfg) {
        Ok(out) => {
            write_atomic(&with_suffix(&c.out_prefix, ".events.csv"), &events_csv(&out.events))?;
            finish(&c.out_prefix, Ok(out.result), label)
        }
        Err(e) => finish(&c.out_prefix, Err(e), label),
    }
}

struct Row {
    value: f64,
    policy: PolicyArg,
    seed: u64,
    total: f64,
}

fn replicate(args: &SweepArgs, value: f64, policy: PolicyArg, seed: u64) -> Result<Row, Failure> {
    let mut params = args.params.with_seed(seed);
    let opts = SolverOptions {
        seed,
        ..Default::default()
    };
    let run = |sc: &Scenario| -> Result<RunResult, Error> {
        if args.param == SweepParam::Tw {
            let policy = match policy {
                PolicyArg::SsEh => OnlinePolicy::SsEh,
                PolicyArg::JssEh => OnlinePolicy::JssEh,
                _ => return Err(Error::InvalidParams("a Tw sweep takes ss-eh or jss-eh".into())),
            };
            let cfg = OnlineConfig {
                policy,
                window: Window::Slots(value as usize),
                options: opts.clone(),
            };
            run_online(sc, &cfg).map(|o| o.result)
        } else {
            solve_offline(sc, policy, InitKind::FromSseh, &opts)
        }
    };
    match args.param {
        SweepParam::K => params.k = value as usize,
        SweepParam::Mu => params.mu = value,
        SweepParam::Tw => {}
    }
    let sc = scenario::generate(&params).map_err(|e| Failure::new(2, e))?;
    let total = match run(&sc) {
        Ok(r) => r.total_distortion,
        // A non-converged replicate still has a usable allocation.
        Err(Error::NonConvergence { partial: Some(r), .. }) => r.total_distortion,
        Err(e) => return Err(solver_failure(e)),
    };
    Ok(Row {
        value,
        policy,
        seed,
        total,
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let integral = matches!(args.param, SweepParam::K | SweepParam::Tw);
    if integral && args.values.iter().any(|&v| v < 1.0 || v.fract() != 0.0) {
        return Err(Failure::new(2, "K and Tw values must be positive integers"));
    }
    if args.param == SweepParam::Tw && args.policies.iter().any(|p| matches!(p, PolicyArg::Ss | PolicyArg::Lb)) {
        return Err(Failure::new(2, "a Tw sweep takes only ss-eh and jss-eh"));
    }
    let jobs: Vec<(f64, PolicyArg, u64)> = args
        .policies
        .iter()
        .flat_map(|&p| {
            args.values
                .iter()
                .flat_map(move |&v| (args.seed..args.seed + args.repeats).map(move |s| (v, p, s)))
        })
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(v, p, s)| replicate(&args, v, p, s))
        .collect::<Result<Vec<Row>, Failure>>()?;

    let param = match args.param {
        SweepParam::K => "K",
        SweepParam::Mu => "mu",
        SweepParam::Tw => "Tw",
    };
    let bytes = csv_bytes(&["param", "value", "policy", "seed", "total_distortion"], |w| {
        for r in &rows {
            w.write_record(&[
                param.to_string(),
                r.value.to_string(),
                policy_name(r.policy).to_string(),
                r.seed.to_string(),
                r.total.to_string(),
            ])?;
        }
        Ok(())
    });
    write_atomic(&args.out, &bytes)?;

    let bytes = csv_bytes(&["param", "value", "policy", "n", "mean", "stderr"], |w| {
        for &p in &args.policies {
            for &v in &args.values {
                let xs: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.policy == p && r.value == v)
                    .map(|r| r.total)
                    .collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = if n > 1.0 {
                    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                w.write_record(&[
                    param.to_string(),
                    v.to_string(),
                    policy_name(p).to_string(),
                    xs.len().to_string(),
                    mean.to_string(),
                    (var / n).sqrt().to_string(),
                ])?;
            }
        }
        Ok(())
    });
    write_atomic(&args.aggregate, &bytes)?;
    println!("status=ok rows={} out={} aggregate={}", rows.len(), args.out.display(), args.aggregate.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Online(a) => cmd_online(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
