//! Batch front end: instance generation, feasibility runs, partition
//! and Gibbs estimation, state learning, and the projector-OR demo.
//!
//! Every stochastic subcommand takes an explicit `--seed` and produces
//! byte-identical reports for identical invocations (the `timestamp_ms`
//! field aside). Exit codes: 0 success, 2 usage error, 3 contract
//! violation, 4 resource or learner failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mmwqsdp::error::{Error, Result};
use mmwqsdp::gen::{self, GenOptions};
use mmwqsdp::gibbs::{
    ConsistentEstimator, GibbsEngine, PrepareOptions, prepare_gibbs,
};
use mmwqsdp::io::{self, matrix_to_data};
use mmwqsdp::learn::{jaynes_reconstruct, learn_state, verify_shadow, LearnBackend};
use mmwqsdp::linalg::trace_distance;
use mmwqsdp::mmw::{
    default_oracle_failure, solve_feasibility, SdpInstance, SolveOptions, Verdict,
};
use mmwqsdp::oracle::{
    ExactOracle, OrSimOracle, QuantumInputTables, SampledOracle, SearchConfig, ViolationOracle,
};
use mmwqsdp::orsim::{gap_verdict, GroverSpec, OrInstance};
use mmwqsdp::report::{new_report, to_pretty_string, Report};
use mmwqsdp::rng::Rng;

#[derive(Parser)]
#[command(
    name = "mmwqsdp",
    version,
    about = "Trace-constrained SDP feasibility testbed: multiplicative-weights solver, \
             sampled violation oracles, projector-OR simulator, low-rank Gibbs estimators, \
             and a maximum-entropy state learner"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the feasibility solver on an SDP instance file.
    SolveFeasibility(SolveArgs),
    /// Estimate the partition pieces of a decomposed Hermitian.
    EstimatePartition(PartitionArgs),
    /// Assemble an empirical Gibbs state and report its accuracy.
    SampleGibbs(SampleGibbsArgs),
    /// Learn a Gibbs-form description of a target state.
    LearnState(LearnArgs),
    /// Acceptance-gap demo of the projector-OR test.
    OrDemo(OrDemoArgs),
    /// Emit a fixture instance file.
    GenInstance(GenArgs),
    /// Quick internal consistency battery.
    Selftest,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Override the instance tolerance.
    #[arg(long)]
    eps: Option<f64>,
    /// exact | plain-sampled | quantum-sampled | or-sim
    #[arg(long, default_value = "exact")]
    backend: String,
    /// Per-round failure budget for statistical backends.
    #[arg(long)]
    delta_fail: Option<f64>,
    /// Shots per statistical test.
    #[arg(long)]
    shots: Option<u64>,
    /// Override the multiplicative-weights step size (default eps/4).
    #[arg(long)]
    override_delta: Option<f64>,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Rounding-grid width (default eps/8).
    #[arg(long)]
    override_delta: Option<f64>,
}

#[derive(Args)]
struct SampleGibbsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    /// Halve the support-sampler acceptance factor.
    #[arg(long)]
    safety_halving: bool,
}

#[derive(Args)]
struct LearnArgs {
    /// Measurement-set file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Target-state file; the sampled backend touches it only through
    /// overlap statistics.
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    /// exact | sampled
    #[arg(long, default_value = "exact")]
    backend: String,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    delta_fail: Option<f64>,
}

#[derive(Args)]
struct OrDemoArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    trials: u64,
}

#[derive(Args)]
struct GenArgs {
    /// lower-bound | planted-feasible | grover-or | low-rank-gibbs |
    /// rank1-measurements | random-state
    #[arg(long)]
    fixture: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    bound: Option<f64>,
    #[arg(long)]
    terms: Option<usize>,
}

fn emit(report: Report, out: Option<&PathBuf>) -> Result<()> {
    let text = to_pretty_string(&report)?;
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_sdp(path: &PathBuf, eps_override: Option<f64>) -> Result<SdpInstance> {
    let file = io::load(path)?;
    let sdp = file.expect_sdp()?;
    let inst = sdp.to_instance()?;
    match eps_override {
        None => Ok(inst),
        Some(eps) => SdpInstance::new(
            inst.dim(),
            inst.constraints().to_vec(),
            eps,
            inst.meta.clone(),
        ),
    }
}

fn run_solve(args: &SolveArgs) -> Result<Report> {
    let inst = load_sdp(&args.input, args.eps)?;
    let delta_fail = args
        .delta_fail
        .unwrap_or_else(|| default_oracle_failure(inst.dim(), inst.epsilon(), 400.0));
    let cfg = SearchConfig {
        shots_per_test: args.shots,
        delta_fail,
        boost_override: None,
        copy_budget: None,
    };
    let opts = SolveOptions {
        delta_override: args.override_delta,
        record_states: false,
    };
    let mut rng = Rng::new(args.seed);

    let tables;
    let mut oracle: Box<dyn ViolationOracle> = match args.backend.as_str() {
        "exact" => Box::new(ExactOracle::new(&inst)),
        "plain-sampled" => Box::new(SampledOracle::plain(&inst, cfg.clone())),
        "quantum-sampled" => {
            tables = QuantumInputTables::from_instance(&inst)?;
            Box::new(SampledOracle::quantum(&tables, cfg.clone()))
        }
        "or-sim" => {
            tables = QuantumInputTables::from_instance(&inst)?;
            Box::new(OrSimOracle::new(&tables, cfg.clone())?)
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown backend \"{other}\"; expected exact, plain-sampled, \
                 quantum-sampled, or or-sim"
            )))
        }
    };

    let result = solve_feasibility(&inst, oracle.as_mut(), &mut rng, &opts)?;
    let witness = result
        .witness
        .as_ref()
        .map(|w| matrix_to_data(w.as_matrix()));
    let record = result.record();
    Ok(new_report(
        "solve-feasibility",
        Some(args.seed),
        json!({
            "input": args.input.display().to_string(),
            "backend": args.backend,
            "eps": inst.epsilon(),
            "delta_fail": delta_fail,
            "shots": args.shots,
            "override_delta": args.override_delta,
            "dim": inst.dim(),
            "constraints": inst.len(),
        }),
        json!({
            "record": record,
            "witness": witness,
        }),
    ))
}

fn run_partition(args: &PartitionArgs) -> Result<Report> {
    let file = io::load(&args.input)?;
    let spec = file.expect_gibbs()?.to_spec()?;
    let grid = args.override_delta.unwrap_or(args.eps / 8.0);
    let rng = Rng::new(args.seed);
    let est = ConsistentEstimator::draw(grid, 0.0, &mut rng.child(0))?;
    let engine = GibbsEngine::new(&spec, est)?;
    let lambda_min = engine.estimate_lambda_min(0.01, &mut rng.child(1))?;
    let z = engine.estimate_z_supp(args.eps, &lambda_min, &mut rng.child(2))?;
    let kernel = engine.estimate_kernel_dim(args.eps, &mut rng.child(3))?;
    let z_prime = z.value.max(0.0) + kernel.value.clamp(0.0, spec.dim() as f64);
    let exact_gibbs = engine.k_matrix().gibbs_of()?;
    let exact_z = {
        let spec_k = engine.spectrum();
        spec_k.eigenvalues.iter().map(|l| (-l).exp()).sum::<f64>()
    };
    drop(exact_gibbs);
    Ok(new_report(
        "estimate-partition",
        Some(args.seed),
        json!({
            "input": args.input.display().to_string(),
            "eps": args.eps,
            "grid": grid,
            "dim": spec.dim(),
        }),
        json!({
            "z_supp": z,
            "kernel_dim": kernel,
            "z_prime": z_prime,
            "lambda_min": lambda_min,
            "exact_partition": exact_z,
        }),
    ))
}

fn run_sample_gibbs(args: &SampleGibbsArgs) -> Result<Report> {
    let file = io::load(&args.input)?;
    let spec = file.expect_gibbs()?.to_spec()?;
    let mut rng = Rng::new(args.seed);
    let opts = PrepareOptions {
        safety_halving: args.safety_halving,
        xi_override: None,
    };
    let (state, diagnostics) = prepare_gibbs(&spec, args.eps, &mut rng, &opts)?;
    let (k, _) = spec.assemble_k()?;
    let exact = k.gibbs_of()?;
    let distance = trace_distance(&state, &exact)?;
    Ok(new_report(
        "sample-gibbs",
        Some(args.seed),
        json!({
            "input": args.input.display().to_string(),
            "eps": args.eps,
            "safety_halving": args.safety_halving,
            "dim": spec.dim(),
        }),
        json!({
            "diagnostics": diagnostics,
            "state": matrix_to_data(state.as_matrix()),
            "trace_distance_to_exact": distance,
            "within_eps": distance <= args.eps,
        }),
    ))
}

fn run_learn(args: &LearnArgs) -> Result<Report> {
    let meas = io::load(&args.input)?.expect_measurements()?.to_set()?;
    let target = io::load(&args.target)?.expect_state()?.to_state()?;
    let backend = match args.backend.as_str() {
        "exact" => LearnBackend::Exact,
        "sampled" => LearnBackend::Sampled {
            shots: args.shots,
            copy_budget: None,
            delta_fail: args.delta_fail,
        },
        other => {
            return Err(Error::Usage(format!(
                "unknown backend \"{other}\"; expected exact or sampled"
            )))
        }
    };
    let mut rng = Rng::new(args.seed);
    let outcome = learn_state(&meas, &target, args.eps, &backend, &mut rng)?;
    let rebuilt = jaynes_reconstruct(&outcome.description, &meas)?;
    let reconstruction_distance = trace_distance(&rebuilt, &outcome.sigma)?;
    let max_deviation = verify_shadow(&outcome.sigma, &target, &meas)?;
    let aggregated: Vec<(usize, f64)> = outcome.description.aggregated().into_iter().collect();
    Ok(new_report(
        "learn-state",
        Some(args.seed),
        json!({
            "input": args.input.display().to_string(),
            "target": args.target.display().to_string(),
            "backend": outcome.backend,
            "eps": args.eps,
            "shots": args.shots,
            "operators": meas.len(),
            "dim": meas.dim(),
        }),
        json!({
            "description": outcome.description,
            "aggregated_coefficients": aggregated,
            "rounds": outcome.rounds,
            "round_cap": outcome.round_cap,
            "counters": outcome.counters,
            "max_deviation": max_deviation,
            "within_eps": max_deviation <= args.eps,
            "reconstruction_distance": reconstruction_distance,
            "sigma": matrix_to_data(outcome.sigma.as_matrix()),
        }),
    ))
}

fn run_or_demo(args: &OrDemoArgs) -> Result<Report> {
    let inst: OrInstance = io::load(&args.input)?.expect_or()?.to_instance()?;
    let spec = GroverSpec::from_instance(&inst)?;
    let mut rng = Rng::new(args.seed);
    let verdict = gap_verdict(&inst, args.trials, &mut rng)?;

    println!("projector-OR acceptance demo");
    println!("  projectors m        : {}", inst.m);
    println!("  dimension d         : {}", inst.dim());
    println!("  eps / phi / xi      : {} / {} / {}", inst.eps, inst.phi, inst.xi);
    println!("  threshold angles    : a = {:.6}, b = {:.6}", spec.angle_a, spec.angle_b);
    println!("  ancilla dimension   : {}", spec.ancilla_dim);
    println!("  marked-case floor   : {:.6}", verdict.accept_lower);
    println!("  unmarked-case cap   : {:.6}", verdict.reject_upper);
    println!("  empirical rate      : {:.6}  ({} trials)", verdict.empirical_rate, verdict.trials);
    println!("  verdict             : {:?}", verdict.case);

    Ok(new_report(
        "or-demo",
        Some(args.seed),
        json!({
            "input": args.input.display().to_string(),
            "trials": args.trials,
            "m": inst.m,
            "dim": inst.dim(),
            "eps": inst.eps,
            "phi": inst.phi,
            "xi": inst.xi,
        }),
        json!({
            "grover": spec,
            "verdict": verdict,
        }),
    ))
}

fn run_gen(args: &GenArgs) -> Result<()> {
    let defaults = GenOptions::default();
    let opts = GenOptions {
        n: args.n.unwrap_or(defaults.n),
        m: args.m.unwrap_or(defaults.m),
        k: args.k.unwrap_or(defaults.k),
        eps: args.eps.unwrap_or(defaults.eps),
        xi: args.xi.unwrap_or(defaults.xi),
        margin: args.margin.unwrap_or(defaults.margin),
        rank: args.rank.unwrap_or(defaults.rank),
        bound: args.bound.unwrap_or(defaults.bound),
        terms: args.terms.unwrap_or(defaults.terms),
        seed: args.seed,
    };
    let file = gen::generate(&args.fixture, &opts)?;
    io::save(&args.out, &file)?;
    Ok(())
}

fn run_selftest() -> Result<()> {
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{}  {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // Spectral kernel basics.
    let h = mmwqsdp::linalg::HermitianMatrix::diagonal(&[3.0, 1.0]);
    let s = h.eigh()?;
    check("eigh sorts ascending", (s.eigenvalues[0] - 1.0).abs() < 1e-12);
    let g = mmwqsdp::linalg::HermitianMatrix::zeros(4).gibbs_of()?;
    check(
        "uniform Gibbs weight",
        (g.as_matrix()[(0, 0)].re - 0.25).abs() < 1e-12,
    );

    // Feasibility loop on the built-in infeasible family.
    let file = gen::lower_bound(4, 3, 7)?;
    let inst = file.expect_sdp()?.to_instance()?;
    let mut oracle = ExactOracle::new(&inst);
    let mut rng = Rng::new(7);
    let res = solve_feasibility(&inst, &mut oracle, &mut rng, &SolveOptions::default())?;
    check(
        "infeasible family rejected",
        matches!(res.verdict, Verdict::Infeasible),
    );

    // Rounding model.
    let est = ConsistentEstimator::with_shift(0.02, 0.05, 0.0)?;
    check(
        "grid rounding stays close",
        (est.round_eig(0.42) - 0.42).abs() <= 0.025,
    );

    // Projector-OR acceptance on the marked embedding.
    let or_file = gen::grover_or(4, 1, 1.0 / 3.0, 0.05, 1)?;
    let or_inst = or_file.expect_or()?.to_instance()?;
    let mut rng = Rng::new(9);
    let verdict = gap_verdict(&or_inst, 400, &mut rng)?;
    check(
        "marked search accepted",
        matches!(verdict.case, mmwqsdp::orsim::GapCase::Marked),
    );

    if failures > 0 {
        return Err(Error::Contract(format!("{failures} selftest checks failed")));
    }
    println!("selftest: all checks passed");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SolveFeasibility(args) => emit(run_solve(&args)?, args.out.as_ref()),
        Command::EstimatePartition(args) => emit(run_partition(&args)?, args.out.as_ref()),
        Command::SampleGibbs(args) => emit(run_sample_gibbs(&args)?, args.out.as_ref()),
        Command::LearnState(args) => emit(run_learn(&args)?, args.out.as_ref()),
        Command::OrDemo(args) => emit(run_or_demo(&args)?, args.out.as_ref()),
        Command::GenInstance(args) => run_gen(&args),
        Command::Selftest => run_selftest(),
    }
}

fn main() -> ExitCode {
    mmwqsdp::configure_threads_from_env();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
