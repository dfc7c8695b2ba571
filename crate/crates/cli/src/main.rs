use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use pssure::harness::{run_check, run_checks, run_experiment, CheckLevel, Experiment, ExperimentConfig, MethodSpec};
use pssure::sensitivity::{divergence, repair_solution};
use pssure::solver::solve;
use pssure::{Error, LossModel, Penalty, SolveResult};

/// Degrees of freedom and SURE for partly smooth regularized regression.
///
/// Set RAYON_NUM_THREADS to bound the number of worker threads.
#[derive(Parser)]
#[command(name = "pssure", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and report the solution summary.
    Solve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
        /// Write the coefficients to this CSV file.
        #[arg(long)]
        x_out: Option<PathBuf>,
    },
    /// Divergence (degrees of freedom) of the prediction at one instance.
    Dof {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
        #[arg(long, value_enum, default_value = "closed")]
        method: Method,
        /// Number of probes of the stochastic estimators.
        #[arg(long, default_value_t = 100)]
        probes: usize,
        /// Probe seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Finite-difference step; defaults to 1e-6 (1 + ‖y‖).
        #[arg(long)]
        eps: Option<f64>,
        /// Use every canonical probe with the finite-difference estimator.
        #[arg(long)]
        canonical: bool,
    },
    /// SURE, degrees of freedom and (when known) the true risk at one instance.
    Sure {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
        /// Experiment seed, overriding the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Risk curve over the configured λ grid.
    Curve {
        #[command(flatten)]
        common: Common,
        /// Experiment seed, overriding the configuration.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Output directory, overriding the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Move a solution to one whose restricted Hessian is positive definite.
    Repair {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: Cell,
    },
    /// Run the invariant suites.
    Check {
        #[arg(long, value_enum, default_value = "fast")]
        level: Level,
        /// Replay a single check by name.
        #[arg(long)]
        name: Option<String>,
        /// Seed of the replayed check.
        #[arg(long, requires = "name")]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    kkt_tol: Option<f64>,
    #[arg(long)]
    krylov_tol: Option<f64>,
    #[arg(long)]
    krylov_maxit: Option<usize>,
}

#[derive(Args)]
struct Cell {
    /// Regularization parameter; defaults to the first grid value.
    #[arg(long)]
    lambda: Option<f64>,
    /// Replication whose observation is used.
    #[arg(long, default_value_t = 0)]
    rep: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Closed,
    Exact,
    Mc,
    Fd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Fast,
    Full,
}

enum Failure {
    Solver(String),
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Io(_) => Failure::Config(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::load(&self.config).map_err(|e| Failure::Config(e.to_string()))?;
        let s = &mut cfg.solver;
        if let Some(v) = self.iters {
            s.iterations = v;
        }
        if let Some(v) = self.kkt_tol {
            s.kkt_tol = v;
        }
        if let Some(v) = self.krylov_tol {
            s.krylov_tol = v;
        }
        if let Some(v) = self.krylov_maxit {
            s.krylov_maxit = v;
        }
        Ok(cfg)
    }
}

struct Instance {
    exp: Experiment,
    penalty: Penalty,
    loss: LossModel,
    result: SolveResult,
}

fn instance(cfg: &ExperimentConfig, cell: &Cell) -> Result<Instance, Failure> {
    let exp = Experiment::build(cfg)?;
    if cell.rep >= cfg.replications {
        return Err(Failure::Config(format!("--rep {} exceeds the {} configured replications", cell.rep, cfg.replications)));
    }
    let lambda = cell.lambda.unwrap_or(exp.lambdas[0]);
    let penalty = Penalty::new(exp.problem.penalty.clone(), lambda).map_err(|e| Failure::Config(e.to_string()))?;
    let loss = LossModel::squared(exp.observation(cell.rep));
    let result = solve(&exp.problem.design, &loss, &penalty, &exp.options.solve).map_err(|e| Failure::Solver(e.to_string()))?;
    Ok(Instance { exp, penalty, loss, result })
}

fn summary(inst: &Instance) -> Value {
    let r = &inst.result;
    json!({
        "lambda": inst.penalty.lambda,
        "objective": r.objective,
        "kkt_residual": r.kkt_residual,
        "kkt_target": r.kkt_target,
        "converged": r.converged,
        "iterations": r.iterations,
        "polished": r.polished,
        "certificate_margin": r.certificate_margin,
        "manifold": format!("{:?}", r.active.manifold_id),
        "tangent_dim": r.active.tangent_dim,
    })
}

fn converged(inst: &Instance) -> Result<(), Failure> {
    let r = &inst.result;
    if r.converged {
        Ok(())
    } else {
        Err(Failure::Solver(format!(
            "solver did not converge: residual {:.3e} above {:.3e} after {} iterations",
            r.kkt_residual, r.kkt_target, r.iterations
        )))
    }
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON value"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve { common, cell, x_out } => {
            let inst = instance(&common.load()?, &cell)?;
            print(&summary(&inst));
            if let Some(path) = x_out {
                pssure::io::write_vector_csv(&path, &inst.result.x_hat).map_err(|e| Failure::Config(e.to_string()))?;
            }
            converged(&inst)
        }
        Command::Dof { common, cell, method, probes, seed, eps, canonical } => {
            let mut cfg = common.load()?;
            cfg.method = match method {
                Method::Closed => MethodSpec::Closed,
                Method::Exact => MethodSpec::Exact,
                Method::Mc => MethodSpec::Mc { probes, seed },
                Method::Fd => MethodSpec::Fd { probes, seed, eps, canonical },
            };
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let inst = instance(&cfg, &cell)?;
            converged(&inst)?;
            let x = &inst.exp.problem.design;
            let rep = divergence(x, &inst.loss, &inst.penalty, &inst.result, cfg.method.to_method(), &inst.exp.options.sensitivity)
                .map_err(|e| Failure::Solver(e.to_string()))?;
            print(&json!({
                "lambda": inst.penalty.lambda,
                "divergence": rep.divergence,
                "method": format!("{:?}", rep.method),
                "std_error": rep.mc_std_error,
                "cinj": rep.cinj,
                "min_restricted_eigenvalue": rep.min_restricted_eigenvalue,
                "tangent_dim": rep.tangent_dim,
                "certificate_margin": rep.certificate_margin,
            }));
            Ok(())
        }
        Command::Sure { common, cell, seed } => {
            let mut cfg = common.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let inst = instance(&cfg, &cell)?;
            converged(&inst)?;
            let x = &inst.exp.problem.design;
            let rep = divergence(x, &inst.loss, &inst.penalty, &inst.result, cfg.method.to_method(), &inst.exp.options.sensitivity)
                .map_err(|e| Failure::Solver(e.to_string()))?;
            let mu = &inst.result.mu_hat;
            let sure = pssure::risk::sure_gaussian(&inst.loss.y, mu, &pssure::LinkMap::Identity, rep.divergence, cfg.sigma);
            let risk = inst.exp.problem.mu0().map(|m| (mu - m).norm_squared());
            print(&json!({
                "lambda": inst.penalty.lambda,
                "rep": cell.rep,
                "sure": sure,
                "dof": rep.divergence,
                "risk": risk,
                "cinj": rep.cinj,
                "certificate_margin": rep.certificate_margin,
            }));
            Ok(())
        }
        Command::Curve { common, seed, reps, sigma, out } => {
            let mut cfg = common.load()?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = reps {
                cfg.replications = r;
            }
            if let Some(s) = sigma {
                cfg.sigma = s;
            }
            if out.is_some() {
                cfg.output = out;
            }
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let output = run_experiment(&cfg)?;
            print!("{}", output.curve.summary_csv());
            for f in &output.files {
                log::info!("wrote {}", f.display());
            }
            let failed: usize = output.curve.counts.iter().map(|&c| cfg.replications - c).sum();
            if failed > 0 {
                return Err(Failure::Solver(format!("{failed} cells failed")));
            }
            Ok(())
        }
        Command::Repair { common, cell } => {
            let inst = instance(&common.load()?, &cell)?;
            converged(&inst)?;
            let x = &inst.exp.problem.design;
            let out = repair_solution(x, &inst.loss, &inst.penalty, &inst.result).map_err(|e| Failure::Solver(e.to_string()))?;
            let history: Vec<Value> = out
                .history
                .iter()
                .map(|s| json!({"active_size": s.active_size, "tangent_dim": s.tangent_dim, "objective": s.objective, "step": s.step}))
                .collect();
            print(&json!({
                "lambda": inst.penalty.lambda,
                "history": history,
                "manifold": format!("{:?}", out.result.active.manifold_id),
            }));
            Ok(())
        }
        Command::Check { level, name, seed } => {
            let report = match name {
                Some(n) => {
                    let o = run_check(&n, seed.unwrap_or(20_240)).ok_or_else(|| Failure::Config(format!("unknown check {n:?}")))?;
                    pssure::harness::CheckReport { outcomes: vec![o] }
                }
                None => run_checks(match level {
                    Level::Fast => CheckLevel::Fast,
                    Level::Full => CheckLevel::Full,
                }),
            };
            print!("{report}");
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Solver(format!("{} checks failed", report.failures().count())))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
