use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;

use safesynth::certsynth::{Certificate, SynthesisConfig};
use safesynth::models::{synthesis_config, Benchmark};
use safesynth::pipeline::{reproduce, synthesize_certificate, write_stamped, PipelineConfig, RunOutcome};
use safesynth::planner::{Mpc, PlannerConfig};
use safesynth::simulator::{simulate, SimConfig};
use safesynth::sosprog::{backend_by_name, ConicBackend, Dumping};
use safesynth::thetaselect::{select_theta, ContainmentProblem, ThetaConfig, ThetaSelection};
use safesynth::verifier::{verify_all, SamplingPlan};

#[derive(Parser, Debug)]
#[command(name = "safesynth", version, about = "Planner-tracker safety synthesis")]
struct Cli {
    /// JSON configuration for the chosen subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of every sampling check.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Conic solver backend.
    #[arg(long, global = true, default_value = "ipm")]
    solver: String,
    /// Write every conic problem handed to the solver into this directory.
    #[arg(long, global = true)]
    dump_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ProblemArg {
    /// Problem definition; the bundled double pendulum when omitted.
    #[arg(long)]
    problem: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CertArg {
    /// Certificate file; the bundled certificate when omitted.
    #[arg(long)]
    cert: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ThetaArg {
    /// Parameter selection file written by `select-theta`.
    #[arg(long)]
    theta: Option<PathBuf>,
    /// Planner parameters given directly, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "theta")]
    theta_override: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the error bound and the tracking controller.
    Synthesize {
        #[command(flatten)]
        problem: ProblemArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of alternating iterations.
        #[arg(long)]
        iters: Option<usize>,
        /// Use the certificate's own level set as initial set and search again.
        #[arg(long)]
        omega_from_level: bool,
    },
    /// Size the planner constraint sets for a certificate.
    SelectTheta {
        #[command(flatten)]
        problem: ProblemArg,
        #[command(flatten)]
        cert: CertArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a certificate and, with a parameter, the containment by sampling.
    Verify {
        #[command(flatten)]
        problem: ProblemArg,
        #[command(flatten)]
        cert: CertArg,
        #[command(flatten)]
        theta: ThetaArg,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the planner alone in receding horizon on its own model.
    Plan {
        #[command(flatten)]
        problem: ProblemArg,
        #[command(flatten)]
        theta: ThetaArg,
        /// Initial planner state, comma separated.
        #[arg(long, value_delimiter = ',')]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        steps: usize,
    },
    /// Closed-loop run of planner and tracker.
    Simulate {
        #[command(flatten)]
        problem: ProblemArg,
        #[command(flatten)]
        cert: CertArg,
        #[command(flatten)]
        theta: ThetaArg,
    },
    /// Full benchmark study with comparison table.
    ReproducePaper,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn config_or<T: DeserializeOwned>(cli: &Cli, default: T) -> Result<T> {
    match &cli.config {
        Some(p) => read_json(p),
        None => Ok(default),
    }
}

fn load_problem(arg: &ProblemArg) -> Result<Benchmark> {
    match &arg.problem {
        Some(p) => read_json(p),
        None => Ok(Benchmark::bundled()?),
    }
}

fn load_cert(arg: &CertArg) -> Result<Certificate> {
    match &arg.cert {
        Some(p) => read_json(p),
        None => Ok(Benchmark::bundled_certificate()?),
    }
}

fn load_theta(arg: &ThetaArg) -> Result<Option<Vec<f64>>> {
    if let Some(t) = &arg.theta_override {
        return Ok(Some(t.clone()));
    }
    match &arg.theta {
        Some(p) => Ok(Some(read_json::<ThetaSelection>(p)?.theta_bar)),
        None => Ok(None),
    }
}

fn require_theta(arg: &ThetaArg) -> Result<Vec<f64>> {
    load_theta(arg)?.context("pass --theta or --theta-override")
}

fn backend(cli: &Cli) -> Result<Box<dyn ConicBackend>> {
    let inner = backend_by_name(&cli.solver)?;
    Ok(match &cli.dump_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Box::new(Dumping::new(inner, dir))
        }
        None => inner,
    })
}

/// Identifier written into every artifact of a single command.
fn run_id(cli: &Cli) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(format!("{} {cli:?}", env!("CARGO_PKG_VERSION")).as_bytes());
    hex::encode(digest)[..16].to_string()
}

fn output(cli: &Cli, given: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let path = given.clone().unwrap_or_else(|| cli.out_dir.join(name));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(path)
}

fn run(cli: &Cli) -> Result<bool> {
    let id = run_id(cli);
    match &cli.command {
        Command::Synthesize {
            problem,
            out,
            iters,
            omega_from_level,
        } => {
            let bench = load_problem(problem)?;
            let mut config: SynthesisConfig = config_or(cli, synthesis_config())?;
            if let Some(n) = iters {
                config.iterations = *n;
            }
            let cert =
                synthesize_certificate(&bench.synthesis_problem()?, &config, *omega_from_level, &*backend(cli)?)?;
            let path = output(cli, out, "certificate.json")?;
            write_stamped(&path, &id, &cert)?;
            println!(
                "gamma {:.6} after {} steps, written to {}",
                cert.gamma,
                cert.history.len(),
                path.display()
            );
            Ok(cert.history.windows(2).all(|w| w[1] <= w[0]))
        }
        Command::SelectTheta { problem, cert, out } => {
            let bench = load_problem(problem)?;
            let cert = load_cert(cert)?;
            let config: ThetaConfig = config_or(cli, ThetaConfig::default())?;
            let prob = ContainmentProblem::from_benchmark(&bench, &cert)?;
            let sel = select_theta(&prob, &config, &bench.synthesis_problem()?.hash()?, &*backend(cli)?)?;
            let path = output(cli, out, "theta.json")?;
            write_stamped(&path, &id, &sel)?;
            println!("theta-bar {:?}, written to {}", sel.theta_bar, path.display());
            Ok(true)
        }
        Command::Verify {
            problem,
            cert,
            theta,
            samples,
            out,
        } => {
            let bench = load_problem(problem)?;
            let cert = load_cert(cert)?;
            let mut plan: SamplingPlan = config_or(cli, SamplingPlan::default())?;
            if let Some(s) = cli.seed {
                plan.seed = s;
            }
            if let Some(n) = samples {
                plan.samples = *n;
            }
            let theta = load_theta(theta)?;
            let prob = match &theta {
                Some(_) => Some(ContainmentProblem::from_benchmark(&bench, &cert)?),
                None => None,
            };
            let containment = prob.as_ref().zip(theta.as_deref());
            let report = verify_all(&bench.synthesis_problem()?, &cert, containment, &plan)?;
            for c in &report.checks {
                println!("{}", c.line());
            }
            write_stamped(&output(cli, out, "verification.json")?, &id, &report)?;
            Ok(report.passed)
        }
        Command::Plan {
            problem,
            theta,
            x0,
            steps,
        } => {
            let bench = load_problem(problem)?;
            let theta = require_theta(theta)?;
            let config: PlannerConfig = config_or(cli, PlannerConfig::default())?;
            let mut mpc = Mpc::for_benchmark(&bench, &theta, config)?;
            let mut x = x0.clone().unwrap_or_else(|| bench.xhat0.clone());
            let path = output(cli, &None, &format!("plan_{id}.csv"))?;
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["t".to_string()];
            header.extend((1..=x.len()).map(|i| format!("xhat{i}")));
            header.extend((1..=bench.m_hat()).map(|i| format!("uhat{i}")));
            header.push("cost".into());
            w.write_record(&header)?;
            for k in 0..*steps {
                let sol = mpc.solve(&x)?;
                if k == 0 {
                    println!("{}", serde_json::to_string_pretty(&sol)?);
                }
                let t = k as f64 * mpc.model.ts;
                let row = std::iter::once(t)
                    .chain(x.iter().copied())
                    .chain(sol.input.iter().copied())
                    .chain(std::iter::once(sol.cost));
                w.write_record(row.map(|v| format!("{v:e}")))?;
                x = mpc.model.step(&x, &sol.input);
            }
            w.flush()?;
            info!("planner trace written to {}", path.display());
            Ok(true)
        }
        Command::Simulate { problem, cert, theta } => {
            let bench = load_problem(problem)?;
            let cert = load_cert(cert)?;
            let theta = require_theta(theta)?;
            let config: SimConfig = config_or(cli, SimConfig::default())?;
            let trace = simulate(&bench, &cert, &theta, &config)?;
            let csv_path = output(cli, &None, &format!("trace_{id}.csv"))?;
            trace.save_csv(&csv_path)?;
            let summary = trace.summary(&cert);
            write_stamped(&output(cli, &None, "summary.json")?, &id, &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            let outcome = RunOutcome::of(&trace, &cert, &bench.target_hat);
            Ok(outcome.safe(config.duration))
        }
        Command::ReproducePaper => {
            let bench = Benchmark::bundled()?;
            let mut config: PipelineConfig = config_or(cli, PipelineConfig::default())?;
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            let mut study = reproduce(&bench, &config, &*backend(cli)?)?;
            study.write(&cli.out_dir)?;
            print!("{}", study.table());
            if let Some(stage) = &study.verdict.failed_stage {
                println!("stage `{stage}` failed, see manifest.json");
            }
            println!(
                "theta-bar {:?}; verdict {} (written to {})",
                study.verdict.theta_bar,
                if study.verdict.passed { "pass" } else { "FAIL" },
                cli.out_dir.display()
            );
            Ok(study.verdict.passed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
