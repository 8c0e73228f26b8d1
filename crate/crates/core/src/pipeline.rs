//! End-to-end benchmark study: synthesis, parameter selection, verification
//! and closed-loop runs, with every artifact written to one directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certsynth::{initialize_v, synthesize, Certificate, SynthesisConfig, SynthesisProblem};
use crate::error::Result;
use crate::models::{synthesis_config, Benchmark};
use crate::polynomial::{Block, Polynomial};
use crate::semialg::SemialgebraicSet;
use crate::simulator::{simulate, SimConfig, SimStatus, SimTrace};
use crate::sosprog::ConicBackend;
use crate::thetaselect::{select_theta, ContainmentProblem, ThetaConfig, ThetaSelection};
use crate::verifier::{verify_all, verify_containment, CheckReport, SamplingPlan, VerificationReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Closed-loop tolerances of the selected-parameter run.
pub const RUN_STATE_TOL: f64 = 1e-6;
pub const RUN_LEVEL_TOL: f64 = 1e-6;
pub const RUN_TARGET_RADIUS: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synthesis: SynthesisConfig,
    pub theta: ThetaConfig,
    /// Sampling for every verifier check; its seed is replaced by `seed`.
    pub sampling: SamplingPlan,
    pub simulation: SimConfig,
    /// Hand-picked parameters expected to break containment.
    pub heuristic: Vec<Vec<f64>>,
    /// Offset added to the selected parameters for the failing bracket.
    pub bracket_step: f64,
    /// Re-run synthesis with the initial set replaced by `{V(·, 0) ≤ γ}`.
    pub omega_from_level: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            synthesis: synthesis_config(),
            theta: ThetaConfig::default(),
            sampling: SamplingPlan::default(),
            simulation: SimConfig::default(),
            heuristic: vec![vec![1.0, 1.0], vec![0.99, 0.99], vec![0.98, 0.98]],
            bracket_step: 0.05,
            omega_from_level: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum StageStatus {
    Done { seconds: f64 },
    Failed { error: String },
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Hash of tool version, problem and configuration.
    pub id: String,
    pub tool_version: String,
    pub problem_hash: String,
    pub seed: u64,
    pub solver: String,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(problem_hash: &str, solver: &str, config: &PipelineConfig) -> Result<RunManifest> {
        let mut h = Sha256::new();
        h.update(TOOL_VERSION.as_bytes());
        h.update(problem_hash.as_bytes());
        h.update(solver.as_bytes());
        h.update(serde_json::to_vec(config)?);
        Ok(RunManifest {
            id: hex::encode(h.finalize())[..16].to_string(),
            tool_version: TOOL_VERSION.into(),
            problem_hash: problem_hash.into(),
            seed: config.seed,
            solver: solver.into(),
            config: config.clone(),
            stages: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn stage(&self, name: &str) -> Option<&StageStatus> {
        self.stages.iter().find(|s| s.name == name).map(|s| &s.status)
    }
}

/// Closed-loop figures of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: SimStatus,
    pub substeps: usize,
    pub final_time: f64,
    pub min_state_margin: f64,
    pub min_input_margin: f64,
    /// `max_t V(e(t), θ) − γ`.
    pub max_level_excess: f64,
    pub final_xhat: Vec<f64>,
    pub target_distance: f64,
}

impl RunOutcome {
    pub fn of(trace: &SimTrace, cert: &Certificate, target: &[f64]) -> RunOutcome {
        let s = trace.summary(cert);
        let target_distance = s
            .final_xhat
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        RunOutcome {
            status: s.status,
            substeps: trace.substeps,
            final_time: s.final_time,
            min_state_margin: s.min_state_margin,
            min_input_margin: s.min_input_margin,
            max_level_excess: s.containment.max_excess,
            final_xhat: s.final_xhat,
            target_distance,
        }
    }

    /// Complete, inside `X`, inside the error bound and at the target.
    pub fn safe(&self, duration: f64) -> bool {
        self.status == SimStatus::Complete
            && self.final_time >= duration - 1e-9
            && self.min_state_margin >= -RUN_STATE_TOL
            && self.max_level_excess <= RUN_LEVEL_TOL
            && self.target_distance <= RUN_TARGET_RADIUS
    }
}

/// One planner parameter: containment check, optional closed-loop run and
/// whether both came out as expected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseVerdict {
    pub label: String,
    pub theta: Vec<f64>,
    pub expect_contained: bool,
    pub containment: CheckReport,
    pub run: Option<RunOutcome>,
    pub run_error: Option<String>,
    pub as_expected: bool,
}

/// Everything the study decides, without timings, so that equal inputs give
/// byte-identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub manifest_id: String,
    pub problem_hash: String,
    pub seed: u64,
    pub gamma: Option<f64>,
    pub gamma_history: Vec<f64>,
    pub theta_bar: Option<Vec<f64>>,
    pub certificate_checks: Option<VerificationReport>,
    pub cases: Vec<CaseVerdict>,
    pub failed_stage: Option<String>,
    pub passed: bool,
}

impl Verdict {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn case(&self, label: &str) -> Option<&CaseVerdict> {
        self.cases.iter().find(|c| c.label == label)
    }
}

/// Results of [`reproduce`], artifacts included.
pub struct Study {
    pub manifest: RunManifest,
    pub verdict: Verdict,
    pub certificate: Option<Certificate>,
    pub selection: Option<ThetaSelection>,
    pub traces: Vec<(String, SimTrace)>,
}

/// `{e : V(e, 0) ≤ γ}`. Since `V` does not increase in `θ`, it lies inside
/// every `O^θ` and is invariant, so it can serve as the initial set.
pub fn level_initial_set(cert: &Certificate) -> SemialgebraicSet {
    let zero = vec![0.0; cert.theta.dim()];
    SemialgebraicSet::default().le(
        cert.v.partial_eval(Block::Theta, &zero),
        Polynomial::constant(cert.gamma),
    )
}

/// Storage function initialization followed by the alternating search; with
/// `omega_from_level` a second search runs from the first result with the
/// initial set replaced by [`level_initial_set`].
pub fn synthesize_certificate(
    problem: &SynthesisProblem,
    config: &SynthesisConfig,
    omega_from_level: bool,
    backend: &dyn ConicBackend,
) -> Result<Certificate> {
    let v0 = initialize_v(problem, config, backend)?;
    let cert = synthesize(problem, &v0, config, backend)?;
    if !omega_from_level {
        return Ok(cert);
    }
    let mut relaxed = problem.clone();
    relaxed.omega = level_initial_set(&cert);
    info!("re-running synthesis with the level set of the first certificate as initial set");
    synthesize(&relaxed, &cert.v, config, backend)
}

fn label_of(prefix: &str, theta: &[f64]) -> String {
    let parts: Vec<String> = theta.iter().map(|t| format!("{t:.2}")).collect();
    format!("{prefix}-{}", parts.join("-"))
}

struct Stages<'a> {
    manifest: &'a mut RunManifest,
    failed: Option<String>,
}

impl Stages<'_> {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Option<T> {
        if self.failed.is_some() {
            self.record(name, StageStatus::Skipped);
            return None;
        }
        let started = Instant::now();
        match f() {
            Ok(v) => {
                let seconds = started.elapsed().as_secs_f64();
                info!("stage {name} done in {seconds:.1}s");
                self.record(name, StageStatus::Done { seconds });
                Some(v)
            }
            Err(e) => {
                warn!("stage {name} failed: {e}");
                self.record(name, StageStatus::Failed { error: e.to_string() });
                self.failed = Some(name.into());
                None
            }
        }
    }

    fn record(&mut self, name: &str, status: StageStatus) {
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status,
        });
    }
}

/// Runs the whole benchmark study. Stage failures are recorded in the
/// manifest and skip every later stage; the verdict then fails.
pub fn reproduce(bench: &Benchmark, config: &PipelineConfig, backend: &dyn ConicBackend) -> Result<Study> {
    let problem = bench.synthesis_problem()?;
    let problem_hash = problem.hash()?;
    let mut manifest = RunManifest::new(&problem_hash, backend.name(), config)?;
    let plan = SamplingPlan {
        seed: config.seed,
        ..config.sampling.clone()
    };
    let mut stages = Stages {
        manifest: &mut manifest,
        failed: None,
    };

    let cert = stages.run("synthesize", || {
        synthesize_certificate(&problem, &config.synthesis, config.omega_from_level, backend)
    });
    let containment = stages.run("containment-problem", || {
        ContainmentProblem::from_benchmark(bench, cert.as_ref().expect("synthesis succeeded"))
    });
    let selection = stages.run("select-theta", || {
        select_theta(
            containment.as_ref().expect("problem built"),
            &config.theta,
            &problem_hash,
            backend,
        )
    });
    let checks = stages.run("verify", || {
        let sel = selection.as_ref().expect("selection succeeded");
        verify_all(
            &problem,
            cert.as_ref().expect("synthesis succeeded"),
            Some((containment.as_ref().expect("problem built"), &sel.theta_bar)),
            &plan,
        )
    });
    let mut traces = Vec::new();
    let cases = stages.run("cases", || {
        let cert = cert.as_ref().expect("synthesis succeeded");
        let prob = containment.as_ref().expect("problem built");
        let star = &selection.as_ref().expect("selection succeeded").theta_bar;
        let bracket: Vec<f64> = star.iter().map(|t| t + config.bracket_step).collect();
        let mut list = vec![
            (label_of("selected", star), star.clone(), true, true),
            (label_of("bracket", &bracket), bracket, false, false),
        ];
        list.extend(
            config
                .heuristic
                .iter()
                .map(|t| (label_of("heuristic", t), t.clone(), false, true)),
        );
        let mut out = Vec::new();
        for (label, theta, expect_contained, run) in list {
            let report = verify_containment(prob, &theta, &plan)?;
            info!("{label}: {}", report.line());
            let (mut outcome, mut run_error) = (None, None);
            if run {
                match simulate(bench, cert, &theta, &config.simulation) {
                    Ok(trace) => {
                        outcome = Some(RunOutcome::of(&trace, cert, &bench.target_hat));
                        traces.push((label.clone(), trace));
                    }
                    Err(e) => run_error = Some(e.to_string()),
                }
            }
            let as_expected = if expect_contained {
                report.passed && outcome.as_ref().is_some_and(|o| o.safe(config.simulation.duration))
            } else {
                !report.passed
            };
            out.push(CaseVerdict {
                label,
                theta,
                expect_contained,
                containment: report,
                run: outcome,
                run_error,
                as_expected,
            });
        }
        Ok(out)
    });
    let failed_stage = stages.failed.clone();

    let cases = cases.unwrap_or_default();
    let passed = failed_stage.is_none()
        && checks.as_ref().is_some_and(|c| c.passed)
        && cert
            .as_ref()
            .is_some_and(|c| c.history.windows(2).all(|w| w[1] <= w[0]))
        && cases.iter().all(|c| c.as_expected);
    let verdict = Verdict {
        manifest_id: manifest.id.clone(),
        problem_hash,
        seed: config.seed,
        gamma: cert.as_ref().map(|c| c.gamma),
        gamma_history: cert.as_ref().map(|c| c.history.clone()).unwrap_or_default(),
        theta_bar: selection.as_ref().map(|s| s.theta_bar.clone()),
        certificate_checks: checks,
        cases,
        failed_stage,
        passed,
    };
    Ok(Study {
        manifest,
        verdict,
        certificate: cert,
        selection,
        traces,
    })
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    manifest_id: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Writes `body` as JSON with a `manifest_id` field added at the top level.
pub fn write_stamped<T: Serialize>(path: &Path, manifest_id: &str, body: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(&Stamped { manifest_id, body })?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

impl Study {
    /// Writes all artifacts into `dir` and lists them in the manifest, which
    /// is written last. Trace files carry the manifest id in their name.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let id = self.manifest.id.clone();
        let mut outputs: Vec<PathBuf> = Vec::new();
        let mut put = |name: String| {
            let p = dir.join(&name);
            outputs.push(p.clone());
            p
        };
        if let Some(c) = &self.certificate {
            write_stamped(&put("certificate.json".into()), &id, c)?;
        }
        if let Some(s) = &self.selection {
            write_stamped(&put("theta.json".into()), &id, s)?;
        }
        if let Some(c) = &self.verdict.certificate_checks {
            write_stamped(&put("verification.json".into()), &id, c)?;
        }
        for (label, trace) in &self.traces {
            trace.save_csv(&put(format!("trace_{label}_{id}.csv")))?;
        }
        std::fs::write(put("verdict.json".into()), self.verdict.to_json()?)?;
        self.manifest.outputs = outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        self.manifest.outputs.push("manifest.json".into());
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&self.manifest)? + "\n",
        )?;
        Ok(())
    }

    /// Comparison table of the cases, one line each.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<28} {:>14} {:>12} {:>12} {:>12}  {}\n",
            "case", "containment", "min m_x", "max V-γ", "|x̂-x̂*|", "as expected"
        );
        for c in &self.verdict.cases {
            let (mx, lv, td) = match &c.run {
                Some(r) => (
                    format!("{:.3e}", r.min_state_margin),
                    format!("{:.3e}", r.max_level_excess),
                    format!("{:.3e}", r.target_distance),
                ),
                None => ("-".into(), "-".into(), "-".into()),
            };
            s += &format!(
                "{:<28} {:>14} {:>12} {:>12} {:>12}  {}\n",
                c.label,
                format!("{:.3e}", c.containment.worst),
                mx,
                lv,
                td,
                if c.as_expected { "yes" } else { "NO" }
            );
        }
        s
    }
}
