//! Experiment runner: JSON-configured pipelines from a seeded control through
//! optimization to the free-boundary analyses, with every artifact hashed
//! into a manifest so that reruns are bitwise reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjoint::{compute_fg, objective, solve_switch, SwitchField};
use crate::blowup::{classify_profiles, match_blowup};
use crate::error::{Error, Result};
use crate::geometry::{
    find_intermediate_density_point, perimeter, stability_eigenvalue, trace_level_curves,
    DiscreteSet,
};
use crate::grid::{write_field, ScalarField, TorusGrid};
use crate::optimize::{
    run_projected_gradient, run_thresholding, second_order_check, OptimizationReport,
    OptimizeConfig, Scheme,
};
use crate::state::{solve_state, ControlMode, ProblemSpec, StateSolution};
use crate::suite::seeded_bang_bang;
use crate::weiss::{candidate_points, extract_blowup, weiss_profile, DEFAULT_ENVELOPE_BETA};

/// Grid dimensions for an experiment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
}

/// Which analyses to run after the optimization stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisFlags {
    pub weiss: bool,
    pub blowup_match: bool,
    pub boundary: bool,
    pub density: bool,
    pub second_order: bool,
    /// Viscosities for a fragmentation sweep, strictly decreasing.
    pub fragmentation_sweep: Option<Vec<f64>>,
    /// Radii for Weiss profiles; defaults scale with the grid.
    pub weiss_radii: Option<Vec<f64>>,
    /// Ball radius for the intermediate-density search.
    pub density_eps: Option<f64>,
}

/// A complete experiment description, loaded from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub spec: ProblemSpec,
    pub grid: GridConfig,
    #[serde(default)]
    pub optimize: Option<OptimizeConfig>,
    #[serde(default)]
    pub analyses: AnalysisFlags,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config parse: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Structural validation; every run starts here.
    pub fn validate(&self) -> Result<()> {
        self.spec.check()?;
        TorusGrid::new(self.grid.d, self.grid.n)?;
        if let Some(cfg) = &self.optimize {
            cfg.check()?;
        }
        if let Some(mus) = &self.analyses.fragmentation_sweep {
            if mus.is_empty() {
                return Err(Error::InvalidInput("empty fragmentation sweep".into()));
            }
            if !mus.iter().all(|m| m.is_finite() && *m > 0.0) {
                return Err(Error::InvalidInput("sweep viscosities must be positive".into()));
            }
            if !mus.windows(2).all(|w| w[1] < w[0]) {
                return Err(Error::InvalidInput(
                    "sweep viscosities must be strictly decreasing".into(),
                ));
            }
        }
        if let Some(radii) = &self.analyses.weiss_radii {
            if radii.len() < 2 || !radii.windows(2).all(|w| w[1] < w[0]) {
                return Err(Error::InvalidInput(
                    "weiss_radii must be strictly decreasing with at least 2 entries".into(),
                ));
            }
        }
        if let Some(eps) = self.analyses.density_eps {
            if !(eps.is_finite() && eps > 0.0 && eps <= 0.5) {
                return Err(Error::InvalidInput("density_eps must lie in (0, 0.5]".into()));
            }
        }
        Ok(())
    }

    fn volume_hint(&self) -> f64 {
        match self.spec.mode {
            ControlMode::Constrained { volume } => volume,
            ControlMode::Penalized { .. } => 0.5,
        }
    }
}

/// One produced file, hashed for reproducibility checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// A stage failure recorded without aborting independent stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

/// The run manifest: config echo plus every artifact with its content hash.
/// Deliberately free of timestamps so identical runs hash identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
    pub errors: Vec<StageError>,
}

/// Exit classification for a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    ValidationFailure,
    SolverFailure,
    AnalysisFailure,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::ValidationFailure => 2,
            RunStatus::SolverFailure => 3,
            RunStatus::AnalysisFailure => 4,
        }
    }
}

/// Which pipeline stages a subcommand wants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelect {
    /// Seeded control + state solve only.
    Solve,
    /// Through optimization, then every analysis enabled in the config.
    Full,
    /// Through optimization, then exactly one analysis regardless of config.
    Only(Analysis),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Weiss,
    Boundary,
}

struct Emitter {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let full = self.dir.join(name);
        let bytes = fs::read(&full)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: format!("{:x}", hasher.finalize()),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        fs::write(self.dir.join(name), text)?;
        self.record(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Format(format!("serialize {name}: {e}")))?;
        self.write_text(name, &text)
    }

    fn write_bbf(&mut self, name: &str, field: &ScalarField) -> Result<()> {
        write_field(&self.dir.join(name), field)?;
        self.record(name)
    }
}

/// The optimization products shared by all analyses.
struct OptimumArtifacts {
    report: OptimizationReport,
    state: StateSolution,
    eta: SwitchField,
}

fn optimize_stage(
    config: &ExperimentConfig,
    grid: TorusGrid,
    em: &mut Emitter,
) -> Result<OptimumArtifacts> {
    let opt_cfg = config
        .optimize
        .clone()
        .unwrap_or_else(|| OptimizeConfig::thresholding(200));
    let m_init = seeded_bang_bang(grid, config.volume_hint(), config.seed);
    let report = match opt_cfg.scheme {
        Scheme::Thresholding => run_thresholding(&config.spec, &opt_cfg, &m_init)?,
        Scheme::ProjectedGradient => run_projected_gradient(&config.spec, &opt_cfg, &m_init)?,
    };
    let state = solve_state(&config.spec, &report.final_control, None)?;
    let shift = report.threshold_trace.last().copied().unwrap_or(0.0);
    let eta = solve_switch(&config.spec, &report.final_control, &state)?.with_shift(shift);

    em.write_bbf("control.bbf", &report.final_control)?;
    em.write_bbf("state.bbf", state.log_state())?;
    em.write_bbf("switch.bbf", &eta.eta)?;
    em.write_json("optimize_report.json", &report)?;
    let mut trace = String::from("iter,objective,threshold\n");
    for (i, j) in report.objective_trace.iter().enumerate() {
        let c = report.threshold_trace.get(i).copied().unwrap_or(f64::NAN);
        trace.push_str(&format!("{i},{j:.17e},{c:.17e}\n"));
    }
    em.write_text("objective_trace.csv", &trace)?;
    Ok(OptimumArtifacts { report, state, eta })
}

/// Deduplicated critical-point centers of the shifted switch field.
fn critical_centers(eta_bar: &ScalarField, cap: usize) -> Vec<[f64; 2]> {
    let grid = eta_bar.grid();
    let mut centers: Vec<[f64; 2]> = Vec::new();
    for idx in candidate_points(eta_bar) {
        let c3 = grid.center(idx);
        let c = [c3[0], c3[1]];
        let fresh = centers.iter().all(|k| {
            let dx = c[0] - k[0] - (c[0] - k[0]).round();
            let dy = c[1] - k[1] - (c[1] - k[1]).round();
            dx * dx + dy * dy > 0.03 * 0.03
        });
        if fresh && centers.len() < cap {
            centers.push(c);
        }
    }
    centers
}

fn default_weiss_radii(grid: TorusGrid) -> Vec<f64> {
    // Geometric ladder from 0.16 down, floored at 4h.
    let mut radii = Vec::new();
    let mut r = 0.16;
    while r >= 4.0 * grid.h() && radii.len() < 5 {
        radii.push(r);
        r *= 0.7;
    }
    radii
}

#[derive(Serialize)]
struct WeissPointSummary {
    center: [f64; 2],
    envelope_c: f64,
    envelope_beta: f64,
    violations: usize,
    csv: Option<String>,
}

#[derive(Serialize)]
struct WeissSummary {
    radii: Vec<f64>,
    analysed: Vec<WeissPointSummary>,
    skipped: usize,
}

fn weiss_stage(
    config: &ExperimentConfig,
    opt: &OptimumArtifacts,
    em: &mut Emitter,
) -> Result<()> {
    let eta_bar = opt.eta.shifted();
    let grid = eta_bar.grid();
    let fg = compute_fg(&config.spec, &opt.report.final_control, &opt.state, &opt.eta);
    let radii = config
        .analyses
        .weiss_radii
        .clone()
        .unwrap_or_else(|| default_weiss_radii(grid));
    if radii.len() < 2 {
        return Err(Error::UnresolvedRadius {
            radius: 4.0 * grid.h(),
            reason: "grid too coarse for a Weiss radius ladder".into(),
        });
    }
    let centers = critical_centers(&eta_bar, 8);
    let mut summary = WeissSummary { radii: radii.clone(), analysed: Vec::new(), skipped: 0 };
    for (k, c) in centers.iter().enumerate() {
        let profile = match weiss_profile(&eta_bar, &fg.f, &fg.g, c, &radii) {
            Ok(p) => p,
            Err(Error::InvalidInput(_)) => {
                summary.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let name = format!("weiss_point_{k}.csv");
        em.write_text(&name, &profile.to_csv())?;
        let (c_fit, beta) = profile.envelope;
        let violations = crate::weiss::envelope_check(&profile, c_fit, beta).len();
        summary.analysed.push(WeissPointSummary {
            center: *c,
            envelope_c: c_fit,
            envelope_beta: DEFAULT_ENVELOPE_BETA,
            violations,
            csv: Some(name),
        });
    }
    em.write_json("weiss_summary.json", &summary)
}

#[derive(Serialize)]
struct BlowupSummary {
    center: Option<[f64; 2]>,
    f0: f64,
    g0: f64,
    regime: Option<crate::weiss::Regime>,
    matched: Option<crate::blowup::BlowupMatch>,
    note: Option<String>,
}

fn blowup_stage(
    config: &ExperimentConfig,
    opt: &OptimumArtifacts,
    em: &mut Emitter,
) -> Result<()> {
    let eta_bar = opt.eta.shifted();
    let grid = eta_bar.grid();
    let fg = compute_fg(&config.spec, &opt.report.final_control, &opt.state, &opt.eta);
    let centers = critical_centers(&eta_bar, 1);
    let Some(center) = centers.first() else {
        let summary = BlowupSummary {
            center: None,
            f0: 0.0,
            g0: 0.0,
            regime: None,
            matched: None,
            note: Some("no critical points detected at grid resolution".into()),
        };
        return em.write_json("blowup_match.json", &summary);
    };
    // Local phase weights: ball averages of f over E and g over the complement.
    let r_loc = (16.0 * grid.h()).min(0.1);
    let mut f_sum = 0.0;
    let mut f_cnt = 0usize;
    let mut g_sum = 0.0;
    let mut g_cnt = 0usize;
    for idx in 0..grid.len() {
        let p = grid.center(idx);
        let dx = p[0] - center[0] - (p[0] - center[0]).round();
        let dy = p[1] - center[1] - (p[1] - center[1]).round();
        if dx * dx + dy * dy > r_loc * r_loc {
            continue;
        }
        if opt.report.final_control.get(idx) > 0.5 {
            f_sum += fg.f.get(idx);
            f_cnt += 1;
        } else {
            g_sum += fg.g.get(idx);
            g_cnt += 1;
        }
    }
    let f0 = if f_cnt > 0 { f_sum / f_cnt as f64 } else { 0.0 };
    let g0 = if g_cnt > 0 { g_sum / g_cnt as f64 } else { 0.0 };
    if !(f0 > 0.0 && f0 + g0 > 0.0) {
        let summary = BlowupSummary {
            center: Some(*center),
            f0,
            g0,
            regime: None,
            matched: None,
            note: Some("local phase weights leave the catalogue regime".into()),
        };
        return em.write_json("blowup_match.json", &summary);
    }
    let catalogue = classify_profiles(f0, g0, 12)?;
    let r0 = (0.16f64).max(8.0 * grid.h());
    let r_seq: Vec<f64> = (0..4).map(|k| r0 * 0.5f64.powi(k)).collect();
    let blow = extract_blowup(&eta_bar, center, &r_seq)?;
    let matched = match_blowup(&blow.limit_candidate, &catalogue)?;
    let summary = BlowupSummary {
        center: Some(*center),
        f0,
        g0,
        regime: Some(blow.regime),
        matched: Some(matched),
        note: None,
    };
    em.write_json("blowup_match.json", &summary)
}

#[derive(Serialize)]
struct CurveSummary {
    length: f64,
    near_critical: bool,
    sigma1: Option<f64>,
    sigma1_error: Option<String>,
}

#[derive(Serialize)]
struct BoundarySummary {
    level: f64,
    perimeter: f64,
    curves: Vec<CurveSummary>,
}

fn boundary_stage(opt: &OptimumArtifacts, em: &mut Emitter) -> Result<()> {
    let level = opt.report.threshold_trace.last().copied().unwrap_or(0.0);
    let set = trace_level_curves(&opt.eta.eta, level)?;
    em.write_text("curves.json", &set.to_json()?)?;
    let e = DiscreteSet::from_field(&opt.report.final_control, 0.5);
    let mut curves = Vec::new();
    for curve in &set.curves {
        let (sigma1, sigma1_error) =
            match stability_eigenvalue(&opt.eta.eta, &curve.vertices, false) {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
        curves.push(CurveSummary {
            length: curve.length,
            near_critical: curve.near_critical,
            sigma1,
            sigma1_error,
        });
    }
    let summary = BoundarySummary { level, perimeter: perimeter(&e), curves };
    em.write_json("boundary_summary.json", &summary)
}

#[derive(Serialize)]
struct DensitySummary {
    point: crate::geometry::IntermediateDensityPoint,
    eps: f64,
    verified: bool,
}

fn density_stage(
    config: &ExperimentConfig,
    opt: &OptimumArtifacts,
    em: &mut Emitter,
) -> Result<()> {
    let grid = opt.report.final_control.grid();
    let e = DiscreteSet::from_field(&opt.report.final_control, 0.5);
    let x0_idx = (0..grid.len())
        .find(|&i| e.contains(i) != e.contains(grid.neighbor(i, 0, 1)))
        .ok_or_else(|| Error::DegenerateInput("control has a single phase".into()))?;
    let c3 = grid.center(x0_idx);
    let eps = config.analyses.density_eps.unwrap_or(0.2);
    let point = find_intermediate_density_point(&e, &[c3[0], c3[1]], eps)?;
    let verified = crate::geometry::intermediate_density_verified(&e, point.point, eps)?;
    em.write_json("density_point.json", &DensitySummary { point, eps, verified })
}

fn second_order_stage(
    config: &ExperimentConfig,
    opt: &OptimumArtifacts,
    em: &mut Emitter,
) -> Result<()> {
    let report = second_order_check(
        &config.spec,
        &opt.report.final_control,
        &opt.eta,
        200,
        0.05,
        config.seed,
    )?;
    em.write_json("second_order.json", &report)
}

fn fragmentation_stage(
    config: &ExperimentConfig,
    mus: &[f64],
    threads: usize,
    em: &mut Emitter,
) -> Result<()> {
    let grid = TorusGrid::new(config.grid.d, config.grid.n)?;
    let opt_cfg = config
        .optimize
        .clone()
        .unwrap_or_else(|| OptimizeConfig::thresholding(200));
    let volume = config.volume_hint();
    let seed = config.seed;
    let spec = config.spec;

    let run_one = |mu: f64| -> Result<(f64, f64)> {
        let spec_mu = ProblemSpec { mu, ..spec };
        spec_mu.check()?;
        let m_init = seeded_bang_bang(grid, volume, seed);
        let report = match opt_cfg.scheme {
            Scheme::Thresholding => run_thresholding(&spec_mu, &opt_cfg, &m_init)?,
            Scheme::ProjectedGradient => run_projected_gradient(&spec_mu, &opt_cfg, &m_init)?,
        };
        let state = solve_state(&spec_mu, &report.final_control, None)?;
        let j = objective(&spec_mu, &report.final_control, &state);
        let e = DiscreteSet::from_field(&report.final_control, 0.5);
        Ok((perimeter(&e), j))
    };

    // Each viscosity is independent; run them on a bounded worker pool and
    // reassemble in sweep order so the CSV is deterministic.
    let workers = threads.max(1).min(mus.len());
    let mut rows: Vec<Option<Result<(f64, f64)>>> = Vec::new();
    rows.resize_with(mus.len(), || None);
    if workers <= 1 {
        for (i, &mu) in mus.iter().enumerate() {
            rows[i] = Some(run_one(mu));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let results: Vec<std::sync::Mutex<Option<Result<(f64, f64)>>>> =
            mus.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= mus.len() {
                        break;
                    }
                    let out = run_one(mus[i]);
                    *results[i].lock().expect("sweep worker") = Some(out);
                });
            }
        });
        for (slot, cell) in rows.iter_mut().zip(results) {
            *slot = cell.into_inner().expect("sweep worker");
        }
    }

    let mut csv = String::from("mu,perimeter,objective\n");
    for (mu, row) in mus.iter().zip(rows) {
        let (p, j) = row.expect("sweep row filled")?;
        csv.push_str(&format!("{mu},{p:.17e},{j:.17e}\n"));
    }
    em.write_text("fragmentation.csv", &csv)
}

fn classify_failure(stage: &str) -> RunStatus {
    match stage {
        "validate" => RunStatus::ValidationFailure,
        "solve" | "optimize" => RunStatus::SolverFailure,
        _ => RunStatus::AnalysisFailure,
    }
}

/// Execute a pipeline and write its manifest. Always writes `manifest.json`
/// (even on partial failure) so the run is inspectable; the returned status
/// carries the exit classification of the first failing stage.
pub fn run(config: &ExperimentConfig, select: StageSelect, threads: usize) -> Result<(Manifest, RunStatus)> {
    let mut errors: Vec<StageError> = Vec::new();
    let mut status = RunStatus::Success;
    let fail = |errors: &mut Vec<StageError>, status: &mut RunStatus, stage: &str, e: Error| {
        errors.push(StageError { stage: stage.into(), message: e.to_string() });
        if *status == RunStatus::Success {
            *status = classify_failure(stage);
        }
    };

    if let Err(e) = config.validate() {
        let manifest =
            Manifest { config: config.clone(), artifacts: Vec::new(), errors: vec![StageError {
                stage: "validate".into(),
                message: e.to_string(),
            }] };
        return Ok((manifest, RunStatus::ValidationFailure));
    }
    let mut em = Emitter::new(&config.output_dir)?;
    let grid = TorusGrid::new(config.grid.d, config.grid.n)?;

    let mut opt: Option<OptimumArtifacts> = None;
    if select == StageSelect::Solve {
        let m = seeded_bang_bang(grid, config.volume_hint(), config.seed);
        match solve_state(&config.spec, &m, None) {
            Ok(state) => {
                if let Err(e) = em.write_bbf("state.bbf", state.log_state()) {
                    fail(&mut errors, &mut status, "solve", e);
                }
            }
            Err(e) => fail(&mut errors, &mut status, "solve", e),
        }
    } else {
        match optimize_stage(config, grid, &mut em) {
            Ok(o) => opt = Some(o),
            Err(e) => fail(&mut errors, &mut status, "optimize", e),
        }
    }

    if let Some(opt_ref) = opt.as_ref() {
        let flags = match select {
            StageSelect::Full => config.analyses.clone(),
            StageSelect::Only(Analysis::Weiss) => {
                AnalysisFlags { weiss: true, ..Default::default() }
            }
            StageSelect::Only(Analysis::Boundary) => {
                AnalysisFlags { boundary: true, ..Default::default() }
            }
            StageSelect::Solve => unreachable!("solve produces no optimum"),
        };
        if flags.weiss {
            if let Err(e) = weiss_stage(config, opt_ref, &mut em) {
                fail(&mut errors, &mut status, "weiss", e);
            }
        }
        if flags.blowup_match {
            if let Err(e) = blowup_stage(config, opt_ref, &mut em) {
                fail(&mut errors, &mut status, "blowup_match", e);
            }
        }
        if flags.boundary {
            if let Err(e) = boundary_stage(opt_ref, &mut em) {
                fail(&mut errors, &mut status, "boundary", e);
            }
        }
        if flags.density {
            if let Err(e) = density_stage(config, opt_ref, &mut em) {
                fail(&mut errors, &mut status, "density", e);
            }
        }
        if flags.second_order {
            if let Err(e) = second_order_stage(config, opt_ref, &mut em) {
                fail(&mut errors, &mut status, "second_order", e);
            }
        }
        if let Some(mus) = flags.fragmentation_sweep.clone() {
            if let Err(e) = fragmentation_stage(config, &mus, threads, &mut em) {
                fail(&mut errors, &mut status, "fragmentation", e);
            }
        }
    }

    let manifest = Manifest { config: config.clone(), artifacts: em.artifacts, errors };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("serialize manifest: {e}")))?;
    fs::write(config.output_dir.join("manifest.json"), text)?;
    Ok((manifest, status))
}
