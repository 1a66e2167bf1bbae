//! Experiment pipelines: ensembles, surrogate fitting, per-sample comparisons
//! and the ensemble properties derived from them. The command-line tool and
//! the Python bindings are thin wrappers over these functions.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::anchor::{compare_rollouts, AnchorConfig, ComparisonReport, Engines};
use crate::error::{AnchorError, Result};
use crate::grid::{FieldState, Grid};
use crate::ic::{sample_ic, u0_max, IcSpec};
use crate::io::{load_record_csv, read_json, read_snapshots, save_record_csv, write_json, write_snapshots, RecordSeries};
use crate::metrics::{median, pearson};
use crate::pde::{PdeKind, PdeSpec};
use crate::record::{replay_gate, Engine, RolloutRecord};
use crate::solver::{save_count, HifiSolver, SolverConfig};
use crate::surrogate::{
    fit_linear_surrogate_with, linear_archive, load_surrogate, save_surrogate, CoarseScheme, LinearFit,
    LinearMapSurrogate, SolverSurrogate, SurrogateArchive, SurrogateStepper,
};

pub const SCHEMA: u32 = 1;
/// Test streams start here so they never overlap training streams.
pub const TEST_STREAM_BASE: u64 = 1 << 32;
/// Allowed growth of the ANCHOR error past its value at the first trigger.
pub const BOUNDEDNESS_FACTOR: f64 = 1.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurrogateChoice {
    LinearMap {
        modes: usize,
        #[serde(default = "yes")]
        centered: bool,
    },
    CoarseSpectral {
        factor: usize,
        #[serde(default)]
        scheme: CoarseScheme,
    },
    /// The high-fidelity solver itself; useful as a consistency check.
    Solver,
}

fn yes() -> bool {
    true
}

impl SurrogateChoice {
    pub fn needs_training(&self) -> bool {
        matches!(self, SurrogateChoice::LinearMap { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = AnchorError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(AnchorError::InvalidConfig(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pde: PdeKind,
    /// ν for Burgers, ε for Allen-Cahn, α for heat.
    pub coefficient: f64,
    pub points: Vec<usize>,
    pub ic: IcSpec,
    pub solver: SolverConfig,
    pub surrogate: SurrogateChoice,
    pub anchor: AnchorConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    /// End of the window the surrogate is fitted on.
    pub train_horizon: f64,
    pub seed: u64,
    /// Time window for the estimator correlation; the whole rollout if unset.
    #[serde(default)]
    pub correlation_window: Option<(f64, f64)>,
    /// Worker threads; 0 picks one per core.
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn for_pde(kind: PdeKind) -> Self {
        let spec = PdeSpec::benchmark(kind);
        let (surrogate, train_samples, train_horizon) = match kind {
            PdeKind::Burgers1d => (SurrogateChoice::LinearMap { modes: 32, centered: true }, 100, 0.5),
            PdeKind::Heat3d => (SurrogateChoice::LinearMap { modes: 32, centered: false }, 50, 0.33),
            PdeKind::Burgers2d | PdeKind::AllenCahn2d => {
                (SurrogateChoice::CoarseSpectral { factor: 2, scheme: CoarseScheme::Etdrk4 }, 50, 0.33)
            }
        };
        let seed = 7;
        ExperimentConfig {
            pde: kind,
            coefficient: spec.coefficient(),
            points: spec.grid.shape(),
            ic: IcSpec::for_pde(kind, seed),
            solver: SolverConfig::for_spec(&spec),
            surrogate,
            anchor: AnchorConfig::for_pde(kind),
            train_samples,
            test_samples: 10,
            train_horizon,
            seed,
            correlation_window: None,
            jobs: 1,
            out_dir: PathBuf::from("anchor-out").join(kind.name()),
        }
    }

    /// Builds a configuration from JSON layers applied in order over the
    /// per-PDE defaults; later layers win. Objects merge key by key except
    /// when their `kind` tags differ, in which case the later one replaces
    /// the earlier. The solver step is re-derived unless some layer sets it.
    pub fn from_layers(layers: &[Value]) -> Result<Self> {
        let kind = layers
            .iter()
            .rev()
            .find_map(|l| l.get("pde"))
            .ok_or_else(|| AnchorError::InvalidConfig("configuration must name a pde".into()))?;
        let kind: PdeKind = serde_json::from_value(kind.clone())
            .or_else(|_| kind.as_str().unwrap_or_default().parse())?;
        let mut merged = serde_json::to_value(Self::for_pde(kind))?;
        let mut solver_set = false;
        for layer in layers {
            let mut layer = layer.clone();
            if let Some(obj) = layer.as_object_mut() {
                obj.insert("pde".into(), serde_json::to_value(kind)?);
                solver_set |= obj.contains_key("solver");
            }
            overlay(&mut merged, &layer);
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(merged)?;
        if !solver_set {
            cfg.solver = SolverConfig::for_spec(&cfg.pde_spec()?);
        }
        cfg.ic.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        Self::from_layers(&[v])
    }

    pub fn pde_spec(&self) -> Result<PdeSpec> {
        let p = &self.points;
        match self.pde {
            PdeKind::Burgers1d if p.len() == 1 => PdeSpec::burgers1d(self.coefficient, p[0]),
            PdeKind::Burgers2d if p.len() == 2 => PdeSpec::burgers2d(self.coefficient, p[0])?.on_grid(Arc::new(Grid::periodic(p)?)),
            PdeKind::AllenCahn2d if p.len() == 2 => {
                PdeSpec::allen_cahn2d(self.coefficient, p[0])?.on_grid(Arc::new(Grid::periodic(p)?))
            }
            PdeKind::Heat3d if p.len() == 3 => PdeSpec::heat3d(self.coefficient, Grid::l_shaped(p)?),
            _ => Err(AnchorError::InvalidConfig(format!("{} needs {} grid sizes, got {p:?}", self.pde.name(), self.pde.dims()))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pde_spec()?;
        self.anchor.validate()?;
        self.solver.substeps()?;
        save_count(self.anchor.horizon, self.solver.dt_save)?;
        save_count(self.train_horizon, self.solver.dt_save)?;
        if (self.solver.dt_save - crate::solver::DT_SAVE).abs() > 1e-12 {
            warn!("dt_save {} differs from the benchmark save interval", self.solver.dt_save);
        }
        match &self.surrogate {
            SurrogateChoice::LinearMap { modes, .. } if *modes == 0 => {
                Err(AnchorError::InvalidConfig("linear map needs at least one mode".into()))
            }
            SurrogateChoice::LinearMap { .. } if self.train_samples < 2 => {
                Err(AnchorError::InvalidConfig("linear map needs at least two training samples".into()))
            }
            SurrogateChoice::CoarseSpectral { factor, .. } if *factor == 0 => {
                Err(AnchorError::InvalidConfig("coarsening factor must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Fields that differ from the published parameter table.
    pub fn published_deviations(&self) -> Vec<String> {
        let reference = AnchorConfig::for_pde(self.pde);
        let coefficient = PdeSpec::benchmark(self.pde).coefficient();
        let mut out = Vec::new();
        let mut check = |name: &str, got: f64, want: f64| {
            if (got - want).abs() > 1e-12 * want.abs().max(1.0) {
                out.push(format!("{name} = {got} (published {want})"));
            }
        };
        check("coefficient", self.coefficient, coefficient);
        check("a", self.anchor.a, reference.a);
        check("gamma", self.anchor.gamma, reference.gamma);
        check("k_steps", self.anchor.k_steps as f64, reference.k_steps as f64);
        check("horizon", self.anchor.horizon, reference.horizon);
        out
    }

    pub fn stream(split: Split, index: usize) -> u64 {
        match split {
            Split::Train => index as u64,
            Split::Test => TEST_STREAM_BASE + index as u64,
        }
    }

    pub fn ic_for(&self, split: Split, index: usize) -> IcSpec {
        IcSpec { seed: self.seed, ..self.ic.with_stream(Self::stream(split, index)) }
    }

    pub fn samples(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_samples,
            Split::Test => self.test_samples,
        }
    }

    pub fn horizon(&self, split: Split) -> f64 {
        match split {
            Split::Train => self.train_horizon,
            Split::Test => self.anchor.horizon,
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| AnchorError::InvalidConfig(format!("thread pool: {e}")))
    }
}

fn overlay(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if same_kind(slot, v) => overlay(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn same_kind(a: &Value, b: &Value) -> bool {
    match (a.get("kind"), b.get("kind")) {
        (Some(x), Some(y)) => x == y,
        _ => a.is_object() && b.is_object(),
    }
}

/// One initial condition of an ensemble.
#[derive(Clone, Debug)]
pub struct Sample {
    pub index: usize,
    pub stream: u64,
    pub u0_max: f64,
    pub f0: FieldState,
}

pub fn sample_ics(cfg: &ExperimentConfig, split: Split) -> Result<Vec<Sample>> {
    let grid = cfg.pde_spec()?.grid;
    (0..cfg.samples(split))
        .map(|i| {
            let ic = cfg.ic_for(split, i);
            let f0 = sample_ic(&ic, &grid).map_err(|e| e.in_sample(i))?;
            Ok(Sample { index: i, stream: ic.stream, u0_max: u0_max(&f0)?, f0 })
        })
        .collect()
}

/// Solver trajectories of every sample in `split` up to the split horizon.
pub fn generate(cfg: &ExperimentConfig, split: Split) -> Result<Vec<(Sample, RolloutRecord)>> {
    cfg.validate()?;
    let spec = cfg.pde_spec()?;
    let solver = HifiSolver::new(&spec, &cfg.solver)?;
    let horizon = cfg.horizon(split);
    let samples = sample_ics(cfg, split)?;
    let out: Vec<Result<(Sample, RolloutRecord)>> = cfg.pool()?.install(|| {
        samples
            .into_par_iter()
            .map(|s| {
                let rec = solver.solve_trajectory(&s.f0, horizon).map_err(|e| e.in_sample(s.index))?;
                Ok((s, rec))
            })
            .collect()
    });
    out.into_iter().collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub index: usize,
    pub stream: u64,
    pub u0_max: f64,
    /// Directory relative to the manifest.
    pub dir: String,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub split: Split,
    pub pde: PdeSpec,
    pub ic: IcSpec,
    pub solver: SolverConfig,
    pub seed: u64,
    pub horizon: f64,
    pub dt_save: f64,
    pub trajectories: Vec<TrajectoryEntry>,
}

/// Writes `dir/manifest.json`, `dir/config.json` and one snapshot directory
/// per trajectory.
pub fn write_ensemble(dir: &Path, cfg: &ExperimentConfig, split: Split, data: &[(Sample, RolloutRecord)]) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(data.len());
    for (s, rec) in data {
        let name = format!("traj_{:04}", s.index);
        let files = write_snapshots(&dir.join(&name), rec)?;
        entries.push(TrajectoryEntry { index: s.index, stream: s.stream, u0_max: s.u0_max, dir: name, files });
    }
    let manifest = Manifest {
        schema: SCHEMA,
        split,
        pde: cfg.pde_spec()?,
        ic: IcSpec { seed: cfg.seed, ..cfg.ic.clone() },
        solver: cfg.solver.clone(),
        seed: cfg.seed,
        horizon: cfg.horizon(split),
        dt_save: cfg.solver.dt_save,
        trajectories: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let m: Manifest = read_json(path)?;
    if m.schema != SCHEMA {
        return Err(AnchorError::Format(format!("manifest schema {} is not {SCHEMA}", m.schema)));
    }
    Ok(m)
}

/// Reloads every trajectory listed by a manifest as solver-tagged records.
pub fn load_ensemble(path: &Path) -> Result<(Manifest, Vec<RolloutRecord>)> {
    let m = read_manifest(path)?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let mut recs = Vec::with_capacity(m.trajectories.len());
    for t in &m.trajectories {
        let snaps = read_snapshots(&root.join(&t.dir), &t.files, &m.pde.grid).map_err(|e| e.in_sample(t.index))?;
        let mut rec = RolloutRecord::with_capacity(snaps.len());
        for s in snaps {
            rec.push(s, Engine::Solver, f64::NAN, f64::NAN, 0.0);
        }
        recs.push(rec);
    }
    Ok((m, recs))
}

/// Initial conditions of a manifest, as samples.
pub fn manifest_samples(path: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let m = read_manifest(path)?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::with_capacity(m.trajectories.len());
    for t in &m.trajectories {
        let first = t.files.first().ok_or_else(|| AnchorError::Format(format!("trajectory {} lists no files", t.index)))?;
        let f0 = crate::io::read_field(&root.join(&t.dir).join(first), &m.pde.grid).map_err(|e| e.in_sample(t.index))?;
        out.push(Sample { index: t.index, stream: t.stream, u0_max: u0_max(&f0)?, f0 });
    }
    Ok((m, out))
}

/// A ready-to-use stepper with the archive that reproduces it.
pub struct FittedSurrogate {
    pub archive: SurrogateArchive,
    pub stepper: Arc<dyn SurrogateStepper>,
    pub linear: Option<Arc<LinearMapSurrogate>>,
}

impl FittedSurrogate {
    pub fn descriptor(&self) -> String {
        self.stepper.descriptor()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        save_surrogate(path, &self.archive, self.linear.as_deref())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (archive, stepper) = load_surrogate(path)?;
        Ok(FittedSurrogate { archive, stepper: Arc::from(stepper), linear: None })
    }
}

pub fn fit_surrogate(choice: &SurrogateChoice, spec: &PdeSpec, solver: &SolverConfig, train: &[RolloutRecord]) -> Result<FittedSurrogate> {
    Ok(match choice {
        SurrogateChoice::LinearMap { modes, centered } => {
            let s = Arc::new(fit_linear_surrogate_with(train, *modes, LinearFit { centered: *centered })?);
            info!("linear map: {} modes, one-step training residual {:.3e}", s.modes(), s.training_residual());
            FittedSurrogate { archive: linear_archive(spec, &s), stepper: s.clone(), linear: Some(s) }
        }
        SurrogateChoice::CoarseSpectral { factor, scheme } => {
            let s = crate::surrogate::CoarseSpectralSurrogate::with_scheme(spec, solver.dt_save, *factor, *scheme)?;
            FittedSurrogate {
                archive: SurrogateArchive::coarse(spec, solver.dt_save, *factor, *scheme),
                stepper: Arc::new(s),
                linear: None,
            }
        }
        SurrogateChoice::Solver => FittedSurrogate {
            archive: SurrogateArchive::solver(spec, solver),
            stepper: Arc::new(SolverSurrogate::new(spec, solver)?),
            linear: None,
        },
    })
}

/// Fits the configured surrogate, generating a training ensemble if needed.
pub fn train_surrogate(cfg: &ExperimentConfig) -> Result<FittedSurrogate> {
    let spec = cfg.pde_spec()?;
    let train = if cfg.surrogate.needs_training() {
        generate(cfg, Split::Train)?.into_iter().map(|(_, r)| r).collect()
    } else {
        Vec::new()
    };
    fit_surrogate(&cfg.surrogate, &spec, &cfg.solver, &train)
}

pub struct SampleOutcome {
    pub sample: Sample,
    pub report: ComparisonReport,
}

/// Runs the three frameworks for every sample; failures keep their index.
pub fn run_comparisons(cfg: &ExperimentConfig, surrogate: &dyn SurrogateStepper, samples: &[Sample]) -> Result<Vec<Result<SampleOutcome>>> {
    cfg.validate()?;
    let spec = cfg.pde_spec()?;
    let solver = HifiSolver::new(&spec, &cfg.solver)?;
    if (surrogate.dt_save() - solver.dt_save()).abs() > 1e-12 {
        return Err(AnchorError::InvalidConfig(format!(
            "surrogate advances {} per step but the solver saves every {}",
            surrogate.dt_save(),
            solver.dt_save()
        )));
    }
    let engines = Engines { spec: &spec, solver: &solver, surrogate };
    let window = cfg.correlation_window;
    Ok(cfg.pool()?.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let report = compare_rollouts(&cfg.anchor, &engines, &s.f0, window).map_err(|e| e.in_sample(s.index))?;
                Ok(SampleOutcome { sample: s.clone(), report })
            })
            .collect()
    }))
}

/// Gate replay and segment-length check of one ANCHOR record.
pub fn replay_check(engines: &[Engine], eta: &[f64], threshold: &[f64], k: usize) -> (bool, bool) {
    let replayed = replay_gate(eta, threshold, k, Engine::Surrogate);
    let matches = replayed == engines;
    let mut segments_ok = true;
    let mut run = 0usize;
    for (i, &e) in engines.iter().enumerate().skip(1) {
        if e == Engine::Solver {
            run += 1;
        }
        let ends = e == Engine::Surrogate || i + 1 == engines.len();
        if ends && run > 0 {
            let truncated = e == Engine::Solver && i + 1 == engines.len();
            if run != k && !(truncated && run < k) {
                segments_ok = false;
            }
            run = 0;
        }
    }
    (matches, segments_ok)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleSummary {
    pub index: usize,
    pub stream: u64,
    pub u0_max: f64,
    pub steps: usize,
    pub interventions: usize,
    pub solver_steps: usize,
    pub surrogate_fraction: f64,
    pub first_trigger: Option<usize>,
    pub anchor_error_at_first_trigger: Option<f64>,
    pub boundedness_ratio: Option<f64>,
    pub surrogate_max_error: f64,
    pub surrogate_final_error: f64,
    /// Surrogate-only error at the end of the training window.
    pub surrogate_error_at_train_end: Option<f64>,
    pub anchor_max_error: f64,
    pub anchor_final_error: f64,
    pub rho_surrogate: Option<f64>,
    pub rho_anchor: Option<f64>,
    pub solver_seconds: f64,
    pub surrogate_seconds: f64,
    pub anchor_seconds: f64,
    pub replay_matches: bool,
    pub segments_ok: bool,
}

impl SampleSummary {
    pub fn from_outcome(o: &SampleOutcome, train_horizon: f64) -> Self {
        let r = &o.report;
        let (replay_matches, segments_ok) =
            replay_check(&r.anchor.engines, &r.anchor.eta, &r.anchor.threshold, r.config.k_steps);
        SampleSummary {
            index: o.sample.index,
            stream: o.sample.stream,
            u0_max: o.sample.u0_max,
            steps: r.steps,
            interventions: r.interventions,
            solver_steps: r.solver_steps,
            surrogate_fraction: r.surrogate_fraction(),
            first_trigger: r.first_trigger,
            anchor_error_at_first_trigger: r.anchor_error_at_first_trigger,
            boundedness_ratio: r.boundedness_ratio(),
            surrogate_max_error: r.surrogate_max_error,
            surrogate_final_error: r.surrogate_final_error,
            surrogate_error_at_train_end: error_at(&r.surrogate, train_horizon),
            anchor_max_error: r.anchor_max_error,
            anchor_final_error: r.anchor_final_error,
            rho_surrogate: r.rho_surrogate,
            rho_anchor: r.rho_anchor,
            solver_seconds: r.solver_seconds,
            surrogate_seconds: r.surrogate_seconds,
            anchor_seconds: r.anchor_seconds,
            replay_matches,
            segments_ok,
        }
    }

    pub fn bounded(&self) -> bool {
        self.boundedness_ratio.is_some_and(|r| r <= BOUNDEDNESS_FACTOR)
    }

    pub fn dominates(&self) -> bool {
        self.anchor_final_error < self.surrogate_final_error
    }
}

fn error_at(rec: &RolloutRecord, t: f64) -> Option<f64> {
    let errs = rec.rel_l2.as_ref()?;
    rec.snapshots.iter().position(|s| (s.time - t).abs() < 1e-9).map(|i| errs[i])
}

/// Pass/fail verdict of one ensemble property.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Gate {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Gate { name: name.to_string(), pass, detail }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub samples: usize,
    pub failed: usize,
    pub median_rho: Option<f64>,
    pub min_rho: Option<f64>,
    pub triggered: usize,
    pub bounded: usize,
    pub dominated: usize,
    pub replay_ok: usize,
    pub median_surrogate_final_error: Option<f64>,
    pub median_surrogate_train_end_error: Option<f64>,
    pub solver_seconds: f64,
    pub surrogate_seconds: f64,
    pub anchor_seconds: f64,
    pub surrogate_fraction: f64,
}

pub fn aggregate(samples: &[SampleSummary], failed: usize) -> Aggregate {
    let rhos: Vec<f64> = samples.iter().filter_map(|s| s.rho_surrogate).collect();
    let finals: Vec<f64> = samples.iter().map(|s| s.surrogate_final_error).collect();
    let ends: Vec<f64> = samples.iter().filter_map(|s| s.surrogate_error_at_train_end).filter(|e| e.is_finite()).collect();
    let steps: usize = samples.iter().map(|s| s.steps).sum();
    let solver_steps: usize = samples.iter().map(|s| s.solver_steps).sum();
    Aggregate {
        samples: samples.len(),
        failed,
        median_rho: median(&rhos),
        min_rho: rhos.iter().copied().reduce(f64::min),
        triggered: samples.iter().filter(|s| s.first_trigger.is_some()).count(),
        bounded: samples.iter().filter(|s| s.bounded()).count(),
        dominated: samples.iter().filter(|s| s.dominates()).count(),
        replay_ok: samples.iter().filter(|s| s.replay_matches && s.segments_ok).count(),
        median_surrogate_final_error: median(&finals),
        median_surrogate_train_end_error: median(&ends),
        solver_seconds: samples.iter().map(|s| s.solver_seconds).sum(),
        surrogate_seconds: samples.iter().map(|s| s.surrogate_seconds).sum(),
        anchor_seconds: samples.iter().map(|s| s.anchor_seconds).sum(),
        surrogate_fraction: if steps == 0 { 1.0 } else { 1.0 - solver_steps as f64 / steps as f64 },
    }
}

/// Ensemble properties of a completed comparison run.
pub fn property_gates(samples: &[SampleSummary], failed: usize, min_samples: usize) -> Vec<Gate> {
    let agg = aggregate(samples, failed);
    let n = samples.len();
    let enough = n >= min_samples && failed == 0;
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));

    let undefined = n - samples.iter().filter(|s| s.rho_surrogate.is_some()).count();
    let corr = enough
        && undefined == 0
        && agg.median_rho.is_some_and(|m| m >= 0.9)
        && agg.min_rho.is_some_and(|m| m >= 0.6);
    let corr_detail = format!("n={n} median rho={} min rho={} undefined={undefined}", fmt(agg.median_rho), fmt(agg.min_rho));

    let dominance_rate = if n == 0 { 0.0 } else { agg.dominated as f64 / n as f64 };
    let worst = samples.iter().filter_map(|s| s.boundedness_ratio).reduce(f64::max);
    let bounded = enough && agg.bounded == n && dominance_rate >= 0.9;
    let bounded_detail = format!(
        "bounded {}/{n} (triggered {}, worst ratio {}), anchor final < surrogate final in {}/{n}",
        agg.bounded,
        agg.triggered,
        fmt(worst),
        agg.dominated
    );

    let sound = failed == 0 && agg.replay_ok == n;
    let sound_detail = format!("replay and segment length match in {}/{n}", agg.replay_ok);

    let order = agg.surrogate_seconds < agg.anchor_seconds && agg.anchor_seconds < agg.solver_seconds;
    let speed = agg.surrogate_fraction < 0.5 || agg.anchor_seconds < 0.8 * agg.solver_seconds;
    let timing_detail = format!(
        "surrogate {:.3}s, anchor {:.3}s, solver {:.3}s, surrogate share {:.0}%",
        agg.surrogate_seconds,
        agg.anchor_seconds,
        agg.solver_seconds,
        100.0 * agg.surrogate_fraction
    );

    let growth = match (agg.median_surrogate_final_error, agg.median_surrogate_train_end_error) {
        (Some(f), Some(e)) => f > e,
        _ => false,
    };
    let growth_detail = format!(
        "median surrogate error {} at the end of the training window, {} at the horizon",
        fmt(agg.median_surrogate_train_end_error),
        fmt(agg.median_surrogate_final_error)
    );

    vec![
        Gate::new("correlation", corr, corr_detail),
        Gate::new("boundedness", bounded, bounded_detail),
        Gate::new("trigger-soundness", sound, sound_detail),
        Gate::new("timing", enough && order && speed, timing_detail),
        Gate::new("error-growth", growth, growth_detail),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub pde: PdeKind,
    pub surrogate: String,
    pub config: ExperimentConfig,
    pub samples: Vec<SampleSummary>,
    pub failures: Vec<SampleFailure>,
    pub aggregate: Aggregate,
    pub gates: Vec<Gate>,
}

impl RunSummary {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn summarize(cfg: &ExperimentConfig, descriptor: &str, results: &[Result<SampleOutcome>]) -> RunSummary {
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(o) => samples.push(SampleSummary::from_outcome(o, cfg.train_horizon)),
            Err(e) => {
                let index = match e {
                    AnchorError::Sample { index, .. } => *index,
                    _ => i,
                };
                failures.push(SampleFailure { index, error: e.to_string() });
            }
        }
    }
    let gates = property_gates(&samples, failures.len(), 1);
    RunSummary {
        schema: SCHEMA,
        pde: cfg.pde,
        surrogate: descriptor.to_string(),
        config: cfg.clone(),
        aggregate: aggregate(&samples, failures.len()),
        samples,
        failures,
        gates,
    }
}

/// Per-sample CSVs (and optionally snapshots) plus `summary.json` and a
/// config echo.
pub fn write_run(dir: &Path, summary: &RunSummary, results: &[Result<SampleOutcome>], snapshots: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    for o in results.iter().flatten() {
        let sdir = dir.join(format!("sample_{:04}", o.sample.index));
        fs::create_dir_all(&sdir)?;
        let r = &o.report;
        save_record_csv(&sdir.join("reference.csv"), &r.reference)?;
        save_record_csv(&sdir.join("surrogate.csv"), &r.surrogate)?;
        save_record_csv(&sdir.join("anchor.csv"), &r.anchor)?;
        if snapshots {
            write_snapshots(&sdir.join("reference"), &r.reference)?;
            write_snapshots(&sdir.join("surrogate"), &r.surrogate)?;
            write_snapshots(&sdir.join("anchor"), &r.anchor)?;
        }
    }
    write_json(&dir.join("summary.json"), summary)?;
    write_json(&dir.join("config.json"), &summary.config)?;
    Ok(())
}

/// Offline re-evaluation of a rollout directory from its CSVs alone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub schema: u32,
    pub pde: PdeKind,
    pub samples: Vec<SampleSummary>,
    pub failures: Vec<SampleFailure>,
    pub aggregate: Aggregate,
    pub gates: Vec<Gate>,
}

fn series_max(xs: &[f64]) -> f64 {
    xs.iter().copied().filter(|x| x.is_finite()).fold(0.0, f64::max)
}

fn evaluate_sample(dir: &Path, prior: &SampleSummary, k: usize, train_horizon: f64) -> Result<SampleSummary> {
    let sdir = dir.join(format!("sample_{:04}", prior.index));
    let anchor: RecordSeries = load_record_csv(&sdir.join("anchor.csv"))?;
    let sur: RecordSeries = load_record_csv(&sdir.join("surrogate.csv"))?;
    let (replay_matches, segments_ok) = replay_check(&anchor.engines, &anchor.eta, &anchor.threshold, k);
    let tags = &anchor.engines;
    let first_trigger =
        (1..tags.len()).find(|&i| tags[i] == Engine::Surrogate && tags.get(i + 1) == Some(&Engine::Solver));
    let at = first_trigger.map(|i| anchor.rel_l2[i]);
    let amax = series_max(&anchor.rel_l2);
    let rho = pearson(tail(&sur.eta), tail(&sur.rel_l2)).ok();
    let rho_anchor = pearson(tail(&anchor.eta), tail(&anchor.rel_l2)).ok();
    let solver_steps = anchor.engines.iter().skip(1).filter(|&&e| e == Engine::Solver).count();
    let steps = anchor.engines.len().saturating_sub(1);
    let train_end = sur.times.iter().position(|t| (t - train_horizon).abs() < 1e-9).map(|i| sur.rel_l2[i]);
    Ok(SampleSummary {
        steps,
        solver_steps,
        surrogate_fraction: if steps == 0 { 1.0 } else { 1.0 - solver_steps as f64 / steps as f64 },
        interventions: count_runs(&anchor.engines),
        first_trigger,
        anchor_error_at_first_trigger: at,
        boundedness_ratio: at.map(|a| if a > 0.0 { amax / a } else if amax == 0.0 { 1.0 } else { f64::INFINITY }),
        surrogate_max_error: series_max(&sur.rel_l2),
        surrogate_final_error: *sur.rel_l2.last().unwrap_or(&f64::NAN),
        surrogate_error_at_train_end: train_end,
        anchor_max_error: amax,
        anchor_final_error: *anchor.rel_l2.last().unwrap_or(&f64::NAN),
        rho_surrogate: rho,
        rho_anchor,
        replay_matches,
        segments_ok,
        ..prior.clone()
    })
}

fn tail(xs: &[f64]) -> &[f64] {
    xs.get(1..).unwrap_or_default()
}

fn count_runs(engines: &[Engine]) -> usize {
    engines.windows(2).filter(|w| w[0] == Engine::Surrogate && w[1] == Engine::Solver).count()
}

pub fn evaluate_run(dir: &Path) -> Result<Evaluation> {
    let summary: RunSummary = read_json(&dir.join("summary.json"))?;
    if summary.schema != SCHEMA {
        return Err(AnchorError::Format(format!("summary schema {} is not {SCHEMA}", summary.schema)));
    }
    let k = summary.config.anchor.k_steps;
    let mut samples = Vec::new();
    let mut failures = summary.failures.clone();
    for s in &summary.samples {
        match evaluate_sample(dir, s, k, summary.config.train_horizon) {
            Ok(v) => samples.push(v),
            Err(e) => failures.push(SampleFailure { index: s.index, error: e.to_string() }),
        }
    }
    let gates = property_gates(&samples, failures.len(), 1);
    let eval = Evaluation {
        schema: SCHEMA,
        pde: summary.pde,
        aggregate: aggregate(&samples, failures.len()),
        samples,
        failures,
        gates,
    };
    write_json(&dir.join("evaluation.json"), &eval)?;
    Ok(eval)
}

pub struct BenchOutcome {
    pub summary: RunSummary,
    pub surrogate: Arc<dyn SurrogateStepper>,
    pub results: Vec<Result<SampleOutcome>>,
}

/// Whole pipeline in memory: fit, sample the test ensemble, compare. With
/// `write`, the training manifest, surrogate archive and per-sample records
/// land under `cfg.out_dir`.
pub fn bench(cfg: &ExperimentConfig, write: bool) -> Result<BenchOutcome> {
    cfg.validate()?;
    for d in cfg.published_deviations() {
        warn!("{}: {d}", cfg.pde.name());
    }
    let fitted = if cfg.surrogate.needs_training() {
        let spec = cfg.pde_spec()?;
        let data = generate(cfg, Split::Train)?;
        if write {
            write_ensemble(&cfg.out_dir.join("train"), cfg, Split::Train, &data)?;
        }
        let train: Vec<RolloutRecord> = data.into_iter().map(|(_, r)| r).collect();
        fit_surrogate(&cfg.surrogate, &spec, &cfg.solver, &train)?
    } else {
        train_surrogate(cfg)?
    };
    if write {
        fitted.save(&cfg.out_dir.join("surrogate.json"))?;
    }
    let samples = sample_ics(cfg, Split::Test)?;
    if samples.is_empty() {
        warn!("{}: no test samples requested", cfg.pde.name());
    }
    let results = run_comparisons(cfg, fitted.stepper.as_ref(), &samples)?;
    let mut summary = summarize(cfg, &fitted.descriptor(), &results);
    summary.gates = property_gates(&summary.samples, summary.failures.len(), 1);
    if write {
        write_run(&cfg.out_dir.join("rollout"), &summary, &results, false)?;
    }
    Ok(BenchOutcome { summary, surrogate: fitted.stepper, results })
}

/// Resolves a relative path against an optional output root.
pub fn resolve_out(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn layers_override_defaults() {
        let cfg = ExperimentConfig::from_layers(&[json!({"pde": "burgers1d", "anchor": {"a": 0.2}}), json!({"seed": 3})]).unwrap();
        assert_eq!(cfg.anchor.a, 0.2);
        assert_eq!(cfg.anchor.gamma, 2.0);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.ic.seed, 3);
        assert_eq!(cfg.published_deviations().len(), 1);
    }

    #[test]
    fn surrogate_kind_replaces_rather_than_merges() {
        let cfg = ExperimentConfig::from_layers(&[json!({"pde": "heat3d", "surrogate": {"kind": "solver"}})]).unwrap();
        assert_eq!(cfg.surrogate, SurrogateChoice::Solver);
        let cfg = ExperimentConfig::from_layers(&[json!({"pde": "heat3d", "surrogate": {"modes": 8}})]).unwrap();
        assert_eq!(cfg.surrogate, SurrogateChoice::LinearMap { modes: 8, centered: false });
    }

    #[test]
    fn solver_step_follows_grid() {
        let cfg = ExperimentConfig::from_layers(&[json!({"pde": "heat3d", "points": [16, 16, 8]})]).unwrap();
        let fine = ExperimentConfig::for_pde(PdeKind::Heat3d);
        assert!(cfg.solver.dt_internal > fine.solver.dt_internal);
        assert!(ExperimentConfig::from_layers(&[json!({"seed": 1})]).is_err());
    }

    #[test]
    fn streams_do_not_overlap() {
        assert_eq!(ExperimentConfig::stream(Split::Train, 5), 5);
        assert_eq!(ExperimentConfig::stream(Split::Test, 0), TEST_STREAM_BASE);
    }

    #[test]
    fn replay_check_flags_short_segments() {
        use Engine::*;
        let eta = [f64::NAN, 2.0, 0.0, 0.0, 0.0];
        let thr = [1.0; 5];
        let tags = [Surrogate, Surrogate, Solver, Solver, Surrogate];
        assert_eq!(replay_check(&tags, &eta, &thr, 2), (true, true));
        assert_eq!(replay_check(&tags, &eta, &thr, 3), (false, false));
        let tail = [Surrogate, Surrogate, Solver, Solver, Solver];
        assert_eq!(replay_check(&tail, &eta, &thr, 5).1, true);
    }
}
