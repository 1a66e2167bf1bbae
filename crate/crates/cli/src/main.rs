use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchor_core::experiment::{
    bench, evaluate_run, fit_surrogate, generate, load_ensemble, manifest_samples, resolve_out, run_comparisons,
    sample_ics, summarize, write_ensemble, write_run, ExperimentConfig, FittedSurrogate, Gate, RunSummary, Split,
    SurrogateChoice,
};
use anchor_core::io::write_json;
use anchor_core::pde::PdeKind;
use anchor_core::surrogate::CoarseScheme;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "anchor", version, about = "Residual-gated hybrid surrogate/solver rollouts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Root for relative output paths.
    #[arg(long, env = "ANCHOR_OUT_ROOT")]
    out_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample initial conditions and write solver trajectories with a manifest.
    Generate {
        #[arg(long)]
        pde: PdeKind,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        #[arg(long)]
        samples: Option<usize>,
        /// Trajectory length; defaults to the training window or the test horizon.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit or construct a surrogate and write its archive.
    FitSurrogate {
        /// Training manifest; required for the linear map.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// PDE, when no manifest is given.
        #[arg(long)]
        pde: Option<PdeKind>,
        #[arg(long, value_enum)]
        surrogate: Option<SurrogateArg>,
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        factor: Option<usize>,
        #[arg(long)]
        scheme: Option<CoarseScheme>,
        /// Fit the linear map without mean removal and bias.
        #[arg(long)]
        uncentered: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run solver-only, surrogate-only and ANCHOR rollouts for each test sample.
    Rollout {
        #[arg(long)]
        pde: Option<PdeKind>,
        #[arg(long)]
        surrogate_archive: PathBuf,
        /// Initial conditions; sampled from the configuration when absent.
        #[arg(long)]
        ic_manifest: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        anchor: AnchorArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write every snapshot of every rollout.
        #[arg(long)]
        snapshots: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute statistics and gates of a rollout directory from its files.
    Evaluate {
        #[arg(long)]
        rollout_dir: PathBuf,
    },
    /// Fit, roll out and evaluate in one go.
    Bench {
        /// PDEs to run; all four when omitted.
        #[arg(long)]
        pde: Vec<PdeKind>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        train_samples: Option<usize>,
        #[command(flatten)]
        anchor: AnchorArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Keep results in memory and only print the table.
        #[arg(long)]
        no_write: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Clone, Default)]
struct AnchorArgs {
    /// EMA smoothing parameter.
    #[arg(long)]
    a: Option<f64>,
    /// Threshold decay rate.
    #[arg(long)]
    gamma: Option<f64>,
    /// Saved steps per solver intervention.
    #[arg(long)]
    k_steps: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Fixed threshold replacing the decaying policy.
    #[arg(long)]
    threshold: Option<f64>,
    /// Correlation window as LO:HI in physical time.
    #[arg(long, value_parser = parse_window)]
    corr_window: Option<(f64, f64)>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SurrogateArg {
    LinearMap,
    CoarseSpectral,
    Solver,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo <= hi) {
        return Err("window must satisfy LO <= HI".into());
    }
    Ok((lo, hi))
}

impl Common {
    fn layers(&self, pde: Option<PdeKind>, extra: Value) -> Result<Vec<Value>> {
        let mut layers = Vec::new();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            layers.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
        }
        let mut flags = Map::new();
        if let Some(p) = pde {
            flags.insert("pde".into(), serde_json::to_value(p)?);
        }
        if let Some(j) = self.jobs {
            flags.insert("jobs".into(), j.into());
        }
        if let Some(s) = self.seed {
            flags.insert("seed".into(), s.into());
        }
        if let Value::Object(m) = extra {
            flags.extend(m);
        }
        layers.push(Value::Object(flags));
        Ok(layers)
    }

    fn config(&self, pde: Option<PdeKind>, extra: Value) -> Result<ExperimentConfig> {
        let cfg = ExperimentConfig::from_layers(&self.layers(pde, extra)?)?;
        cfg.validate()?;
        for d in cfg.published_deviations() {
            warn!("{}: {d}", cfg.pde.name());
        }
        Ok(cfg)
    }

    fn out(&self, p: &Path) -> PathBuf {
        resolve_out(self.out_root.as_deref(), p)
    }
}

impl AnchorArgs {
    fn overrides(&self) -> Value {
        let mut anchor = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                anchor.insert(k.into(), v);
            }
        };
        put("a", self.a.map(Value::from));
        put("gamma", self.gamma.map(Value::from));
        put("k_steps", self.k_steps.map(Value::from));
        put("horizon", self.horizon.map(Value::from));
        put("threshold_override", self.threshold.map(Value::from));
        let mut top = Map::new();
        if !anchor.is_empty() {
            top.insert("anchor".into(), Value::Object(anchor));
        }
        if let Some((lo, hi)) = self.corr_window {
            top.insert("correlation_window".into(), json!([lo, hi]));
        }
        Value::Object(top)
    }
}

fn merge(a: Value, b: Value) -> Value {
    match (a, b) {
        (Value::Object(mut x), Value::Object(y)) => {
            x.extend(y);
            Value::Object(x)
        }
        (a, _) => a,
    }
}

fn print_gates(gates: &[Gate]) {
    for g in gates {
        println!("  {} {}: {}", if g.pass { "PASS" } else { "FAIL" }, g.name, g.detail);
    }
}

fn print_summary(s: &RunSummary) {
    let a = &s.aggregate;
    let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    println!(
        "{} [{}]: {} samples ({} failed), median rho {}, bounded {}/{}, dominated {}/{}, surrogate share {:.0}%",
        s.pde.name(),
        s.surrogate,
        a.samples,
        a.failed,
        fmt(a.median_rho),
        a.bounded,
        a.samples,
        a.dominated,
        a.samples,
        100.0 * a.surrogate_fraction
    );
    println!(
        "  seconds: solver {:.3}, surrogate {:.3}, anchor {:.3}",
        a.solver_seconds, a.surrogate_seconds, a.anchor_seconds
    );
    print_gates(&s.gates);
    for f in &s.failures {
        println!("  sample {} failed: {}", f.index, f.error);
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { pde, split, samples, horizon, out, common } => {
            let split = Split::from(split);
            let mut extra = Map::new();
            let (count_key, horizon_key) = match split {
                Split::Train => ("train_samples", "train_horizon"),
                Split::Test => ("test_samples", "horizon"),
            };
            if let Some(n) = samples {
                extra.insert(count_key.into(), n.into());
            }
            if let Some(h) = horizon {
                match split {
                    Split::Train => extra.insert(horizon_key.into(), h.into()),
                    Split::Test => extra.insert("anchor".into(), json!({ "horizon": h })),
                };
            }
            let cfg = common.config(Some(pde), Value::Object(extra))?;
            let dir = common.out(&out.unwrap_or_else(|| cfg.out_dir.join(format!("{split:?}").to_lowercase())));
            if cfg.samples(split) == 0 {
                warn!("no samples requested");
            }
            let data = generate(&cfg, split)?;
            let m = write_ensemble(&dir, &cfg, split, &data)?;
            info!("wrote {} trajectories to {}", m.trajectories.len(), dir.display());
            println!("{}", dir.join("manifest.json").display());
            Ok(true)
        }
        Command::FitSurrogate { manifest, pde, surrogate, modes, factor, scheme, uncentered, out, common } => {
            let (kind, train, base) = match &manifest {
                Some(path) => {
                    let (m, recs) = load_ensemble(path).with_context(|| format!("loading {}", path.display()))?;
                    let base = json!({ "coefficient": m.pde.coefficient(), "points": m.pde.grid.shape(), "solver": m.solver });
                    (m.pde.kind, recs, base)
                }
                None => match pde {
                    Some(k) => (k, Vec::new(), json!({})),
                    None => bail!("pass --manifest or --pde"),
                },
            };
            let mut cfg = common.config(Some(kind), base)?;
            let default = cfg.surrogate.clone();
            cfg.surrogate = match surrogate {
                None => default,
                Some(SurrogateArg::Solver) => SurrogateChoice::Solver,
                Some(SurrogateArg::LinearMap) => match default {
                    SurrogateChoice::LinearMap { modes: m, centered } => SurrogateChoice::LinearMap { modes: m, centered },
                    _ => SurrogateChoice::LinearMap { modes: 32, centered: true },
                },
                Some(SurrogateArg::CoarseSpectral) => match default {
                    c @ SurrogateChoice::CoarseSpectral { .. } => c,
                    _ => SurrogateChoice::CoarseSpectral { factor: 2, scheme: CoarseScheme::default() },
                },
            };
            match &mut cfg.surrogate {
                SurrogateChoice::LinearMap { modes: m, centered } => {
                    if let Some(v) = modes {
                        *m = v;
                    }
                    if uncentered {
                        *centered = false;
                    }
                }
                SurrogateChoice::CoarseSpectral { factor: f, scheme: s } => {
                    if let Some(v) = factor {
                        *f = v;
                    }
                    if let Some(v) = scheme {
                        *s = v;
                    }
                }
                SurrogateChoice::Solver => {}
            }
            if cfg.surrogate.needs_training() && train.is_empty() {
                bail!("the linear map needs a training manifest");
            }
            let fitted = fit_surrogate(&cfg.surrogate, &cfg.pde_spec()?, &cfg.solver, &train)?;
            let out = common.out(&out);
            fitted.save(&out)?;
            write_json(&out.with_extension("config.json"), &cfg)?;
            info!("{} written to {}", fitted.descriptor(), out.display());
            Ok(true)
        }
        Command::Rollout { pde, surrogate_archive, ic_manifest, samples, anchor, out_dir, snapshots, common } => {
            let fitted = FittedSurrogate::load(&surrogate_archive)
                .with_context(|| format!("loading {}", surrogate_archive.display()))?;
            let spec = fitted.archive.pde().clone();
            if pde.is_some_and(|p| p != spec.kind) {
                bail!("archive holds a {} surrogate", spec.kind.name());
            }
            let mut extra = merge(
                json!({ "coefficient": spec.coefficient(), "points": spec.grid.shape() }),
                anchor.overrides(),
            );
            if let Some(n) = samples {
                extra = merge(extra, json!({ "test_samples": n }));
            }
            let cfg = common.config(Some(spec.kind), extra)?;
            let ics = match &ic_manifest {
                Some(path) => {
                    let (m, mut s) = manifest_samples(path).with_context(|| format!("loading {}", path.display()))?;
                    if m.pde.grid.shape() != spec.grid.shape() {
                        bail!("manifest grid {:?} does not match surrogate grid {:?}", m.pde.grid.shape(), spec.grid.shape());
                    }
                    if let Some(n) = samples {
                        s.truncate(n);
                    }
                    s
                }
                None => sample_ics(&cfg, Split::Test)?,
            };
            if ics.is_empty() {
                warn!("no samples to roll out");
            }
            let results = run_comparisons(&cfg, fitted.stepper.as_ref(), &ics)?;
            let summary = summarize(&cfg, &fitted.descriptor(), &results);
            let dir = common.out(&out_dir);
            write_run(&dir, &summary, &results, snapshots)?;
            print_summary(&summary);
            Ok(summary.complete())
        }
        Command::Evaluate { rollout_dir } => {
            let eval = evaluate_run(&rollout_dir)?;
            println!("{}: {} samples re-evaluated", eval.pde.name(), eval.samples.len());
            print_gates(&eval.gates);
            for f in &eval.failures {
                println!("  sample {} failed: {}", f.index, f.error);
            }
            Ok(eval.failures.is_empty())
        }
        Command::Bench { pde, samples, train_samples, anchor, out_dir, no_write, common } => {
            let kinds = if pde.is_empty() { PdeKind::ALL.to_vec() } else { pde };
            let mut ok = true;
            for kind in kinds {
                let mut extra = anchor.overrides();
                if let Some(n) = samples {
                    extra = merge(extra, json!({ "test_samples": n }));
                }
                if let Some(n) = train_samples {
                    extra = merge(extra, json!({ "train_samples": n }));
                }
                let mut cfg = common.config(Some(kind), extra)?;
                if let Some(d) = &out_dir {
                    cfg.out_dir = d.join(kind.name());
                }
                cfg.out_dir = common.out(&cfg.out_dir);
                let outcome = bench(&cfg, !no_write)?;
                print_summary(&outcome.summary);
                ok &= outcome.summary.complete();
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
