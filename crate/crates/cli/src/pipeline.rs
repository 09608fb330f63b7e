//! The pipeline stages behind each subcommand. Every stage writes its
//! artifacts under an output directory and returns a plain-text report
//! for the terminal; file contents depend only on the configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use kooplab::consistency::{check_all_applicable, summarize, CheckOptions, ConsistencyReport, ConsistencySummary, Verdict};
use kooplab::dynamics::{generate_dataset, iterate_map, SnapshotDataset, SnapshotKind, TimeKind};
use kooplab::formulations::{
    fit_affine, fit_joint, fit_kaiser, fit_separable, fit_williams, KoopmanModel, Relift, Variant,
};
use kooplab::numerics::{format_f64, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, ExperimentConfig, FormulationConfig};

/// Rollout horizons reported by `compare`.
pub const ROLLOUT_STEPS: [usize; 3] = [1, 5, 20];

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub struct SimulateOutcome {
    pub dataset: SnapshotDataset,
    pub csv: PathBuf,
    pub envelope: PathBuf,
    pub report: String,
}

pub fn simulate(config: &ExperimentConfig, out: &Path) -> Result<SimulateOutcome> {
    let system = config.base_system()?;
    let dataset = generate_dataset(&system, &config.dataset_spec()?).context("stage `simulate`")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (csv, envelope) = dataset.write(out, "dataset")?;
    let report = format!(
        "simulated {} {} samples of `{}` (dt {}, seed {}); {} divergent draws discarded\nwrote {} and {}\n",
        dataset.len(),
        match dataset.kind {
            SnapshotKind::DiscretePairs => "discrete-pair",
            SnapshotKind::ContinuousDerivative => "continuous-derivative",
        },
        dataset.system,
        format_f64(dataset.dt),
        config.dataset.seed,
        dataset.discarded,
        file_name(&csv),
        file_name(&envelope),
    );
    Ok(SimulateOutcome { dataset, csv, envelope, report })
}

/// Fits one formulation with the dictionaries named in the configuration.
pub fn fit_formulation(config: &ExperimentConfig, f: &FormulationConfig, data: &SnapshotDataset) -> Result<KoopmanModel> {
    let (n, m) = (data.state_dim(), data.input_dim());
    let model = match f.variant {
        Variant::Affine => fit_affine(data, &config.state_dictionary(n)?, f.ridge),
        Variant::Separable => {
            fit_separable(data, &config.state_dictionary(n)?, &config.input_dictionary(m)?, f.ridge)
        }
        Variant::Joint => fit_joint(
            data,
            &config.state_dictionary(n)?,
            &config.joint_dictionary(n, m)?,
            f.ridge,
            f.joint_mode.unwrap_or_default(),
        ),
        Variant::WilliamsBilinear => {
            fit_williams(data, &config.state_dictionary(n)?, &config.bilinear_input_dictionary(m)?, f.ridge)
        }
        Variant::KaiserEigen => fit_kaiser(data, &config.eigen_dictionary(n, m)?),
    };
    model.with_context(|| format!("fitting `{}`", f.variant))
}

pub struct FitOutcome {
    /// In the order of [`Variant::ALL`].
    pub models: Vec<KoopmanModel>,
    pub paths: Vec<PathBuf>,
    pub report: String,
}

pub fn model_path(out: &Path, variant: Variant) -> PathBuf {
    out.join(format!("model-{variant}.json"))
}

pub fn fit(config: &ExperimentConfig, data: &SnapshotDataset, out: &Path) -> Result<FitOutcome> {
    let system = config.base_system()?;
    if data.state_dim() != system.state_dim() || data.input_dim() != system.input_dim() {
        return Err(ConfigError::new(
            "--dataset",
            format!(
                "dataset has {} states and {} inputs, system `{}` has {} and {}",
                data.state_dim(),
                data.input_dim(),
                system.name(),
                system.state_dim(),
                system.input_dim()
            ),
        )
        .into());
    }
    let mut ordered = config.formulations.clone();
    ordered.sort_by_key(|f| f.variant);

    let mut models = Vec::new();
    let mut paths = Vec::new();
    let mut table = String::from("formulation,train_rms,samples,ridge,unidentified\n");
    let mut report = format!("{:<18} {:>12} {:>8}  unidentified\n", "formulation", "train_rms", "samples");
    for f in &ordered {
        let model = fit_formulation(config, f, data)?;
        let info = model.fit_info();
        let path = model_path(out, f.variant);
        write_file(&path, &(model.to_json()? + "\n"))?;
        let unidentified = info.unidentified.join(" ");
        writeln!(
            table,
            "{},{},{},{},{}",
            f.variant,
            format_f64(info.rms_residual),
            info.samples,
            format_f64(info.ridge),
            unidentified
        )?;
        writeln!(report, "{:<18} {:>12.3e} {:>8}  {}", f.variant.as_str(), info.rms_residual, info.samples, unidentified)?;
        models.push(model);
        paths.push(path);
    }
    write_file(&out.join("fit.csv"), &table)?;
    Ok(FitOutcome { models, paths, report })
}

pub struct CheckOutcome {
    pub reports: Vec<ConsistencyReport>,
    pub summary: ConsistencySummary,
    pub report: String,
}

impl CheckOutcome {
    pub fn consistent(&self) -> bool {
        self.summary.overall == Verdict::Consistent
    }
}

/// Evaluates the configured conditions for a model and writes
/// `check-<label>.json` (full residual fields) and `check-<label>.csv`.
pub fn check(config: &ExperimentConfig, model: &KoopmanModel, out: &Path, label: &str) -> Result<CheckOutcome> {
    let system = config.system_for(model.time_kind())?;
    if system.state_dim() != model.state_dim() || system.input_dim() != model.input_dim() {
        return Err(ConfigError::new(
            "--model",
            format!(
                "model has {} states and {} inputs, system `{}` has {} and {}",
                model.state_dim(),
                model.input_dim(),
                system.name(),
                system.state_dim(),
                system.input_dim()
            ),
        )
        .into());
    }
    let grid = config.grid()?;
    let opts = CheckOptions { seed: config.dataset.seed, ..CheckOptions::with_tolerance(config.tolerance) };
    let mut reports = check_all_applicable(&system, model, &grid, &opts, None).context("stage `check`")?;
    if let Some(selection) = config.selected_checks()? {
        for c in &selection {
            if !reports.iter().any(|r| r.condition == *c) {
                bail!(
                    "condition {c} does not apply to a {} {} model",
                    model.time_kind().as_str(),
                    model.variant()
                );
            }
        }
        reports.retain(|r| selection.contains(&r.condition));
    }
    let summary = summarize(&reports)?;
    write_file(&out.join(format!("check-{label}.json")), &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    write_file(&out.join(format!("check-{label}.csv")), &summary.to_csv()?)?;
    let report = format!("{} {} model\n{}", model.time_kind().as_str(), model.variant(), summary.render());
    Ok(CheckOutcome { reports, summary, report })
}

/// Largest residual over evaluated conditions; NaN when nothing was evaluated.
pub fn worst_residual(reports: &[ConsistencyReport]) -> f64 {
    reports
        .iter()
        .filter(|r| r.verdict != Verdict::NotEvaluated)
        .map(|r| r.max_residual)
        .fold(f64::NAN, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub variant: Variant,
    pub train_rms: f64,
    /// Indexed like [`ROLLOUT_STEPS`]; infinite when a rollout diverged
    /// before that step.
    pub rollout_rmse: [f64; 3],
    pub worst_residual: f64,
}

pub struct CompareOutcome {
    pub rows: Vec<CompareRow>,
    pub models: Vec<KoopmanModel>,
    /// One per model, in the same order.
    pub checks: Vec<CheckOutcome>,
    pub report: String,
}

struct HeldOut {
    x0: Vector,
    inputs: Vec<Vector>,
    truth: Vec<Vector>,
}

fn held_out_trajectories(config: &ExperimentConfig) -> Result<Vec<HeldOut>> {
    let system = config.system_for(TimeKind::Discrete)?;
    let spec = config.dataset_spec()?;
    let (m, horizon) = (system.input_dim(), config.compare.horizon);
    let amplitude = config.dataset.amplitude;
    let mut rng = ChaCha8Rng::seed_from_u64(config.compare_seed());
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < config.compare.trajectories {
        attempts += 1;
        if attempts > 100 * config.compare.trajectories {
            bail!("stage `rollout`: held-out trajectories keep diverging");
        }
        let x0 = spec.region.sample_uniform(&mut rng);
        let inputs: Vec<Vector> = (0..horizon)
            .map(|_| Vector::from_fn(m, |_, _| amplitude * rng.gen_range(-1.0..=1.0)))
            .collect();
        let traj = iterate_map(&system, &x0, &inputs, spec.dt)?;
        if !traj.diverged {
            out.push(HeldOut { x0, inputs, truth: traj.states });
        }
    }
    Ok(out)
}

pub fn compare(config: &ExperimentConfig, out: &Path) -> Result<CompareOutcome> {
    if config.formulations.len() < 2 {
        return Err(ConfigError::new("formulations", "compare needs at least two formulations").into());
    }
    if config.dataset.kind != SnapshotKind::DiscretePairs {
        return Err(ConfigError::new("dataset.kind", "compare rolls models forward and needs discrete-pairs data").into());
    }
    let sim = simulate(config, out)?;
    let fitted = fit(config, &sim.dataset, out).context("stage `fit`")?;
    let trajectories = held_out_trajectories(config)?;
    let n = sim.dataset.state_dim();

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    let mut predictions: Vec<Vec<Vec<Vector>>> = Vec::new();
    for model in &fitted.models {
        let variant = model.variant();
        let mut sq = [0.0f64; 3];
        let mut preds = Vec::new();
        for t in &trajectories {
            let roll = model
                .rollout(&t.x0, &t.inputs, Relift::EveryStep)
                .with_context(|| format!("stage `rollout` ({variant})"))?;
            for (slot, &k) in ROLLOUT_STEPS.iter().enumerate() {
                sq[slot] += match roll.states.get(k) {
                    Some(x) if k < t.truth.len() => (x - &t.truth[k]).norm_squared(),
                    _ => f64::INFINITY,
                };
            }
            preds.push(roll.states);
        }
        let denom = (trajectories.len() * n) as f64;
        let checked = check(config, model, out, variant.as_str()).with_context(|| format!("stage `check` ({variant})"))?;
        rows.push(CompareRow {
            variant,
            train_rms: model.fit_info().rms_residual,
            rollout_rmse: sq.map(|s| (s / denom).sqrt()),
            worst_residual: worst_residual(&checked.reports),
        });
        checks.push(checked);
        predictions.push(preds);
    }

    let mut csv = String::from("formulation,train_rms");
    for k in ROLLOUT_STEPS {
        write!(csv, ",rmse_{k}")?;
    }
    csv.push_str(",worst_residual\n");
    let mut report = format!(
        "{:<18} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
        "formulation", "train_rms", "rmse_1", "rmse_5", "rmse_20", "worst_res"
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.variant,
            format_f64(r.train_rms),
            format_f64(r.rollout_rmse[0]),
            format_f64(r.rollout_rmse[1]),
            format_f64(r.rollout_rmse[2]),
            format_f64(r.worst_residual)
        )?;
        writeln!(
            report,
            "{:<18} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e}",
            r.variant.as_str(),
            r.train_rms,
            r.rollout_rmse[0],
            r.rollout_rmse[1],
            r.rollout_rmse[2],
            r.worst_residual
        )?;
    }
    write_file(&out.join("compare.csv"), &csv)?;

    for (i, t) in trajectories.iter().enumerate() {
        write_file(&out.join(format!("trajectory-{i}.dat")), &trajectory_table(t, &rows, &predictions, i, config.dataset.dt))?;
    }
    writeln!(report, "wrote compare.csv and {} trajectory files", trajectories.len())?;
    Ok(CompareOutcome { rows, models: fitted.models, checks, report })
}

/// Whitespace-separated columns `k t true_x.. <variant>_x..`; predictions
/// that stopped early are written as `nan`.
fn trajectory_table(t: &HeldOut, rows: &[CompareRow], predictions: &[Vec<Vec<Vector>>], index: usize, dt: f64) -> String {
    let n = t.x0.len();
    let mut s = String::from("# k t");
    for j in 0..n {
        let _ = write!(s, " true_x{}", j + 1);
    }
    for r in rows {
        for j in 0..n {
            let _ = write!(s, " {}_x{}", r.variant, j + 1);
        }
    }
    s.push('\n');
    for (k, x) in t.truth.iter().enumerate() {
        let _ = write!(s, "{k} {}", format_f64(k as f64 * dt));
        for v in x.iter() {
            let _ = write!(s, " {}", format_f64(*v));
        }
        for preds in predictions {
            match preds[index].get(k) {
                Some(p) => p.iter().for_each(|v| {
                    let _ = write!(s, " {}", format_f64(*v));
                }),
                None => (0..n).for_each(|_| s.push_str(" nan")),
            }
        }
        s.push('\n');
    }
    s
}

pub fn load_model(path: &Path) -> Result<KoopmanModel> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::new("--model", format!("cannot read {}: {e}", path.display())))?;
    KoopmanModel::from_json(&text).map_err(|e| anyhow!(ConfigError::new("--model", e.to_string())))
}

pub fn load_dataset(path: &Path) -> Result<SnapshotDataset> {
    SnapshotDataset::read(path).map_err(|e| anyhow!(ConfigError::new("--dataset", format!("{}: {e}", path.display()))))
}
