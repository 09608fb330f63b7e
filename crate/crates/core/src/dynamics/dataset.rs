use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::simulate::{ControlSignal, DEFAULT_DIVERGENCE_BOUND};
use super::{ControlledSystem, TimeKind};
use crate::error::{check_dim, Error, Result};
use crate::grid::BoxRegion;
use crate::numerics::{all_finite, format_f64, rk4_step, Vector};

pub const DATASET_SCHEMA: &str = "kooplab.dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnapshotKind {
    /// `(x_k, u_k, x_{k+1})`
    #[default]
    DiscretePairs,
    /// `(x, u, x')`
    ContinuousDerivative,
}

impl SnapshotKind {
    pub fn time_kind(self) -> TimeKind {
        match self {
            SnapshotKind::DiscretePairs => TimeKind::Discrete,
            SnapshotKind::ContinuousDerivative => TimeKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlKind {
    UniformRandom,
    Sinusoid,
    Prbs,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DerivativeSource {
    #[default]
    Analytic,
    /// Central difference over a short forward/backward RK4 arc of length `h`.
    FiniteDifference { h: f64 },
}

fn default_amplitude() -> f64 {
    1.0
}
fn default_frequency() -> f64 {
    1.0
}
fn default_max_hold() -> usize {
    5
}
fn default_retries() -> usize {
    100
}
fn default_bound() -> f64 {
    DEFAULT_DIVERGENCE_BOUND
}

/// How to harvest a snapshot dataset from a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub control: ControlKind,
    pub seed: u64,
    pub dt: f64,
    pub region: BoxRegion,
    #[serde(default)]
    pub kind: SnapshotKind,
    #[serde(default)]
    pub derivative: DerivativeSource,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Angular frequency of the sinusoid kind.
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    /// Longest PRBS hold, in samples.
    #[serde(default = "default_max_hold")]
    pub max_hold: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default = "default_bound")]
    pub divergence_bound: f64,
}

impl DatasetSpec {
    pub fn new(n_samples: usize, control: ControlKind, seed: u64, dt: f64, region: BoxRegion) -> Self {
        Self {
            n_samples,
            control,
            seed,
            dt,
            region,
            kind: SnapshotKind::DiscretePairs,
            derivative: DerivativeSource::Analytic,
            amplitude: default_amplitude(),
            frequency: default_frequency(),
            max_hold: default_max_hold(),
            max_retries: default_retries(),
            divergence_bound: default_bound(),
        }
    }

    pub fn continuous(mut self) -> Self {
        self.kind = SnapshotKind::ContinuousDerivative;
        self
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    fn signal(&self) -> ControlSignal {
        let seed = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        match self.control {
            ControlKind::Zero => ControlSignal::Zero,
            ControlKind::UniformRandom => ControlSignal::UniformRandom {
                amplitude: self.amplitude,
                seed,
            },
            ControlKind::Sinusoid => ControlSignal::Sinusoid {
                amplitude: self.amplitude,
                frequency: self.frequency,
                phase: 0.0,
            },
            ControlKind::Prbs => ControlSignal::Prbs {
                amplitude: self.amplitude,
                max_hold: self.max_hold,
                seed,
            },
        }
    }
}

/// Snapshot triples. For discrete pairs `targets[k]` is `x_{k+1}`; for
/// continuous data it is the time derivative at `(x_k, u_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    pub kind: SnapshotKind,
    pub system: String,
    pub seed: Option<u64>,
    pub dt: f64,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub targets: Vec<Vector>,
    /// Input time derivatives, when known.
    pub input_rates: Option<Vec<Vector>>,
    /// Samples dropped at the divergence guard and redrawn.
    pub discarded: usize,
}

/// JSON metadata stored next to the CSV table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEnvelope {
    pub schema: String,
    pub kind: SnapshotKind,
    pub system: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub samples: usize,
    pub dt: f64,
    pub seed: Option<u64>,
    pub discarded: usize,
    pub data_file: String,
}

/// Draws `n_samples` states uniformly from the region and pairs each with
/// an input from the requested control process. Deterministic given the
/// seed; the state stream does not depend on the control kind.
pub fn generate_dataset(system: &ControlledSystem, spec: &DatasetSpec) -> Result<SnapshotDataset> {
    spec.region.validate()?;
    check_dim("dataset region", system.state_dim(), spec.region.dim())?;
    if spec.n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    if !(spec.dt.is_finite() && spec.dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {}", spec.dt)));
    }
    if spec.kind == SnapshotKind::ContinuousDerivative {
        system.require_kind(TimeKind::Continuous)?;
    }

    let m = system.input_dim();
    let signal = spec.signal();
    let inputs = signal.sequence(m, spec.n_samples, spec.dt)?;
    let input_rates: Vec<Vector> = (0..spec.n_samples)
        .map(|k| signal.rate_at(m, k as f64 * spec.dt))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut states = Vec::with_capacity(spec.n_samples);
    let mut targets = Vec::with_capacity(spec.n_samples);
    let mut discarded = 0;

    for u in &inputs {
        let mut attempts = 0;
        loop {
            let x = spec.region.sample_uniform(&mut rng);
            match target_for(system, spec, &x, u) {
                Ok(y) if all_finite(y.iter()) && y.norm() <= spec.divergence_bound => {
                    states.push(x);
                    targets.push(y);
                    break;
                }
                Ok(_) | Err(Error::NonFinite(_)) => {
                    discarded += 1;
                    attempts += 1;
                    if attempts > spec.max_retries {
                        return Err(Error::RetriesExhausted {
                            retries: spec.max_retries,
                            reason: "every redraw diverged".into(),
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }

    Ok(SnapshotDataset {
        kind: spec.kind,
        system: system.name().to_string(),
        seed: Some(spec.seed),
        dt: spec.dt,
        states,
        inputs,
        targets,
        input_rates: Some(input_rates),
        discarded,
    })
}

fn target_for(system: &ControlledSystem, spec: &DatasetSpec, x: &Vector, u: &Vector) -> Result<Vector> {
    match (spec.kind, system.time_kind()) {
        (SnapshotKind::DiscretePairs, TimeKind::Discrete) => system.evaluate(x, u),
        (SnapshotKind::DiscretePairs, TimeKind::Continuous) => {
            rk4_step(|z, v, _| system.raw_field(z, v), x, u, 0.0, spec.dt)
        }
        (SnapshotKind::ContinuousDerivative, _) => match spec.derivative {
            DerivativeSource::Analytic => system.evaluate(x, u),
            DerivativeSource::FiniteDifference { h } => {
                let forward = rk4_step(|z, v, _| system.raw_field(z, v), x, u, 0.0, h)?;
                let backward = rk4_step(|z, v, _| -system.raw_field(z, v), x, u, 0.0, h)?;
                Ok((forward - backward) / (2.0 * h))
            }
        },
    }
}

impl SnapshotDataset {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn time_kind(&self) -> TimeKind {
        self.kind.time_kind()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        check_dim("dataset inputs", self.len(), self.inputs.len())?;
        check_dim("dataset targets", self.len(), self.targets.len())?;
        let (n, m) = (self.state_dim(), self.input_dim());
        for k in 0..self.len() {
            check_dim("dataset state", n, self.states[k].len())?;
            check_dim("dataset input", m, self.inputs[k].len())?;
            check_dim("dataset target", n, self.targets[k].len())?;
            if !all_finite(self.states[k].iter().chain(self.inputs[k].iter()).chain(self.targets[k].iter())) {
                return Err(Error::NonFinite(format!("dataset row {k}")));
            }
        }
        if let Some(rates) = &self.input_rates {
            check_dim("dataset input rates", self.len(), rates.len())?;
        }
        Ok(())
    }

    /// Indices of samples with `u = 0` exactly.
    pub fn zero_input_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.inputs[k].iter().all(|&v| v == 0.0))
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |v: &Vec<Vector>| indices.iter().map(|&k| v[k].clone()).collect::<Vec<_>>();
        Self {
            kind: self.kind,
            system: self.system.clone(),
            seed: self.seed,
            dt: self.dt,
            states: pick(&self.states),
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            input_rates: self.input_rates.as_ref().map(pick),
            discarded: self.discarded,
        }
    }

    pub fn envelope(&self, data_file: &str) -> DatasetEnvelope {
        DatasetEnvelope {
            schema: DATASET_SCHEMA.into(),
            kind: self.kind,
            system: self.system.clone(),
            state_dim: self.state_dim(),
            input_dim: self.input_dim(),
            samples: self.len(),
            dt: self.dt,
            seed: self.seed,
            discarded: self.discarded,
            data_file: data_file.into(),
        }
    }

    /// Comma-separated table with header `k,x_1..x_n,u_1..u_m,y_1..y_n`.
    pub fn to_csv(&self) -> Result<String> {
        let (n, m) = (self.state_dim(), self.input_dim());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=m).map(|i| format!("u_{i}")));
        header.extend((1..=n).map(|i| format!("y_{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.states[k].iter().map(|&v| format_f64(v)));
            row.extend(self.inputs[k].iter().map(|&v| format_f64(v)));
            row.extend(self.targets[k].iter().map(|&v| format_f64(v)));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_csv(envelope: &DatasetEnvelope, text: &str) -> Result<Self> {
        let (n, m) = (envelope.state_dim, envelope.input_dim);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        check_dim("dataset CSV columns", 1 + 2 * n + m, header.len())?;
        let mut ds = SnapshotDataset {
            kind: envelope.kind,
            system: envelope.system.clone(),
            seed: envelope.seed,
            dt: envelope.dt,
            states: vec![],
            inputs: vec![],
            targets: vec![],
            input_rates: None,
            discarded: envelope.discarded,
        };
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(csv_err)?;
            let values: Vec<f64> = record
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        Error::Serialization(format!("dataset row {line}: `{s}`: {e}"))
                    })
                })
                .collect::<Result<_>>()?;
            check_dim("dataset CSV row", 2 * n + m, values.len())?;
            ds.states.push(Vector::from_column_slice(&values[..n]));
            ds.inputs.push(Vector::from_column_slice(&values[n..n + m]));
            ds.targets.push(Vector::from_column_slice(&values[n + m..]));
        }
        check_dim("dataset samples", envelope.samples, ds.len())?;
        ds.validate()?;
        Ok(ds)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let csv_name = format!("{stem}.csv");
        let csv_path = dir.join(&csv_name);
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&csv_path, self.to_csv()?).map_err(io_err)?;
        let env = serde_json::to_string_pretty(&self.envelope(&csv_name))?;
        fs::write(&json_path, env + "\n").map_err(io_err)?;
        Ok((csv_path, json_path))
    }

    /// Reads a dataset from either its CSV or its JSON envelope path; the
    /// other file is located by shared stem.
    pub fn read(path: &Path) -> Result<Self> {
        let json_path = path.with_extension("json");
        let env: DatasetEnvelope =
            serde_json::from_str(&fs::read_to_string(&json_path).map_err(io_err)?)?;
        let csv_path = json_path
            .parent()
            .map(|p| p.join(&env.data_file))
            .unwrap_or_else(|| PathBuf::from(&env.data_file));
        let text = fs::read_to_string(&csv_path).map_err(io_err)?;
        Self::from_csv(&env, &text)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Serialization(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_system, discretize, linear_system, Params};
    use crate::numerics::Matrix;

    fn linear() -> ControlledSystem {
        builtin_system("linear", &Params::new()).unwrap()
    }

    #[test]
    fn zero_control_gives_zero_inputs() {
        let spec = DatasetSpec::new(100, ControlKind::Zero, 1, 0.1, BoxRegion::symmetric(2, 2.0));
        let ds = generate_dataset(&linear(), &spec).unwrap();
        assert_eq!(ds.len(), 100);
        assert!(ds.inputs.iter().all(|u| u.iter().all(|&v| v == 0.0)));
        assert_eq!(ds.zero_input_indices().len(), 100);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let spec = DatasetSpec::new(64, ControlKind::Prbs, 42, 0.1, BoxRegion::symmetric(2, 2.0));
        let a = generate_dataset(&linear(), &spec).unwrap();
        let b = generate_dataset(&linear(), &spec).unwrap();
        assert_eq!(a, b);
        let mut other = spec.clone();
        other.seed = 43;
        assert_ne!(a.states, generate_dataset(&linear(), &other).unwrap().states);
    }

    #[test]
    fn discrete_linear_rows_satisfy_map() {
        let a = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 0.5]);
        let sys = linear_system("dlin", TimeKind::Discrete, a.clone(), b.clone()).unwrap();
        let spec = DatasetSpec::new(50, ControlKind::UniformRandom, 5, 1.0, BoxRegion::symmetric(2, 1.0));
        let ds = generate_dataset(&sys, &spec).unwrap();
        for k in 0..ds.len() {
            let expected = &a * &ds.states[k] + &b * &ds.inputs[k];
            assert!((&ds.targets[k] - expected).amax() <= 1e-12);
        }
    }

    #[test]
    fn continuous_derivatives_match_field() {
        let sys = linear();
        let spec = DatasetSpec::new(20, ControlKind::Sinusoid, 2, 0.1, BoxRegion::symmetric(2, 1.0))
            .continuous();
        let ds = generate_dataset(&sys, &spec).unwrap();
        for k in 0..ds.len() {
            let f = sys.evaluate(&ds.states[k], &ds.inputs[k]).unwrap();
            assert_eq!(ds.targets[k], f);
        }
        let mut fd = spec.clone();
        fd.derivative = DerivativeSource::FiniteDifference { h: 1e-3 };
        let ds_fd = generate_dataset(&sys, &fd).unwrap();
        for k in 0..ds.len() {
            assert!((&ds_fd.targets[k] - &ds.targets[k]).amax() < 1e-5);
        }
    }

    #[test]
    fn continuous_kind_needs_continuous_system() {
        let d = discretize(&linear(), 0.1).unwrap();
        let spec = DatasetSpec::new(5, ControlKind::Zero, 0, 0.1, BoxRegion::symmetric(2, 1.0)).continuous();
        assert!(matches!(generate_dataset(&d, &spec), Err(Error::TimeKindMismatch { .. })));
    }

    #[test]
    fn bad_region_and_counts() {
        let spec = DatasetSpec::new(5, ControlKind::Zero, 0, 0.1, BoxRegion::symmetric(3, 1.0));
        assert!(generate_dataset(&linear(), &spec).is_err());
        let spec = DatasetSpec::new(0, ControlKind::Zero, 0, 0.1, BoxRegion::symmetric(2, 1.0));
        assert!(generate_dataset(&linear(), &spec).is_err());
        let inverted = BoxRegion { lower: vec![1.0, 1.0], upper: vec![0.0, 0.0] };
        let spec = DatasetSpec::new(5, ControlKind::Zero, 0, 0.1, inverted);
        assert!(matches!(generate_dataset(&linear(), &spec), Err(Error::Empty(_))));
    }

    #[test]
    fn csv_round_trip() {
        let spec = DatasetSpec::new(30, ControlKind::UniformRandom, 8, 0.1, BoxRegion::symmetric(2, 2.0));
        let ds = generate_dataset(&linear(), &spec).unwrap();
        let text = ds.to_csv().unwrap();
        assert!(text.starts_with("k,x_1,x_2,u_1,y_1,y_2\n"));
        let back = SnapshotDataset::from_csv(&ds.envelope("d.csv"), &text).unwrap();
        assert_eq!(back.states, ds.states);
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.targets, ds.targets);
        assert_eq!(back.input_rates, None);
    }
}
