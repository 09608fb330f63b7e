//! Lifted linear models of controlled systems and their one-step maps.
//!
//! Every variant has a left side `psi(x)` (or `psi(x, u)` for the
//! eigenfunction variant) and a right side that is linear in its operator
//! matrices. For discrete models the right side is the next lifted state;
//! for continuous models it is the lifted time derivative.

mod fit;
mod io;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{TimeKind, DEFAULT_DIVERGENCE_BOUND};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{all_finite, Matrix, MatrixData, Vector};
use crate::observables::{Dictionary, JointDictionary, JointSpec};

pub use fit::{
    fit_affine, fit_joint, fit_kaiser, fit_separable, fit_williams, lifted_targets, JointFitMode,
};
pub use io::{ModelDocument, MODEL_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Affine,
    Separable,
    Joint,
    WilliamsBilinear,
    KaiserEigen,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Affine,
        Variant::Separable,
        Variant::Joint,
        Variant::WilliamsBilinear,
        Variant::KaiserEigen,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Affine => "affine",
            Variant::Separable => "separable",
            Variant::Joint => "joint",
            Variant::WilliamsBilinear => "williams-bilinear",
            Variant::KaiserEigen => "kaiser-eigen",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operators together with the dictionaries they act on.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Representation {
    /// `psi(x+) = K psi(x) + B u`
    Affine { psi: Dictionary, k: Matrix, b: Matrix },
    /// `psi_x(x+) = K_x psi_x(x) + K_u psi_u(u)`
    Separable { psi_x: Dictionary, psi_u: Dictionary, k_x: Matrix, k_u: Matrix },
    /// `psi_x(x+) = K_x psi_x(x) + K_xu psi_xu(x, u)`
    Joint { psi_x: Dictionary, psi_xu: JointDictionary, k_x: Matrix, k_xu: Matrix },
    /// `psi_x(x+) = (sum_i psi_u_i(u) K_i) psi_x(x)`
    WilliamsBilinear { psi_x: Dictionary, psi_u: Dictionary, operators: Vec<Matrix> },
    /// `d/dt psi(x, u) = diag(lambda) psi(x, u) + (d psi / d u) u'`, with
    /// `psi` defined on the concatenated vector `(x, u)`.
    KaiserEigen { psi: Dictionary, eigenvalues: Vector },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitInfo {
    /// `sqrt(sum_k |r_k|^2 / samples)` over the training set.
    pub rms_residual: f64,
    pub samples: usize,
    pub ridge: f64,
    /// Operator blocks the data could not determine.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unidentified: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relift {
    /// Re-evaluate the dictionaries at each predicted state.
    #[default]
    EveryStep,
    /// Propagate the lifted coordinates without re-lifting.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub lifted: Vector,
    /// Present when the state dictionary contains the raw coordinates.
    pub state: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `x0` followed by one predicted state per control.
    pub states: Vec<Vector>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    time_kind: TimeKind,
    state_dim: usize,
    input_dim: usize,
    representation: Representation,
    fit: FitInfo,
}

impl KoopmanModel {
    /// Assembles a model from explicit operators, checking shapes against
    /// the dictionaries.
    pub fn new(
        time_kind: TimeKind,
        state_dim: usize,
        input_dim: usize,
        representation: Representation,
        fit: FitInfo,
    ) -> Result<Self> {
        let model = Self { time_kind, state_dim, input_dim, representation, fit };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let shape = |what: &str, m: &Matrix, r: usize, c: usize| -> Result<()> {
            check_dim(&format!("{what} rows"), r, m.nrows())?;
            check_dim(&format!("{what} cols"), c, m.ncols())?;
            if !all_finite(m.iter()) {
                return Err(Error::NonFinite(what.to_string()));
            }
            Ok(())
        };
        let (n, m) = (self.state_dim, self.input_dim);
        match &self.representation {
            Representation::Affine { psi, k, b } => {
                check_dim("state dictionary dimension", n, psi.input_dim())?;
                shape("K", k, psi.len(), psi.len())?;
                shape("B", b, psi.len(), m)
            }
            Representation::Separable { psi_x, psi_u, k_x, k_u } => {
                check_dim("state dictionary dimension", n, psi_x.input_dim())?;
                check_dim("input dictionary dimension", m, psi_u.input_dim())?;
                shape("K_x", k_x, psi_x.len(), psi_x.len())?;
                shape("K_u", k_u, psi_x.len(), psi_u.len())
            }
            Representation::Joint { psi_x, psi_xu, k_x, k_xu } => {
                check_dim("state dictionary dimension", n, psi_x.input_dim())?;
                check_dim("joint dictionary state dimension", n, psi_xu.state_dim())?;
                check_dim("joint dictionary input dimension", m, psi_xu.input_dim())?;
                shape("K_x", k_x, psi_x.len(), psi_x.len())?;
                shape("K_xu", k_xu, psi_x.len(), psi_xu.len())
            }
            Representation::WilliamsBilinear { psi_x, psi_u, operators } => {
                check_dim("state dictionary dimension", n, psi_x.input_dim())?;
                check_dim("input dictionary dimension", m, psi_u.input_dim())?;
                check_dim("number of K_i", psi_u.len(), operators.len())?;
                for (i, k) in operators.iter().enumerate() {
                    shape(&format!("K_{}", i + 1), k, psi_x.len(), psi_x.len())?;
                }
                Ok(())
            }
            Representation::KaiserEigen { psi, eigenvalues } => {
                check_dim("eigenfunction dictionary dimension", n + m, psi.input_dim())?;
                check_dim("eigenvalue count", psi.len(), eigenvalues.len())?;
                if !all_finite(eigenvalues.iter()) {
                    return Err(Error::NonFinite("eigenvalues".into()));
                }
                Ok(())
            }
        }
    }

    pub fn variant(&self) -> Variant {
        match self.representation {
            Representation::Affine { .. } => Variant::Affine,
            Representation::Separable { .. } => Variant::Separable,
            Representation::Joint { .. } => Variant::Joint,
            Representation::WilliamsBilinear { .. } => Variant::WilliamsBilinear,
            Representation::KaiserEigen { .. } => Variant::KaiserEigen,
        }
    }

    pub fn time_kind(&self) -> TimeKind {
        self.time_kind
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn representation(&self) -> &Representation {
        &self.representation
    }

    pub fn fit_info(&self) -> &FitInfo {
        &self.fit
    }

    /// The dictionary on the left side: `psi_x`, or the eigenfunctions.
    pub fn lifting(&self) -> &Dictionary {
        match &self.representation {
            Representation::Affine { psi, .. } | Representation::KaiserEigen { psi, .. } => psi,
            Representation::Separable { psi_x, .. }
            | Representation::Joint { psi_x, .. }
            | Representation::WilliamsBilinear { psi_x, .. } => psi_x,
        }
    }

    pub fn lifted_dim(&self) -> usize {
        self.lifting().len()
    }

    /// Raw state can be read from the lift only for state-only dictionaries
    /// that contain every coordinate.
    pub fn is_state_inclusive(&self) -> bool {
        !matches!(self.representation, Representation::KaiserEigen { .. })
            && self.lifting().is_state_inclusive()
    }

    fn check_point(&self, x: &Vector, u: &Vector) -> Result<()> {
        check_dim("model state", self.state_dim, x.len())?;
        check_dim("model input", self.input_dim, u.len())
    }

    fn concat(x: &Vector, u: &Vector) -> Vector {
        Vector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
    }

    /// Left-side observables at `(x, u)`.
    pub fn lift(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_point(x, u)?;
        match &self.representation {
            Representation::KaiserEigen { psi, .. } => psi.evaluate(&Self::concat(x, u)),
            _ => self.lifting().evaluate(x),
        }
    }

    /// `d(lift)/dx` and `d(lift)/du`.
    pub fn lift_jacobians(&self, x: &Vector, u: &Vector) -> Result<(Matrix, Matrix)> {
        self.check_point(x, u)?;
        match &self.representation {
            Representation::KaiserEigen { psi, .. } => {
                let j = psi.jacobian(&Self::concat(x, u))?;
                Ok((
                    j.columns(0, self.state_dim).into_owned(),
                    j.columns(self.state_dim, self.input_dim).into_owned(),
                ))
            }
            _ => Ok((self.lifting().jacobian(x)?, Matrix::zeros(self.lifted_dim(), self.input_dim))),
        }
    }

    /// `sum_i psi_u_i(u) K_i`.
    pub fn williams_operator(&self, u: &Vector) -> Result<Matrix> {
        match &self.representation {
            Representation::WilliamsBilinear { psi_u, operators, psi_x } => {
                let w = psi_u.evaluate(u)?;
                let mut k = Matrix::zeros(psi_x.len(), psi_x.len());
                for (ki, wi) in operators.iter().zip(w.iter()) {
                    k += ki * *wi;
                }
                Ok(k)
            }
            _ => Err(Error::Inapplicable(format!(
                "K(u) is defined for williams-bilinear models, not {}",
                self.variant()
            ))),
        }
    }

    /// The model's right side at `(x, u)`: next lift (discrete) or lifted
    /// rate excluding any input-rate transport term (continuous).
    pub fn represented(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_point(x, u)?;
        let out = match &self.representation {
            Representation::Affine { psi, k, b } => k * psi.evaluate(x)? + b * u,
            Representation::Separable { psi_x, psi_u, k_x, k_u } => {
                k_x * psi_x.evaluate(x)? + k_u * psi_u.evaluate(u)?
            }
            Representation::Joint { psi_x, psi_xu, k_x, k_xu } => {
                k_x * psi_x.evaluate(x)? + k_xu * psi_xu.evaluate(x, u)?
            }
            Representation::WilliamsBilinear { psi_x, .. } => {
                self.williams_operator(u)? * psi_x.evaluate(x)?
            }
            Representation::KaiserEigen { psi, eigenvalues } => {
                psi.evaluate(&Self::concat(x, u))?.component_mul(eigenvalues)
            }
        };
        if !all_finite(out.iter()) {
            return Err(Error::NonFinite("model right side".into()));
        }
        Ok(out)
    }

    /// Derivatives of [`Self::represented`] with respect to `x` and `u`.
    pub fn represented_jacobians(&self, x: &Vector, u: &Vector) -> Result<(Matrix, Matrix)> {
        self.check_point(x, u)?;
        Ok(match &self.representation {
            Representation::Affine { psi, k, b } => (k * psi.jacobian(x)?, b.clone()),
            Representation::Separable { psi_x, psi_u, k_x, k_u } => {
                (k_x * psi_x.jacobian(x)?, k_u * psi_u.jacobian(u)?)
            }
            Representation::Joint { psi_x, psi_xu, k_x, k_xu } => (
                k_x * psi_x.jacobian(x)? + k_xu * psi_xu.jacobian_x(x, u)?,
                k_xu * psi_xu.jacobian_u(x, u)?,
            ),
            Representation::WilliamsBilinear { psi_x, psi_u, operators } => {
                let jx = self.williams_operator(u)? * psi_x.jacobian(x)?;
                let px = psi_x.evaluate(x)?;
                let ju_dict = psi_u.jacobian(u)?;
                let mut ju = Matrix::zeros(psi_x.len(), self.input_dim);
                for (i, k) in operators.iter().enumerate() {
                    let kp = k * &px;
                    for j in 0..self.input_dim {
                        let mut col = ju.column_mut(j);
                        col += &kp * ju_dict[(i, j)];
                    }
                }
                (jx, ju)
            }
            Representation::KaiserEigen { psi, eigenvalues } => {
                let j = Matrix::from_diagonal(eigenvalues) * psi.jacobian(&Self::concat(x, u))?;
                (
                    j.columns(0, self.state_dim).into_owned(),
                    j.columns(self.state_dim, self.input_dim).into_owned(),
                )
            }
        })
    }

    /// Continuous models: the full represented `d psi / dt`, including the
    /// `(d psi / d u) u'` transport term of the eigenfunction variant.
    pub fn lifted_rate(&self, x: &Vector, u: &Vector, input_rate: &Vector) -> Result<Vector> {
        self.require_kind(TimeKind::Continuous)?;
        check_dim("input rate", self.input_dim, input_rate.len())?;
        let mut rate = self.represented(x, u)?;
        if let Representation::KaiserEigen { .. } = self.representation {
            let (_, ju) = self.lift_jacobians(x, u)?;
            rate += ju * input_rate;
        }
        Ok(rate)
    }

    pub fn require_kind(&self, kind: TimeKind) -> Result<()> {
        if self.time_kind != kind {
            return Err(Error::TimeKindMismatch { expected: kind.as_str(), actual: self.time_kind.as_str() });
        }
        Ok(())
    }

    /// One discrete step from `(x, u)`.
    pub fn predict_step(&self, x: &Vector, u: &Vector) -> Result<Prediction> {
        self.require_kind(TimeKind::Discrete)?;
        let lifted = self.represented(x, u)?;
        let state = if self.is_state_inclusive() {
            Some(self.lifting().extract_state(&lifted)?)
        } else {
            None
        };
        Ok(Prediction { lifted, state })
    }

    /// Like [`Self::predict_step`] but fails unless the state can be read off.
    pub fn predict_state(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        if !self.is_state_inclusive() {
            return Err(Error::NotStateInclusive);
        }
        self.predict_step(x, u)?.state.ok_or(Error::NotStateInclusive)
    }

    /// Multi-step state prediction under a control sequence. Stops early,
    /// flagging divergence, if a predicted state leaves the divergence bound
    /// or becomes non-finite.
    pub fn rollout(&self, x0: &Vector, controls: &[Vector], relift: Relift) -> Result<Rollout> {
        self.require_kind(TimeKind::Discrete)?;
        if !self.is_state_inclusive() {
            return Err(Error::NotStateInclusive);
        }
        check_dim("rollout initial state", self.state_dim, x0.len())?;
        let dict = self.lifting();
        let mut states = vec![x0.clone()];
        let mut x = x0.clone();
        let mut z = dict.evaluate(x0)?;
        for u in controls {
            check_dim("rollout control", self.input_dim, u.len())?;
            let next = match relift {
                Relift::EveryStep => self.represented(&x, u),
                Relift::None => self.propagate_lifted(&z, &x, u),
            };
            let z_next = match next {
                Ok(z) => z,
                Err(Error::NonFinite(_)) => return Ok(Rollout { states, diverged: true }),
                Err(e) => return Err(e),
            };
            let x_next = dict.extract_state(&z_next)?;
            if !all_finite(x_next.iter()) || x_next.norm() > DEFAULT_DIVERGENCE_BOUND {
                return Ok(Rollout { states, diverged: true });
            }
            states.push(x_next.clone());
            x = x_next;
            z = z_next;
        }
        Ok(Rollout { states, diverged: false })
    }

    fn propagate_lifted(&self, z: &Vector, x: &Vector, u: &Vector) -> Result<Vector> {
        let out = match &self.representation {
            Representation::Affine { k, b, .. } => k * z + b * u,
            Representation::Separable { psi_u, k_x, k_u, .. } => k_x * z + k_u * psi_u.evaluate(u)?,
            Representation::Joint { psi_xu, k_x, k_xu, .. } => k_x * z + k_xu * psi_xu.evaluate(x, u)?,
            Representation::WilliamsBilinear { .. } => self.williams_operator(u)? * z,
            Representation::KaiserEigen { .. } => return Err(Error::TimeKindMismatch {
                expected: "discrete",
                actual: "continuous",
            }),
        };
        if !all_finite(out.iter()) {
            return Err(Error::NonFinite("lifted propagation".into()));
        }
        Ok(out)
    }

    /// Named operator blocks in a fixed order.
    pub fn operator_blocks(&self) -> Vec<(String, Matrix)> {
        match &self.representation {
            Representation::Affine { k, b, .. } => vec![("K".into(), k.clone()), ("B".into(), b.clone())],
            Representation::Separable { k_x, k_u, .. } => {
                vec![("K_x".into(), k_x.clone()), ("K_u".into(), k_u.clone())]
            }
            Representation::Joint { k_x, k_xu, .. } => {
                vec![("K_x".into(), k_x.clone()), ("K_xu".into(), k_xu.clone())]
            }
            Representation::WilliamsBilinear { operators, .. } => operators
                .iter()
                .enumerate()
                .map(|(i, k)| (format!("K_{}", i + 1), k.clone()))
                .collect(),
            Representation::KaiserEigen { eigenvalues, .. } => {
                vec![("Lambda".into(), Matrix::from_diagonal(eigenvalues))]
            }
        }
    }

    /// Same dictionaries, new operator blocks (in [`Self::operator_blocks`]
    /// order). The eigenvalue block must stay diagonal.
    pub fn with_operator_blocks(&self, blocks: Vec<Matrix>) -> Result<Self> {
        check_dim("operator block count", self.operator_blocks().len(), blocks.len())?;
        let mut it = blocks.into_iter();
        let mut next = || it.next().expect("count checked");
        let representation = match &self.representation {
            Representation::Affine { psi, .. } => Representation::Affine { psi: psi.clone(), k: next(), b: next() },
            Representation::Separable { psi_x, psi_u, .. } => Representation::Separable {
                psi_x: psi_x.clone(),
                psi_u: psi_u.clone(),
                k_x: next(),
                k_u: next(),
            },
            Representation::Joint { psi_x, psi_xu, .. } => Representation::Joint {
                psi_x: psi_x.clone(),
                psi_xu: psi_xu.clone(),
                k_x: next(),
                k_xu: next(),
            },
            Representation::WilliamsBilinear { psi_x, psi_u, operators } => Representation::WilliamsBilinear {
                psi_x: psi_x.clone(),
                psi_u: psi_u.clone(),
                operators: (0..operators.len()).map(|_| next()).collect(),
            },
            Representation::KaiserEigen { psi, .. } => {
                let lambda = next();
                check_dim("eigenvalue block rows", psi.len(), lambda.nrows())?;
                check_dim("eigenvalue block cols", psi.len(), lambda.ncols())?;
                let off_diagonal = (0..psi.len())
                    .flat_map(|i| (0..psi.len()).map(move |j| (i, j)))
                    .any(|(i, j)| i != j && lambda[(i, j)] != 0.0);
                if off_diagonal {
                    return Err(Error::InvalidArgument("eigenvalue block must be diagonal".into()));
                }
                Representation::KaiserEigen { psi: psi.clone(), eigenvalues: lambda.diagonal() }
            }
        };
        Self::new(self.time_kind, self.state_dim, self.input_dim, representation, self.fit.clone())
    }

    /// Equivalent joint model of a bilinear one:
    /// `K_x = K(0)`, `K_xu = I`, `psi_xu(x, u) = (K(u) - K(0)) psi_x(x)`.
    pub fn williams_to_joint(&self) -> Result<Self> {
        let Representation::WilliamsBilinear { psi_x, psi_u, operators } = &self.representation else {
            return Err(Error::Inapplicable(format!(
                "williams_to_joint needs a williams-bilinear model, got {}",
                self.variant()
            )));
        };
        if !psi_u.has_constant() {
            return Err(Error::DictionaryPrecondition(
                "input dictionary must contain the constant function".into(),
            ));
        }
        let spec = JointSpec::WilliamsLift {
            state: psi_x.spec().clone(),
            input: psi_u.spec().clone(),
            operators: operators.iter().map(MatrixData::from).collect(),
        };
        let psi_xu = JointDictionary::build(&spec, self.state_dim, self.input_dim)?;
        let k_x = self.williams_operator(&Vector::zeros(self.input_dim))?;
        Self::new(
            self.time_kind,
            self.state_dim,
            self.input_dim,
            Representation::Joint {
                psi_x: psi_x.clone(),
                k_xu: Matrix::identity(psi_x.len(), psi_x.len()),
                psi_xu,
                k_x,
            },
            self.fit.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observables::DictionarySpec;

    fn scalar_affine() -> KoopmanModel {
        KoopmanModel::new(
            TimeKind::Discrete,
            1,
            1,
            Representation::Affine {
                psi: Dictionary::identity(1),
                k: Matrix::from_element(1, 1, 0.9),
                b: Matrix::from_element(1, 1, 0.1),
            },
            FitInfo::default(),
        )
        .unwrap()
    }

    fn bilinear_williams(dt: f64) -> KoopmanModel {
        KoopmanModel::new(
            TimeKind::Discrete,
            1,
            1,
            Representation::WilliamsBilinear {
                psi_x: Dictionary::identity(1),
                psi_u: Dictionary::monomials(1, 1, true).unwrap(),
                operators: vec![Matrix::from_element(1, 1, 1.0 - dt), Matrix::from_element(1, 1, dt)],
            },
            FitInfo::default(),
        )
        .unwrap()
    }

    #[test]
    fn affine_prediction() {
        let m = scalar_affine();
        let p = m.predict_step(&Vector::from_element(1, 1.0), &Vector::zeros(1)).unwrap();
        assert!((p.state.unwrap()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn shape_errors_detected() {
        let bad = KoopmanModel::new(
            TimeKind::Discrete,
            1,
            1,
            Representation::Affine {
                psi: Dictionary::identity(1),
                k: Matrix::zeros(2, 2),
                b: Matrix::zeros(1, 1),
            },
            FitInfo::default(),
        );
        assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rollout_zero_length_and_modes_agree() {
        let m = scalar_affine();
        let x0 = Vector::from_element(1, 0.5);
        assert_eq!(m.rollout(&x0, &[], Relift::EveryStep).unwrap().states, vec![x0.clone()]);
        let controls: Vec<Vector> = (0..50).map(|k| Vector::from_element(1, (k as f64 * 0.3).sin())).collect();
        let a = m.rollout(&x0, &controls, Relift::EveryStep).unwrap();
        let b = m.rollout(&x0, &controls, Relift::None).unwrap();
        assert_eq!(a.states.len(), 51);
        for (p, q) in a.states.iter().zip(&b.states) {
            assert!((p - q).amax() <= 1e-9);
        }
    }

    #[test]
    fn rollout_flags_divergence() {
        let m = KoopmanModel::new(
            TimeKind::Discrete,
            1,
            1,
            Representation::Affine {
                psi: Dictionary::identity(1),
                k: Matrix::from_element(1, 1, 1e6),
                b: Matrix::zeros(1, 1),
            },
            FitInfo::default(),
        )
        .unwrap();
        let r = m.rollout(&Vector::from_element(1, 1.0), &vec![Vector::zeros(1); 10], Relift::EveryStep).unwrap();
        assert!(r.diverged);
        assert!(r.states.len() < 11);
    }

    #[test]
    fn williams_conversion_preserves_steps() {
        let w = bilinear_williams(0.1);
        let j = w.williams_to_joint().unwrap();
        assert_eq!(j.variant(), Variant::Joint);
        for &(x, u) in &[(2.0, 3.0), (-1.0, 0.5), (0.3, 0.0)] {
            let (x, u) = (Vector::from_element(1, x), Vector::from_element(1, u));
            let direct = w.williams_operator(&u).unwrap() * &x;
            assert!((w.predict_state(&x, &u).unwrap() - &direct).amax() <= 1e-12);
            assert!((j.predict_state(&x, &u).unwrap() - &direct).amax() <= 1e-12);
            let (wx, wu) = w.represented_jacobians(&x, &u).unwrap();
            let (jx, ju) = j.represented_jacobians(&x, &u).unwrap();
            assert!((wx - jx).amax() <= 1e-12 && (wu - ju).amax() <= 1e-12);
        }
    }

    #[test]
    fn williams_conversion_needs_constant() {
        let w = KoopmanModel::new(
            TimeKind::Discrete,
            1,
            1,
            Representation::WilliamsBilinear {
                psi_x: Dictionary::identity(1),
                psi_u: Dictionary::identity(1),
                operators: vec![Matrix::from_element(1, 1, 1.0)],
            },
            FitInfo::default(),
        )
        .unwrap();
        assert!(matches!(w.williams_to_joint(), Err(Error::DictionaryPrecondition(_))));
        assert!(matches!(scalar_affine().williams_to_joint(), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn eigen_model_rate_includes_transport() {
        // psi(x, u) = x + u, lambda = -1
        let psi = Dictionary::build(
            &DictionarySpec::Polynomials {
                terms: vec![vec![
                    crate::observables::Term { coef: 1.0, powers: vec![1, 0] },
                    crate::observables::Term { coef: 1.0, powers: vec![0, 1] },
                ]],
            },
            2,
        )
        .unwrap();
        let m = KoopmanModel::new(
            TimeKind::Continuous,
            1,
            1,
            Representation::KaiserEigen { psi, eigenvalues: Vector::from_element(1, -1.0) },
            FitInfo::default(),
        )
        .unwrap();
        let x = Vector::from_element(1, 2.0);
        let u = Vector::from_element(1, 1.0);
        let rate = m.lifted_rate(&x, &u, &Vector::from_element(1, 0.5)).unwrap();
        assert_eq!(rate[0], -3.0 + 0.5);
        assert!(!m.is_state_inclusive());
        assert!(m.predict_step(&x, &u).is_err());
        let blocks = vec![Matrix::from_row_slice(1, 1, &[2.0])];
        assert_eq!(m.with_operator_blocks(blocks).unwrap().operator_blocks()[0].1[(0, 0)], 2.0);
    }
}
