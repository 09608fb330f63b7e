//! Controlled dynamical systems with the additive decomposition
//! `f(x, u) = f_x(x) + f_u(u) + f_xu(x, u)`.

mod catalog;
mod dataset;
mod simulate;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::numerics::{all_finite, finite_difference_jacobian_scaled, max_abs, max_abs_vec, Matrix, Vector};

pub use catalog::{builtin_system, catalog_names, linear_system, Params};
pub use dataset::{
    generate_dataset, ControlKind, DatasetEnvelope, DatasetSpec, DerivativeSource, SnapshotDataset,
    SnapshotKind,
};
pub use simulate::{
    discretize, discretize_with, iterate_map, simulate, simulate_bounded, ControlSignal, DiscretizationScheme,
    Trajectory, DEFAULT_DIVERGENCE_BOUND,
};

/// Tolerance on the decomposition hypotheses `f_u(0) = 0`,
/// `f_xu(x, 0) = 0`, `f_xu(0, u) = 0`.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-10;

/// Tolerance for analytic Jacobians against central differences.
pub const JACOBIAN_AGREEMENT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeKind {
    Continuous,
    Discrete,
}

impl TimeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TimeKind::Continuous => "continuous",
            TimeKind::Discrete => "discrete",
        }
    }
}

impl fmt::Display for TimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type StateMap = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type CrossMap = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
pub type StateJacobian = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
pub type CrossJacobian = Arc<dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync>;

/// A controlled system, continuous (`x' = f(x, u)`) or discrete
/// (`x_{k+1} = f(x_k, u_k)`). Immutable and cheap to clone.
#[derive(Clone)]
pub struct ControlledSystem {
    name: String,
    time_kind: TimeKind,
    state_dim: usize,
    input_dim: usize,
    state_part: StateMap,
    input_part: Option<StateMap>,
    cross_part: Option<CrossMap>,
    jac_state_part: Option<StateJacobian>,
    jac_input_part: Option<StateJacobian>,
    jac_cross_x: Option<CrossJacobian>,
    jac_cross_u: Option<CrossJacobian>,
}

impl fmt::Debug for ControlledSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledSystem")
            .field("name", &self.name)
            .field("time_kind", &self.time_kind)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("has_input_part", &self.input_part.is_some())
            .field("has_cross_part", &self.cross_part.is_some())
            .finish()
    }
}

pub struct SystemBuilder {
    name: String,
    time_kind: TimeKind,
    state_dim: usize,
    input_dim: usize,
    state_part: Option<StateMap>,
    input_part: Option<StateMap>,
    cross_part: Option<CrossMap>,
    jac_state_part: Option<StateJacobian>,
    jac_input_part: Option<StateJacobian>,
    jac_cross_x: Option<CrossJacobian>,
    jac_cross_u: Option<CrossJacobian>,
}

impl SystemBuilder {
    pub fn state_part(mut self, f: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.state_part = Some(Arc::new(f));
        self
    }

    pub fn input_part(mut self, f: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.input_part = Some(Arc::new(f));
        self
    }

    pub fn cross_part(
        mut self,
        f: impl Fn(&Vector, &Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        self.cross_part = Some(Arc::new(f));
        self
    }

    pub fn state_jacobian(
        mut self,
        j: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.jac_state_part = Some(Arc::new(j));
        self
    }

    pub fn input_jacobian(
        mut self,
        j: impl Fn(&Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.jac_input_part = Some(Arc::new(j));
        self
    }

    pub fn cross_jacobians(
        mut self,
        wrt_x: impl Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static,
        wrt_u: impl Fn(&Vector, &Vector) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.jac_cross_x = Some(Arc::new(wrt_x));
        self.jac_cross_u = Some(Arc::new(wrt_u));
        self
    }

    pub(crate) fn raw_state_part(mut self, f: StateMap) -> Self {
        self.state_part = Some(f);
        self
    }

    pub(crate) fn raw_input_part(mut self, f: StateMap) -> Self {
        self.input_part = Some(f);
        self
    }

    pub(crate) fn raw_cross_part(mut self, f: CrossMap) -> Self {
        self.cross_part = Some(f);
        self
    }

    pub(crate) fn raw_jacobians(
        mut self,
        state: StateJacobian,
        input: StateJacobian,
        cross_x: CrossJacobian,
        cross_u: CrossJacobian,
    ) -> Self {
        self.jac_state_part = Some(state);
        self.jac_input_part = Some(input);
        self.jac_cross_x = Some(cross_x);
        self.jac_cross_u = Some(cross_u);
        self
    }

    /// Validates output dimensions at the origin.
    pub fn build(self) -> Result<ControlledSystem> {
        let state_part = self
            .state_part
            .ok_or_else(|| Error::InvalidArgument(format!("system `{}` has no state part", self.name)))?;
        let sys = ControlledSystem {
            name: self.name,
            time_kind: self.time_kind,
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            state_part,
            input_part: self.input_part,
            cross_part: self.cross_part,
            jac_state_part: self.jac_state_part,
            jac_input_part: self.jac_input_part,
            jac_cross_x: self.jac_cross_x,
            jac_cross_u: self.jac_cross_u,
        };
        let x0 = Vector::zeros(sys.state_dim);
        let u0 = Vector::zeros(sys.input_dim);
        check_dim("state part output", sys.state_dim, (sys.state_part)(&x0).len())?;
        if let Some(fu) = &sys.input_part {
            check_dim("input part output", sys.state_dim, fu(&u0).len())?;
        }
        if let Some(fxu) = &sys.cross_part {
            check_dim("cross part output", sys.state_dim, fxu(&x0, &u0).len())?;
        }
        if let Some(j) = &sys.jac_state_part {
            let j = j(&x0);
            check_dim("state Jacobian rows", sys.state_dim, j.nrows())?;
            check_dim("state Jacobian cols", sys.state_dim, j.ncols())?;
        }
        if let Some(j) = &sys.jac_input_part {
            let j = j(&u0);
            check_dim("input Jacobian rows", sys.state_dim, j.nrows())?;
            check_dim("input Jacobian cols", sys.input_dim, j.ncols())?;
        }
        Ok(sys)
    }
}

/// Maximum violations of the decomposition hypotheses over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionCheck {
    /// `||f_u(0)||_inf`
    pub input_part_at_zero: f64,
    /// `max_x ||f_xu(x, 0)||_inf`
    pub cross_at_zero_input: f64,
    /// `max_u ||f_xu(0, u)||_inf`
    pub cross_at_zero_state: f64,
}

impl DecompositionCheck {
    pub fn worst(&self) -> f64 {
        self.input_part_at_zero
            .max(self.cross_at_zero_input)
            .max(self.cross_at_zero_state)
    }
}

impl ControlledSystem {
    pub fn builder(
        name: impl Into<String>,
        time_kind: TimeKind,
        state_dim: usize,
        input_dim: usize,
    ) -> SystemBuilder {
        SystemBuilder {
            name: name.into(),
            time_kind,
            state_dim,
            input_dim,
            state_part: None,
            input_part: None,
            cross_part: None,
            jac_state_part: None,
            jac_input_part: None,
            jac_cross_x: None,
            jac_cross_u: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
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

    /// True when the cross term is structurally absent.
    pub fn has_cross_part(&self) -> bool {
        self.cross_part.is_some()
    }

    pub fn require_kind(&self, kind: TimeKind) -> Result<()> {
        if self.time_kind != kind {
            return Err(Error::TimeKindMismatch {
                expected: kind.as_str(),
                actual: self.time_kind.as_str(),
            });
        }
        Ok(())
    }

    fn check_x(&self, x: &Vector) -> Result<()> {
        check_dim("state", self.state_dim, x.len())
    }

    fn check_u(&self, u: &Vector) -> Result<()> {
        check_dim("input", self.input_dim, u.len())
    }

    pub(crate) fn raw_state_part(&self, x: &Vector) -> Vector {
        (self.state_part)(x)
    }

    pub(crate) fn raw_input_part(&self, u: &Vector) -> Vector {
        match &self.input_part {
            Some(f) => f(u),
            None => Vector::zeros(self.state_dim),
        }
    }

    pub(crate) fn raw_cross_part(&self, x: &Vector, u: &Vector) -> Vector {
        match &self.cross_part {
            Some(f) => f(x, u),
            None => Vector::zeros(self.state_dim),
        }
    }

    pub(crate) fn raw_field(&self, x: &Vector, u: &Vector) -> Vector {
        self.raw_state_part(x) + self.raw_input_part(u) + self.raw_cross_part(x, u)
    }

    fn finite(v: Vector, what: &str) -> Result<Vector> {
        if all_finite(v.iter()) {
            Ok(v)
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    fn finite_mat(m: Matrix, what: &str) -> Result<Matrix> {
        if all_finite(m.iter()) {
            Ok(m)
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// `f_x(x) + f_u(u) + f_xu(x, u)`.
    pub fn evaluate(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_x(x)?;
        self.check_u(u)?;
        Self::finite(self.raw_field(x, u), "system field")
    }

    pub fn state_part(&self, x: &Vector) -> Result<Vector> {
        self.check_x(x)?;
        Self::finite(self.raw_state_part(x), "state part f_x")
    }

    pub fn input_part(&self, u: &Vector) -> Result<Vector> {
        self.check_u(u)?;
        Self::finite(self.raw_input_part(u), "input part f_u")
    }

    pub fn cross_part(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_x(x)?;
        self.check_u(u)?;
        Self::finite(self.raw_cross_part(x, u), "cross part f_xu")
    }

    /// Input part and cross part folded together, `f_u(u) + f_xu(x, u)`.
    pub fn folded_cross_part(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        Ok(self.input_part(u)? + self.cross_part(x, u)?)
    }

    pub fn jac_state_part(&self, x: &Vector) -> Result<Matrix> {
        self.check_x(x)?;
        let j = match &self.jac_state_part {
            Some(j) => j(x),
            None => finite_difference_jacobian_scaled(|z| self.raw_state_part(z), x)?,
        };
        Self::finite_mat(j, "d f_x / dx")
    }

    pub fn jac_input_part(&self, u: &Vector) -> Result<Matrix> {
        self.check_u(u)?;
        let j = match (&self.input_part, &self.jac_input_part) {
            (_, Some(j)) => j(u),
            (None, None) => Matrix::zeros(self.state_dim, self.input_dim),
            (Some(_), None) => finite_difference_jacobian_scaled(|v| self.raw_input_part(v), u)?,
        };
        Self::finite_mat(j, "d f_u / du")
    }

    pub fn jac_cross_x(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        self.check_x(x)?;
        self.check_u(u)?;
        let j = match (&self.cross_part, &self.jac_cross_x) {
            (_, Some(j)) => j(x, u),
            (None, None) => Matrix::zeros(self.state_dim, self.state_dim),
            (Some(_), None) => finite_difference_jacobian_scaled(|z| self.raw_cross_part(z, u), x)?,
        };
        Self::finite_mat(j, "d f_xu / dx")
    }

    pub fn jac_cross_u(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        self.check_x(x)?;
        self.check_u(u)?;
        let j = match (&self.cross_part, &self.jac_cross_u) {
            (_, Some(j)) => j(x, u),
            (None, None) => Matrix::zeros(self.state_dim, self.input_dim),
            (Some(_), None) => finite_difference_jacobian_scaled(|v| self.raw_cross_part(x, v), u)?,
        };
        Self::finite_mat(j, "d f_xu / du")
    }

    /// `df/dx` at `(x, u)`.
    pub fn jacobian_x(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        Ok(self.jac_state_part(x)? + self.jac_cross_x(x, u)?)
    }

    /// `df/du` at `(x, u)`.
    pub fn jacobian_u(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        Ok(self.jac_input_part(u)? + self.jac_cross_u(x, u)?)
    }

    pub fn check_decomposition(&self, grid: &Grid) -> Result<DecompositionCheck> {
        let x0 = Vector::zeros(self.state_dim);
        let u0 = Vector::zeros(self.input_dim);
        let input_part_at_zero = max_abs_vec(&self.input_part(&u0)?);
        let mut cross_at_zero_input = 0.0_f64;
        for x in &grid.states {
            cross_at_zero_input = cross_at_zero_input.max(max_abs_vec(&self.cross_part(x, &u0)?));
        }
        let mut cross_at_zero_state = 0.0_f64;
        for u in &grid.inputs {
            cross_at_zero_state = cross_at_zero_state.max(max_abs_vec(&self.cross_part(&x0, u)?));
        }
        Ok(DecompositionCheck {
            input_part_at_zero,
            cross_at_zero_input,
            cross_at_zero_state,
        })
    }

    /// Checks the decomposition hypotheses and finiteness of the field on
    /// every grid point.
    pub fn verify_decomposition(&self, grid: &Grid, tolerance: f64) -> Result<DecompositionCheck> {
        let check = self.check_decomposition(grid)?;
        for (what, value) in [
            ("||f_u(0)||", check.input_part_at_zero),
            ("max ||f_xu(x, 0)||", check.cross_at_zero_input),
            ("max ||f_xu(0, u)||", check.cross_at_zero_state),
        ] {
            if value > tolerance {
                return Err(Error::Decomposition {
                    what: what.into(),
                    value,
                    tolerance,
                });
            }
        }
        for (x, u) in grid.points() {
            self.evaluate(x, u)?;
        }
        Ok(check)
    }

    /// Largest deviation between the supplied analytic Jacobians and central
    /// differences over the grid. Returns 0 when no analytic forms exist.
    pub fn jacobian_discrepancy(&self, grid: &Grid) -> Result<f64> {
        let mut worst = 0.0_f64;
        for x in &grid.states {
            if let Some(j) = &self.jac_state_part {
                let fd = finite_difference_jacobian_scaled(|z| self.raw_state_part(z), x)?;
                worst = worst.max(max_abs(&(j(x) - fd)));
            }
        }
        for u in &grid.inputs {
            if let Some(j) = &self.jac_input_part {
                let fd = finite_difference_jacobian_scaled(|v| self.raw_input_part(v), u)?;
                worst = worst.max(max_abs(&(j(u) - fd)));
            }
        }
        if self.jac_cross_x.is_some() || self.jac_cross_u.is_some() {
            for (x, u) in grid.points() {
                if let Some(j) = &self.jac_cross_x {
                    let fd = finite_difference_jacobian_scaled(|z| self.raw_cross_part(z, u), x)?;
                    worst = worst.max(max_abs(&(j(x, u) - fd)));
                }
                if let Some(j) = &self.jac_cross_u {
                    let fd = finite_difference_jacobian_scaled(|v| self.raw_cross_part(x, v), u)?;
                    worst = worst.max(max_abs(&(j(x, u) - fd)));
                }
            }
        }
        Ok(worst)
    }
}
