//! Shared numerical kernels: least squares, central finite differences and
//! fixed-step RK4 with zero-order-hold inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Row-major matrix layout used in JSON documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixData {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }
}

impl MatrixData {
    pub fn to_matrix(&self) -> Result<Matrix> {
        check_dim("matrix data length", self.rows * self.cols, self.data.len())?;
        if !all_finite(&self.data) {
            return Err(Error::NonFinite("matrix data".into()));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Largest absolute entry; 0 for empty matrices.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Shortest round-trip text for `v`: plain decimal for moderate magnitudes,
/// scientific otherwise.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

/// Numerical rank from singular values, using the LAPACK-style cutoff
/// `max(m, n) * eps * sigma_max`.
pub fn numerical_rank(singular_values: &Vector, rows: usize, cols: usize) -> usize {
    let sigma_max = singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    let cutoff = rows.max(cols) as f64 * f64::EPSILON * sigma_max;
    singular_values.iter().filter(|&&s| s > cutoff).count()
}

/// Solves `min ||A X - B||_F^2 + ridge ||X||_F^2`.
///
/// With `ridge == 0` the problem is solved by Householder QR followed by a
/// triangular solve; the numerical rank is taken from the singular values of
/// `R` and a rank-deficient `A` is reported instead of silently regularized.
/// With `ridge > 0` the augmented system `[A; sqrt(ridge) I] X = [B; 0]` is
/// solved the same way.
pub fn solve_least_squares(a: &Matrix, b: &Matrix, ridge: f64) -> Result<Matrix> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "least squares needs a non-empty design matrix, got {m}x{n}"
        )));
    }
    check_dim("least squares right-hand side rows", m, b.nrows())?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be a finite nonnegative number, got {ridge}"
        )));
    }
    if !all_finite(a.iter()) || !all_finite(b.iter()) {
        return Err(Error::NonFinite("least squares inputs".into()));
    }

    let (design, rhs) = if ridge > 0.0 {
        let mut aug = Matrix::zeros(m + n, n);
        aug.view_mut((0, 0), (m, n)).copy_from(a);
        let s = ridge.sqrt();
        for j in 0..n {
            aug[(m + j, j)] = s;
        }
        let mut rhs = Matrix::zeros(m + n, b.ncols());
        rhs.view_mut((0, 0), (m, b.ncols())).copy_from(b);
        (aug, rhs)
    } else {
        (a.clone(), b.clone())
    };

    let rows = design.nrows();
    if rows < n {
        let sv = design.clone().svd(false, false).singular_values;
        return Err(Error::RankDeficient {
            rank: numerical_rank(&sv, rows, n),
            cols: n,
            block: None,
        });
    }

    let qr = design.qr();
    let r = qr.r();
    let sv = r.clone().svd(false, false).singular_values;
    let rank = numerical_rank(&sv, rows, n);
    if rank < n {
        return Err(Error::RankDeficient {
            rank,
            cols: n,
            block: None,
        });
    }
    let qtb = qr.q().transpose() * rhs;
    r.solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient {
            rank,
            cols: n,
            block: None,
        })
}

/// Default central-difference step for coordinate value `xj`:
/// cube root of machine epsilon scaled by `1 + |xj|`.
pub fn default_step(xj: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + xj.abs())
}

fn fd_jacobian_with<F>(f: F, x: &Vector, step: impl Fn(usize) -> f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let mut columns: Vec<Vector> = Vec::with_capacity(n);
    let mut probe = x.clone();
    let mut rows = None;
    for j in 0..n {
        let h = step(j);
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step must be positive, got {h}"
            )));
        }
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        if !all_finite(plus.iter()) || !all_finite(minus.iter()) {
            return Err(Error::NonFinite(format!(
                "finite-difference probe along coordinate {j}"
            )));
        }
        let len = *rows.get_or_insert(plus.len());
        check_dim("finite-difference output", len, plus.len())?;
        check_dim("finite-difference output", len, minus.len())?;
        columns.push((plus - minus) / (2.0 * h));
    }
    let rows = match rows {
        Some(r) => r,
        None => f(x).len(),
    };
    let mut jac = Matrix::zeros(rows, n);
    for (j, col) in columns.iter().enumerate() {
        jac.set_column(j, col);
    }
    Ok(jac)
}

/// Central-difference Jacobian with a fixed step `h` on every coordinate.
pub fn finite_difference_jacobian<F>(f: F, x: &Vector, h: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Vector,
{
    fd_jacobian_with(f, x, |_| h)
}

/// Central-difference Jacobian with the per-coordinate [`default_step`].
pub fn finite_difference_jacobian_scaled<F>(f: F, x: &Vector) -> Result<Matrix>
where
    F: Fn(&Vector) -> Vector,
{
    fd_jacobian_with(f, x, |j| default_step(x[j]))
}

fn check_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if all_finite(v.iter()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// One classical RK4 step of `x' = field(x, u, t)` with `u` held constant
/// over `[t, t + dt]`.
pub fn rk4_step<F>(field: F, x: &Vector, u: &Vector, t: f64, dt: f64) -> Result<Vector>
where
    F: Fn(&Vector, &Vector, f64) -> Vector,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let half = 0.5 * dt;
    let k1 = field(x, u, t);
    check_finite_vec(&k1, "rk4 stage 1")?;
    check_dim("rk4 derivative", x.len(), k1.len())?;
    let k2 = field(&(x + &k1 * half), u, t + half);
    check_finite_vec(&k2, "rk4 stage 2")?;
    let k3 = field(&(x + &k2 * half), u, t + half);
    check_finite_vec(&k3, "rk4 stage 3")?;
    let k4 = field(&(x + &k3 * dt), u, t + dt);
    check_finite_vec(&k4, "rk4 stage 4")?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

/// Result of an RK4 step propagated together with its tangent-linear map.
#[derive(Debug, Clone)]
pub struct Rk4Sensitivity {
    pub next: Vector,
    /// d(next)/dx
    pub wrt_state: Matrix,
    /// d(next)/du
    pub wrt_input: Matrix,
}

/// RK4 step differentiated exactly through its stages, given the field's
/// state and input Jacobians.
pub fn rk4_step_with_sensitivity<F, Jx, Ju>(
    field: F,
    jac_x: Jx,
    jac_u: Ju,
    x: &Vector,
    u: &Vector,
    t: f64,
    dt: f64,
) -> Result<Rk4Sensitivity>
where
    F: Fn(&Vector, &Vector, f64) -> Vector,
    Jx: Fn(&Vector, &Vector, f64) -> Matrix,
    Ju: Fn(&Vector, &Vector, f64) -> Matrix,
{
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let n = x.len();
    let m = u.len();
    let half = 0.5 * dt;
    let eye = Matrix::identity(n, n);

    // stage points and their sensitivities
    let stage = |y: &Vector, dy_dx: &Matrix, dy_du: &Matrix, ts: f64| {
        let k = field(y, u, ts);
        let a = jac_x(y, u, ts);
        let b = jac_u(y, u, ts);
        let dk_dx = &a * dy_dx;
        let dk_du = &a * dy_du + b;
        (k, dk_dx, dk_du)
    };

    let zero_u = Matrix::zeros(n, m);
    let (k1, k1x, k1u) = stage(x, &eye, &zero_u, t);
    let (k2, k2x, k2u) = stage(
        &(x + &k1 * half),
        &(&eye + &k1x * half),
        &(&k1u * half),
        t + half,
    );
    let (k3, k3x, k3u) = stage(
        &(x + &k2 * half),
        &(&eye + &k2x * half),
        &(&k2u * half),
        t + half,
    );
    let (k4, k4x, k4u) = stage(&(x + &k3 * dt), &(&eye + &k3x * dt), &(&k3u * dt), t + dt);

    let w = dt / 6.0;
    let next = x + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * w;
    let wrt_state = &eye + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * w;
    let wrt_input = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * w;
    check_finite_vec(&next, "rk4 sensitivity step")?;
    if !all_finite(wrt_state.iter()) || !all_finite(wrt_input.iter()) {
        return Err(Error::NonFinite("rk4 tangent-linear map".into()));
    }
    Ok(Rk4Sensitivity {
        next,
        wrt_state,
        wrt_input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_least_squares_returns_rhs() {
        let a = Matrix::identity(3, 3);
        let b = Matrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let x = solve_least_squares(&a, &b, 0.0).unwrap();
        assert_abs_diff_eq!(x, b, epsilon = 1e-15);
    }

    #[test]
    fn two_point_mean() {
        let a = Matrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let b = Matrix::from_column_slice(2, 1, &[1.0, 3.0]);
        let x = solve_least_squares(&a, &b, 0.0).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Matrix::from_fn(50, 3, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = Matrix::from_row_slice(3, 2, &[1.0, -2.0, 0.25, 3.0, -0.5, 0.75]);
        let b = &a * &x0;
        let x = solve_least_squares(&a, &b, 0.0).unwrap();
        assert_abs_diff_eq!(x, x0, epsilon = 1e-10);
    }

    #[test]
    fn rank_deficiency_names_rank() {
        let a = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = Matrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        match solve_least_squares(&a, &b, 0.0) {
            Err(Error::RankDeficient { rank, cols, .. }) => {
                assert_eq!(rank, 1);
                assert_eq!(cols, 2);
            }
            other => panic!("expected rank error, got {other:?}"),
        }
        // ridge makes the problem well posed
        assert!(solve_least_squares(&a, &b, 1e-3).is_ok());
    }

    #[test]
    fn underdetermined_is_rank_deficient() {
        let a = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = Matrix::from_column_slice(1, 1, &[1.0]);
        assert!(matches!(
            solve_least_squares(&a, &b, 0.0),
            Err(Error::RankDeficient { rank: 1, cols: 2, .. })
        ));
    }

    #[test]
    fn ridge_matches_closed_form() {
        // scalar: x = a.b / (a.a + ridge)
        let a = Matrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let b = Matrix::from_column_slice(3, 1, &[2.0, 1.0, 0.0]);
        let x = solve_least_squares(&a, &b, 0.5).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 4.0 / 14.5, epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = Matrix::identity(3, 3);
        let b = Matrix::zeros(2, 1);
        assert!(matches!(
            solve_least_squares(&a, &b, 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(solve_least_squares(&a, &Matrix::zeros(3, 1), -1.0).is_err());
    }

    #[test]
    fn fd_square() {
        let f = |x: &Vector| Vector::from_vec(vec![x[0] * x[0]]);
        let j = finite_difference_jacobian(f, &Vector::from_vec(vec![3.0]), 1e-4).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 6.0, epsilon = 1e-7);
    }

    #[test]
    fn fd_identity() {
        let x = Vector::from_vec(vec![0.3, -1.7, 4.0]);
        let j = finite_difference_jacobian_scaled(|z: &Vector| z.clone(), &x).unwrap();
        assert_abs_diff_eq!(j, Matrix::identity(3, 3), epsilon = 1e-10);
    }

    #[test]
    fn fd_two_by_two() {
        let f = |x: &Vector| Vector::from_vec(vec![x[0] * x[1], x[0] * x[0]]);
        let j = finite_difference_jacobian(f, &Vector::from_vec(vec![2.0, 3.0]), 1e-5).unwrap();
        let expected = Matrix::from_row_slice(2, 2, &[3.0, 2.0, 4.0, 0.0]);
        assert_abs_diff_eq!(j, expected, epsilon = 1e-8);
    }

    #[test]
    fn fd_rejects_non_finite() {
        let f = |x: &Vector| Vector::from_vec(vec![1.0 / x[0]]);
        assert!(matches!(
            finite_difference_jacobian(f, &Vector::from_vec(vec![1e-5]), 1e-5),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn rk4_decay_step() {
        let field = |x: &Vector, _: &Vector, _: f64| -x;
        let u = Vector::zeros(0);
        let x = rk4_step(field, &Vector::from_vec(vec![1.0]), &u, 0.0, 0.1).unwrap();
        // RK4 amplification factor 1 + z + z^2/2 + z^3/6 + z^4/24 at z = -0.1
        assert_abs_diff_eq!(x[0], 0.9048375, epsilon = 1e-10);
        assert_abs_diff_eq!(x[0], (-0.1f64).exp(), epsilon = 1e-7);
    }

    #[test]
    fn rk4_zero_field_and_constant_input() {
        let still = |x: &Vector, _: &Vector, _: f64| Vector::zeros(x.len());
        let x0 = Vector::from_vec(vec![1.5, -2.0]);
        assert_eq!(rk4_step(still, &x0, &Vector::zeros(0), 0.0, 0.3).unwrap(), x0);

        let ramp = |_: &Vector, u: &Vector, _: f64| u.clone();
        let x = rk4_step(
            ramp,
            &Vector::from_vec(vec![0.0]),
            &Vector::from_vec(vec![2.0]),
            0.0,
            0.5,
        )
        .unwrap();
        assert_eq!(x[0], 1.0);
    }

    #[test]
    fn rk4_rejects_bad_step() {
        let field = |x: &Vector, _: &Vector, _: f64| -x;
        let x = Vector::from_vec(vec![1.0]);
        assert!(rk4_step(field, &x, &Vector::zeros(0), 0.0, 0.0).is_err());
        let blowup = |x: &Vector, _: &Vector, _: f64| x.map(|_| f64::NAN);
        assert!(matches!(
            rk4_step(blowup, &x, &Vector::zeros(0), 0.0, 0.1),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn rk4_sensitivity_matches_finite_differences() {
        let field = |x: &Vector, u: &Vector, _: f64| {
            Vector::from_vec(vec![x[1], x[0] - x[0].powi(3) - 0.5 * x[1] + u[0] * x[0]])
        };
        let jx = |x: &Vector, u: &Vector, _: f64| {
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0 - 3.0 * x[0] * x[0] + u[0], -0.5])
        };
        let ju = |x: &Vector, _: &Vector, _: f64| Matrix::from_row_slice(2, 1, &[0.0, x[0]]);
        let x = Vector::from_vec(vec![0.7, -0.3]);
        let u = Vector::from_vec(vec![0.4]);
        let s = rk4_step_with_sensitivity(field, jx, ju, &x, &u, 0.0, 0.1).unwrap();
        let plain = rk4_step(field, &x, &u, 0.0, 0.1).unwrap();
        assert_abs_diff_eq!(s.next, plain, epsilon = 1e-15);
        let fdx = finite_difference_jacobian_scaled(
            |z: &Vector| rk4_step(field, z, &u, 0.0, 0.1).unwrap(),
            &x,
        )
        .unwrap();
        let fdu = finite_difference_jacobian_scaled(
            |v: &Vector| rk4_step(field, &x, v, 0.0, 0.1).unwrap(),
            &u,
        )
        .unwrap();
        assert_abs_diff_eq!(s.wrt_state, fdx, epsilon = 1e-9);
        assert_abs_diff_eq!(s.wrt_input, fdu, epsilon = 1e-9);
    }
}
