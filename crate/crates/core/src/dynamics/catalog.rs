use std::collections::BTreeMap;

use super::{ControlledSystem, TimeKind};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

pub type Params = BTreeMap<String, f64>;

const CATALOG: &[&str] = &["linear", "bilinear-scalar", "duffing-forced", "slow-manifold"];

pub fn catalog_names() -> &'static [&'static str] {
    CATALOG
}

fn required(name: &str, params: &Params, key: &str) -> Result<f64> {
    let value = params.get(key).copied().ok_or_else(|| Error::MissingParameter {
        system: name.to_string(),
        param: key.to_string(),
    })?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("parameter `{key}` of `{name}`")));
    }
    Ok(value)
}

fn optional(params: &Params, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Catalog systems (all continuous time):
///
/// * `linear`: `x' = A x + B u`, 2 states, 1 input; entries `a11..a22`,
///   `b1`, `b2` default to `A = diag(-1, -2)`, `B = (1, 1)`.
/// * `bilinear-scalar`: `x' = a x + b x u`; requires `a`, `b`.
/// * `duffing-forced`: `x1' = x2`, `x2' = x1 - x1^3 - delta x2 + u`;
///   requires `delta`.
/// * `slow-manifold`: `x1' = mu x1`, `x2' = lambda (x2 - x1^2) + u`;
///   requires `mu`, `lambda`.
pub fn builtin_system(name: &str, params: &Params) -> Result<ControlledSystem> {
    match name {
        "linear" => {
            let a = Matrix::from_row_slice(
                2,
                2,
                &[
                    optional(params, "a11", -1.0),
                    optional(params, "a12", 0.0),
                    optional(params, "a21", 0.0),
                    optional(params, "a22", -2.0),
                ],
            );
            let b = Matrix::from_row_slice(
                2,
                1,
                &[optional(params, "b1", 1.0), optional(params, "b2", 1.0)],
            );
            if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("parameter of `linear`".into()));
            }
            linear_system("linear", TimeKind::Continuous, a, b)
        }
        "bilinear-scalar" => {
            let a = required(name, params, "a")?;
            let b = required(name, params, "b")?;
            ControlledSystem::builder(name, TimeKind::Continuous, 1, 1)
                .state_part(move |x| x * a)
                .cross_part(move |x, u| Vector::from_element(1, b * x[0] * u[0]))
                .state_jacobian(move |_| Matrix::from_element(1, 1, a))
                .input_jacobian(|_| Matrix::zeros(1, 1))
                .cross_jacobians(
                    move |_, u| Matrix::from_element(1, 1, b * u[0]),
                    move |x, _| Matrix::from_element(1, 1, b * x[0]),
                )
                .build()
        }
        "duffing-forced" => {
            let delta = required(name, params, "delta")?;
            ControlledSystem::builder(name, TimeKind::Continuous, 2, 1)
                .state_part(move |x| {
                    Vector::from_column_slice(&[x[1], x[0] - x[0].powi(3) - delta * x[1]])
                })
                .input_part(|u| Vector::from_column_slice(&[0.0, u[0]]))
                .state_jacobian(move |x| {
                    Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0 - 3.0 * x[0] * x[0], -delta])
                })
                .input_jacobian(|_| Matrix::from_row_slice(2, 1, &[0.0, 1.0]))
                .build()
        }
        "slow-manifold" => {
            let mu = required(name, params, "mu")?;
            let lambda = required(name, params, "lambda")?;
            ControlledSystem::builder(name, TimeKind::Continuous, 2, 1)
                .state_part(move |x| {
                    Vector::from_column_slice(&[mu * x[0], lambda * (x[1] - x[0] * x[0])])
                })
                .input_part(|u| Vector::from_column_slice(&[0.0, u[0]]))
                .state_jacobian(move |x| {
                    Matrix::from_row_slice(2, 2, &[mu, 0.0, -2.0 * lambda * x[0], lambda])
                })
                .input_jacobian(|_| Matrix::from_row_slice(2, 1, &[0.0, 1.0]))
                .build()
        }
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

/// `f_x = A x`, `f_u = B u`, no cross term.
pub fn linear_system(
    name: &str,
    time_kind: TimeKind,
    a: Matrix,
    b: Matrix,
) -> Result<ControlledSystem> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "linear system matrices".into(),
            expected: n,
            actual: if a.ncols() != n { a.ncols() } else { b.nrows() },
        });
    }
    let (a1, a2, b1, b2) = (a.clone(), a, b.clone(), b);
    ControlledSystem::builder(name, time_kind, n, m)
        .state_part(move |x| &a1 * x)
        .input_part(move |u| &b1 * u)
        .state_jacobian(move |_| a2.clone())
        .input_jacobian(move |_| b2.clone())
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DECOMPOSITION_TOLERANCE, JACOBIAN_AGREEMENT_TOLERANCE};
    use crate::grid::Grid;
    use approx::assert_abs_diff_eq;

    fn params(kv: &[(&str, f64)]) -> Params {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn all_catalog() -> Vec<ControlledSystem> {
        vec![
            builtin_system("linear", &Params::new()).unwrap(),
            builtin_system("bilinear-scalar", &params(&[("a", -1.0), ("b", 1.0)])).unwrap(),
            builtin_system("duffing-forced", &params(&[("delta", 0.5)])).unwrap(),
            builtin_system("slow-manifold", &params(&[("mu", -0.05), ("lambda", -1.0)])).unwrap(),
        ]
    }

    #[test]
    fn linear_example() {
        let sys = builtin_system("linear", &Params::new()).unwrap();
        let f = sys
            .evaluate(&Vector::from_column_slice(&[1.0, 1.0]), &Vector::from_element(1, 2.0))
            .unwrap();
        assert_eq!(f.as_slice(), &[1.0, 0.0]);
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let x = Vector::from_column_slice(&[0.3, -1.1]);
        let u = Vector::from_element(1, 0.7);
        assert_eq!(sys.jacobian_x(&x, &u).unwrap(), a);
        assert_eq!(sys.jacobian_u(&x, &u).unwrap(), Matrix::from_row_slice(2, 1, &[1.0, 1.0]));
        // origin maps to origin
        let z = sys.evaluate(&Vector::zeros(2), &Vector::zeros(1)).unwrap();
        assert_eq!(z, Vector::zeros(2));
    }

    #[test]
    fn bilinear_examples() {
        let sys = builtin_system("bilinear-scalar", &params(&[("a", -1.0), ("b", 1.0)])).unwrap();
        let one = Vector::from_element(1, 1.0);
        assert_eq!(sys.evaluate(&one, &one).unwrap()[0], 0.0);
        let x = Vector::from_element(1, 2.0);
        let u = Vector::from_element(1, 3.0);
        assert_eq!(sys.jacobian_x(&x, &u).unwrap()[(0, 0)], 2.0);
        assert_eq!(sys.jacobian_u(&x, &u).unwrap()[(0, 0)], 2.0);
        // d f_xu / dx vanishes on u = 0
        assert_eq!(sys.jac_cross_x(&x, &Vector::zeros(1)).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn slow_manifold_example() {
        let sys =
            builtin_system("slow-manifold", &params(&[("mu", -0.05), ("lambda", -1.0)])).unwrap();
        let f = sys
            .evaluate(&Vector::from_column_slice(&[1.0, 1.0]), &Vector::zeros(1))
            .unwrap();
        assert_abs_diff_eq!(f[0], -0.05);
        assert_abs_diff_eq!(f[1], 0.0);
    }

    #[test]
    fn duffing_has_no_cross_term() {
        let sys = builtin_system("duffing-forced", &params(&[("delta", 0.5)])).unwrap();
        let grid = Grid::default_for(2, 1);
        for (x, u) in grid.points() {
            assert_eq!(sys.cross_part(x, u).unwrap(), Vector::zeros(2));
        }
    }

    #[test]
    fn catalog_hypotheses_and_jacobians_hold() {
        for sys in all_catalog() {
            let grid = Grid::default_for(sys.state_dim(), sys.input_dim());
            let check = sys.verify_decomposition(&grid, DECOMPOSITION_TOLERANCE).unwrap();
            assert!(check.worst() <= DECOMPOSITION_TOLERANCE, "{}", sys.name());
            let d = sys.jacobian_discrepancy(&grid).unwrap();
            assert!(d <= JACOBIAN_AGREEMENT_TOLERANCE, "{}: {d}", sys.name());
        }
    }

    #[test]
    fn unknown_and_missing() {
        assert!(matches!(
            builtin_system("lorenz", &Params::new()),
            Err(Error::UnknownSystem(_))
        ));
        assert!(matches!(
            builtin_system("bilinear-scalar", &params(&[("a", -1.0)])),
            Err(Error::MissingParameter { .. })
        ));
        assert!(matches!(
            builtin_system("slow-manifold", &params(&[("mu", -1.0)])),
            Err(Error::MissingParameter { .. })
        ));
    }
}
