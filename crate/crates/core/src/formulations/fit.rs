//! Least-squares identification of each model family from snapshots.
//!
//! Discrete data is fitted against `psi(x_{k+1})`. Continuous data is
//! fitted against the sampled lifted derivative `(d psi / d x) x'`, using
//! the dictionary's analytic Jacobian.

use serde::{Deserialize, Serialize};

use super::{FitInfo, KoopmanModel, Representation};
use crate::dynamics::{SnapshotDataset, TimeKind};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{numerical_rank, solve_least_squares, Matrix, Vector};
use crate::observables::{Dictionary, JointDictionary};

/// Tolerance for `psi_xu(x, 0) = 0` on the training states.
const JOINT_VANISHING_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointFitMode {
    /// One least-squares problem over `[K_x | K_xu]`.
    #[default]
    Simultaneous,
    /// `K_x` from the zero-input samples, then `K_xu` from the rest with
    /// `K_x` frozen.
    TwoStage,
}

/// Left-side targets for a state dictionary, one row per sample.
pub fn lifted_targets(data: &SnapshotDataset, psi: &Dictionary) -> Result<Matrix> {
    data.validate()?;
    check_dim("state dictionary dimension", data.state_dim(), psi.input_dim())?;
    let mut t = Matrix::zeros(data.len(), psi.len());
    for k in 0..data.len() {
        let row = match data.time_kind() {
            TimeKind::Discrete => psi.evaluate(&data.targets[k])?,
            TimeKind::Continuous => psi.jacobian(&data.states[k])? * &data.targets[k],
        };
        t.set_row(k, &row.transpose());
    }
    Ok(t)
}

fn design<F>(samples: usize, cols: usize, mut row: F) -> Result<Matrix>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let mut a = Matrix::zeros(samples, cols);
    for k in 0..samples {
        let r = row(k)?;
        check_dim("design row", cols, r.len())?;
        for (j, v) in r.into_iter().enumerate() {
            a[(k, j)] = v;
        }
    }
    Ok(a)
}

/// Solves `design * W = targets` and splits `W^T` into named column blocks.
fn solve_blocks(
    context: &str,
    design: &Matrix,
    blocks: &[(String, usize)],
    targets: &Matrix,
    ridge: f64,
) -> Result<Vec<Matrix>> {
    let cols: usize = blocks.iter().map(|b| b.1).sum();
    check_dim("design columns", cols, design.ncols())?;
    if ridge == 0.0 && design.nrows() < cols {
        return Err(Error::InsufficientSamples {
            context: context.to_string(),
            required: cols,
            available: design.nrows(),
        });
    }
    let w = match solve_least_squares(design, targets, ridge) {
        Ok(w) => w,
        Err(Error::RankDeficient { rank, cols, .. }) => {
            return Err(Error::RankDeficient { rank, cols, block: Some(deficient_block(design, blocks)) })
        }
        Err(e) => return Err(e),
    };
    let op = w.transpose();
    let mut start = 0;
    Ok(blocks
        .iter()
        .map(|(_, width)| {
            let b = op.columns(start, *width).into_owned();
            start += width;
            b
        })
        .collect())
}

fn deficient_block(design: &Matrix, blocks: &[(String, usize)]) -> String {
    let mut start = 0;
    for (name, width) in blocks {
        let cols = design.columns(start, *width).into_owned();
        start += width;
        let sv = cols.svd(false, false).singular_values;
        if numerical_rank(&sv, design.nrows(), *width) < *width {
            return name.clone();
        }
    }
    blocks.iter().map(|b| b.0.as_str()).collect::<Vec<_>>().join("+")
}

fn rms(residual: &Matrix) -> f64 {
    if residual.nrows() == 0 {
        return 0.0;
    }
    (residual.norm_squared() / residual.nrows() as f64).sqrt()
}

fn row_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn finish(data: &SnapshotDataset, representation: Representation, ridge: f64, unidentified: Vec<String>) -> Result<KoopmanModel> {
    let model = KoopmanModel::new(
        data.time_kind(),
        data.state_dim(),
        data.input_dim(),
        representation,
        FitInfo { rms_residual: 0.0, samples: data.len(), ridge, unidentified },
    )?;
    let rms_residual = model.training_residual(data)?;
    Ok(KoopmanModel { fit: FitInfo { rms_residual, ..model.fit.clone() }, ..model })
}

/// `psi(x+) = K psi(x) + B u` (or its generator analogue).
pub fn fit_affine(data: &SnapshotDataset, psi: &Dictionary, ridge: f64) -> Result<KoopmanModel> {
    let targets = lifted_targets(data, psi)?;
    let (np, m) = (psi.len(), data.input_dim());
    let a = design(data.len(), np + m, |k| {
        let mut r = row_of(&psi.evaluate(&data.states[k])?);
        r.extend(data.inputs[k].iter());
        Ok(r)
    })?;
    let blocks = [("K".to_string(), np), ("B".to_string(), m)];
    let mut ops = solve_blocks("affine fit", &a, &blocks, &targets, ridge)?.into_iter();
    let (k, b) = (ops.next().unwrap(), ops.next().unwrap());
    finish(data, Representation::Affine { psi: psi.clone(), k, b }, ridge, vec![])
}

/// `psi_x(x+) = K_x psi_x(x) + K_u psi_u(u)` with `psi_u(0) = 0`.
pub fn fit_separable(
    data: &SnapshotDataset,
    psi_x: &Dictionary,
    psi_u: &Dictionary,
    ridge: f64,
) -> Result<KoopmanModel> {
    if !psi_u.is_zero_at_zero() {
        return Err(Error::DictionaryPrecondition("input dictionary must vanish at u = 0".into()));
    }
    check_dim("input dictionary dimension", data.input_dim(), psi_u.input_dim())?;
    let targets = lifted_targets(data, psi_x)?;
    let (nx, nu) = (psi_x.len(), psi_u.len());
    let a = design(data.len(), nx + nu, |k| {
        let mut r = row_of(&psi_x.evaluate(&data.states[k])?);
        r.extend(psi_u.evaluate(&data.inputs[k])?.iter());
        Ok(r)
    })?;
    let blocks = [("K_x".to_string(), nx), ("K_u".to_string(), nu)];
    let mut ops = solve_blocks("separable fit", &a, &blocks, &targets, ridge)?.into_iter();
    let (k_x, k_u) = (ops.next().unwrap(), ops.next().unwrap());
    finish(
        data,
        Representation::Separable { psi_x: psi_x.clone(), psi_u: psi_u.clone(), k_x, k_u },
        ridge,
        vec![],
    )
}

/// `psi_x(x+) = K_x psi_x(x) + K_xu psi_xu(x, u)` with `psi_xu(x, 0) = 0`.
pub fn fit_joint(
    data: &SnapshotDataset,
    psi_x: &Dictionary,
    psi_xu: &JointDictionary,
    ridge: f64,
    mode: JointFitMode,
) -> Result<KoopmanModel> {
    check_dim("joint dictionary state dimension", data.state_dim(), psi_xu.state_dim())?;
    check_dim("joint dictionary input dimension", data.input_dim(), psi_xu.input_dim())?;
    let targets = lifted_targets(data, psi_x)?;
    let zero_u = Vector::zeros(data.input_dim());
    for x in &data.states {
        if psi_xu.evaluate(x, &zero_u)?.amax() > JOINT_VANISHING_TOLERANCE {
            return Err(Error::DictionaryPrecondition("psi_xu(x, 0) must vanish".into()));
        }
    }
    let (nx, nxu) = (psi_x.len(), psi_xu.len());
    let phi_x = design(data.len(), nx, |k| Ok(row_of(&psi_x.evaluate(&data.states[k])?)))?;
    let phi_xu = design(data.len(), nxu, |k| Ok(row_of(&psi_xu.evaluate(&data.states[k], &data.inputs[k])?)))?;

    let mut unidentified = vec![];
    let (k_x, k_xu) = match mode {
        JointFitMode::Simultaneous => {
            let mut a = Matrix::zeros(data.len(), nx + nxu);
            a.columns_mut(0, nx).copy_from(&phi_x);
            a.columns_mut(nx, nxu).copy_from(&phi_xu);
            let blocks = [("K_x".to_string(), nx), ("K_xu".to_string(), nxu)];
            let mut ops = solve_blocks("joint fit", &a, &blocks, &targets, ridge)?.into_iter();
            (ops.next().unwrap(), ops.next().unwrap())
        }
        JointFitMode::TwoStage => {
            let zero_idx = data.zero_input_indices();
            let rest: Vec<usize> = (0..data.len()).filter(|k| !zero_idx.contains(k)).collect();
            let pick = |m: &Matrix, idx: &[usize]| Matrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)]);
            let k_x = solve_blocks(
                "joint fit stage 1 (zero-input samples)",
                &pick(&phi_x, &zero_idx),
                &[("K_x".to_string(), nx)],
                &pick(&targets, &zero_idx),
                ridge,
            )?
            .remove(0);
            let k_xu = if rest.is_empty() {
                unidentified.push("K_xu".to_string());
                Matrix::zeros(nx, nxu)
            } else {
                let remaining = pick(&targets, &rest) - pick(&phi_x, &rest) * k_x.transpose();
                solve_blocks(
                    "joint fit stage 2 (excited samples)",
                    &pick(&phi_xu, &rest),
                    &[("K_xu".to_string(), nxu)],
                    &remaining,
                    ridge,
                )?
                .remove(0)
            };
            (k_x, k_xu)
        }
    };
    finish(
        data,
        Representation::Joint { psi_x: psi_x.clone(), psi_xu: psi_xu.clone(), k_x, k_xu },
        ridge,
        unidentified,
    )
}

/// `psi_x(x+) = (sum_i psi_u_i(u) K_i) psi_x(x)`; `psi_u` must contain a
/// constant so that `K(0)` is representable.
pub fn fit_williams(
    data: &SnapshotDataset,
    psi_x: &Dictionary,
    psi_u: &Dictionary,
    ridge: f64,
) -> Result<KoopmanModel> {
    if !psi_u.has_constant() {
        return Err(Error::DictionaryPrecondition(
            "input dictionary must contain the constant function".into(),
        ));
    }
    check_dim("input dictionary dimension", data.input_dim(), psi_u.input_dim())?;
    let targets = lifted_targets(data, psi_x)?;
    let (nx, nu) = (psi_x.len(), psi_u.len());
    let names: Vec<String> = (1..=nu).map(|i| format!("K_{i}")).collect();

    if data.zero_input_indices().len() == data.len() {
        // Only K(0) is visible; park it on the constant channel.
        let zero = Vector::zeros(data.input_dim());
        let at_zero = psi_u.evaluate(&zero)?;
        let c = (0..nu)
            .find(|&i| {
                let e = Vector::from_fn(data.input_dim(), |_, _| 1.0);
                at_zero[i] != 0.0 && psi_u.evaluate(&e).map(|v| v[i] == at_zero[i]).unwrap_or(false)
            })
            .expect("constant present");
        let phi_x = design(data.len(), nx, |k| Ok(row_of(&psi_x.evaluate(&data.states[k])?)))?;
        let k0 = solve_blocks("bilinear fit (zero input)", &phi_x, &[("K(0)".into(), nx)], &targets, ridge)?.remove(0);
        let mut operators = vec![Matrix::zeros(nx, nx); nu];
        operators[c] = k0 / at_zero[c];
        let unidentified = names.iter().enumerate().filter(|&(i, _)| i != c).map(|(_, n)| n.clone()).collect();
        return finish(
            data,
            Representation::WilliamsBilinear { psi_x: psi_x.clone(), psi_u: psi_u.clone(), operators },
            ridge,
            unidentified,
        );
    }

    let a = design(data.len(), nx * nu, |k| {
        let px = psi_x.evaluate(&data.states[k])?;
        let pu = psi_u.evaluate(&data.inputs[k])?;
        Ok(pu.iter().flat_map(|&w| px.iter().map(move |&p| w * p)).collect())
    })?;
    let blocks: Vec<(String, usize)> = names.into_iter().map(|n| (n, nx)).collect();
    let operators = solve_blocks("bilinear fit", &a, &blocks, &targets, ridge)?;
    finish(
        data,
        Representation::WilliamsBilinear { psi_x: psi_x.clone(), psi_u: psi_u.clone(), operators },
        ridge,
        vec![],
    )
}

/// Diagonal eigenvalue fit for eigenfunctions `psi(x, u)` of continuous
/// data. The input-rate transport term is evaluated from the data and moved
/// to the left side, so each eigenvalue is a scalar least-squares problem.
pub fn fit_kaiser(data: &SnapshotDataset, psi: &Dictionary) -> Result<KoopmanModel> {
    data.validate()?;
    if data.time_kind() != TimeKind::Continuous {
        return Err(Error::TimeKindMismatch { expected: "continuous", actual: data.time_kind().as_str() });
    }
    let (n, m) = (data.state_dim(), data.input_dim());
    check_dim("eigenfunction dictionary dimension", n + m, psi.input_dim())?;
    let rates = match &data.input_rates {
        Some(r) => r.clone(),
        None if data.inputs.iter().all(|u| u == &data.inputs[0]) => vec![Vector::zeros(m); data.len()],
        None => return Err(Error::MissingInputRate),
    };
    let mut num = Vector::zeros(psi.len());
    let mut den = Vector::zeros(psi.len());
    for (k, rate) in rates.iter().enumerate() {
        let z = KoopmanModel::concat(&data.states[k], &data.inputs[k]);
        let values = psi.evaluate(&z)?;
        let jac = psi.jacobian(&z)?;
        let jx = jac.columns(0, n);
        let ju = jac.columns(n, m);
        let transport = ju * rate;
        let dpsi_dt = jx * &data.targets[k] + &transport;
        let lhs = dpsi_dt - transport;
        num += lhs.component_mul(&values);
        den += values.component_mul(&values);
    }
    let mut eigenvalues = Vector::zeros(psi.len());
    for j in 0..psi.len() {
        if den[j] == 0.0 {
            return Err(Error::RankDeficient { rank: 0, cols: 1, block: Some(format!("Lambda[{}]", j + 1)) });
        }
        eigenvalues[j] = num[j] / den[j];
    }
    finish(data, Representation::KaiserEigen { psi: psi.clone(), eigenvalues }, 0.0, vec![])
}

impl KoopmanModel {
    /// RMS of the one-step (or lifted-derivative) residual over a dataset.
    pub fn training_residual(&self, data: &SnapshotDataset) -> Result<f64> {
        data.validate()?;
        if data.time_kind() != self.time_kind {
            return Err(Error::TimeKindMismatch {
                expected: self.time_kind.as_str(),
                actual: data.time_kind().as_str(),
            });
        }
        check_dim("dataset state dimension", self.state_dim, data.state_dim())?;
        check_dim("dataset input dimension", self.input_dim, data.input_dim())?;
        let mut r = Matrix::zeros(data.len(), self.lifted_dim());
        for k in 0..data.len() {
            let (x, u) = (&data.states[k], &data.inputs[k]);
            let target = match self.time_kind {
                TimeKind::Discrete => self.lift(&data.targets[k], u)?,
                TimeKind::Continuous => self.lift_jacobians(x, u)?.0 * &data.targets[k],
            };
            r.set_row(k, &(target - self.represented(x, u)?).transpose());
        }
        Ok(rms(&r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        builtin_system, generate_dataset, linear_system, ControlKind, DatasetSpec, Params,
    };
    use crate::formulations::Variant;
    use crate::grid::BoxRegion;
    use crate::observables::Term;
    use approx::assert_abs_diff_eq;

    fn scalar_linear_data(control: ControlKind) -> SnapshotDataset {
        let sys = linear_system(
            "scalar",
            TimeKind::Discrete,
            Matrix::from_element(1, 1, 0.9),
            Matrix::from_element(1, 1, 0.1),
        )
        .unwrap();
        let spec = DatasetSpec::new(40, control, 3, 1.0, BoxRegion::symmetric(1, 2.0));
        generate_dataset(&sys, &spec).unwrap()
    }

    fn params(kv: &[(&str, f64)]) -> Params {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn affine_recovers_scalar_map() {
        let data = scalar_linear_data(ControlKind::UniformRandom);
        let m = fit_affine(&data, &Dictionary::identity(1), 0.0).unwrap();
        let Representation::Affine { k, b, .. } = m.representation() else { panic!() };
        assert_abs_diff_eq!(k[(0, 0)], 0.9, epsilon = 1e-10);
        assert_abs_diff_eq!(b[(0, 0)], 0.1, epsilon = 1e-10);
        assert!(m.fit_info().rms_residual < 1e-12);
        assert_eq!(m.fit_info().samples, 40);
    }

    #[test]
    fn unexcited_input_is_rank_deficient_in_b() {
        let data = scalar_linear_data(ControlKind::Zero);
        match fit_affine(&data, &Dictionary::identity(1), 0.0) {
            Err(Error::RankDeficient { block, .. }) => assert_eq!(block.as_deref(), Some("B")),
            other => panic!("{other:?}"),
        }
        // ridge makes it solvable with B = 0
        let m = fit_affine(&data, &Dictionary::identity(1), 1e-8).unwrap();
        let Representation::Affine { b, .. } = m.representation() else { panic!() };
        assert!(b[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn separable_with_identity_input_equals_affine() {
        let data = scalar_linear_data(ControlKind::UniformRandom);
        let s = fit_separable(&data, &Dictionary::identity(1), &Dictionary::identity(1), 0.0).unwrap();
        let Representation::Separable { k_u, .. } = s.representation() else { panic!() };
        assert_abs_diff_eq!(k_u[(0, 0)], 0.1, epsilon = 1e-10);
        let with_const = Dictionary::monomials(1, 1, true).unwrap();
        assert!(matches!(
            fit_separable(&data, &Dictionary::identity(1), &with_const, 0.0),
            Err(Error::DictionaryPrecondition(_))
        ));
    }

    #[test]
    fn too_few_samples() {
        let mut data = scalar_linear_data(ControlKind::UniformRandom);
        data = data.subset(&[0]);
        assert!(matches!(
            fit_affine(&data, &Dictionary::identity(1), 0.0),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn joint_generator_of_bilinear_scalar() {
        let sys = builtin_system("bilinear-scalar", &params(&[("a", -1.0), ("b", 1.0)])).unwrap();
        let spec = DatasetSpec::new(60, ControlKind::UniformRandom, 4, 0.1, BoxRegion::symmetric(1, 2.0)).continuous();
        let data = generate_dataset(&sys, &spec).unwrap();
        let psi_xu = JointDictionary::build(
            &crate::observables::JointSpec::Polynomials {
                terms: vec![vec![Term { coef: 1.0, powers: vec![1, 1] }]],
            },
            1,
            1,
        )
        .unwrap();
        for mode in [JointFitMode::Simultaneous, JointFitMode::TwoStage] {
            let mut d = data.clone();
            if mode == JointFitMode::TwoStage {
                // add zero-input samples for stage 1
                let zero = generate_dataset(
                    &sys,
                    &DatasetSpec::new(10, ControlKind::Zero, 5, 0.1, BoxRegion::symmetric(1, 2.0)).continuous(),
                )
                .unwrap();
                d.states.extend(zero.states);
                d.inputs.extend(zero.inputs);
                d.targets.extend(zero.targets);
                d.input_rates = None;
            }
            let m = fit_joint(&d, &Dictionary::identity(1), &psi_xu, 0.0, mode).unwrap();
            let Representation::Joint { k_x, k_xu, .. } = m.representation() else { panic!() };
            assert_abs_diff_eq!(k_x[(0, 0)], -1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(k_xu[(0, 0)], 1.0, epsilon = 1e-10);
            assert_eq!(m.time_kind(), TimeKind::Continuous);
        }
    }

    #[test]
    fn two_stage_without_excitation_flags_k_xu() {
        let data = scalar_linear_data(ControlKind::Zero);
        let psi_xu = JointDictionary::products(1, 1, 1, 1).unwrap();
        let m = fit_joint(&data, &Dictionary::identity(1), &psi_xu, 0.0, JointFitMode::TwoStage).unwrap();
        assert_eq!(m.fit_info().unidentified, vec!["K_xu".to_string()]);
        let Representation::Joint { k_x, .. } = m.representation() else { panic!() };
        assert_abs_diff_eq!(k_x[(0, 0)], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn williams_recovers_euler_bilinear() {
        let dt = 0.1;
        let sys = crate::dynamics::ControlledSystem::builder("euler-bilinear", TimeKind::Discrete, 1, 1)
            .state_part(move |x| x * (1.0 - dt))
            .cross_part(move |x, u| Vector::from_element(1, dt * x[0] * u[0]))
            .build()
            .unwrap();
        let spec = DatasetSpec::new(50, ControlKind::UniformRandom, 8, dt, BoxRegion::symmetric(1, 2.0));
        let data = generate_dataset(&sys, &spec).unwrap();
        let psi_u = Dictionary::monomials(1, 1, true).unwrap();
        let m = fit_williams(&data, &Dictionary::identity(1), &psi_u, 0.0).unwrap();
        let Representation::WilliamsBilinear { operators, .. } = m.representation() else { panic!() };
        assert_abs_diff_eq!(operators[0][(0, 0)], 1.0 - dt, epsilon = 1e-10);
        assert_abs_diff_eq!(operators[1][(0, 0)], dt, epsilon = 1e-10);

        let zero = generate_dataset(&sys, &DatasetSpec::new(20, ControlKind::Zero, 8, dt, BoxRegion::symmetric(1, 2.0))).unwrap();
        let z = fit_williams(&zero, &Dictionary::identity(1), &psi_u, 0.0).unwrap();
        assert_eq!(z.fit_info().unidentified, vec!["K_2".to_string()]);
        assert_abs_diff_eq!(z.williams_operator(&Vector::zeros(1)).unwrap()[(0, 0)], 1.0 - dt, epsilon = 1e-12);
    }

    #[test]
    fn williams_linear_needs_offset_channel() {
        let data = scalar_linear_data(ControlKind::UniformRandom);
        let psi_u = Dictionary::monomials(1, 1, true).unwrap();
        let without = fit_williams(&data, &Dictionary::identity(1), &psi_u, 0.0).unwrap();
        let with = fit_williams(&data, &Dictionary::monomials(1, 1, true).unwrap(), &psi_u, 0.0).unwrap();
        assert!(without.fit_info().rms_residual > 1e-3);
        assert!(with.fit_info().rms_residual < 1e-10);
    }

    #[test]
    fn kaiser_slow_manifold_eigenvalues() {
        let (mu, lambda) = (-0.05, -1.0);
        let sys = builtin_system("slow-manifold", &params(&[("mu", mu), ("lambda", lambda)])).unwrap();
        let spec = DatasetSpec::new(50, ControlKind::Zero, 1, 0.1, BoxRegion::symmetric(2, 2.0)).continuous();
        let data = generate_dataset(&sys, &spec).unwrap();
        let b = lambda / (lambda - 2.0 * mu);
        let psi = Dictionary::build(
            &crate::observables::DictionarySpec::Polynomials {
                terms: vec![
                    vec![Term { coef: 1.0, powers: vec![1, 0, 0] }],
                    vec![Term { coef: 1.0, powers: vec![0, 1, 0] }, Term { coef: -b, powers: vec![2, 0, 0] }],
                ],
            },
            3,
        )
        .unwrap();
        let m = fit_kaiser(&data, &psi).unwrap();
        assert_eq!(m.variant(), Variant::KaiserEigen);
        let Representation::KaiserEigen { eigenvalues, .. } = m.representation() else { panic!() };
        assert_abs_diff_eq!(eigenvalues[0], mu, epsilon = 1e-10);
        assert_abs_diff_eq!(eigenvalues[1], lambda, epsilon = 1e-10);

        let mut varying = generate_dataset(
            &sys,
            &DatasetSpec::new(20, ControlKind::UniformRandom, 1, 0.1, BoxRegion::symmetric(2, 2.0)).continuous(),
        )
        .unwrap();
        varying.input_rates = None;
        assert_eq!(fit_kaiser(&varying, &psi), Err(Error::MissingInputRate));
    }

    #[test]
    fn stationarity_of_affine_fit() {
        let sys = builtin_system("duffing-forced", &params(&[("delta", 0.5)])).unwrap();
        let d = crate::dynamics::discretize(&sys, 0.1).unwrap();
        let data = generate_dataset(&d, &DatasetSpec::new(200, ControlKind::UniformRandom, 2, 0.1, BoxRegion::symmetric(2, 2.0))).unwrap();
        let m = fit_affine(&data, &Dictionary::monomials(2, 2, false).unwrap(), 0.0).unwrap();
        let base = m.training_residual(&data).unwrap();
        let blocks = m.operator_blocks();
        for (i, (_, block)) in blocks.iter().enumerate() {
            let mut dir = Matrix::from_fn(block.nrows(), block.ncols(), |r, c| ((r * 7 + c * 3 + i) as f64).sin());
            dir /= dir.norm();
            for sign in [1.0, -1.0] {
                let mut new_blocks: Vec<Matrix> = blocks.iter().map(|b| b.1.clone()).collect();
                new_blocks[i] += &dir * (1e-3 * sign);
                let p = m.with_operator_blocks(new_blocks).unwrap();
                assert!(p.training_residual(&data).unwrap() >= base);
            }
        }
    }
}
