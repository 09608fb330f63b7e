//! Conditions for discrete-time representations. Derivatives of the
//! lifted next state are taken at `x+ = f(x, u)`; restricted evaluations
//! (`u = 0` or `x = 0`) recompute `x+` at the restricted point.

use super::{
    full_points, hypothesis, joint_decomposition_hypotheses, max_cross_part, require_model, require_system_kind,
    residual_field, sample_quadruples, separable_decomposition_hypotheses, zero_input_points, zero_state_points,
    CheckOptions, ConditionId, ConsistencyReport, EvalPoint, DICTIONARY_HYPOTHESIS_TOLERANCE,
};
use crate::dynamics::{ControlledSystem, TimeKind, DECOMPOSITION_TOLERANCE};
use crate::error::{check_dim, Error, Result};
use crate::formulations::{KoopmanModel, Representation, Variant};
use crate::grid::Grid;
use crate::numerics::{finite_difference_jacobian_scaled, max_abs, Matrix, Vector};
use crate::observables::Dictionary;

/// Input dynamics `u_{k+1} = g(x_k, u_k)`.
pub type InputEvolution<'a> = &'a (dyn Fn(&Vector, &Vector) -> Vector + Sync);

fn check_dims(system: &ControlledSystem, model: &KoopmanModel) -> Result<()> {
    check_dim("model state dimension", system.state_dim(), model.state_dim())?;
    check_dim("model input dimension", system.input_dim(), model.input_dim())
}

/// `d psi / d x` evaluated at the successor of `(x, u)`.
fn jacobian_at_successor(system: &ControlledSystem, psi: &Dictionary, x: &Vector, u: &Vector) -> Result<Matrix> {
    psi.jacobian(&system.evaluate(x, u)?)
}

/// Derivatives of the represented next lift against the chain rule
/// through `f`, with respect to `x_k` (also on the `u = 0` slice) and `u_k`.
pub fn check_def2(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Discrete)?;
    model.require_kind(TimeKind::Discrete)?;
    check_dims(system, model)?;
    let psi = model.lifting();
    let wrt_x = |p: &EvalPoint| -> Result<f64> {
        let (x, u) = (p.state(), p.input());
        let (rx, _) = model.represented_jacobians(&x, &u)?;
        Ok(max_abs(&(rx - jacobian_at_successor(system, psi, &x, &u)? * system.jacobian_x(&x, &u)?)))
    };
    let wrt_u = |p: &EvalPoint| -> Result<f64> {
        let (x, u) = (p.state(), p.input());
        let (_, ru) = model.represented_jacobians(&x, &u)?;
        Ok(max_abs(&(ru - jacobian_at_successor(system, psi, &x, &u)? * system.jacobian_u(&x, &u)?)))
    };
    Ok(vec![
        residual_field(ConditionId::Def2Auton, zero_input_points(grid), opts, wrt_x)?,
        residual_field(ConditionId::Def2CtrlX, full_points(grid), opts, wrt_x)?,
        residual_field(ConditionId::Def2CtrlU, full_points(grid), opts, wrt_u)?,
    ])
}

/// Joint observables `psi(x, u)` on both sides. The successor input, and
/// hence both derivative identities, need the input dynamics; without them
/// the conditions are reported as not evaluated. Derivatives of the
/// represented map and of the input dynamics are taken by central
/// differences.
pub fn check_def2_joint(
    system: &ControlledSystem,
    psi: &Dictionary,
    represented: &(dyn Fn(&Vector, &Vector) -> Vector + Sync),
    input_map: Option<InputEvolution>,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Discrete)?;
    let (n, m) = (system.state_dim(), system.input_dim());
    check_dim("joint dictionary dimension", n + m, psi.input_dim())?;
    let Some(g) = input_map else {
        let note = "requires an input-evolution map for d u_{k+1} / d u_k";
        return Ok(vec![
            ConsistencyReport::not_evaluated(ConditionId::Def2JointX, note, opts.tolerance),
            ConsistencyReport::not_evaluated(ConditionId::Def2JointU, note, opts.tolerance),
        ]);
    };
    let pieces = |p: &EvalPoint| -> Result<(Matrix, Matrix, Matrix, Matrix)> {
        let (x, u) = (p.state(), p.input());
        let (xn, un) = (system.evaluate(&x, &u)?, g(&x, &u));
        let z = Vector::from_iterator(n + m, xn.iter().chain(un.iter()).copied());
        let j = psi.jacobian(&z)?;
        let (px, pu) = (j.columns(0, n).into_owned(), j.columns(n, m).into_owned());
        let rx = finite_difference_jacobian_scaled(|v| represented(v, &u), &x)?;
        let ru = finite_difference_jacobian_scaled(|v| represented(&x, v), &u)?;
        let gx = finite_difference_jacobian_scaled(|v| g(v, &u), &x)?;
        let gu = finite_difference_jacobian_scaled(|v| g(&x, v), &u)?;
        let lhs_x = rx - (&px * system.jacobian_x(&x, &u)? + &pu * gx);
        let lhs_u = ru - (&px * system.jacobian_u(&x, &u)? + &pu * gu);
        Ok((lhs_x, lhs_u, px, pu))
    };
    Ok(vec![
        residual_field(ConditionId::Def2JointX, full_points(grid), opts, |p| Ok(max_abs(&pieces(p)?.0)))?,
        residual_field(ConditionId::Def2JointU, full_points(grid), opts, |p| Ok(max_abs(&pieces(p)?.1)))?,
    ])
}

/// Separable map `K_x psi_x(x) + K_u psi_u(u)`. The cross terms of the
/// third and fourth conditions use `d psi_x / d x` at `x+`, which is what
/// the chain rule through `f_xu` produces.
pub fn check_theorem4(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Discrete)?;
    require_model(model, Variant::Separable, TimeKind::Discrete)?;
    check_dims(system, model)?;
    let Representation::Separable { psi_x, psi_u, k_x, k_u } = model.representation() else { unreachable!() };
    separable_decomposition_hypotheses(system, grid)?;
    hypothesis("psi_u(0) = 0", psi_u.evaluate(&grid.zero_input())?.amax(), DICTIONARY_HYPOTHESIS_TOLERANCE)?;
    let (x0, u0) = (grid.zero_state(), grid.zero_input());

    let c1 = residual_field(ConditionId::T4C1, zero_input_points(grid), opts, |p| {
        let x = p.state();
        let lhs = jacobian_at_successor(system, psi_x, &x, &u0)? * system.jac_state_part(&x)?;
        Ok(max_abs(&(lhs - k_x * psi_x.jacobian(&x)?)))
    })?;
    let c2 = residual_field(ConditionId::T4C2, zero_state_points(grid), opts, |p| {
        let u = p.input();
        let lhs = jacobian_at_successor(system, psi_x, &x0, &u)? * system.jac_input_part(&u)?;
        Ok(max_abs(&(lhs - k_u * psi_u.jacobian(&u)?)))
    })?;
    let c3 = residual_field(ConditionId::T4C3, full_points(grid), opts, |p| {
        let (x, u) = (p.state(), p.input());
        let j = jacobian_at_successor(system, psi_x, &x, &u)?;
        let j_x0 = jacobian_at_successor(system, psi_x, &x0, &u)?;
        let r = (&j - j_x0) * system.jac_input_part(&u)? + j * system.jac_cross_u(&x, &u)?;
        Ok(max_abs(&r))
    })?;
    let c4 = residual_field(ConditionId::T4C4, full_points(grid), opts, |p| {
        let (x, u) = (p.state(), p.input());
        let j = jacobian_at_successor(system, psi_x, &x, &u)?;
        let j_u0 = jacobian_at_successor(system, psi_x, &x, &u0)?;
        let r = (&j - j_u0) * system.jac_state_part(&x)? + j * system.jac_cross_x(&x, &u)?;
        Ok(max_abs(&r))
    })?;
    Ok(vec![c1, c2, c3, c4])
}

fn require_state_inclusive(dict: &Dictionary) -> Result<()> {
    if !dict.is_state_inclusive() {
        return Err(Error::Inapplicable("state dictionary is not state-inclusive".into()));
    }
    Ok(())
}

/// `|f_xu(x, u)|` with the largest cross-term derivatives as diagnostics.
pub fn check_corollary4(
    system: &ControlledSystem,
    psi_x: &Dictionary,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<ConsistencyReport> {
    require_system_kind(system, TimeKind::Discrete)?;
    require_state_inclusive(psi_x)?;
    let mut report = residual_field(ConditionId::Cor4Fxu, full_points(grid), opts, |p| {
        Ok(system.cross_part(&p.state(), &p.input())?.amax())
    })?;
    let (mut dx, mut du) = (0.0_f64, 0.0_f64);
    for (x, u) in grid.points() {
        dx = dx.max(max_abs(&system.jac_cross_x(x, u)?));
        du = du.max(max_abs(&system.jac_cross_u(x, u)?));
    }
    report.diagnostics.insert("max_abs_dfxu_dx".into(), dx);
    report.diagnostics.insert("max_abs_dfxu_du".into(), du);
    Ok(report)
}

/// Both pairwise conditions on seeded `(x1, x2, u1, u2)` samples, after
/// confirming `f_xu = 0`.
pub fn check_corollary5(
    system: &ControlledSystem,
    psi_x: &Dictionary,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Discrete)?;
    hypothesis("f_xu = 0", max_cross_part(system, grid)?, DECOMPOSITION_TOLERANCE)?;
    check_corollary5_at(system, psi_x, sample_quadruples(grid, opts.pair_samples, opts.seed), opts)
}

pub fn check_corollary5_at(
    system: &ControlledSystem,
    psi_x: &Dictionary,
    quadruples: Vec<EvalPoint>,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    let unpack = |p: &EvalPoint| -> Result<(Vector, Vector, Vector, Vector)> {
        let missing = || Error::InvalidArgument("pairwise point needs x2 and u2".into());
        Ok((p.state(), p.second_state().ok_or_else(missing)?, p.input(), p.second_input().ok_or_else(missing)?))
    };
    let across_states = residual_field(ConditionId::Cor5PairwiseU, quadruples.clone(), opts, |p| {
        let (x1, x2, u1, _) = unpack(p)?;
        let d = jacobian_at_successor(system, psi_x, &x1, &u1)? - jacobian_at_successor(system, psi_x, &x2, &u1)?;
        Ok(max_abs(&(d * system.jac_input_part(&u1)?)))
    })?;
    let across_inputs = residual_field(ConditionId::Cor5PairwiseX, quadruples, opts, |p| {
        let (x1, _, u1, u2) = unpack(p)?;
        let d = jacobian_at_successor(system, psi_x, &x1, &u1)? - jacobian_at_successor(system, psi_x, &x1, &u2)?;
        Ok(max_abs(&(d * system.jac_state_part(&x1)?)))
    })?;
    Ok(vec![across_states, across_inputs])
}

/// Affine map `K psi(x) + B u` with a state-inclusive dictionary:
/// `f_xu = 0` and `(d psi / d x at x+) (d f_u / d u) = B` everywhere.
pub fn check_corollary6(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Discrete)?;
    require_model(model, Variant::Affine, TimeKind::Discrete)?;
    check_dims(system, model)?;
    let Representation::Affine { psi, b, .. } = model.representation() else { unreachable!() };
    require_state_inclusive(psi)?;
    let cor4 = check_corollary4(system, psi, grid, opts)?;
    let cor6 = residual_field(ConditionId::Cor6B, full_points(grid), opts, |p| {
        let (x, u) = (p.state(), p.input());
        let lhs = jacobian_at_successor(system, psi, &x, &u)? * system.jac_input_part(&u)?;
        Ok(max_abs(&(lhs - b)))
    })?;
    Ok(vec![cor4, cor6])
}

/// Joint map `K_x psi_x(x) + K_xu psi_xu(x, u)`: the general conditions and
/// their two simplifications. A simplification whose extra hypotheses fail
/// on the grid is reported as not evaluated.
pub fn check_theorem5(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Discrete)?;
    require_model(model, Variant::Joint, TimeKind::Discrete)?;
    check_dims(system, model)?;
    let Representation::Joint { psi_x, psi_xu, k_x, k_xu } = model.representation() else { unreachable!() };
    let u0 = grid.zero_input();

    let t5_c1 = residual_field(ConditionId::T5C1, zero_input_points(grid), opts, |p| {
        let x = p.state();
        let lhs = jacobian_at_successor(system, psi_x, &x, &u0)? * system.jacobian_x(&x, &u0)?;
        let rhs = k_x * psi_x.jacobian(&x)? + k_xu * psi_xu.jacobian_x(&x, &u0)?;
        Ok(max_abs(&(lhs - rhs)))
    })?;
    let input_identity = |p: &EvalPoint| -> Result<f64> {
        let (x, u) = (p.state(), p.input());
        let lhs = jacobian_at_successor(system, psi_x, &x, &u)? * system.jacobian_u(&x, &u)?;
        Ok(max_abs(&(lhs - k_xu * psi_xu.jacobian_u(&x, &u)?)))
    };
    let t5_c2 = residual_field(ConditionId::T5C2, full_points(grid), opts, input_identity)?;
    let mut reports = vec![t5_c1, t5_c2];

    let cor7_ok = hypothesis("psi_xu(x, 0) = 0", psi_xu.max_at_zero_input(grid)?, DICTIONARY_HYPOTHESIS_TOLERANCE);
    if let Err(e) = cor7_ok {
        for c in [ConditionId::Cor7C1, ConditionId::Cor7C2, ConditionId::Cor8C1, ConditionId::Cor8C2] {
            reports.push(ConsistencyReport::not_evaluated(c, e.to_string(), opts.tolerance));
        }
        return Ok(reports);
    }
    reports.push(residual_field(ConditionId::Cor7C1, zero_input_points(grid), opts, |p| {
        let x = p.state();
        let lhs = jacobian_at_successor(system, psi_x, &x, &u0)? * system.jacobian_x(&x, &u0)?;
        Ok(max_abs(&(lhs - k_x * psi_x.jacobian(&x)?)))
    })?);
    reports.push(residual_field(ConditionId::Cor7C2, full_points(grid), opts, input_identity)?);

    match joint_decomposition_hypotheses(system, grid) {
        Ok(()) => {
            reports.push(residual_field(ConditionId::Cor8C1, zero_input_points(grid), opts, |p| {
                let x = p.state();
                let lhs = jacobian_at_successor(system, psi_x, &x, &u0)? * system.jac_state_part(&x)?;
                Ok(max_abs(&(lhs - k_x * psi_x.jacobian(&x)?)))
            })?);
            reports.push(residual_field(ConditionId::Cor8C2, full_points(grid), opts, |p| {
                let (x, u) = (p.state(), p.input());
                let dg_du = system.jac_input_part(&u)? + system.jac_cross_u(&x, &u)?;
                let lhs = jacobian_at_successor(system, psi_x, &x, &u)? * dg_du;
                Ok(max_abs(&(lhs - k_xu * psi_xu.jacobian_u(&x, &u)?)))
            })?);
        }
        Err(e) => {
            for c in [ConditionId::Cor8C1, ConditionId::Cor8C2] {
                reports.push(ConsistencyReport::not_evaluated(c, e.to_string(), opts.tolerance));
            }
        }
    }
    Ok(reports)
}
