//! Conditions for continuous-time (generator) representations.

use super::{
    full_points, hypothesis, joint_decomposition_hypotheses, max_cross_part, require_model, require_system_kind,
    residual_field, sample_state_pairs, separable_decomposition_hypotheses, zero_input_points, zero_state_points,
    CheckOptions, ConditionId, ConsistencyReport, EvalPoint, DICTIONARY_HYPOTHESIS_TOLERANCE,
};
use crate::dynamics::{ControlledSystem, TimeKind, DECOMPOSITION_TOLERANCE};
use crate::error::{check_dim, Error, Result};
use crate::formulations::{KoopmanModel, Representation, Variant};
use crate::grid::Grid;
use crate::numerics::{max_abs, Vector};
use crate::observables::Dictionary;

/// Input time derivative `u'` as a function of `(x, u)`.
pub type InputRateField<'a> = &'a (dyn Fn(&Vector, &Vector) -> Vector + Sync);

fn check_dims(system: &ControlledSystem, model: &KoopmanModel) -> Result<()> {
    check_dim("model state dimension", system.state_dim(), model.state_dim())?;
    check_dim("model input dimension", system.input_dim(), model.input_dim())
}

/// Represented `d psi / dt` against the chain rule along the true field.
/// For eigenfunction models on `(x, u)` the caller supplies `u'` and the
/// joint form (with the `(d psi / d u) u'` term on both sides) is used.
pub fn check_def1(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
    input_rate: Option<InputRateField>,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Continuous)?;
    model.require_kind(TimeKind::Continuous)?;
    check_dims(system, model)?;

    if model.variant() == Variant::KaiserEigen {
        let rate = input_rate.ok_or(Error::MissingInputRate)?;
        let residual = |p: &EvalPoint| -> Result<f64> {
            let (x, u) = (p.state(), p.input());
            let udot = rate(&x, &u);
            let (jx, ju) = model.lift_jacobians(&x, &u)?;
            let truth = jx * system.evaluate(&x, &u)? + &ju * &udot;
            Ok((model.lifted_rate(&x, &u, &udot)? - truth).amax())
        };
        return Ok(vec![
            residual_field(ConditionId::Def1Auton, zero_input_points(grid), opts, residual)?,
            residual_field(ConditionId::Def1Joint, full_points(grid), opts, residual)?,
        ]);
    }

    let residual = |p: &EvalPoint| -> Result<f64> {
        let (x, u) = (p.state(), p.input());
        let truth = model.lifting().jacobian(&x)? * system.evaluate(&x, &u)?;
        Ok((model.represented(&x, &u)? - truth).amax())
    };
    Ok(vec![
        residual_field(ConditionId::Def1Auton, zero_input_points(grid), opts, residual)?,
        residual_field(ConditionId::Def1Ctrl, full_points(grid), opts, residual)?,
    ])
}

/// Separable generator `L_x psi_x(x) + L_u psi_u(u)`: the three conditions
/// obtained by evaluating the chain rule at `u = 0`, at `x = 0`, and
/// subtracting both from the full identity.
pub fn check_theorem2(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Continuous)?;
    require_model(model, Variant::Separable, TimeKind::Continuous)?;
    check_dims(system, model)?;
    let Representation::Separable { psi_x, psi_u, k_x: l_x, k_u: l_u } = model.representation() else {
        unreachable!()
    };
    separable_decomposition_hypotheses(system, grid)?;
    hypothesis("psi_u(0) = 0", psi_u.evaluate(&grid.zero_input())?.amax(), DICTIONARY_HYPOTHESIS_TOLERANCE)?;
    let j0 = psi_x.jacobian(&grid.zero_state())?;

    let c1 = residual_field(ConditionId::T2C1, zero_input_points(grid), opts, |p| {
        let x = p.state();
        Ok((psi_x.jacobian(&x)? * system.state_part(&x)? - l_x * psi_x.evaluate(&x)?).amax())
    })?;
    let c2 = residual_field(ConditionId::T2C2, zero_state_points(grid), opts, |p| {
        let u = p.input();
        Ok((&j0 * system.input_part(&u)? - l_u * psi_u.evaluate(&u)?).amax())
    })?;
    let c3 = residual_field(ConditionId::T2C3, full_points(grid), opts, |p| {
        let (x, u) = (p.state(), p.input());
        let jx = psi_x.jacobian(&x)?;
        Ok(((&jx - &j0) * system.input_part(&u)? + jx * system.cross_part(&x, &u)?).amax())
    })?;
    Ok(vec![c1, c2, c3])
}

fn require_state_inclusive(dict: &Dictionary) -> Result<()> {
    if !dict.is_state_inclusive() {
        return Err(Error::Inapplicable("state dictionary is not state-inclusive".into()));
    }
    Ok(())
}

/// With a state-inclusive dictionary the identity rows force `f_xu = 0`;
/// the residual is `|f_xu(x, u)|` itself.
pub fn check_corollary1(
    system: &ControlledSystem,
    psi_x: &Dictionary,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<ConsistencyReport> {
    require_system_kind(system, TimeKind::Continuous)?;
    require_state_inclusive(psi_x)?;
    residual_field(ConditionId::Cor1Fxu, full_points(grid), opts, |p| {
        Ok(system.cross_part(&p.state(), &p.input())?.amax())
    })
}

/// `(J(x1) - J(x2)) f_u(u)` on seeded samples, after confirming `f_xu = 0`.
pub fn check_corollary2(
    system: &ControlledSystem,
    psi_x: &Dictionary,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<ConsistencyReport> {
    require_system_kind(system, TimeKind::Continuous)?;
    hypothesis("f_xu = 0", max_cross_part(system, grid)?, DECOMPOSITION_TOLERANCE)?;
    check_corollary2_at(system, psi_x, sample_state_pairs(grid, opts.pair_samples, opts.seed), opts)
}

/// The pairwise condition at explicit `(x1, x2, u)` triples.
pub fn check_corollary2_at(
    system: &ControlledSystem,
    psi_x: &Dictionary,
    triples: Vec<EvalPoint>,
    opts: &CheckOptions,
) -> Result<ConsistencyReport> {
    residual_field(ConditionId::Cor2Pairwise, triples, opts, |p| {
        let x2 = p.second_state().ok_or_else(|| Error::InvalidArgument("pairwise point needs x2".into()))?;
        let d = psi_x.jacobian(&p.state())? - psi_x.jacobian(&x2)?;
        Ok((d * system.input_part(&p.input())?).amax())
    })
}

/// Affine generator `L psi(x) + B u` with a state-inclusive dictionary.
pub fn check_corollary3_kma(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Continuous)?;
    require_model(model, Variant::Affine, TimeKind::Continuous)?;
    check_dims(system, model)?;
    let Representation::Affine { psi, k: l, b } = model.representation() else { unreachable!() };
    require_state_inclusive(psi)?;
    let j0 = psi.jacobian(&grid.zero_state())?;

    let cor1 = check_corollary1(system, psi, grid, opts)?;
    let cor2 = check_corollary2_at(system, psi, sample_state_pairs(grid, opts.pair_samples, opts.seed), opts)?;
    let kma_b = residual_field(ConditionId::Cor3KmaB, zero_state_points(grid), opts, |p| {
        Ok(max_abs(&(&j0 * system.jac_input_part(&p.input())? - b)))
    })?;
    let kma_l = residual_field(ConditionId::Cor3KmaL, zero_input_points(grid), opts, |p| {
        let x = p.state();
        Ok((psi.jacobian(&x)? * system.state_part(&x)? - l * psi.evaluate(&x)?).amax())
    })?;
    Ok(vec![cor1, cor2, kma_b, kma_l])
}

/// Joint generator `L_x psi_x(x) + L_xu psi_xu(x, u)`. The system is split
/// as `f_x + g` with `g = f_u + f_xu`, which satisfies `g(x, 0) = 0`
/// whenever `f_u(0) = 0` and `f_xu(x, 0) = 0`.
pub fn check_theorem3(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<Vec<ConsistencyReport>> {
    require_system_kind(system, TimeKind::Continuous)?;
    require_model(model, Variant::Joint, TimeKind::Continuous)?;
    check_dims(system, model)?;
    let Representation::Joint { psi_x, psi_xu, k_x: l_x, k_xu: l_xu } = model.representation() else {
        unreachable!()
    };
    hypothesis("psi_xu(x, 0) = 0", psi_xu.max_at_zero_input(grid)?, DICTIONARY_HYPOTHESIS_TOLERANCE)?;
    joint_decomposition_hypotheses(system, grid)?;

    let c1 = residual_field(ConditionId::T3C1, zero_input_points(grid), opts, |p| {
        let x = p.state();
        Ok((psi_x.jacobian(&x)? * system.state_part(&x)? - l_x * psi_x.evaluate(&x)?).amax())
    })?;
    let c2 = residual_field(ConditionId::T3C2, full_points(grid), opts, |p| {
        let (x, u) = (p.state(), p.input());
        Ok((psi_x.jacobian(&x)? * system.folded_cross_part(&x, &u)? - l_xu * psi_xu.evaluate(&x, &u)?).amax())
    })?;
    Ok(vec![c1, c2])
}

/// `(d psi / d x) f(x, u) = Lambda psi(x, u)` for eigenfunction models.
pub fn check_kaiser(
    system: &ControlledSystem,
    model: &KoopmanModel,
    grid: &Grid,
    opts: &CheckOptions,
) -> Result<ConsistencyReport> {
    require_system_kind(system, TimeKind::Continuous)?;
    require_model(model, Variant::KaiserEigen, TimeKind::Continuous)?;
    check_dims(system, model)?;
    residual_field(ConditionId::Kaiser, full_points(grid), opts, |p| {
        let (x, u) = (p.state(), p.input());
        let (jx, _) = model.lift_jacobians(&x, &u)?;
        Ok((jx * system.evaluate(&x, &u)? - model.represented(&x, &u)?).amax())
    })
}
