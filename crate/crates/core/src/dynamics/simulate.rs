use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ControlledSystem, TimeKind, DECOMPOSITION_TOLERANCE};
use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::numerics::{rk4_step, rk4_step_with_sensitivity, Matrix, Rk4Sensitivity, Vector};

/// States whose Euclidean norm exceeds this bound count as diverged.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

/// Input signal sampled at step starts and held over each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlSignal {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `amplitude * sin(frequency * t + phase + j * pi / 2)` on channel `j`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `+-amplitude`, switching sign after a hold of `1..=max_hold` samples
    /// drawn from the seeded generator.
    Prbs {
        amplitude: f64,
        max_hold: usize,
        seed: u64,
    },
    UniformRandom {
        amplitude: f64,
        seed: u64,
    },
    Samples {
        values: Vec<Vec<f64>>,
    },
}

impl ControlSignal {
    /// Values at times `k * dt` for `k = 0..count`.
    pub fn sequence(&self, input_dim: usize, count: usize, dt: f64) -> Result<Vec<Vector>> {
        match self {
            ControlSignal::Zero => Ok(vec![Vector::zeros(input_dim); count]),
            ControlSignal::Constant { value } => {
                check_dim("constant control", input_dim, value.len())?;
                Ok(vec![Vector::from_column_slice(value); count])
            }
            ControlSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => Ok((0..count)
                .map(|k| {
                    let t = k as f64 * dt;
                    Vector::from_fn(input_dim, |j, _| {
                        amplitude * (frequency * t + phase + j as f64 * FRAC_PI_2).sin()
                    })
                })
                .collect()),
            ControlSignal::Prbs {
                amplitude,
                max_hold,
                seed,
            } => {
                if *max_hold == 0 {
                    return Err(Error::InvalidArgument("prbs max_hold must be >= 1".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut channels: Vec<Vec<f64>> = Vec::with_capacity(input_dim);
                for _ in 0..input_dim {
                    let mut sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    let mut values = Vec::with_capacity(count);
                    while values.len() < count {
                        let hold = rng.gen_range(1..=*max_hold);
                        for _ in 0..hold.min(count - values.len()) {
                            values.push(sign * amplitude);
                        }
                        sign = -sign;
                    }
                    channels.push(values);
                }
                Ok((0..count)
                    .map(|k| Vector::from_fn(input_dim, |j, _| channels[j][k]))
                    .collect())
            }
            ControlSignal::UniformRandom { amplitude, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..count)
                    .map(|_| {
                        Vector::from_fn(input_dim, |_, _| {
                            if *amplitude > 0.0 {
                                rng.gen_range(-amplitude..*amplitude)
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect())
            }
            ControlSignal::Samples { values } => {
                if values.len() < count {
                    return Err(Error::InsufficientSamples {
                        context: "sampled control signal".into(),
                        required: count,
                        available: values.len(),
                    });
                }
                values[..count]
                    .iter()
                    .map(|v| {
                        check_dim("sampled control", input_dim, v.len())?;
                        Ok(Vector::from_column_slice(v))
                    })
                    .collect()
            }
        }
    }

    /// Time derivative of the signal at `t`; zero for piecewise-constant
    /// signals between switches.
    pub fn rate_at(&self, input_dim: usize, t: f64) -> Vector {
        match self {
            ControlSignal::Sinusoid {
                amplitude,
                frequency,
                phase,
            } => Vector::from_fn(input_dim, |j, _| {
                amplitude * frequency * (frequency * t + phase + j as f64 * FRAC_PI_2).cos()
            }),
            _ => Vector::zeros(input_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    /// Set when integration stopped early at the divergence guard.
    pub diverged: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory holds its initial state")
    }
}

fn diverged(x: &Vector, bound: f64) -> bool {
    !x.iter().all(|v| v.is_finite()) || x.norm() > bound
}

/// RK4 integration of a continuous system with zero-order-hold inputs.
/// Stops early at the divergence guard and flags the trajectory.
pub fn simulate(
    system: &ControlledSystem,
    x0: &Vector,
    control: &ControlSignal,
    dt: f64,
    steps: usize,
) -> Result<Trajectory> {
    simulate_bounded(system, x0, control, dt, steps, DEFAULT_DIVERGENCE_BOUND)
}

pub fn simulate_bounded(
    system: &ControlledSystem,
    x0: &Vector,
    control: &ControlSignal,
    dt: f64,
    steps: usize,
    bound: f64,
) -> Result<Trajectory> {
    system.require_kind(TimeKind::Continuous)?;
    check_dim("initial state", system.state_dim(), x0.len())?;
    if steps == 0 {
        return Err(Error::InvalidArgument("simulation needs at least one step".into()));
    }
    let inputs = control.sequence(system.input_dim(), steps + 1, dt)?;
    let field = |x: &Vector, u: &Vector, _t: f64| system.raw_field(x, u);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.clone()],
        inputs: vec![inputs[0].clone()],
        diverged: false,
    };
    let mut x = x0.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        match rk4_step(field, &x, &inputs[k], t, dt) {
            Ok(next) if !diverged(&next, bound) => x = next,
            Ok(_) | Err(Error::NonFinite(_)) => {
                traj.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        traj.times.push((k + 1) as f64 * dt);
        traj.states.push(x.clone());
        traj.inputs.push(inputs[k + 1].clone());
    }
    Ok(traj)
}

/// Iterates a discrete system under the given input sequence; the result
/// has `inputs.len() + 1` states unless the divergence guard trips.
pub fn iterate_map(
    system: &ControlledSystem,
    x0: &Vector,
    inputs: &[Vector],
    dt: f64,
) -> Result<Trajectory> {
    system.require_kind(TimeKind::Discrete)?;
    check_dim("initial state", system.state_dim(), x0.len())?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.clone()],
        inputs: Vec::with_capacity(inputs.len() + 1),
        diverged: false,
    };
    let mut x = x0.clone();
    for (k, u) in inputs.iter().enumerate() {
        check_dim("input", system.input_dim(), u.len())?;
        traj.inputs.push(u.clone());
        let next = system.raw_field(&x, u);
        if diverged(&next, DEFAULT_DIVERGENCE_BOUND) {
            traj.diverged = true;
            traj.inputs.pop();
            break;
        }
        x = next;
        traj.times.push((k + 1) as f64 * dt);
        traj.states.push(x.clone());
    }
    // pad so that inputs and states align
    let last = traj
        .inputs
        .last()
        .cloned()
        .unwrap_or_else(|| Vector::zeros(system.input_dim()));
    traj.inputs.push(last);
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscretizationScheme {
    #[default]
    Rk4,
    ForwardEuler,
}

/// One-step RK4 map of a continuous system.
///
/// The decomposition of the map is `f_x(x) = F(x, 0)`,
/// `f_u(u) = F(0, u) - F(0, 0)` and `f_xu` the remainder, so the
/// hypotheses `f_u(0) = f_xu(x, 0) = f_xu(0, u) = 0` hold by construction.
/// Part Jacobians come from the tangent-linear RK4 step.
pub fn discretize(system: &ControlledSystem, dt: f64) -> Result<ControlledSystem> {
    discretize_with(system, dt, DiscretizationScheme::Rk4)
}

pub fn discretize_with(
    system: &ControlledSystem,
    dt: f64,
    scheme: DiscretizationScheme,
) -> Result<ControlledSystem> {
    system.require_kind(TimeKind::Continuous)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "discretization step must be positive, got {dt}"
        )));
    }
    let discrete = match scheme {
        DiscretizationScheme::Rk4 => rk4_map(system, dt)?,
        DiscretizationScheme::ForwardEuler => euler_map(system, dt)?,
    };
    let grid = Grid::default_for(system.state_dim(), system.input_dim());
    discrete.verify_decomposition(&grid, DECOMPOSITION_TOLERANCE)?;
    Ok(discrete)
}

fn rk4_map(system: &ControlledSystem, dt: f64) -> Result<ControlledSystem> {
    let parent = Arc::new(system.clone());
    let n = system.state_dim();
    let m = system.input_dim();

    let step = {
        let parent = parent.clone();
        Arc::new(move |x: &Vector, u: &Vector| -> Vector {
            rk4_step(|z, v, _| parent.raw_field(z, v), x, u, 0.0, dt)
                .unwrap_or_else(|_| Vector::from_element(n, f64::NAN))
        })
    };
    let sens = {
        let parent = parent.clone();
        Arc::new(move |x: &Vector, u: &Vector| -> Rk4Sensitivity {
            let nan = || Matrix::from_element(n, n, f64::NAN);
            rk4_step_with_sensitivity(
                |z, v, _| parent.raw_field(z, v),
                |z, v, _| parent.jacobian_x(z, v).unwrap_or_else(|_| nan()),
                |z, v, _| {
                    parent
                        .jacobian_u(z, v)
                        .unwrap_or_else(|_| Matrix::from_element(n, m, f64::NAN))
                },
                x,
                u,
                0.0,
                dt,
            )
            .unwrap_or_else(|_| Rk4Sensitivity {
                next: Vector::from_element(n, f64::NAN),
                wrt_state: nan(),
                wrt_input: Matrix::from_element(n, m, f64::NAN),
            })
        })
    };

    let x0 = Vector::zeros(n);
    let u0 = Vector::zeros(m);

    let fx = {
        let (step, u0) = (step.clone(), u0.clone());
        Arc::new(move |x: &Vector| step(x, &u0))
    };
    let fu = {
        let (step, x0, u0) = (step.clone(), x0.clone(), u0.clone());
        Arc::new(move |u: &Vector| step(&x0, u) - step(&x0, &u0))
    };
    let fxu = {
        let (step, x0, u0) = (step.clone(), x0.clone(), u0.clone());
        Arc::new(move |x: &Vector, u: &Vector| {
            step(x, u) - step(x, &u0) - step(&x0, u) + step(&x0, &u0)
        })
    };
    let jfx = {
        let (sens, u0) = (sens.clone(), u0.clone());
        Arc::new(move |x: &Vector| sens(x, &u0).wrt_state)
    };
    let jfu = {
        let (sens, x0) = (sens.clone(), x0.clone());
        Arc::new(move |u: &Vector| sens(&x0, u).wrt_input)
    };
    let jfxu_x = {
        let (sens, u0) = (sens.clone(), u0.clone());
        Arc::new(move |x: &Vector, u: &Vector| sens(x, u).wrt_state - sens(x, &u0).wrt_state)
    };
    let jfxu_u = {
        let (sens, x0) = (sens.clone(), x0.clone());
        Arc::new(move |x: &Vector, u: &Vector| sens(x, u).wrt_input - sens(&x0, u).wrt_input)
    };

    ControlledSystem::builder(
        format!("{}@rk4(dt={dt})", system.name()),
        TimeKind::Discrete,
        n,
        m,
    )
    .raw_state_part(fx)
    .raw_input_part(fu)
    .raw_cross_part(fxu)
    .raw_jacobians(jfx, jfu, jfxu_x, jfxu_u)
    .build()
}

fn euler_map(system: &ControlledSystem, dt: f64) -> Result<ControlledSystem> {
    let parent = Arc::new(system.clone());
    let n = system.state_dim();
    let m = system.input_dim();
    let eye = Matrix::identity(n, n);
    let nan = move |r: usize, c: usize| Matrix::from_element(r, c, f64::NAN);

    let fx = {
        let p = parent.clone();
        Arc::new(move |x: &Vector| x + p.raw_state_part(x) * dt)
    };
    let fu = {
        let p = parent.clone();
        Arc::new(move |u: &Vector| p.raw_input_part(u) * dt)
    };
    let jfx = {
        let p = parent.clone();
        Arc::new(move |x: &Vector| &eye + p.jac_state_part(x).unwrap_or_else(|_| nan(n, n)) * dt)
    };
    let jfu = {
        let p = parent.clone();
        Arc::new(move |u: &Vector| p.jac_input_part(u).unwrap_or_else(|_| nan(n, m)) * dt)
    };
    let jfxu_x = {
        let p = parent.clone();
        Arc::new(move |x: &Vector, u: &Vector| {
            p.jac_cross_x(x, u).unwrap_or_else(|_| nan(n, n)) * dt
        })
    };
    let jfxu_u = {
        let p = parent.clone();
        Arc::new(move |x: &Vector, u: &Vector| {
            p.jac_cross_u(x, u).unwrap_or_else(|_| nan(n, m)) * dt
        })
    };

    let mut builder = ControlledSystem::builder(
        format!("{}@euler(dt={dt})", system.name()),
        TimeKind::Discrete,
        n,
        m,
    )
    .raw_state_part(fx)
    .raw_input_part(fu)
    .raw_jacobians(jfx, jfu, jfxu_x, jfxu_u);
    if system.has_cross_part() {
        let p = parent.clone();
        builder = builder.raw_cross_part(Arc::new(move |x: &Vector, u: &Vector| {
            p.raw_cross_part(x, u) * dt
        }));
    }
    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin_system, Params};
    use approx::assert_abs_diff_eq;

    fn decay() -> ControlledSystem {
        ControlledSystem::builder("decay", TimeKind::Continuous, 1, 1)
            .state_part(|x| -x)
            .state_jacobian(|_| Matrix::from_element(1, 1, -1.0))
            .build()
            .unwrap()
    }

    fn params(kv: &[(&str, f64)]) -> Params {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn decay_reaches_exp_minus_one() {
        let traj = simulate(
            &decay(),
            &Vector::from_element(1, 1.0),
            &ControlSignal::Zero,
            0.1,
            10,
        )
        .unwrap();
        assert_eq!(traj.len(), 11);
        assert!(!traj.diverged);
        assert_abs_diff_eq!(traj.final_state()[0], (-1.0f64).exp(), epsilon = 1e-6);
        assert_abs_diff_eq!(traj.times[10], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_field_trajectory_is_constant() {
        let still = ControlledSystem::builder("still", TimeKind::Continuous, 2, 1)
            .state_part(|x| Vector::zeros(x.len()))
            .build()
            .unwrap();
        let x0 = Vector::from_column_slice(&[0.5, -0.25]);
        let traj = simulate(&still, &x0, &ControlSignal::Zero, 0.2, 5).unwrap();
        assert!(traj.states.iter().all(|x| *x == x0));
    }

    #[test]
    fn divergence_truncates() {
        let blowup = ControlledSystem::builder("blowup", TimeKind::Continuous, 1, 0)
            .state_part(|x| x.map(|v| v * v))
            .build()
            .unwrap();
        let traj = simulate(&blowup, &Vector::from_element(1, 1.0), &ControlSignal::Zero, 0.1, 200)
            .unwrap();
        assert!(traj.diverged);
        assert!(traj.len() < 201);
        assert_eq!(traj.states.len(), traj.inputs.len());
    }

    #[test]
    fn simulate_rejects_discrete_and_zero_steps() {
        let d = discretize(&decay(), 0.1).unwrap();
        assert!(simulate(&d, &Vector::from_element(1, 1.0), &ControlSignal::Zero, 0.1, 3).is_err());
        assert!(
            simulate(&decay(), &Vector::from_element(1, 1.0), &ControlSignal::Zero, 0.1, 0).is_err()
        );
    }

    #[test]
    fn discretized_decay_is_rk4_factor() {
        let d = discretize(&decay(), 0.1).unwrap();
        for x in [-2.0, 0.5, 1.0, 3.0] {
            let fx = d.state_part(&Vector::from_element(1, x)).unwrap();
            assert_abs_diff_eq!(fx[0], 0.9048375 * x, epsilon = 1e-12);
        }
    }

    #[test]
    fn discretized_zero_field_is_identity() {
        let still = ControlledSystem::builder("still", TimeKind::Continuous, 2, 1)
            .state_part(|x| Vector::zeros(x.len()))
            .build()
            .unwrap();
        let d = discretize(&still, 0.3).unwrap();
        let grid = Grid::default_for(2, 1);
        for (x, u) in grid.points() {
            assert_eq!(d.state_part(x).unwrap(), *x);
            assert_eq!(d.input_part(u).unwrap(), Vector::zeros(2));
            assert_eq!(d.cross_part(x, u).unwrap(), Vector::zeros(2));
        }
    }

    #[test]
    fn discretized_linear_has_no_cross_term() {
        let lin = builtin_system("linear", &Params::new()).unwrap();
        let d = discretize(&lin, 0.1).unwrap();
        let grid = Grid::default_for(2, 1);
        for (x, u) in grid.points() {
            assert!(d.cross_part(x, u).unwrap().amax() <= 1e-12);
            assert!(d.jac_cross_x(x, u).unwrap().amax() <= 1e-12);
        }
    }

    #[test]
    fn discrete_step_matches_simulation() {
        let sys = builtin_system("duffing-forced", &params(&[("delta", 0.5)])).unwrap();
        let d = discretize(&sys, 0.05).unwrap();
        let x0 = Vector::from_column_slice(&[0.4, -1.2]);
        let u = ControlSignal::Constant { value: vec![0.7] };
        let traj = simulate(&sys, &x0, &u, 0.05, 1).unwrap();
        let step = d.evaluate(&x0, &Vector::from_element(1, 0.7)).unwrap();
        assert!((step - &traj.states[1]).amax() <= 1e-14);
    }

    #[test]
    fn euler_bilinear_parts() {
        let sys = builtin_system("bilinear-scalar", &params(&[("a", -1.0), ("b", 1.0)])).unwrap();
        let d = discretize_with(&sys, 0.1, DiscretizationScheme::ForwardEuler).unwrap();
        let x = Vector::from_element(1, 2.0);
        let u = Vector::from_element(1, 1.0);
        assert_abs_diff_eq!(d.evaluate(&x, &u).unwrap()[0], 2.0 + 0.1 * (-2.0 + 2.0));
        assert_abs_diff_eq!(d.cross_part(&x, &u).unwrap()[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(d.jac_cross_u(&x, &u).unwrap()[(0, 0)], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn control_signals_are_deterministic() {
        let prbs = ControlSignal::Prbs {
            amplitude: 0.5,
            max_hold: 4,
            seed: 3,
        };
        let a = prbs.sequence(2, 50, 0.1).unwrap();
        let b = prbs.sequence(2, 50, 0.1).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|u| u.iter().all(|v| v.abs() == 0.5)));
        let uni = ControlSignal::UniformRandom {
            amplitude: 1.0,
            seed: 9,
        };
        assert_eq!(uni.sequence(1, 20, 0.1).unwrap(), uni.sequence(1, 20, 0.1).unwrap());
    }
}
