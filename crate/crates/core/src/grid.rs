//! Axis-aligned boxes and tensor evaluation grids over state and input space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

pub const DEFAULT_STATE_HALF_WIDTH: f64 = 2.0;
pub const DEFAULT_INPUT_HALF_WIDTH: f64 = 1.0;
pub const DEFAULT_POINTS_PER_AXIS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let region = Self { lower, upper };
        region.validate()?;
        Ok(region)
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::DimensionMismatch {
                context: "box bounds".into(),
                expected: self.lower.len(),
                actual: self.upper.len(),
            });
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite(format!("box bound on axis {i}")));
            }
            if lo > hi {
                return Err(Error::Empty(format!(
                    "axis {i} has lower bound {lo} above upper bound {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// True when every axis has positive width.
    pub fn has_volume(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(lo, hi)| hi > lo)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        Vector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| {
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    lo
                }
            }),
        )
    }

    /// `count` evenly spaced points on axis `axis`, endpoints included.
    pub fn axis_points(&self, axis: usize, count: usize) -> Vec<f64> {
        let (lo, hi) = (self.lower[axis], self.upper[axis]);
        match count {
            0 => vec![],
            1 => vec![lo],
            _ => (0..count)
                .map(|i| {
                    if i == count - 1 {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (count - 1) as f64
                    }
                })
                .collect(),
        }
    }

    /// Tensor product of per-axis points, last axis varying fastest.
    pub fn tensor_points(&self, counts: &[usize]) -> Result<Vec<Vector>> {
        if counts.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "grid counts".into(),
                expected: self.dim(),
                actual: counts.len(),
            });
        }
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|a| self.axis_points(a, counts[a]))
            .collect();
        let mut points: Vec<Vec<f64>> = vec![vec![]];
        for axis in &axes {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &v in axis {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            points = next;
        }
        Ok(points.into_iter().map(Vector::from_vec).collect())
    }
}

/// A finite set of states crossed with a finite set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
}

impl Grid {
    pub fn from_points(states: Vec<Vector>, inputs: Vec<Vector>) -> Result<Self> {
        if states.is_empty() || inputs.is_empty() {
            return Err(Error::Empty("grid needs at least one state and one input".into()));
        }
        let n = states[0].len();
        let m = inputs[0].len();
        for s in &states {
            if s.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "grid state".into(),
                    expected: n,
                    actual: s.len(),
                });
            }
        }
        for u in &inputs {
            if u.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "grid input".into(),
                    expected: m,
                    actual: u.len(),
                });
            }
        }
        Ok(Self { states, inputs })
    }

    pub fn tensor(
        state_box: &BoxRegion,
        state_counts: &[usize],
        input_box: &BoxRegion,
        input_counts: &[usize],
    ) -> Result<Self> {
        state_box.validate()?;
        input_box.validate()?;
        if state_counts.iter().chain(input_counts).any(|&c| c == 0) {
            return Err(Error::Empty("grid axis with zero points".into()));
        }
        Self::from_points(
            state_box.tensor_points(state_counts)?,
            input_box.tensor_points(input_counts)?,
        )
    }

    /// `[-2, 2]^n x [-1, 1]^m` with `points` points per axis.
    pub fn uniform(state_dim: usize, input_dim: usize, points: usize) -> Result<Self> {
        Self::tensor(
            &BoxRegion::symmetric(state_dim, DEFAULT_STATE_HALF_WIDTH),
            &vec![points; state_dim],
            &BoxRegion::symmetric(input_dim, DEFAULT_INPUT_HALF_WIDTH),
            &vec![points; input_dim],
        )
    }

    pub fn default_for(state_dim: usize, input_dim: usize) -> Self {
        Self::uniform(state_dim, input_dim, DEFAULT_POINTS_PER_AXIS)
            .expect("default grid is well formed")
    }

    /// Same states, inputs restricted to the origin.
    pub fn zero_input_slice(&self) -> Self {
        Self {
            states: self.states.clone(),
            inputs: vec![self.zero_input()],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn zero_input(&self) -> Vector {
        Vector::zeros(self.input_dim())
    }

    pub fn zero_state(&self) -> Vector {
        Vector::zeros(self.state_dim())
    }

    pub fn len(&self) -> usize {
        self.states.len() * self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All `(x, u)` pairs, states outer and inputs inner.
    pub fn points(&self) -> Vec<(&Vector, &Vector)> {
        self.states
            .iter()
            .flat_map(|x| self.inputs.iter().map(move |u| (x, u)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = Grid::default_for(2, 1);
        assert_eq!(g.states.len(), 81);
        assert_eq!(g.inputs.len(), 9);
        assert_eq!(g.len(), 729);
        assert!(g.states.iter().any(|x| x[0] == 2.0 && x[1] == -2.0));
        assert!(g.inputs.iter().any(|u| u[0] == 0.0));
    }

    #[test]
    fn refined_grid_is_superset() {
        let coarse = Grid::uniform(1, 1, 9).unwrap();
        let fine = Grid::uniform(1, 1, 17).unwrap();
        for x in &coarse.states {
            assert!(fine.states.contains(x));
        }
    }

    #[test]
    fn autonomous_grid_has_one_empty_input() {
        let g = Grid::default_for(2, 0);
        assert_eq!(g.inputs.len(), 1);
        assert_eq!(g.input_dim(), 0);
    }

    #[test]
    fn inverted_box_is_empty() {
        assert!(BoxRegion::new(vec![1.0], vec![0.0]).is_err());
        assert!(BoxRegion::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }
}
