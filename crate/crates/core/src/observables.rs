//! Observable dictionaries over states, inputs and joint state/input pairs.
//!
//! Monomials are enumerated in graded lexicographic order: by total degree,
//! then by descending power of the first variable, then the second, and so
//! on. In two variables up to degree 2 that is `1, z1, z2, z1^2, z1 z2, z2^2`.
//! Operator matrices are only meaningful against this ordering, so it is
//! part of the public contract.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::grid::Grid;
use crate::numerics::{all_finite, Matrix, MatrixData, Vector};

/// One monomial term `coef * prod z_i^powers[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RbfCenters {
    Points(Vec<Vec<f64>>),
    LatinHypercube {
        count: usize,
        seed: u64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DictionarySpec {
    Identity,
    Monomials {
        degree: u32,
        #[serde(default)]
        include_constant: bool,
    },
    /// Gaussians `exp(-|z - c|^2 / (2 w^2))`.
    Rbf { centers: RbfCenters, width: f64 },
    /// Each inner list is one observable, the sum of its terms.
    Polynomials { terms: Vec<Vec<Term>> },
    Composite { parts: Vec<DictionarySpec> },
    /// `phi(z) - phi(0)` for every function of `base`.
    Shifted { base: Box<DictionarySpec> },
}

#[derive(Debug, Clone, PartialEq)]
enum BasisFunction {
    Polynomial(Vec<Term>),
    Gaussian { center: Vec<f64>, width: f64 },
}

impl BasisFunction {
    fn value(&self, z: &[f64]) -> f64 {
        match self {
            BasisFunction::Polynomial(terms) => terms
                .iter()
                .map(|t| t.coef * monomial(&t.powers, z))
                .sum(),
            BasisFunction::Gaussian { center, width } => {
                let r2: f64 = z.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        match self {
            BasisFunction::Polynomial(terms) => {
                out.iter_mut().for_each(|g| *g = 0.0);
                for t in terms {
                    for (j, g) in out.iter_mut().enumerate() {
                        let p = t.powers[j];
                        if p == 0 {
                            continue;
                        }
                        let mut prod = t.coef * f64::from(p) * z[j].powi(p as i32 - 1);
                        for (i, &q) in t.powers.iter().enumerate() {
                            if i != j && q != 0 {
                                prod *= z[i].powi(q as i32);
                            }
                        }
                        *g += prod;
                    }
                }
            }
            BasisFunction::Gaussian { center, width } => {
                let phi = self.value(z);
                let w2 = width * width;
                for (j, g) in out.iter_mut().enumerate() {
                    *g = -(z[j] - center[j]) / w2 * phi;
                }
            }
        }
    }

    fn is_unit_coordinate(&self) -> Option<usize> {
        match self {
            BasisFunction::Polynomial(terms) if terms.len() == 1 && terms[0].coef == 1.0 => {
                let p = &terms[0].powers;
                let ones: Vec<usize> = (0..p.len()).filter(|&i| p[i] == 1).collect();
                (ones.len() == 1 && p.iter().sum::<u32>() == 1).then(|| ones[0])
            }
            _ => None,
        }
    }

    fn is_nonzero_constant(&self) -> bool {
        match self {
            BasisFunction::Polynomial(terms) => {
                terms.iter().all(|t| t.powers.iter().all(|&p| p == 0))
                    && terms.iter().map(|t| t.coef).sum::<f64>() != 0.0
            }
            BasisFunction::Gaussian { .. } => false,
        }
    }
}

fn monomial(powers: &[u32], z: &[f64]) -> f64 {
    powers
        .iter()
        .zip(z)
        .filter(|(&p, _)| p != 0)
        .map(|(&p, &v)| v.powi(p as i32))
        .product()
}

/// Exponent vectors of total degree exactly `degree` in `dim` variables,
/// first variable's power descending.
pub fn exponents_of_degree(dim: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == dim {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for p in (0..=remaining).rev() {
            prefix.push(p);
            rec(dim, remaining - p, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        if degree == 0 {
            out.push(vec![]);
        }
        return out;
    }
    rec(dim, degree, &mut Vec::with_capacity(dim), &mut out);
    out
}

/// Graded lexicographic exponents with total degree in `min..=max`.
pub fn graded_exponents(dim: usize, min: u32, max: u32) -> Vec<Vec<u32>> {
    (min..=max).flat_map(|d| exponents_of_degree(dim, d)).collect()
}

fn latin_hypercube(count: usize, seed: u64, lower: &[f64], upper: &[f64]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = lower.len();
    let mut centers = vec![vec![0.0; dim]; count];
    for j in 0..dim {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(&mut rng);
        for (i, c) in centers.iter_mut().enumerate() {
            let t = (strata[i] as f64 + rng.gen::<f64>()) / count as f64;
            c[j] = lower[j] + t * (upper[j] - lower[j]);
        }
    }
    centers
}

fn expand(spec: &DictionarySpec, dim: usize) -> Result<Vec<(BasisFunction, f64)>> {
    let poly = |powers: Vec<u32>| (BasisFunction::Polynomial(vec![Term { coef: 1.0, powers }]), 0.0);
    Ok(match spec {
        DictionarySpec::Identity => {
            if dim == 0 {
                return Err(Error::MalformedSpec("identity dictionary over zero variables".into()));
            }
            graded_exponents(dim, 1, 1).into_iter().map(poly).collect()
        }
        DictionarySpec::Monomials { degree, include_constant } => {
            if *degree < 1 {
                return Err(Error::MalformedSpec("monomial degree must be >= 1".into()));
            }
            let min = if *include_constant { 0 } else { 1 };
            graded_exponents(dim, min, *degree).into_iter().map(poly).collect()
        }
        DictionarySpec::Rbf { centers, width } => {
            if !(width.is_finite() && *width > 0.0) {
                return Err(Error::MalformedSpec(format!("rbf width must be positive, got {width}")));
            }
            let points = match centers {
                RbfCenters::Points(p) => p.clone(),
                RbfCenters::LatinHypercube { count, seed, lower, upper } => {
                    check_dim("rbf region lower", dim, lower.len())?;
                    check_dim("rbf region upper", dim, upper.len())?;
                    if lower.iter().zip(upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
                        return Err(Error::MalformedSpec("rbf region bounds inverted".into()));
                    }
                    latin_hypercube(*count, *seed, lower, upper)
                }
            };
            if points.is_empty() {
                return Err(Error::MalformedSpec("rbf dictionary needs at least one center".into()));
            }
            points
                .into_iter()
                .map(|c| {
                    check_dim("rbf center", dim, c.len())?;
                    if !all_finite(&c) {
                        return Err(Error::MalformedSpec("non-finite rbf center".into()));
                    }
                    Ok((BasisFunction::Gaussian { center: c, width: *width }, 0.0))
                })
                .collect::<Result<_>>()?
        }
        DictionarySpec::Polynomials { terms } => terms
            .iter()
            .map(|f| {
                if f.is_empty() {
                    return Err(Error::MalformedSpec("polynomial observable with no terms".into()));
                }
                for t in f {
                    check_dim("polynomial term powers", dim, t.powers.len())?;
                    if !t.coef.is_finite() {
                        return Err(Error::MalformedSpec("non-finite polynomial coefficient".into()));
                    }
                }
                Ok((BasisFunction::Polynomial(f.clone()), 0.0))
            })
            .collect::<Result<_>>()?,
        DictionarySpec::Composite { parts } => {
            if parts.is_empty() {
                return Err(Error::MalformedSpec("composite dictionary with no parts".into()));
            }
            let mut all = Vec::new();
            for p in parts {
                all.extend(expand(p, dim)?);
            }
            all
        }
        DictionarySpec::Shifted { base } => {
            let zero = vec![0.0; dim];
            expand(base, dim)?
                .into_iter()
                .map(|(f, _)| {
                    let at_zero = f.value(&zero);
                    (f, at_zero)
                })
                .collect()
        }
    })
}

/// A finite list of real observables on `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    dim: usize,
    spec: DictionarySpec,
    functions: Vec<BasisFunction>,
    /// Subtracted from each function's raw value.
    offsets: Vec<f64>,
    state_indices: Option<Vec<usize>>,
    zero_at_zero: bool,
}

impl Dictionary {
    pub fn build(spec: &DictionarySpec, dim: usize) -> Result<Self> {
        let (functions, offsets): (Vec<_>, Vec<_>) = expand(spec, dim)?.into_iter().unzip();
        if functions.is_empty() {
            return Err(Error::MalformedSpec("dictionary has no functions".into()));
        }
        let mut state_indices = vec![None; dim];
        for (k, f) in functions.iter().enumerate() {
            if offsets[k] != 0.0 {
                continue;
            }
            if let Some(i) = f.is_unit_coordinate() {
                state_indices[i].get_or_insert(k);
            }
        }
        let state_indices = state_indices.into_iter().collect::<Option<Vec<_>>>();
        let zero = vec![0.0; dim];
        let zero_at_zero = functions
            .iter()
            .zip(&offsets)
            .all(|(f, &o)| f.value(&zero) - o == 0.0);
        Ok(Self {
            dim,
            spec: spec.clone(),
            functions,
            offsets,
            state_indices,
            zero_at_zero,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::build(&DictionarySpec::Identity, dim).expect("identity over positive dimension")
    }

    pub fn monomials(dim: usize, degree: u32, include_constant: bool) -> Result<Self> {
        Self::build(&DictionarySpec::Monomials { degree, include_constant }, dim)
    }

    pub fn spec(&self) -> &DictionarySpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn is_state_inclusive(&self) -> bool {
        self.state_indices.is_some()
    }

    /// Row of `Id[z]_i` for each coordinate `i`, if every coordinate is present.
    pub fn state_indices(&self) -> Option<&[usize]> {
        self.state_indices.as_deref()
    }

    pub fn is_zero_at_zero(&self) -> bool {
        self.zero_at_zero
    }

    pub fn has_constant(&self) -> bool {
        self.functions
            .iter()
            .zip(&self.offsets)
            .any(|(f, &o)| o == 0.0 && f.is_nonzero_constant())
    }

    pub fn evaluate(&self, z: &Vector) -> Result<Vector> {
        check_dim("dictionary argument", self.dim, z.len())?;
        let zs = z.as_slice();
        let out = Vector::from_iterator(
            self.len(),
            self.functions.iter().zip(&self.offsets).map(|(f, o)| f.value(zs) - o),
        );
        if !all_finite(out.iter()) {
            return Err(Error::NonFinite("dictionary evaluation".into()));
        }
        Ok(out)
    }

    /// `d psi / d z`, one row per observable.
    pub fn jacobian(&self, z: &Vector) -> Result<Matrix> {
        check_dim("dictionary argument", self.dim, z.len())?;
        let mut jac = Matrix::zeros(self.len(), self.dim);
        let mut row = vec![0.0; self.dim];
        for (k, f) in self.functions.iter().enumerate() {
            f.gradient(z.as_slice(), &mut row);
            for (j, &g) in row.iter().enumerate() {
                jac[(k, j)] = g;
            }
        }
        Ok(jac)
    }

    /// Copy with every function replaced by `phi(z) - phi(0)`.
    pub fn subtract_value_at_zero(&self) -> Self {
        let spec = DictionarySpec::Shifted { base: Box::new(self.spec.clone()) };
        Self::build(&spec, self.dim).expect("shifting a valid dictionary")
    }

    /// Reads the raw coordinates back out of a lifted vector.
    pub fn extract_state(&self, lifted: &Vector) -> Result<Vector> {
        check_dim("lifted vector", self.len(), lifted.len())?;
        let idx = self.state_indices().ok_or(Error::NotStateInclusive)?;
        Ok(Vector::from_iterator(idx.len(), idx.iter().map(|&k| lifted[k])))
    }
}

/// Specification of a joint observable set `psi_xu(x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JointSpec {
    /// `p(x) q(u)` with `deg p <= state_degree` and `1 <= deg q <= input_degree`.
    Products { state_degree: u32, input_degree: u32 },
    /// Polynomials in the concatenated variable `(x, u)`; every term must
    /// carry input degree at least one.
    Polynomials { terms: Vec<Vec<Term>> },
    /// `(K(u) - K(0)) psi_x(x)` with `K(u) = sum_i psi_u_i(u) K_i`.
    WilliamsLift {
        state: DictionarySpec,
        input: DictionarySpec,
        operators: Vec<MatrixData>,
    },
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
enum JointKind {
    Basis(Dictionary),
    Williams {
        dict_x: Dictionary,
        dict_u: Dictionary,
        operators: Vec<Matrix>,
        weights_at_zero: Vector,
    },
}

/// Observables of the pair `(x, u)` that vanish identically when `u = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDictionary {
    state_dim: usize,
    input_dim: usize,
    spec: JointSpec,
    kind: JointKind,
}

impl JointDictionary {
    pub fn build(spec: &JointSpec, state_dim: usize, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::MalformedSpec("joint dictionary needs at least one input".into()));
        }
        let d = state_dim + input_dim;
        let kind = match spec {
            JointSpec::Products { state_degree, input_degree } => {
                if *input_degree < 1 {
                    return Err(Error::MalformedSpec("input degree must be >= 1".into()));
                }
                let terms: Vec<Vec<Term>> = graded_exponents(d, 1, state_degree + input_degree)
                    .into_iter()
                    .filter(|p| {
                        let dx: u32 = p[..state_dim].iter().sum();
                        let du: u32 = p[state_dim..].iter().sum();
                        dx <= *state_degree && (1..=*input_degree).contains(&du)
                    })
                    .map(|powers| vec![Term { coef: 1.0, powers }])
                    .collect();
                JointKind::Basis(Dictionary::build(&DictionarySpec::Polynomials { terms }, d)?)
            }
            JointSpec::Polynomials { terms } => {
                for f in terms {
                    for t in f {
                        check_dim("joint term powers", d, t.powers.len())?;
                        if t.powers[state_dim..].iter().sum::<u32>() == 0 {
                            return Err(Error::MalformedSpec(
                                "joint observable term without input dependence".into(),
                            ));
                        }
                    }
                }
                JointKind::Basis(Dictionary::build(
                    &DictionarySpec::Polynomials { terms: terms.clone() },
                    d,
                )?)
            }
            JointSpec::WilliamsLift { state, input, operators } => {
                let dict_x = Dictionary::build(state, state_dim)?;
                let dict_u = Dictionary::build(input, input_dim)?;
                check_dim("williams operator count", dict_u.len(), operators.len())?;
                let operators = operators
                    .iter()
                    .map(|m| {
                        let k = m.to_matrix()?;
                        check_dim("williams operator rows", dict_x.len(), k.nrows())?;
                        check_dim("williams operator cols", dict_x.len(), k.ncols())?;
                        Ok(k)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let weights_at_zero = dict_u.evaluate(&Vector::zeros(input_dim))?;
                JointKind::Williams { dict_x, dict_u, operators, weights_at_zero }
            }
        };
        Ok(Self { state_dim, input_dim, spec: spec.clone(), kind })
    }

    pub fn products(state_dim: usize, input_dim: usize, state_degree: u32, input_degree: u32) -> Result<Self> {
        Self::build(&JointSpec::Products { state_degree, input_degree }, state_dim, input_dim)
    }

    pub fn spec(&self) -> &JointSpec {
        &self.spec
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            JointKind::Basis(d) => d.len(),
            JointKind::Williams { dict_x, .. } => dict_x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn concat(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        check_dim("joint state argument", self.state_dim, x.len())?;
        check_dim("joint input argument", self.input_dim, u.len())?;
        Ok(Vector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied()))
    }

    fn williams_weights(dict_u: &Dictionary, at_zero: &Vector, u: &Vector) -> Result<Vector> {
        Ok(dict_u.evaluate(u)? - at_zero)
    }

    pub fn evaluate(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        let z = self.concat(x, u)?;
        match &self.kind {
            JointKind::Basis(d) => d.evaluate(&z),
            JointKind::Williams { dict_x, dict_u, operators, weights_at_zero } => {
                let w = Self::williams_weights(dict_u, weights_at_zero, u)?;
                let px = dict_x.evaluate(x)?;
                let mut out = Vector::zeros(dict_x.len());
                for (k, wi) in operators.iter().zip(w.iter()) {
                    if *wi != 0.0 {
                        out += k * &px * *wi;
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn jacobian_x(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        let z = self.concat(x, u)?;
        match &self.kind {
            JointKind::Basis(d) => Ok(d.jacobian(&z)?.columns(0, self.state_dim).into_owned()),
            JointKind::Williams { dict_x, dict_u, operators, weights_at_zero } => {
                let w = Self::williams_weights(dict_u, weights_at_zero, u)?;
                let jx = dict_x.jacobian(x)?;
                let mut out = Matrix::zeros(dict_x.len(), self.state_dim);
                for (k, wi) in operators.iter().zip(w.iter()) {
                    if *wi != 0.0 {
                        out += k * &jx * *wi;
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn jacobian_u(&self, x: &Vector, u: &Vector) -> Result<Matrix> {
        let z = self.concat(x, u)?;
        match &self.kind {
            JointKind::Basis(d) => {
                Ok(d.jacobian(&z)?.columns(self.state_dim, self.input_dim).into_owned())
            }
            JointKind::Williams { dict_x, dict_u, operators, .. } => {
                let ju = dict_u.jacobian(u)?;
                let px = dict_x.evaluate(x)?;
                let mut out = Matrix::zeros(dict_x.len(), self.input_dim);
                for (i, k) in operators.iter().enumerate() {
                    let kp = k * &px;
                    for j in 0..self.input_dim {
                        if ju[(i, j)] != 0.0 {
                            let mut col = out.column_mut(j);
                            col += &kp * ju[(i, j)];
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Largest `|psi_xu(x, 0)|` over the grid's states.
    pub fn max_at_zero_input(&self, grid: &Grid) -> Result<f64> {
        let zero = Vector::zeros(self.input_dim);
        grid.states.iter().try_fold(0.0_f64, |acc, x| {
            Ok(acc.max(self.evaluate(x, &zero)?.amax()))
        })
    }
}
