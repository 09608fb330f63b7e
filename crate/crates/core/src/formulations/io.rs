//! JSON documents for fitted models.

use serde::{Deserialize, Serialize};

use super::{FitInfo, KoopmanModel, Representation, Variant};
use crate::dynamics::TimeKind;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, MatrixData, Vector};
use crate::observables::{Dictionary, DictionarySpec, JointDictionary, JointSpec};

pub const MODEL_SCHEMA: &str = "kooplab.model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: String,
    pub variant: Variant,
    pub time_kind: TimeKind,
    pub state_dim: usize,
    pub input_dim: usize,
    pub dictionaries: DictionaryDocs,
    /// Operator blocks by name, e.g. `K`, `B`, `K_x`, `K_1`.
    pub operators: Vec<NamedMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    pub fit: FitInfo,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DictionaryDocs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<DictionarySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<DictionarySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen: Option<DictionarySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMatrix {
    pub name: String,
    #[serde(flatten)]
    pub matrix: MatrixData,
}

impl KoopmanModel {
    pub fn to_document(&self) -> ModelDocument {
        let mut dictionaries = DictionaryDocs::default();
        let mut eigenvalues = None;
        match &self.representation {
            Representation::Affine { psi, .. } => dictionaries.state = Some(psi.spec().clone()),
            Representation::Separable { psi_x, psi_u, .. }
            | Representation::WilliamsBilinear { psi_x, psi_u, .. } => {
                dictionaries.state = Some(psi_x.spec().clone());
                dictionaries.input = Some(psi_u.spec().clone());
            }
            Representation::Joint { psi_x, psi_xu, .. } => {
                dictionaries.state = Some(psi_x.spec().clone());
                dictionaries.joint = Some(psi_xu.spec().clone());
            }
            Representation::KaiserEigen { psi, eigenvalues: l } => {
                dictionaries.eigen = Some(psi.spec().clone());
                eigenvalues = Some(l.iter().copied().collect());
            }
        }
        let operators = match &self.representation {
            Representation::KaiserEigen { .. } => vec![],
            _ => self
                .operator_blocks()
                .iter()
                .map(|(name, m)| NamedMatrix { name: name.clone(), matrix: m.into() })
                .collect(),
        };
        ModelDocument {
            schema: MODEL_SCHEMA.into(),
            variant: self.variant(),
            time_kind: self.time_kind,
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            dictionaries,
            operators,
            eigenvalues,
            fit: self.fit.clone(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let (n, m) = (doc.state_dim, doc.input_dim);
        let missing = |what: &str| Error::Serialization(format!("model document lacks {what}"));
        let dict = |spec: &Option<DictionarySpec>, dim: usize, what: &str| -> Result<Dictionary> {
            Dictionary::build(spec.as_ref().ok_or_else(|| missing(what))?, dim)
        };
        let op = |name: &str| -> Result<Matrix> {
            doc.operators
                .iter()
                .find(|o| o.name == name)
                .ok_or_else(|| missing(&format!("operator {name}")))?
                .matrix
                .to_matrix()
        };
        let d = &doc.dictionaries;
        let representation = match doc.variant {
            Variant::Affine => Representation::Affine { psi: dict(&d.state, n, "state dictionary")?, k: op("K")?, b: op("B")? },
            Variant::Separable => Representation::Separable {
                psi_x: dict(&d.state, n, "state dictionary")?,
                psi_u: dict(&d.input, m, "input dictionary")?,
                k_x: op("K_x")?,
                k_u: op("K_u")?,
            },
            Variant::Joint => Representation::Joint {
                psi_x: dict(&d.state, n, "state dictionary")?,
                psi_xu: JointDictionary::build(d.joint.as_ref().ok_or_else(|| missing("joint dictionary"))?, n, m)?,
                k_x: op("K_x")?,
                k_xu: op("K_xu")?,
            },
            Variant::WilliamsBilinear => {
                let psi_u = dict(&d.input, m, "input dictionary")?;
                let operators = (1..=psi_u.len()).map(|i| op(&format!("K_{i}"))).collect::<Result<_>>()?;
                Representation::WilliamsBilinear { psi_x: dict(&d.state, n, "state dictionary")?, psi_u, operators }
            }
            Variant::KaiserEigen => Representation::KaiserEigen {
                psi: dict(&d.eigen, n + m, "eigenfunction dictionary")?,
                eigenvalues: Vector::from_vec(doc.eigenvalues.clone().ok_or_else(|| missing("eigenvalues"))?),
            },
        };
        Self::new(doc.time_kind, n, m, representation, doc.fit.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulations::FitInfo;

    #[test]
    fn round_trip_every_variant() {
        let id = Dictionary::identity(1);
        let pu = Dictionary::monomials(1, 1, true).unwrap();
        let fit = FitInfo { rms_residual: 0.5, samples: 3, ridge: 0.0, unidentified: vec!["K_2".into()] };
        let reps = vec![
            Representation::Affine { psi: id.clone(), k: Matrix::from_element(1, 1, 0.9), b: Matrix::from_element(1, 1, 0.1) },
            Representation::Separable { psi_x: id.clone(), psi_u: id.clone(), k_x: Matrix::from_element(1, 1, 0.3), k_u: Matrix::from_element(1, 1, -2.0) },
            Representation::Joint {
                psi_x: id.clone(),
                psi_xu: JointDictionary::products(1, 1, 1, 2).unwrap(),
                k_x: Matrix::from_element(1, 1, 0.3),
                k_xu: Matrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]),
            },
            Representation::WilliamsBilinear { psi_x: id.clone(), psi_u: pu, operators: vec![Matrix::from_element(1, 1, 0.9), Matrix::from_element(1, 1, 0.1)] },
        ];
        for r in reps {
            let m = KoopmanModel::new(TimeKind::Discrete, 1, 1, r, fit.clone()).unwrap();
            let back = KoopmanModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m);
            if m.variant() == Variant::WilliamsBilinear {
                let j = m.williams_to_joint().unwrap();
                assert_eq!(KoopmanModel::from_json(&j.to_json().unwrap()).unwrap(), j);
            }
        }
        let k = KoopmanModel::new(
            TimeKind::Continuous,
            1,
            1,
            Representation::KaiserEigen { psi: Dictionary::identity(2), eigenvalues: Vector::from_vec(vec![-1.0, 0.0]) },
            fit,
        )
        .unwrap();
        assert_eq!(KoopmanModel::from_json(&k.to_json().unwrap()).unwrap(), k);
    }

    #[test]
    fn operators_are_row_major() {
        let m = KoopmanModel::new(
            TimeKind::Discrete,
            2,
            1,
            Representation::Affine {
                psi: Dictionary::identity(2),
                k: Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
                b: Matrix::from_row_slice(2, 1, &[5.0, 6.0]),
            },
            FitInfo::default(),
        )
        .unwrap();
        let doc = m.to_document();
        assert_eq!(doc.operators[0].matrix.data, vec![1.0, 2.0, 3.0, 4.0]);
        let text = m.to_json().unwrap();
        assert!(text.contains("\"variant\": \"affine\""));
    }
}
