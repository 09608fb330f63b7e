use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{format_f64, Vector};

/// Wording attached to every summary.
pub const SUFFICIENCY_QUALIFIER: &str =
    "consistency conditions are necessary, not sufficient: passing them does not establish a valid representation";

macro_rules! condition_ids {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Closed set of checkable conditions, in reporting order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum ConditionId {
            $(#[serde(rename = $name)] $variant,)+
        }

        impl ConditionId {
            pub const ALL: &'static [ConditionId] = &[$(ConditionId::$variant,)+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(ConditionId::$variant => $name,)+
                }
            }
        }
    };
}

condition_ids! {
    Def1Auton => "DEF1-AUTON",
    Def1Ctrl => "DEF1-CTRL",
    Def1Joint => "DEF1-JOINT",
    Def2Auton => "DEF2-AUTON",
    Def2CtrlX => "DEF2-CTRL-X",
    Def2CtrlU => "DEF2-CTRL-U",
    Def2JointX => "DEF2-JOINT-X",
    Def2JointU => "DEF2-JOINT-U",
    T2C1 => "T2-C1",
    T2C2 => "T2-C2",
    T2C3 => "T2-C3",
    Cor1Fxu => "COR1-FXU",
    Cor2Pairwise => "COR2-PAIRWISE",
    Cor3KmaB => "COR3-KMA-B",
    Cor3KmaL => "COR3-KMA-L",
    T3C1 => "T3-C1",
    T3C2 => "T3-C2",
    Kaiser => "KAISER",
    T4C1 => "T4-C1",
    T4C2 => "T4-C2",
    T4C3 => "T4-C3",
    T4C4 => "T4-C4",
    Cor4Fxu => "COR4-FXU",
    Cor5PairwiseU => "COR5-PAIRWISE-U",
    Cor5PairwiseX => "COR5-PAIRWISE-X",
    Cor6B => "COR6-B",
    T5C1 => "T5-C1",
    T5C2 => "T5-C2",
    Cor7C1 => "COR7-C1",
    Cor7C2 => "COR7-C2",
    Cor8C1 => "COR8-C1",
    Cor8C2 => "COR8-C2",
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_ascii_uppercase();
        ConditionId::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == wanted)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown condition `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Consistent,
    Inconsistent,
    NotEvaluated,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Consistent => "consistent",
            Verdict::Inconsistent => "inconsistent",
            Verdict::NotEvaluated => "not-evaluated",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a residual was evaluated. Pairwise conditions use the second
/// state and/or input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u2: Option<Vec<f64>>,
}

impl EvalPoint {
    pub fn single(x: &Vector, u: &Vector) -> Self {
        Self { x: x.iter().copied().collect(), u: u.iter().copied().collect(), x2: None, u2: None }
    }

    pub fn state_pair(x1: &Vector, x2: &Vector, u: &Vector) -> Self {
        Self { x2: Some(x2.iter().copied().collect()), ..Self::single(x1, u) }
    }

    pub fn quadruple(x1: &Vector, x2: &Vector, u1: &Vector, u2: &Vector) -> Self {
        Self {
            x2: Some(x2.iter().copied().collect()),
            u2: Some(u2.iter().copied().collect()),
            ..Self::single(x1, u1)
        }
    }

    pub fn state(&self) -> Vector {
        Vector::from_column_slice(&self.x)
    }

    pub fn input(&self) -> Vector {
        Vector::from_column_slice(&self.u)
    }

    pub fn second_state(&self) -> Option<Vector> {
        self.x2.as_deref().map(Vector::from_column_slice)
    }

    pub fn second_input(&self) -> Option<Vector> {
        self.u2.as_deref().map(Vector::from_column_slice)
    }
}

fn fmt_coords(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&c| format_f64(c)).collect();
    format!("[{}]", parts.join(" "))
}

impl fmt::Display for EvalPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.x2 {
            Some(x2) => write!(f, "x1={} x2={}", fmt_coords(&self.x), fmt_coords(x2))?,
            None => write!(f, "x={}", fmt_coords(&self.x))?,
        }
        match &self.u2 {
            Some(u2) => write!(f, " u1={} u2={}", fmt_coords(&self.u), fmt_coords(u2)),
            None => write!(f, " u={}", fmt_coords(&self.u)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub condition: ConditionId,
    pub verdict: Verdict,
    pub tolerance: f64,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub argmax: Option<EvalPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Auxiliary scalars some checks report alongside the residual.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub diagnostics: BTreeMap<String, f64>,
    pub points: Vec<EvalPoint>,
    pub residuals: Vec<f64>,
}

impl ConsistencyReport {
    pub fn from_field(condition: ConditionId, points: Vec<EvalPoint>, residuals: Vec<f64>, tolerance: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty(format!("{condition}: no evaluation points")));
        }
        if points.len() != residuals.len() {
            return Err(Error::DimensionMismatch {
                context: format!("{condition} residual field"),
                expected: points.len(),
                actual: residuals.len(),
            });
        }
        if let Some(k) = residuals.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("{condition} residual at {}", points[k])));
        }
        // Ties go to the last point in evaluation order.
        let (mut best, mut max) = (0, residuals[0]);
        for (k, &r) in residuals.iter().enumerate() {
            if r >= max {
                best = k;
                max = r;
            }
        }
        let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
        Ok(Self {
            condition,
            verdict: if max <= tolerance { Verdict::Consistent } else { Verdict::Inconsistent },
            tolerance,
            max_residual: max,
            mean_residual: mean,
            argmax: Some(points[best].clone()),
            note: None,
            diagnostics: BTreeMap::new(),
            points,
            residuals,
        })
    }

    pub fn not_evaluated(condition: ConditionId, note: impl Into<String>, tolerance: f64) -> Self {
        Self {
            condition,
            verdict: Verdict::NotEvaluated,
            tolerance,
            max_residual: 0.0,
            mean_residual: 0.0,
            argmax: None,
            note: Some(note.into()),
            diagnostics: BTreeMap::new(),
            points: vec![],
            residuals: vec![],
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.verdict == Verdict::Consistent
    }

    /// Residual at the first point matching `x` and `u` exactly.
    pub fn residual_at(&self, x: &[f64], u: &[f64]) -> Option<f64> {
        self.points.iter().position(|p| p.x == x && p.u == u).map(|k| self.residuals[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: ConditionId,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub verdict: Verdict,
    pub argmax: Option<EvalPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub rows: Vec<SummaryRow>,
    /// Consistent iff every evaluated condition is consistent.
    pub overall: Verdict,
    pub qualifier: String,
}

/// Ordered table of reports. Not-evaluated conditions are listed but do not
/// affect the overall verdict.
pub fn summarize(reports: &[ConsistencyReport]) -> Result<ConsistencySummary> {
    if reports.is_empty() {
        return Err(Error::Empty("no consistency reports to summarize".into()));
    }
    let mut rows: Vec<SummaryRow> = reports
        .iter()
        .map(|r| SummaryRow {
            condition: r.condition,
            max_residual: r.max_residual,
            mean_residual: r.mean_residual,
            verdict: r.verdict,
            argmax: r.argmax.clone(),
            note: r.note.clone(),
        })
        .collect();
    rows.sort_by_key(|r| r.condition);
    let evaluated: Vec<&SummaryRow> = rows.iter().filter(|r| r.verdict != Verdict::NotEvaluated).collect();
    let overall = if evaluated.is_empty() {
        Verdict::NotEvaluated
    } else if evaluated.iter().all(|r| r.verdict == Verdict::Consistent) {
        Verdict::Consistent
    } else {
        Verdict::Inconsistent
    };
    Ok(ConsistencySummary { rows, overall, qualifier: SUFFICIENCY_QUALIFIER.into() })
}

impl ConsistencySummary {
    /// `condition,max_residual,mean_residual,verdict,argmax`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Serialization(e.to_string());
        w.write_record(["condition", "max_residual", "mean_residual", "verdict", "argmax"]).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.condition.as_str().to_string(),
                format_f64(r.max_residual),
                format_f64(r.mean_residual),
                r.verdict.as_str().to_string(),
                r.argmax.as_ref().map(|p| p.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let at = r.argmax.as_ref().map(|p| format!("  at {p}")).unwrap_or_default();
            let note = r.note.as_ref().map(|n| format!("  ({n})")).unwrap_or_default();
            out.push_str(&format!(
                "{:<16} {:<14} max {:<12} mean {:<12}{at}{note}\n",
                r.condition.as_str(),
                r.verdict.as_str(),
                format!("{:.3e}", r.max_residual),
                format!("{:.3e}", r.mean_residual),
            ));
        }
        out.push_str(&format!("overall: {}\nnote: {}\n", self.overall, self.qualifier));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(c: ConditionId, residuals: &[f64]) -> ConsistencyReport {
        let points = residuals
            .iter()
            .enumerate()
            .map(|(k, _)| EvalPoint::single(&Vector::from_element(1, k as f64), &Vector::zeros(1)))
            .collect();
        ConsistencyReport::from_field(c, points, residuals.to_vec(), 1e-6).unwrap()
    }

    #[test]
    fn names_round_trip_and_order() {
        assert_eq!(ConditionId::ALL.len(), 32);
        for &c in ConditionId::ALL {
            assert_eq!(c.as_str().parse::<ConditionId>().unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{c}\""));
        }
        assert!(ConditionId::Def1Auton < ConditionId::Cor8C2);
        assert!("T9-C1".parse::<ConditionId>().is_err());
    }

    #[test]
    fn report_statistics() {
        let r = report(ConditionId::T2C3, &[0.0, 2.0, 1.0]);
        assert_eq!(r.max_residual, 2.0);
        assert_eq!(r.mean_residual, 1.0);
        assert_eq!(r.argmax.as_ref().unwrap().x, vec![1.0]);
        assert_eq!(r.verdict, Verdict::Inconsistent);
        assert_eq!(r.residual_at(&[2.0], &[0.0]), Some(1.0));
    }

    #[test]
    fn summary_verdicts() {
        let pass = report(ConditionId::T3C1, &[0.0, 1e-9]);
        let fail = report(ConditionId::Cor1Fxu, &[0.5]);
        let skipped = ConsistencyReport::not_evaluated(ConditionId::Def2JointU, "no input map", 1e-6);
        let s = summarize(&[pass.clone(), skipped.clone()]).unwrap();
        assert_eq!(s.overall, Verdict::Consistent);
        assert!(s.qualifier.contains("not sufficient"));
        let s = summarize(&[pass, fail, skipped]).unwrap();
        assert_eq!(s.overall, Verdict::Inconsistent);
        assert_eq!(s.rows[0].condition, ConditionId::Def2JointU);
        assert!(summarize(&[]).is_err());
        let csv = s.to_csv().unwrap();
        assert!(csv.starts_with("condition,max_residual,mean_residual,verdict,argmax\n"));
        assert!(csv.contains("COR1-FXU,0.5,0.5,inconsistent,x=[0] u=[0]"));
    }
}
