use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::design::{ColumnSpec, DesignError, Encoding};
use super::EligibleCohort;
use crate::ehr::{PatientRecord, PatientStore};

/// Scores are clipped to `[SCORE_CLIP, 1 - SCORE_CLIP]`.
pub const SCORE_CLIP: f64 = 1e-6;
const MAX_ITERATIONS: u32 = 100;
/// Convergence threshold on the largest score-equation component, divided by
/// the cohort size and taken on standardized columns.
const SCORE_TOL: f64 = 1e-8;
const COLLINEAR_TOL: f64 = 1e-10;
const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropensityError {
    #[error("propensity model needs both arms (treated {treated}, control {control})")]
    EmptyArm { treated: usize, control: usize },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("singular design: column `{column}` is collinear with {}", with.join(", "))]
    Singular { column: String, with: Vec<String> },
    #[error("patient `{0}` not in store")]
    MissingPatient(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub intercept: f64,
    /// Keyed by encoded column name (`age`, `race=white`, ...).
    pub coefficients: BTreeMap<String, f64>,
    pub converged: bool,
    pub iterations: u32,
    /// Columns that were constant over the cohort and left out of the fit.
    pub dropped: Vec<String>,
    pub columns: Vec<ColumnSpec>,
}

impl PropensityModel {
    pub fn linear_predictor(&self, p: &PatientRecord) -> f64 {
        let enc = Encoding { columns: self.columns.clone() };
        let row = enc.row(p);
        self.intercept
            + self
                .columns
                .iter()
                .zip(row)
                .map(|(c, x)| self.coefficients.get(&c.name()).copied().unwrap_or(0.0) * x)
                .sum::<f64>()
    }

    /// Clipped probability of treatment.
    pub fn score(&self, p: &PatientRecord) -> f64 {
        sigmoid(self.linear_predictor(p)).clamp(SCORE_CLIP, 1.0 - SCORE_CLIP)
    }

    pub fn scores(&self, store: &PatientStore, cohort: &EligibleCohort) -> BTreeMap<String, f64> {
        cohort
            .all_ids()
            .into_iter()
            .filter_map(|id| store.get(id).map(|p| (id.to_string(), self.score(p))))
            .collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn log_likelihood(z: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = z * beta;
    eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

/// Least-squares coefficients of `target` on the columns of `basis`, which
/// are known to be independent.
fn regress(basis: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    let gram = basis.transpose() * basis;
    let rhs = basis.transpose() * target;
    gram.cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| DVector::zeros(basis.ncols()))
}

/// Fails on the first column that is a linear combination of the ones before
/// it, naming the columns that take part.
fn check_collinearity(z: &DMatrix<f64>, names: &[String]) -> Result<(), PropensityError> {
    let n = z.nrows() as f64;
    let mut q: Vec<DVector<f64>> = Vec::new();
    for j in 0..z.ncols() {
        let col = z.column(j).into_owned();
        let mut r = col.clone();
        for b in &q {
            r -= b * b.dot(&col);
        }
        if r.norm_squared() / n < COLLINEAR_TOL {
            let basis = z.columns(0, j).into_owned();
            let coef = regress(&basis, &col);
            let with = coef
                .iter()
                .enumerate()
                .filter(|(_, c)| c.abs() > 1e-6)
                .map(|(i, _)| names[i].clone())
                .collect();
            return Err(PropensityError::Singular { column: names[j].clone(), with });
        }
        let norm = r.norm();
        q.push(r / norm);
    }
    Ok(())
}

/// Logistic regression of treatment on the confounders by iteratively
/// reweighted least squares.
pub fn fit_propensity(
    store: &PatientStore,
    cohort: &EligibleCohort,
    confounders: &[String],
) -> Result<PropensityModel, PropensityError> {
    let (nt, nc) = (cohort.treated_ids.len(), cohort.control_ids.len());
    if nt == 0 || nc == 0 {
        return Err(PropensityError::EmptyArm { treated: nt, control: nc });
    }
    let mut patients = Vec::with_capacity(nt + nc);
    let mut y = Vec::with_capacity(nt + nc);
    for (ids, label) in [(&cohort.treated_ids, 1.0), (&cohort.control_ids, 0.0)] {
        for id in ids {
            patients.push(store.get(id).ok_or_else(|| PropensityError::MissingPatient(id.clone()))?);
            y.push(label);
        }
    }
    let n = patients.len();
    let enc = Encoding::fit(&patients, confounders, true)?;
    let rows: Vec<Vec<f64>> = patients.iter().map(|p| enc.row(p)).collect();

    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (j, col) in enc.columns.iter().enumerate() {
        let first = rows[0][j];
        if rows.iter().all(|r| r[j] == first) {
            dropped.push(col.name());
        } else {
            kept.push(j);
        }
    }

    // Standardized design with a leading intercept column.
    let k = kept.len();
    let mut center = vec![0.0; k];
    let mut scale = vec![1.0; k];
    for (c, &j) in kept.iter().enumerate() {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
        center[c] = mean;
        scale[c] = var.sqrt();
    }
    let z = DMatrix::from_fn(n, k + 1, |i, c| {
        if c == 0 {
            1.0
        } else {
            (rows[i][kept[c - 1]] - center[c - 1]) / scale[c - 1]
        }
    });
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(kept.iter().map(|&j| enc.columns[j].name()));
    check_collinearity(&z, &names)?;

    let yv = DVector::from_vec(y);
    let mut beta = DVector::zeros(k + 1);
    let frac = nt as f64 / n as f64;
    beta[0] = (frac / (1.0 - frac)).ln();
    let mut converged = false;
    let mut iterations = 0;
    let mut ll = log_likelihood(&z, &yv, &beta);
    while iterations < MAX_ITERATIONS {
        let eta = &z * &beta;
        let raw = eta.map(sigmoid);
        let score = z.transpose() * (&yv - &raw);
        if score.amax() / (n as f64) < SCORE_TOL {
            // Fitted probabilities beyond the clip bounds mean the maximum
            // lies at infinity.
            converged = raw.iter().all(|&p| (SCORE_CLIP..=1.0 - SCORE_CLIP).contains(&p));
            break;
        }
        iterations += 1;
        let w = raw.map(|p| {
            let p = p.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP);
            p * (1.0 - p)
        });
        // Row-scaled copy of z; an explicit n x n diagonal is quadratic in memory.
        let mut wz = z.clone();
        for (mut row, &wi) in wz.row_iter_mut().zip(w.iter()) {
            row *= wi;
        }
        let mut info = z.tr_mul(&wz);
        info.fill_upper_triangle_with_lower_triangle();
        let Some(chol) = info.cholesky() else { break };
        let step = chol.solve(&score);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cand_ll = log_likelihood(&z, &yv, &cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = cand_ll;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let mut coefficients = BTreeMap::new();
    let mut intercept = beta[0];
    for (c, &j) in kept.iter().enumerate() {
        let b = beta[c + 1] / scale[c];
        intercept -= b * center[c];
        coefficients.insert(enc.columns[j].name(), b);
    }
    Ok(PropensityModel {
        intercept,
        coefficients,
        converged,
        iterations,
        dropped,
        columns: kept.iter().map(|&j| enc.columns[j].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{Gender, ReferenceRange};

    fn store(rows: &[(u32, Gender, &str)]) -> PatientStore {
        let patients = rows
            .iter()
            .enumerate()
            .map(|(i, &(age, g, race))| {
                let mut p = PatientRecord::new(format!("p{i:03}"), age, g);
                p.race = race.into();
                p
            })
            .collect();
        let mut dict = BTreeMap::new();
        dict.insert("SCr".into(), ReferenceRange::new(0.6, 1.3).unwrap());
        dict.insert("AST".into(), ReferenceRange::new(8.0, 40.0).unwrap());
        PatientStore::new(patients, dict, vec![]).unwrap()
    }

    fn cohort(treated: &[usize], control: &[usize]) -> EligibleCohort {
        EligibleCohort {
            candidate_id: 0,
            treated_ids: treated.iter().map(|i| format!("p{i:03}")).collect(),
            control_ids: control.iter().map(|i| format!("p{i:03}")).collect(),
        }
    }

    #[test]
    fn saturated_binary_confounder() {
        // x = gender_code: males 0..4 (3 treated), females 4..8 (1 treated).
        let mut rows = vec![(50, Gender::Male, ""); 4];
        rows.extend(vec![(50, Gender::Female, ""); 4]);
        let s = store(&rows);
        let c = cohort(&[0, 1, 2, 4], &[3, 5, 6, 7]);
        let m = fit_propensity(&s, &c, &["gender_code".into()]).unwrap();
        assert!(m.converged);
        assert!((m.intercept - 3f64.ln()).abs() < 1e-8, "{}", m.intercept);
        assert!((m.coefficients["gender_code"] + 2.0 * 3f64.ln()).abs() < 1e-8);
        let scores = m.scores(&s, &c);
        assert!((scores["p000"] - 0.75).abs() < 1e-8);
        assert!((scores["p007"] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn constant_confounders_give_intercept_only() {
        let s = store(&[(50, Gender::Male, "a"); 5]);
        let c = cohort(&[0, 1], &[2, 3, 4]);
        let conf = vec!["age".to_string(), "gender_code".to_string(), "race".to_string()];
        let m = fit_propensity(&s, &c, &conf).unwrap();
        assert!(m.coefficients.is_empty());
        assert_eq!(m.dropped, vec!["age", "gender_code"]);
        for v in m.scores(&s, &c).values() {
            assert!((v - 0.4).abs() < 1e-10);
        }
    }

    #[test]
    fn separation_is_flagged() {
        let mut rows = vec![(20, Gender::Male, ""); 3];
        rows.extend(vec![(80, Gender::Male, ""); 3]);
        let s = store(&rows);
        let c = cohort(&[3, 4, 5], &[0, 1, 2]);
        let m = fit_propensity(&s, &c, &["age".into()]).unwrap();
        assert!(!m.converged);
        let scores = m.scores(&s, &c);
        assert_eq!(scores["p000"], SCORE_CLIP);
        assert_eq!(scores["p005"], 1.0 - SCORE_CLIP);
    }

    #[test]
    fn collinear_columns_named() {
        // gender_code and gender=male encode the same split.
        let rows = vec![
            (30, Gender::Male, ""),
            (40, Gender::Female, ""),
            (50, Gender::Male, ""),
            (60, Gender::Female, ""),
        ];
        let s = store(&rows);
        let c = cohort(&[0, 1], &[2, 3]);
        let err = fit_propensity(&s, &c, &["gender_code".into(), "gender".into()]).unwrap_err();
        match err {
            PropensityError::Singular { column, with } => {
                assert_eq!(column, "gender=male");
                assert!(with.contains(&"gender_code".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_arm() {
        let s = store(&[(30, Gender::Male, "")]);
        let c = cohort(&[0], &[]);
        assert!(matches!(fit_propensity(&s, &c, &[]), Err(PropensityError::EmptyArm { .. })));
    }
}
