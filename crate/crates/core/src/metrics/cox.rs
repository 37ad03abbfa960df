//! Cox proportional-hazards fit on the partial likelihood.
//!
//! The design row of each subject is `[treated, covariates...]`, so
//! coefficient 0 is always the treatment effect.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use super::SurvivalRecord;

const MAX_ITERATIONS: u32 = 100;
const STEP_TOL: f64 = 1e-10;
/// Treatment coefficients beyond this magnitude indicate a monotone likelihood.
pub const BETA_CAP: f64 = 20.0;
const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoxError {
    #[error("no events observed")]
    NoEvents,
    #[error("only one treatment arm present")]
    SingleArm,
    #[error("record {0} has {1} covariates, expected {2}")]
    CovariateCount(String, usize, usize),
    #[error("information matrix is singular at the start point")]
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta_t: f64,
    pub se: f64,
    pub hr: f64,
    pub ci95: (f64, f64),
    pub p_value: f64,
    pub converged: bool,
    pub iterations: u32,
    pub covariate_betas: Vec<f64>,
    /// Set when the treatment coefficient hit [`BETA_CAP`].
    pub degenerate: bool,
}

struct Eval {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

fn row(r: &SurvivalRecord) -> DVector<f64> {
    let mut x = DVector::zeros(r.covariates.len() + 1);
    x[0] = if r.treated { 1.0 } else { 0.0 };
    for (i, &c) in r.covariates.iter().enumerate() {
        x[i + 1] = c;
    }
    x
}

/// Subjects ordered by descending time, grouped by equal time.
struct Prepared {
    rows: Vec<DVector<f64>>,
    events: Vec<bool>,
    groups: Vec<std::ops::Range<usize>>,
}

fn prepare(records: &[SurvivalRecord]) -> Prepared {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
    let rows = order.iter().map(|&i| row(&records[i])).collect();
    let events = order.iter().map(|&i| records[i].event).collect();
    let mut groups = Vec::new();
    let mut start = 0;
    for k in 1..=order.len() {
        if k == order.len() || records[order[k]].time != records[order[start]].time {
            groups.push(start..k);
            start = k;
        }
    }
    Prepared { rows, events, groups }
}

fn evaluate(prep: &Prepared, beta: &DVector<f64>, ties: Ties) -> Eval {
    let p = beta.len();
    let etas: Vec<f64> = prep.rows.iter().map(|x| x.dot(beta)).collect();
    let shift = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(p);
    let mut s2 = DMatrix::zeros(p, p);
    let mut loglik = 0.0;
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for g in &prep.groups {
        let mut d = 0usize;
        let mut d0 = 0.0;
        let mut d1 = DVector::zeros(p);
        let mut d2 = DMatrix::zeros(p, p);
        for i in g.clone() {
            let x = &prep.rows[i];
            let w = (etas[i] - shift).exp();
            let xx = x * x.transpose();
            s0 += w;
            s1 += x * w;
            s2 += &xx * w;
            if prep.events[i] {
                d += 1;
                loglik += etas[i];
                score += x;
                d0 += w;
                d1 += x * w;
                d2 += xx * w;
            }
        }
        if d == 0 {
            continue;
        }
        let steps: Vec<f64> = match ties {
            Ties::Breslow => vec![0.0; d],
            Ties::Efron => (0..d).map(|l| l as f64 / d as f64).collect(),
        };
        for f in steps {
            let a0 = s0 - f * d0;
            let a1 = &s1 - &d1 * f;
            let a2 = &s2 - &d2 * f;
            loglik -= a0.ln() + shift;
            score -= &a1 / a0;
            info += a2 / a0 - (&a1 * a1.transpose()) / (a0 * a0);
        }
    }
    Eval { loglik, score, info }
}

fn check(records: &[SurvivalRecord]) -> Result<(), CoxError> {
    let p = records.first().map_or(0, |r| r.covariates.len());
    for r in records {
        if r.covariates.len() != p {
            return Err(CoxError::CovariateCount(r.patient_id.clone(), r.covariates.len(), p));
        }
    }
    if !records.iter().any(|r| r.event) {
        return Err(CoxError::NoEvents);
    }
    if records.iter().all(|r| r.treated) || records.iter().all(|r| !r.treated) {
        return Err(CoxError::SingleArm);
    }
    Ok(())
}

/// Log partial likelihood at `beta` (treatment first, then covariates).
pub fn cox_log_likelihood(records: &[SurvivalRecord], beta: &[f64], ties: Ties) -> f64 {
    evaluate(&prepare(records), &DVector::from_column_slice(beta), ties).loglik
}

/// Gradient of [`cox_log_likelihood`].
pub fn cox_score(records: &[SurvivalRecord], beta: &[f64], ties: Ties) -> Vec<f64> {
    evaluate(&prepare(records), &DVector::from_column_slice(beta), ties).score.as_slice().to_vec()
}

/// Newton-Raphson with step-halving from zero.
pub fn fit_cox(records: &[SurvivalRecord], ties: Ties) -> Result<CoxFit, CoxError> {
    check(records)?;
    let prep = prepare(records);
    let p = records[0].covariates.len() + 1;
    let mut beta = DVector::zeros(p);
    let mut cur = evaluate(&prep, &beta, ties);
    if cur.info.clone().cholesky().is_none() {
        return Err(CoxError::Singular);
    }
    let mut converged = false;
    let mut degenerate = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let Some(chol) = cur.info.clone().cholesky() else { break };
        let step = chol.solve(&cur.score);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let next = evaluate(&prep, &cand, ties);
            if next.loglik.is_finite() && next.loglik >= cur.loglik - 1e-12 * cur.loglik.abs().max(1.0) {
                accepted = Some((cand, next));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, next)) = accepted else { break };
        let moved = (&cand - &beta).amax();
        beta = cand;
        cur = next;
        if beta[0].abs() > BETA_CAP {
            beta[0] = BETA_CAP.copysign(beta[0]);
            cur = evaluate(&prep, &beta, ties);
            degenerate = true;
            break;
        }
        if moved < STEP_TOL {
            converged = true;
            break;
        }
    }
    let var = cur.info.clone().try_inverse().map_or(f64::INFINITY, |inv| inv[(0, 0)]);
    let se = if var.is_finite() && var > 0.0 { var.sqrt() } else { f64::INFINITY };
    let beta_t = beta[0];
    let z = beta_t / se;
    Ok(CoxFit {
        beta_t,
        se,
        hr: beta_t.exp(),
        ci95: ((beta_t - Z_95 * se).exp(), (beta_t + Z_95 * se).exp()),
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
        converged: converged && !degenerate,
        iterations,
        covariate_betas: beta.iter().skip(1).copied().collect(),
        degenerate,
    })
}
