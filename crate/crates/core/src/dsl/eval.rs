use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AggFn, AttrExpr, Bindings, CmpOp, CriterionSpec, Literal, Predicate, ValueExpr, Window};
use crate::ehr::{derived_attribute, AttributeError, PatientRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound parameter `${0}`")]
    Unbound(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error(transparent)]
    Attribute(#[from] AttributeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eligibility {
    Ineligible,
    Treatment,
    Control,
}

fn resolve(v: &ValueExpr, bindings: &Bindings) -> Result<Literal, EvalError> {
    match v {
        ValueExpr::Literal { value } => Ok(*value),
        ValueExpr::Param { name } => bindings.get(name).copied().ok_or_else(|| EvalError::Unbound(name.clone())),
    }
}

fn number(v: &ValueExpr, bindings: &Bindings, ctx: &str) -> Result<f64, EvalError> {
    let lit = resolve(v, bindings)?;
    lit.as_number()
        .ok_or_else(|| EvalError::TypeMismatch(format!("{ctx} needs a number, got {lit}")))
}

/// Window bounds in hours as `(lo, hi, lo_inclusive)`.
fn bounds(w: &Option<Window>, bindings: &Bindings) -> Result<Option<(f64, f64, bool)>, EvalError> {
    Ok(match w {
        None => None,
        Some(Window::DuringStay) => Some((0.0, f64::INFINITY, true)),
        Some(Window::WithinLast { amount, unit }) => {
            let h = number(amount, bindings, "window")? * unit.hours();
            // Strictly before admission, back to `h` hours earlier.
            Some((-h, 0.0, true))
        }
        Some(Window::WithinFirst { amount, unit }) => {
            let h = number(amount, bindings, "window")? * unit.hours();
            Some((0.0, h, true))
        }
    })
}

fn in_window(t: f64, b: Option<(f64, f64, bool)>, strict_end: bool) -> bool {
    match b {
        None => true,
        Some((lo, hi, _)) => t >= lo && if strict_end { t < hi } else { t <= hi },
    }
}

fn event_present(
    p: &PatientRecord,
    code: &str,
    w: &Option<Window>,
    bindings: &Bindings,
) -> Result<bool, EvalError> {
    let b = bounds(w, bindings)?;
    let strict_end = matches!(w, Some(Window::WithinLast { .. }));
    Ok(p.events.iter().any(|e| e.code == code && in_window(e.start_time, b, strict_end)))
}

fn attribute_value(p: &PatientRecord, lhs: &AttrExpr, bindings: &Bindings) -> Result<Option<f64>, EvalError> {
    match lhs {
        AttrExpr::Attr { name } => Ok(derived_attribute(p, name)?),
        AttrExpr::Aggregate { func, indicator, window } => {
            let b = bounds(window, bindings)?;
            let values = p
                .lab(indicator)
                .into_iter()
                .flat_map(|s| s.points.iter())
                .filter(|(t, _)| in_window(*t, b, false))
                .map(|&(_, v)| v);
            Ok(match func {
                AggFn::Count => Some(values.count() as f64),
                AggFn::Min => values.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v)))),
                AggFn::Max => values.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))),
                AggFn::Mean => {
                    let (n, s) = values.fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
                    (n > 0).then(|| s / n as f64)
                }
            })
        }
        AttrExpr::Event { .. } => unreachable!("event flags are compared as booleans"),
    }
}

/// Evaluates a predicate. Comparisons over absent values are false.
pub fn evaluate_predicate(pred: &Predicate, p: &PatientRecord, bindings: &Bindings) -> Result<bool, EvalError> {
    match pred {
        Predicate::Compare { lhs: AttrExpr::Event { code, window }, op, rhs } => {
            let want = resolve(rhs, bindings)?;
            let want = want.as_bool().ok_or_else(|| {
                EvalError::TypeMismatch(format!("event flag `{code}` compared with {want}"))
            })?;
            let have = event_present(p, code, window, bindings)?;
            match op {
                CmpOp::Eq => Ok(have == want),
                CmpOp::Ne => Ok(have != want),
                other => Err(EvalError::TypeMismatch(format!(
                    "event flag `{code}` used with `{}`",
                    other.as_str()
                ))),
            }
        }
        Predicate::Compare { lhs, op, rhs } => {
            let want = number(rhs, bindings, &lhs.label())?;
            Ok(attribute_value(p, lhs, bindings)?.is_some_and(|v| op.apply(v, want)))
        }
        Predicate::And { items } => {
            for item in items {
                if !evaluate_predicate(item, p, bindings)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        Predicate::Or { items } => {
            for item in items {
                if evaluate_predicate(item, p, bindings)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        Predicate::Not { item } => Ok(!evaluate_predicate(item, p, bindings)?),
        Predicate::AtLeast { k, items } => {
            let mut hits = 0;
            for item in items {
                if evaluate_predicate(item, p, bindings)? {
                    hits += 1;
                    if hits >= *k {
                        return Ok(true);
                    }
                }
            }
            Ok(false)
        }
        Predicate::HasEvent { code, window } => event_present(p, code, window, bindings),
    }
}

/// Eligible patients pass every inclusion and no exclusion; the intervention
/// predicate then splits them into treatment and control.
pub fn eligibility(p: &PatientRecord, spec: &CriterionSpec, bindings: &Bindings) -> Result<Eligibility, EvalError> {
    for c in &spec.inclusions {
        if !evaluate_predicate(&c.predicate, p, bindings)? {
            return Ok(Eligibility::Ineligible);
        }
    }
    for c in &spec.exclusions {
        if evaluate_predicate(&c.predicate, p, bindings)? {
            return Ok(Eligibility::Ineligible);
        }
    }
    Ok(if evaluate_predicate(&spec.intervention, p, bindings)? {
        Eligibility::Treatment
    } else {
        Eligibility::Control
    })
}
