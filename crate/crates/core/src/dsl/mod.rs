//! Criteria language: AST, parser, printer and evaluation.
//!
//! A spec is a list of statements:
//!
//! ```text
//! INTERVENTION: has_event("hydrocortisone")
//! INCLUDE adult: age >= $age_min
//! INCLUDE vent: mechanical_ventilation = $vent
//! EXCLUDE surgery: has_event("cardiac_surgery") within_last $months months
//! ADJUST $age_min IN {18, 60, 65}
//! ADJUST $vent IN {true, false}
//! ADJUST $months IN {0, 3, 6, 12} months
//! ```
//!
//! Precedence is `NOT` > `AND` > `OR`. A bare identifier that is not a numeric
//! attribute is shorthand for `has_event("<ident>") during_stay`.

mod eval;
mod lexer;
mod parser;
mod print;

pub use eval::{eligibility, evaluate_predicate, Eligibility, EvalError};
pub use parser::parse_spec;
pub use print::{serialize_predicate, serialize_spec};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// A literal value: number or boolean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Number(f64),
}

impl Literal {
    pub fn as_number(self) -> Option<f64> {
        match self {
            Literal::Number(x) => Some(x),
            Literal::Bool(_) => None,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Literal::Bool(b) => Some(b),
            Literal::Number(_) => None,
        }
    }

    /// Booleans map to 0/1; used for matrix representatives.
    pub fn numeric_value(self) -> f64 {
        match self {
            Literal::Number(x) => x,
            Literal::Bool(b) => f64::from(u8::from(b)),
        }
    }

    pub fn type_name(self) -> &'static str {
        match self {
            Literal::Number(_) => "number",
            Literal::Bool(_) => "boolean",
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Number(x) => write!(f, "{x}"),
        }
    }
}

/// Parameter bindings of one candidate.
pub type Bindings = BTreeMap<String, Literal>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueExpr {
    Literal { value: Literal },
    Param { name: String },
}

impl ValueExpr {
    pub fn num(x: f64) -> Self {
        ValueExpr::Literal { value: Literal::Number(x) }
    }

    pub fn param(name: &str) -> Self {
        ValueExpr::Param { name: name.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Hours,
    Days,
    Months,
}

impl TimeUnit {
    /// A month is taken as 30 days.
    pub fn hours(self) -> f64 {
        match self {
            TimeUnit::Hours => 1.0,
            TimeUnit::Days => 24.0,
            TimeUnit::Months => 30.0 * 24.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeUnit::Hours => "hours",
            TimeUnit::Days => "days",
            TimeUnit::Months => "months",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "hour" | "hours" => Some(TimeUnit::Hours),
            "day" | "days" => Some(TimeUnit::Days),
            "month" | "months" => Some(TimeUnit::Months),
            _ => None,
        }
    }
}

/// Time restriction on events or lab points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    /// At or after admission.
    DuringStay,
    /// Before admission, no earlier than `amount` before it.
    WithinLast { amount: ValueExpr, unit: TimeUnit },
    /// From admission up to `amount` after it.
    WithinFirst { amount: ValueExpr, unit: TimeUnit },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFn {
    Min,
    Max,
    Count,
    Mean,
}

impl AggFn {
    pub fn as_str(self) -> &'static str {
        match self {
            AggFn::Min => "min",
            AggFn::Max => "max",
            AggFn::Count => "count",
            AggFn::Mean => "mean",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "min" => Some(AggFn::Min),
            "max" => Some(AggFn::Max),
            "count" => Some(AggFn::Count),
            "mean" => Some(AggFn::Mean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttrExpr {
    /// A numeric patient attribute such as `age` or `bmi`.
    Attr { name: String },
    /// Aggregate over one lab indicator.
    Aggregate { func: AggFn, indicator: String, window: Option<Window> },
    /// Boolean: whether a matching event exists.
    Event { code: String, window: Option<Window> },
}

impl AttrExpr {
    /// Short name used to derive adjustable roles.
    pub fn label(&self) -> String {
        match self {
            AttrExpr::Attr { name } => name.clone(),
            AttrExpr::Aggregate { func, indicator, .. } => format!("{}({indicator})", func.as_str()),
            AttrExpr::Event { code, .. } => code.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    pub fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    Compare { lhs: AttrExpr, op: CmpOp, rhs: ValueExpr },
    And { items: Vec<Predicate> },
    Or { items: Vec<Predicate> },
    Not { item: Box<Predicate> },
    AtLeast { k: usize, items: Vec<Predicate> },
    HasEvent { code: String, window: Option<Window> },
}

impl Predicate {
    pub fn compare(lhs: AttrExpr, op: CmpOp, rhs: ValueExpr) -> Self {
        Predicate::Compare { lhs, op, rhs }
    }

    pub fn attr(name: &str, op: CmpOp, rhs: ValueExpr) -> Self {
        Predicate::Compare { lhs: AttrExpr::Attr { name: name.to_string() }, op, rhs }
    }

    pub fn has_event(code: &str, window: Option<Window>) -> Self {
        Predicate::HasEvent { code: code.to_string(), window }
    }

    /// Visits every value expression in the tree, in source order.
    pub fn for_each_value<'a>(&'a self, f: &mut impl FnMut(ValueUse<'a>)) {
        fn window<'a>(w: &'a Option<Window>, ctx: &'a str, f: &mut impl FnMut(ValueUse<'a>)) {
            if let Some(Window::WithinLast { amount, .. } | Window::WithinFirst { amount, .. }) = w {
                f(ValueUse::WindowAmount { expr: amount, target: ctx });
            }
        }
        match self {
            Predicate::Compare { lhs, op, rhs } => {
                match lhs {
                    AttrExpr::Aggregate { window: w, indicator, .. } => window(w, indicator, f),
                    AttrExpr::Event { window: w, code } => window(w, code, f),
                    AttrExpr::Attr { .. } => {}
                }
                f(ValueUse::Compare { lhs, op: *op, expr: rhs });
            }
            Predicate::And { items } | Predicate::Or { items } | Predicate::AtLeast { items, .. } => {
                for p in items {
                    p.for_each_value(f);
                }
            }
            Predicate::Not { item } => item.for_each_value(f),
            Predicate::HasEvent { code, window: w } => window(w, code, f),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each_value(&mut |u| {
            if let ValueExpr::Param { name } = u.expr() {
                out.push(name.clone());
            }
        });
        out
    }
}

/// A place a value expression occurs, with the context needed to type it.
#[derive(Debug, Clone, Copy)]
pub enum ValueUse<'a> {
    Compare { lhs: &'a AttrExpr, op: CmpOp, expr: &'a ValueExpr },
    WindowAmount { expr: &'a ValueExpr, target: &'a str },
}

impl<'a> ValueUse<'a> {
    pub fn expr(&self) -> &'a ValueExpr {
        match self {
            ValueUse::Compare { expr, .. } | ValueUse::WindowAmount { expr, .. } => expr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Inclusion,
    Exclusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub label: String,
    pub predicate: Predicate,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustableParam {
    pub name: String,
    /// Slider tick order, as written.
    pub values: Vec<Literal>,
    /// Derived from the first use, e.g. `age.min`, `max(SOFA).max`, `cardiac_surgery.window`.
    pub role: String,
    pub unit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSpec {
    pub intervention: Predicate,
    pub inclusions: Vec<Criterion>,
    pub exclusions: Vec<Criterion>,
    pub adjustables: Vec<AdjustableParam>,
}

impl CriterionSpec {
    pub fn adjustable(&self, name: &str) -> Option<&AdjustableParam> {
        self.adjustables.iter().find(|a| a.name == name)
    }

    pub fn criteria(&self) -> impl Iterator<Item = &Criterion> {
        self.inclusions.iter().chain(self.exclusions.iter())
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serialize_spec(self).as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecErrorKind {
    Syntax,
    UnboundParam,
    UnusedParam,
    DuplicateLabel,
    DuplicateParam,
    EmptyValueSet,
    DuplicateValue,
    TypeMismatch,
    UnknownAttribute,
    InvalidCount,
    MissingIntervention,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{position}: {message}")]
pub struct SpecError {
    pub kind: SpecErrorKind,
    pub position: Position,
    pub message: String,
}

impl SpecError {
    pub(crate) fn new(kind: SpecErrorKind, position: Position, message: impl Into<String>) -> Self {
        Self { kind, position, message: message.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ast_json_is_tagged() {
        let p = Predicate::attr("age", CmpOp::Ge, ValueExpr::param("age_min"));
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["type"], "compare");
        assert_eq!(v["op"], ">=");
        assert_eq!(v["lhs"]["kind"], "attr");
        assert_eq!(v["rhs"]["name"], "age_min");
        let back: Predicate = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn month_is_thirty_days() {
        assert_eq!(TimeUnit::Months.hours() * 6.0, 4320.0);
    }
}
