use std::fmt::Write;

use super::{AttrExpr, CriterionSpec, Predicate, ValueExpr, Window};

fn value(v: &ValueExpr) -> String {
    match v {
        ValueExpr::Literal { value } => value.to_string(),
        ValueExpr::Param { name } => format!("${name}"),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn window(w: &Option<Window>) -> String {
    match w {
        None => String::new(),
        Some(Window::DuringStay) => " during_stay".into(),
        Some(Window::WithinLast { amount, unit }) => format!(" within_last {} {}", value(amount), unit.as_str()),
        Some(Window::WithinFirst { amount, unit }) => format!(" within_first {} {}", value(amount), unit.as_str()),
    }
}

fn attr(a: &AttrExpr) -> String {
    match a {
        AttrExpr::Attr { name } => name.clone(),
        AttrExpr::Aggregate { func, indicator, window: w } => {
            format!("{}({indicator}){}", func.as_str(), window(w))
        }
        AttrExpr::Event { code, window: w } => format!("has_event({}){}", quote(code), window(w)),
    }
}

fn write_pred(out: &mut String, p: &Predicate, nested: bool) {
    let compound = matches!(p, Predicate::And { .. } | Predicate::Or { .. });
    if nested && compound {
        out.push('(');
    }
    match p {
        Predicate::Compare { lhs, op, rhs } => {
            let _ = write!(out, "{} {} {}", attr(lhs), op.as_str(), value(rhs));
        }
        Predicate::And { items } | Predicate::Or { items } => {
            let sep = if matches!(p, Predicate::And { .. }) { " AND " } else { " OR " };
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                write_pred(out, item, true);
            }
        }
        Predicate::Not { item } => {
            out.push_str("NOT ");
            write_pred(out, item, true);
        }
        Predicate::AtLeast { k, items } => {
            let _ = write!(out, "at_least {k} of [");
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_pred(out, item, false);
            }
            out.push(']');
        }
        Predicate::HasEvent { code, window: w } => {
            let _ = write!(out, "has_event({}){}", quote(code), window(w));
        }
    }
    if nested && compound {
        out.push(')');
    }
}

pub fn serialize_predicate(p: &Predicate) -> String {
    let mut out = String::new();
    write_pred(&mut out, p, false);
    out
}

fn label(s: &str) -> String {
    let plain = s.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && !["INTERVENTION", "INCLUDE", "EXCLUDE", "ADJUST"].contains(&s);
    if plain {
        s.to_string()
    } else {
        quote(s)
    }
}

/// Canonical text form; parses back to a structurally equal spec.
pub fn serialize_spec(spec: &CriterionSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "INTERVENTION: {}", serialize_predicate(&spec.intervention));
    for c in &spec.inclusions {
        let _ = writeln!(out, "INCLUDE {}: {}", label(&c.label), serialize_predicate(&c.predicate));
    }
    for c in &spec.exclusions {
        let _ = writeln!(out, "EXCLUDE {}: {}", label(&c.label), serialize_predicate(&c.predicate));
    }
    for a in &spec.adjustables {
        let values: Vec<String> = a.values.iter().map(|v| v.to_string()).collect();
        let _ = write!(out, "ADJUST ${} IN {{{}}}", a.name, values.join(", "));
        if let Some(unit) = &a.unit {
            let _ = write!(out, " {unit}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_spec;
    use super::*;

    #[test]
    fn nested_groups_keep_structure() {
        let text = "INTERVENTION: has_event(\"x\")\nINCLUDE a: age > 1 AND (bmi < 2 AND weight = 3) OR NOT (age < 5 OR age > 90)\n";
        let spec = parse_spec(text).unwrap();
        let again = parse_spec(&serialize_spec(&spec)).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn odd_labels_are_quoted() {
        assert_eq!(label("age"), "age");
        assert_eq!(label("age limit"), "\"age limit\"");
        assert_eq!(label("INCLUDE"), "\"INCLUDE\"");
    }
}
