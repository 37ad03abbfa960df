use std::collections::{BTreeMap, HashSet};

use super::lexer::{tokenize, Tok, Token};
use super::{
    AdjustableParam, AggFn, AttrExpr, CmpOp, Criterion, CriterionSpec, Literal, Polarity,
    Position, Predicate, SpecError, SpecErrorKind, TimeUnit, ValueExpr, ValueUse, Window,
};
use crate::ehr::NUMERIC_ATTRIBUTES;

const STATEMENT_KEYWORDS: [&str; 4] = ["INTERVENTION", "INCLUDE", "EXCLUDE", "ADJUST"];

struct Parser {
    toks: Vec<Token>,
    at: usize,
    /// Every `$name` occurrence inside predicates.
    param_uses: Vec<(String, Position)>,
    /// Position of every value expression, in source order.
    value_pos: Vec<Position>,
}

struct RawAdjust {
    name: String,
    values: Vec<(Literal, Position)>,
    unit: Option<String>,
    pos: Position,
}

fn syntax(pos: Position, msg: impl Into<String>) -> SpecError {
    SpecError::new(SpecErrorKind::Syntax, pos, msg)
}

fn is_keyword(s: &str, kw: &str) -> bool {
    s == kw || (matches!(kw, "AND" | "OR" | "NOT") && s.eq_ignore_ascii_case(kw))
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.at + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn pos(&self) -> Position {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<Position, SpecError> {
        if *self.peek() == want {
            Ok(self.bump().pos)
        } else {
            Err(syntax(
                self.pos(),
                format!("expected {}, found {}", want.describe(), self.peek().describe()),
            ))
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if is_keyword(s, kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.peek_keyword(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SpecError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected `{kw}`, found {}", self.peek().describe())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Position), SpecError> {
        match self.peek().clone() {
            Tok::Ident(s) => Ok((s, self.bump().pos)),
            other => Err(syntax(self.pos(), format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn pred(&mut self) -> Result<Predicate, SpecError> {
        let first = self.and_expr()?;
        if !self.peek_keyword("OR") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_keyword("OR") {
            items.push(self.and_expr()?);
        }
        Ok(Predicate::Or { items })
    }

    fn and_expr(&mut self) -> Result<Predicate, SpecError> {
        let first = self.not_expr()?;
        if !self.peek_keyword("AND") {
            return Ok(first);
        }
        let mut items = vec![first];
        while self.eat_keyword("AND") {
            items.push(self.not_expr()?);
        }
        Ok(Predicate::And { items })
    }

    fn not_expr(&mut self) -> Result<Predicate, SpecError> {
        if self.eat_keyword("NOT") {
            return Ok(Predicate::Not { item: Box::new(self.not_expr()?) });
        }
        self.atom()
    }

    fn value(&mut self) -> Result<ValueExpr, SpecError> {
        let pos = self.pos();
        self.value_pos.push(pos);
        match self.peek().clone() {
            Tok::Param(name) => {
                self.bump();
                self.param_uses.push((name.clone(), pos));
                Ok(ValueExpr::Param { name })
            }
            _ => Ok(ValueExpr::Literal { value: self.literal()?.0 }),
        }
    }

    fn literal(&mut self) -> Result<(Literal, Position), SpecError> {
        let pos = self.pos();
        let lit = match self.peek() {
            Tok::Number(x) => Literal::Number(*x),
            Tok::Ident(s) if s == "true" => Literal::Bool(true),
            Tok::Ident(s) if s == "false" => Literal::Bool(false),
            other => return Err(syntax(pos, format!("expected a value, found {}", other.describe()))),
        };
        self.bump();
        Ok((lit, pos))
    }

    fn time_unit(&mut self) -> Result<TimeUnit, SpecError> {
        let (s, pos) = self.ident("a time unit")?;
        TimeUnit::parse(&s)
            .ok_or_else(|| syntax(pos, format!("expected hours, days or months, found `{s}`")))
    }

    fn window(&mut self, allow_last: bool) -> Result<Option<Window>, SpecError> {
        let pos = self.pos();
        if self.eat_keyword("during_stay") {
            return Ok(Some(Window::DuringStay));
        }
        if self.eat_keyword("within_last") {
            if !allow_last {
                return Err(syntax(pos, "within_last applies to events, not lab aggregates"));
            }
            let amount = self.value()?;
            let unit = self.time_unit()?;
            return Ok(Some(Window::WithinLast { amount, unit }));
        }
        if self.eat_keyword("within_first") {
            let amount = self.value()?;
            let unit = self.time_unit()?;
            return Ok(Some(Window::WithinFirst { amount, unit }));
        }
        Ok(None)
    }

    fn op(&mut self) -> Option<CmpOp> {
        if let Tok::Op(op) = *self.peek() {
            self.bump();
            Some(op)
        } else {
            None
        }
    }

    fn atom(&mut self) -> Result<Predicate, SpecError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let p = self.pred()?;
                self.expect(Tok::RParen)?;
                Ok(p)
            }
            Tok::Ident(s) if s == "at_least" => {
                self.bump();
                let k_pos = self.pos();
                let k = match self.bump().tok {
                    Tok::Number(x) if x.fract() == 0.0 && x >= 0.0 => x as usize,
                    other => {
                        return Err(syntax(k_pos, format!("expected a count, found {}", other.describe())))
                    }
                };
                self.expect_keyword("of")?;
                self.expect(Tok::LBracket)?;
                let mut items = vec![self.pred()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    items.push(self.pred()?);
                }
                self.expect(Tok::RBracket)?;
                if k == 0 || k > items.len() {
                    return Err(SpecError::new(
                        SpecErrorKind::InvalidCount,
                        k_pos,
                        format!("at_least {k} needs 1 <= k <= {}", items.len()),
                    ));
                }
                Ok(Predicate::AtLeast { k, items })
            }
            Tok::Ident(s) if s == "has_event" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let code = match self.bump().tok {
                    Tok::Str(c) => c,
                    other => return Err(syntax(pos, format!("expected event code string, found {}", other.describe()))),
                };
                self.expect(Tok::RParen)?;
                let window = self.window(true)?;
                match self.op() {
                    Some(op) => {
                        let rhs = self.value()?;
                        Ok(Predicate::Compare { lhs: AttrExpr::Event { code, window }, op, rhs })
                    }
                    None => Ok(Predicate::HasEvent { code, window }),
                }
            }
            Tok::Ident(s) if AggFn::parse(&s).is_some() && *self.peek_at(1) == Tok::LParen => {
                self.bump();
                let func = AggFn::parse(&s).expect("checked");
                self.expect(Tok::LParen)?;
                let (indicator, _) = self.ident("a lab indicator")?;
                self.expect(Tok::RParen)?;
                let window = self.window(false)?;
                let op = self.op().ok_or_else(|| {
                    syntax(self.pos(), format!("expected comparison after {s}({indicator})"))
                })?;
                let rhs = self.value()?;
                Ok(Predicate::Compare { lhs: AttrExpr::Aggregate { func, indicator, window }, op, rhs })
            }
            Tok::Ident(s)
                if !STATEMENT_KEYWORDS.contains(&s.as_str())
                    && !["AND", "OR", "NOT", "true", "false"].iter().any(|k| is_keyword(&s, k)) =>
            {
                self.bump();
                let numeric = NUMERIC_ATTRIBUTES.contains(&s.as_str());
                match self.op() {
                    Some(op) => {
                        let rhs = self.value()?;
                        if numeric {
                            return Ok(Predicate::attr(&s, op, rhs));
                        }
                        // Unknown names are event flags, which only compare with booleans.
                        let boolean_rhs = match &rhs {
                            ValueExpr::Literal { value } => value.as_bool().is_some(),
                            ValueExpr::Param { .. } => true,
                        };
                        if op.is_ordering() || !boolean_rhs {
                            return Err(SpecError::new(
                                SpecErrorKind::UnknownAttribute,
                                pos,
                                format!("unknown attribute `{s}` (numeric attributes: {})", NUMERIC_ATTRIBUTES.join(", ")),
                            ));
                        }
                        Ok(Predicate::Compare {
                            lhs: AttrExpr::Event { code: s, window: Some(Window::DuringStay) },
                            op,
                            rhs,
                        })
                    }
                    None if numeric => {
                        Err(syntax(self.pos(), format!("expected comparison after `{s}`")))
                    }
                    None => Ok(Predicate::HasEvent { code: s, window: Some(Window::DuringStay) }),
                }
            }
            other => Err(syntax(pos, format!("expected a predicate, found {}", other.describe()))),
        }
    }

    fn label(&mut self) -> Result<(String, Position), SpecError> {
        let pos = self.pos();
        match self.bump().tok {
            Tok::Ident(s) if !STATEMENT_KEYWORDS.contains(&s.as_str()) => Ok((s, pos)),
            Tok::Str(s) if !s.is_empty() => Ok((s, pos)),
            other => Err(syntax(pos, format!("expected a criterion label, found {}", other.describe()))),
        }
    }

    fn adjust(&mut self, pos: Position) -> Result<RawAdjust, SpecError> {
        let name = match self.bump().tok {
            Tok::Param(n) => n,
            other => return Err(syntax(pos, format!("expected `$name` after ADJUST, found {}", other.describe()))),
        };
        self.expect_keyword("IN")?;
        let brace = self.expect(Tok::LBrace)?;
        let mut values = Vec::new();
        if *self.peek() == Tok::RBrace {
            return Err(SpecError::new(
                SpecErrorKind::EmptyValueSet,
                brace,
                format!("empty value set for `${name}`"),
            ));
        }
        values.push(self.literal()?);
        while *self.peek() == Tok::Comma {
            self.bump();
            values.push(self.literal()?);
        }
        self.expect(Tok::RBrace)?;
        let unit = match self.peek() {
            Tok::Ident(s) if !STATEMENT_KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Some(s)
            }
            _ => None,
        };
        Ok(RawAdjust { name, values, unit, pos })
    }
}

/// Parses spec text and checks every static rule: bound parameters, unique
/// labels, non-empty distinct value sets, and value types per use site.
pub fn parse_spec(text: &str) -> Result<CriterionSpec, SpecError> {
    let mut p = Parser { toks: tokenize(text)?, at: 0, param_uses: Vec::new(), value_pos: Vec::new() };
    let mut intervention: Option<Predicate> = None;
    let mut inclusions = Vec::new();
    let mut exclusions = Vec::new();
    let mut raw_adjusts: Vec<RawAdjust> = Vec::new();
    let mut labels: HashSet<String> = HashSet::new();

    loop {
        let pos = p.pos();
        let tok = p.peek().clone();
        match tok {
            Tok::Eof => break,
            Tok::Ident(kw) if kw == "INTERVENTION" => {
                p.bump();
                p.expect(Tok::Colon)?;
                if intervention.is_some() {
                    return Err(syntax(pos, "INTERVENTION given more than once"));
                }
                intervention = Some(p.pred()?);
            }
            Tok::Ident(kw) if kw == "INCLUDE" || kw == "EXCLUDE" => {
                p.bump();
                let (label, lpos) = p.label()?;
                p.expect(Tok::Colon)?;
                if !labels.insert(label.clone()) {
                    return Err(SpecError::new(
                        SpecErrorKind::DuplicateLabel,
                        lpos,
                        format!("duplicate criterion label `{label}`"),
                    ));
                }
                let predicate = p.pred()?;
                let (polarity, list) = if kw == "INCLUDE" {
                    (Polarity::Inclusion, &mut inclusions)
                } else {
                    (Polarity::Exclusion, &mut exclusions)
                };
                list.push(Criterion { label, predicate, polarity });
            }
            Tok::Ident(kw) if kw == "ADJUST" => {
                p.bump();
                let adj = p.adjust(pos)?;
                if raw_adjusts.iter().any(|a| a.name == adj.name) {
                    return Err(SpecError::new(
                        SpecErrorKind::DuplicateParam,
                        pos,
                        format!("`${}` adjusted more than once", adj.name),
                    ));
                }
                raw_adjusts.push(adj);
            }
            other => {
                return Err(syntax(
                    pos,
                    format!("expected INTERVENTION, INCLUDE, EXCLUDE or ADJUST, found {}", other.describe()),
                ))
            }
        }
    }

    let intervention = intervention.ok_or_else(|| {
        SpecError::new(SpecErrorKind::MissingIntervention, p.pos(), "missing INTERVENTION statement")
    })?;

    for adj in &raw_adjusts {
        for (i, (v, vpos)) in adj.values.iter().enumerate() {
            if adj.values[..i].iter().any(|(w, _)| w == v) {
                return Err(SpecError::new(
                    SpecErrorKind::DuplicateValue,
                    *vpos,
                    format!("value {v} repeated in `${}`", adj.name),
                ));
            }
        }
    }
    for (name, pos) in &p.param_uses {
        if !raw_adjusts.iter().any(|a| &a.name == name) {
            return Err(SpecError::new(
                SpecErrorKind::UnboundParam,
                *pos,
                format!("unbound parameter `${name}`"),
            ));
        }
    }
    for adj in &raw_adjusts {
        if !p.param_uses.iter().any(|(n, _)| n == &adj.name) {
            return Err(SpecError::new(
                SpecErrorKind::UnusedParam,
                adj.pos,
                format!("`${}` is never referenced", adj.name),
            ));
        }
    }

    let values: BTreeMap<&str, &RawAdjust> = raw_adjusts.iter().map(|a| (a.name.as_str(), a)).collect();
    let mut roles: BTreeMap<String, String> = BTreeMap::new();
    let mut type_error: Option<SpecError> = None;
    let mut positions = p.value_pos.iter().copied();
    let preds = std::iter::once(&intervention)
        .chain(inclusions.iter().map(|c| &c.predicate))
        .chain(exclusions.iter().map(|c| &c.predicate));
    for pred in preds {
        pred.for_each_value(&mut |u| {
            let vpos = positions.next().unwrap_or(Position { line: 0, col: 0 });
            if type_error.is_some() {
                return;
            }
            let (expect_bool, role, what) = match u {
                ValueUse::Compare { lhs: lhs @ AttrExpr::Event { .. }, op, .. } => {
                    if op.is_ordering() {
                        type_error = Some(SpecError::new(
                            SpecErrorKind::TypeMismatch,
                            vpos,
                            format!("event flag `{}` supports only = and !=", lhs.label()),
                        ));
                        return;
                    }
                    (true, lhs.label(), "event flag")
                }
                ValueUse::Compare { lhs, op, .. } => {
                    let suffix = match op {
                        CmpOp::Gt | CmpOp::Ge => ".min",
                        CmpOp::Lt | CmpOp::Le => ".max",
                        CmpOp::Eq | CmpOp::Ne => "",
                    };
                    (false, format!("{}{suffix}", lhs.label()), "numeric comparison")
                }
                ValueUse::WindowAmount { target, .. } => (false, format!("{target}.window"), "window length"),
            };
            let bad = |lit: &Literal| {
                lit.as_bool().is_some() != expect_bool
                    || (what == "window length" && lit.as_number().is_some_and(|x| x < 0.0))
            };
            match u.expr() {
                ValueExpr::Literal { value } => {
                    if bad(value) {
                        type_error = Some(SpecError::new(
                            SpecErrorKind::TypeMismatch,
                            vpos,
                            format!("{} literal {value} in {what}", value.type_name()),
                        ));
                    }
                }
                ValueExpr::Param { name } => {
                    roles.entry(name.clone()).or_insert(role);
                    if let Some(adj) = values.get(name.as_str()) {
                        if let Some((v, vpos)) = adj.values.iter().find(|(v, _)| bad(v)) {
                            type_error = Some(SpecError::new(
                                SpecErrorKind::TypeMismatch,
                                *vpos,
                                format!(
                                    "`${name}` takes {} value {v} but is used in a {what}",
                                    v.type_name()
                                ),
                            ));
                        }
                    }
                }
            }
        });
    }
    if let Some(e) = type_error {
        return Err(e);
    }

    let adjustables = raw_adjusts
        .into_iter()
        .map(|a| AdjustableParam {
            role: roles.get(&a.name).cloned().unwrap_or_else(|| a.name.clone()),
            name: a.name,
            values: a.values.into_iter().map(|(v, _)| v).collect(),
            unit: a.unit,
        })
        .collect();
    Ok(CriterionSpec { intervention, inclusions, exclusions, adjustables })
}
