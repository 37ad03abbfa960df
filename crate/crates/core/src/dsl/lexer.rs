use super::{Position, SpecError, SpecErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Param(String),
    Str(String),
    Number(f64),
    Op(super::CmpOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Param(s) => format!("`${s}`"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Number(x) => format!("number {x}"),
            Tok::Op(op) => format!("`{}`", op.as_str()),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Position,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, SpecError> {
    use super::CmpOp::*;
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut end = Position { line: 1, col: 1 };
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let syntax = |pos: Position, msg: String| SpecError::new(SpecErrorKind::Syntax, pos, msg);

    while i < chars.len() {
        let c = chars[i];
        let pos = Position { line, col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let peek = chars.get(i + 1).copied();
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '≤' => Tok::Op(Le),
            '≥' => Tok::Op(Ge),
            '≠' => Tok::Op(Ne),
            '<' if peek == Some('=') => {
                i += 1;
                Tok::Op(Le)
            }
            '<' => Tok::Op(Lt),
            '>' if peek == Some('=') => {
                i += 1;
                Tok::Op(Ge)
            }
            '>' => Tok::Op(Gt),
            '=' if peek == Some('=') => {
                i += 1;
                Tok::Op(Eq)
            }
            '=' => Tok::Op(Eq),
            '!' if peek == Some('=') => {
                i += 1;
                Tok::Op(Ne)
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(syntax(pos, "unterminated string".into())),
                        Some('"') => break,
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some(&e @ ('"' | '\\')) => s.push(e),
                                Some('n') => s.push('\n'),
                                _ => return Err(syntax(pos, "bad escape in string".into())),
                            }
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                Tok::Str(s)
            }
            '$' => {
                let mut j = i + 1;
                if !chars.get(j).copied().is_some_and(is_ident_start) {
                    return Err(syntax(pos, "expected parameter name after `$`".into()));
                }
                while chars.get(j).copied().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                    j += 1;
                }
                let name: String = chars[i + 1..j].iter().collect();
                i = j - 1;
                Tok::Param(name)
            }
            c if c.is_ascii_digit() || (c == '-' && peek.is_some_and(|p| p.is_ascii_digit() || p == '.')) || (c == '.' && peek.is_some_and(|p| p.is_ascii_digit())) => {
                let mut j = i + 1;
                while j < chars.len() {
                    let d = chars[j];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[j - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let x: f64 = text
                    .parse()
                    .map_err(|_| syntax(pos, format!("invalid number `{text}`")))?;
                if !x.is_finite() {
                    return Err(syntax(pos, format!("number `{text}` out of range")));
                }
                i = j - 1;
                Tok::Number(x)
            }
            c if is_ident_start(c) => {
                let mut j = i + 1;
                while chars.get(j).copied().is_some_and(is_ident_char) {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                i = j - 1;
                Tok::Ident(s)
            }
            other => return Err(syntax(pos, format!("unexpected character `{other}`"))),
        };
        i += 1;
        col += i - start;
        out.push(Token { tok, pos });
        end = Position { line, col };
    }
    // End of input is reported just past the last token, not after trailing
    // blank lines.
    out.push(Token { tok: Tok::Eof, pos: end });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::CmpOp;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn operators_and_numbers() {
        assert_eq!(
            toks("age >= -3.5 ≤ != $x"),
            vec![
                Tok::Ident("age".into()),
                Tok::Op(CmpOp::Ge),
                Tok::Number(-3.5),
                Tok::Op(CmpOp::Le),
                Tok::Op(CmpOp::Ne),
                Tok::Param("x".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn positions_track_lines() {
        let t = tokenize("# c\n  INCLUDE a:\nage").unwrap();
        assert_eq!(t[0].pos, Position { line: 2, col: 3 });
        assert_eq!(t[3].pos, Position { line: 3, col: 1 });
    }

    #[test]
    fn strings_with_escapes() {
        assert_eq!(toks(r#""a\"b""#), vec![Tok::Str("a\"b".into()), Tok::Eof]);
        assert!(tokenize("\"open").is_err());
    }
}
