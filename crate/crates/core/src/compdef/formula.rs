//! Survival model formulas of the form
//! `Surv(time, event) ~ x1 + x2 + strata(site)`.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormulaError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("duplicate term {0:?}")]
    DuplicateTerm(String),
    #[error("{0:?} is used as both a response and a covariate")]
    ResponseReused(String),
    #[error("time and event variables must differ (both {0:?})")]
    SameResponse(String),
    #[error("formula has no covariates")]
    NoCovariates,
}

/// A parsed model formula. Equality compares the model, not the spelling.
#[derive(Debug, Clone, Eq, Serialize, Deserialize)]
pub struct ModelFormula {
    pub time_var: String,
    pub event_var: String,
    pub covariates: Vec<String>,
    /// `strata(..)` terms are accepted and recorded, but the site is always
    /// the stratum, so they play no further role.
    pub strata: Vec<String>,
    pub source_text: String,
}

impl PartialEq for ModelFormula {
    fn eq(&self, other: &Self) -> bool {
        self.time_var == other.time_var
            && self.event_var == other.event_var
            && self.covariates == other.covariates
            && self.strata == other.strata
    }
}

impl ModelFormula {
    pub fn render(&self) -> String {
        let mut terms: Vec<String> = self.covariates.clone();
        terms.extend(self.strata.iter().map(|s| format!("strata({s})")));
        format!("Surv({}, {}) ~ {}", self.time_var, self.event_var, terms.join(" + "))
    }

    /// Every column the formula reads from a data file, in formula order.
    pub fn columns(&self) -> Vec<&str> {
        let mut cols = vec![self.time_var.as_str(), self.event_var.as_str()];
        cols.extend(self.covariates.iter().map(String::as_str));
        cols
    }
}

impl fmt::Display for ModelFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl std::str::FromStr for ModelFormula {
    type Err = FormulaError;
    fn from_str(s: &str) -> Result<Self, FormulaError> {
        parse_formula(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Ident(&'a str),
    LParen,
    RParen,
    Comma,
    Tilde,
    Plus,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    /// Next token and its byte offset.
    fn next(&mut self) -> Result<(Tok<'a>, usize), FormulaError> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.src[start..].chars().next() else {
            return Ok((Tok::End, start));
        };
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '~' => Some(Tok::Tilde),
            '+' => Some(Tok::Plus),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            return Ok((t, start));
        }
        if c.is_ascii_alphabetic() {
            let len = self.src[start..]
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '.' || ch == '_'))
                .unwrap_or(self.src.len() - start);
            self.pos += len;
            return Ok((Tok::Ident(&self.src[start..start + len]), start));
        }
        Err(FormulaError::Syntax { offset: start, expected: format!("a name or punctuation, found {c:?}") })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<(Tok<'a>, usize)>,
}

impl<'a> Parser<'a> {
    fn peek(&mut self) -> Result<&(Tok<'a>, usize), FormulaError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next()?);
        }
        Ok(self.peeked.as_ref().expect("just filled"))
    }

    fn bump(&mut self) -> Result<(Tok<'a>, usize), FormulaError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next(),
        }
    }

    fn expect(&mut self, want: Tok<'static>, what: &str) -> Result<(), FormulaError> {
        let (tok, offset) = self.bump()?;
        if tok == want {
            Ok(())
        } else {
            Err(FormulaError::Syntax { offset, expected: what.into() })
        }
    }

    fn ident(&mut self, what: &str) -> Result<(&'a str, usize), FormulaError> {
        match self.bump()? {
            (Tok::Ident(name), offset) => Ok((name, offset)),
            (_, offset) => Err(FormulaError::Syntax { offset, expected: what.into() }),
        }
    }
}

pub fn parse_formula(text: &str) -> Result<ModelFormula, FormulaError> {
    let mut p = Parser { lexer: Lexer { src: text, pos: 0 }, peeked: None };
    let (head, offset) = p.ident("Surv(")?;
    if head != "Surv" {
        return Err(FormulaError::Syntax { offset, expected: "Surv(".into() });
    }
    p.expect(Tok::LParen, "'('")?;
    let (time_var, _) = p.ident("time variable name")?;
    p.expect(Tok::Comma, "','")?;
    let (event_var, _) = p.ident("event variable name")?;
    p.expect(Tok::RParen, "')'")?;
    p.expect(Tok::Tilde, "'~'")?;
    if time_var == event_var {
        return Err(FormulaError::SameResponse(time_var.into()));
    }

    let mut covariates: Vec<String> = Vec::new();
    let mut strata: Vec<String> = Vec::new();
    loop {
        let (name, _) = p.ident("a covariate or strata(name)")?;
        let is_strata = name == "strata" && matches!(p.peek()?.0, Tok::LParen);
        if is_strata {
            p.expect(Tok::LParen, "'('")?;
            let (inner, _) = p.ident("strata variable name")?;
            p.expect(Tok::RParen, "')'")?;
            if strata.iter().any(|s| s == inner) {
                return Err(FormulaError::DuplicateTerm(format!("strata({inner})")));
            }
            strata.push(inner.into());
        } else {
            if name == time_var || name == event_var {
                return Err(FormulaError::ResponseReused(name.into()));
            }
            if covariates.iter().any(|c| c == name) {
                return Err(FormulaError::DuplicateTerm(name.into()));
            }
            covariates.push(name.into());
        }
        match p.bump()? {
            (Tok::Plus, _) => continue,
            (Tok::End, _) => break,
            (_, offset) => return Err(FormulaError::Syntax { offset, expected: "'+' or end of formula".into() }),
        }
    }
    if covariates.is_empty() {
        return Err(FormulaError::NoCovariates);
    }
    Ok(ModelFormula {
        time_var: time_var.into(),
        event_var: event_var.into(),
        covariates,
        strata,
        source_text: text.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const UIS: &str =
        "Surv(time, censor) ~ age + becktota + ndrugfp1 + ndrugfp2 + ivhx3 + race + treat + strata(site)";

    #[test]
    fn parses_reference_formula() {
        let f = parse_formula(UIS).unwrap();
        assert_eq!((f.time_var.as_str(), f.event_var.as_str()), ("time", "censor"));
        assert_eq!(f.covariates, ["age", "becktota", "ndrugfp1", "ndrugfp2", "ivhx3", "race", "treat"]);
        assert_eq!(f.strata, ["site"]);
        let compact = parse_formula("Surv(time,censor)~age+becktota+ndrugfp1+ndrugfp2+ivhx3+race+treat").unwrap();
        assert_eq!(compact.covariates, f.covariates);
    }

    #[test]
    fn minimal_formula() {
        let f = parse_formula("Surv(t,d) ~ x").unwrap();
        assert_eq!(f.covariates, ["x"]);
        assert!(f.strata.is_empty());
    }

    #[test]
    fn rejects_bad_formulas() {
        assert_eq!(parse_formula("Surv(t,d) ~ x + x"), Err(FormulaError::DuplicateTerm("x".into())));
        assert_eq!(parse_formula("Surv(t,d) ~ x + t"), Err(FormulaError::ResponseReused("t".into())));
        assert_eq!(parse_formula("Surv(t,t) ~ x"), Err(FormulaError::SameResponse("t".into())));
        assert_eq!(parse_formula("Surv(t,d) ~ strata(s)"), Err(FormulaError::NoCovariates));
        assert!(matches!(parse_formula("Surv(t,d) ~ x +"), Err(FormulaError::Syntax { offset: 15, .. })));
        assert!(matches!(parse_formula("Surv(t d) ~ x"), Err(FormulaError::Syntax { offset: 7, .. })));
        assert!(matches!(parse_formula("Cox(t,d) ~ x"), Err(FormulaError::Syntax { offset: 0, .. })));
        assert!(matches!(parse_formula("Surv(t,d) ~ x * y"), Err(FormulaError::Syntax { offset: 14, .. })));
        assert!(matches!(parse_formula("Surv(t,d) ~ 2x"), Err(FormulaError::Syntax { offset: 12, .. })));
    }

    fn ident() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9._]{0,6}".prop_filter("reserved", |s| s != "strata")
    }

    proptest! {
        #[test]
        fn render_round_trips(
            names in prop::collection::btree_set(ident(), 3..8),
            n_strata in 0usize..2,
            pad in " {0,2}",
        ) {
            let names: Vec<String> = names.into_iter().collect();
            let (time, event) = (&names[0], &names[1]);
            let covs = &names[2..];
            let mut terms: Vec<String> = covs.to_vec();
            if n_strata == 1 {
                terms.push(format!("strata({pad}{}{pad})", names[0]));
            }
            let text = format!("Surv({pad}{time}{pad},{event}) ~{pad}{}", terms.join(&format!("{pad}+{pad}")));
            let parsed = parse_formula(&text).unwrap();
            let again = parse_formula(&parsed.render()).unwrap();
            prop_assert_eq!(&parsed, &again);
            prop_assert_eq!(parsed.render(), again.render());
        }
    }
}
