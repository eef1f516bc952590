//! Proof-script format.
//!
//! A script names its stream system, states the theorems to prove, binds
//! pair sets for later reference, and lists one rule application per line
//! between `proof` and `qed`:
//!
//! ```text
//! system "fig1.strm"
//! theorem eutt s0 t0
//! let X1 = { (s0', t0'), (s1', t1') }
//! proof
//!   init            # or: init euttg
//!   acc X0
//!   step
//!   vis
//!   ...
//! qed
//! ```
//!
//! Rules that rewrite the subject towards chosen target pairs take them
//! with `with <Name>` or `with { (a, b), ... }`; stripping one internal
//! step on the left (`closure tauL`) and the concat rule have canonical
//! argument-free forms.

use crate::kernel::Lane;
use crate::streams::{parse_expr, ParseError, StreamExpr, Token, Tokenizer};

#[derive(Debug, Clone)]
pub enum SetRef {
    Name(String),
    Literal(Vec<(StreamExpr, StreamExpr)>),
}

#[derive(Debug, Clone)]
pub enum ScriptRule {
    Init(Lane),
    Final,
    Base,
    Acc(String),
    Step,
    TauStep,
    BetaStep,
    Ret,
    TauLeft,
    TauRight,
    Vis,
    Closure { name: String, with: Option<SetRef> },
    TransD { with: SetRef },
    TransU { with: SetRef },
    ConcatC { with: Option<SetRef> },
    Split(Vec<String>),
    Done,
}

#[derive(Debug, Clone)]
pub struct ScriptStep {
    pub line: usize,
    pub rule: ScriptRule,
}

#[derive(Debug, Clone, Default)]
pub struct Script {
    pub system_path: Option<String>,
    pub theorems: Vec<(StreamExpr, StreamExpr)>,
    pub lets: Vec<(String, Vec<(StreamExpr, StreamExpr)>)>,
    pub steps: Vec<ScriptStep>,
}

impl Script {
    /// Every expression the script mentions; these are interned as extra
    /// universe roots.
    pub fn mentioned_exprs(&self) -> Vec<StreamExpr> {
        let mut out = Vec::new();
        for (a, b) in &self.theorems {
            out.push(a.clone());
            out.push(b.clone());
        }
        for (_, pairs) in &self.lets {
            for (a, b) in pairs {
                out.push(a.clone());
                out.push(b.clone());
            }
        }
        for step in &self.steps {
            let with = match &step.rule {
                ScriptRule::Closure { with, .. } | ScriptRule::ConcatC { with } => with.as_ref(),
                ScriptRule::TransD { with } | ScriptRule::TransU { with } => Some(with),
                _ => None,
            };
            if let Some(SetRef::Literal(pairs)) = with {
                for (a, b) in pairs {
                    out.push(a.clone());
                    out.push(b.clone());
                }
            }
        }
        out
    }

    /// Closure names the universe must be saturated for.
    pub fn needs_concat_closure(&self) -> bool {
        self.steps.iter().any(|s| {
            matches!(&s.rule, ScriptRule::ConcatC { .. })
                || matches!(&s.rule, ScriptRule::Closure { name, .. } if name == "concat" || name == "prefix")
        })
    }
}

fn parse_pair_set(tz: &mut Tokenizer) -> Result<Vec<(StreamExpr, StreamExpr)>, ParseError> {
    tz.expect_punct("{")?;
    let mut pairs = Vec::new();
    loop {
        tz.skip_newlines()?;
        match tz.peek()? {
            Token::Punct("}") => {
                tz.next()?;
                return Ok(pairs);
            }
            Token::Punct("(") => {
                tz.next()?;
                let a = parse_expr(tz)?;
                tz.expect_punct(",")?;
                let b = parse_expr(tz)?;
                tz.expect_punct(")")?;
                if tz.peek()? == Token::Punct(",") {
                    tz.next()?;
                }
                pairs.push((a, b));
            }
            other => return Err(tz.err(format!("expected pair or `}}`, found {other:?}"))),
        }
    }
}

fn parse_set_ref(tz: &mut Tokenizer) -> Result<SetRef, ParseError> {
    match tz.peek()? {
        Token::Punct("{") => Ok(SetRef::Literal(parse_pair_set(tz)?)),
        Token::Ident(_) => Ok(SetRef::Name(tz.expect_ident()?)),
        other => Err(tz.err(format!("expected set name or literal, found {other:?}"))),
    }
}

fn parse_opt_with(tz: &mut Tokenizer) -> Result<Option<SetRef>, ParseError> {
    if tz.peek()? == Token::Ident("with".into()) {
        tz.next()?;
        Ok(Some(parse_set_ref(tz)?))
    } else {
        Ok(None)
    }
}

fn end_of_line(tz: &mut Tokenizer) -> Result<(), ParseError> {
    match tz.next()? {
        Token::Newline | Token::Eof => Ok(()),
        other => Err(tz.err(format!("trailing input {other:?}"))),
    }
}

fn parse_step(tz: &mut Tokenizer, keyword: &str) -> Result<ScriptRule, ParseError> {
    let rule = match keyword {
        "init" => {
            if tz.peek()? == Token::Ident("euttg".into()) {
                tz.next()?;
                ScriptRule::Init(Lane::Euttg)
            } else {
                ScriptRule::Init(Lane::Gpaco)
            }
        }
        "final" => ScriptRule::Final,
        "base" => ScriptRule::Base,
        "acc" => ScriptRule::Acc(tz.expect_ident()?),
        "step" => ScriptRule::Step,
        "tau_step" => ScriptRule::TauStep,
        "beta_step" => ScriptRule::BetaStep,
        "ret" => ScriptRule::Ret,
        "tau_left" => ScriptRule::TauLeft,
        "tau_right" => ScriptRule::TauRight,
        "vis" => ScriptRule::Vis,
        "closure" => ScriptRule::Closure {
            name: tz.expect_ident()?,
            with: parse_opt_with(tz)?,
        },
        "transD" => ScriptRule::TransD {
            with: required_with(tz, "transD")?,
        },
        "transU" => ScriptRule::TransU {
            with: required_with(tz, "transU")?,
        },
        "concatC" => ScriptRule::ConcatC {
            with: parse_opt_with(tz)?,
        },
        "split" => {
            let mut names = vec![tz.expect_ident()?];
            while let Token::Ident(_) = tz.peek()? {
                names.push(tz.expect_ident()?);
            }
            ScriptRule::Split(names)
        }
        "done" => ScriptRule::Done,
        other => return Err(tz.err(format!("unknown rule `{other}`"))),
    };
    end_of_line(tz)?;
    Ok(rule)
}

fn required_with(tz: &mut Tokenizer, rule: &str) -> Result<SetRef, ParseError> {
    parse_opt_with(tz)?.ok_or_else(|| tz.err(format!("`{rule}` needs `with <pairs>`")))
}

pub fn parse_script(text: &str) -> Result<Script, ParseError> {
    let mut tz = Tokenizer::new(text);
    let mut script = Script::default();
    loop {
        tz.skip_newlines()?;
        match tz.next()? {
            Token::Eof => break,
            Token::Ident(kw) if kw == "system" => {
                match tz.next()? {
                    Token::Str(path) => script.system_path = Some(path),
                    other => return Err(tz.err(format!("expected quoted path, found {other:?}"))),
                }
                end_of_line(&mut tz)?;
            }
            Token::Ident(kw) if kw == "theorem" => {
                match tz.next()? {
                    Token::Ident(k) if k == "eutt" => {}
                    other => return Err(tz.err(format!("expected `eutt`, found {other:?}"))),
                }
                let a = parse_expr(&mut tz)?;
                let b = parse_expr(&mut tz)?;
                script.theorems.push((a, b));
                end_of_line(&mut tz)?;
            }
            Token::Ident(kw) if kw == "let" => {
                let name = tz.expect_ident()?;
                tz.expect_punct("=")?;
                let pairs = parse_pair_set(&mut tz)?;
                script.lets.push((name, pairs));
                end_of_line(&mut tz)?;
            }
            Token::Ident(kw) if kw == "proof" => {
                end_of_line(&mut tz)?;
                loop {
                    tz.skip_newlines()?;
                    let line = tz.line;
                    match tz.next()? {
                        Token::Ident(k) if k == "qed" => break,
                        Token::Ident(k) => {
                            let rule = parse_step(&mut tz, &k)?;
                            script.steps.push(ScriptStep { line, rule });
                        }
                        other => {
                            return Err(tz.err(format!("expected rule or `qed`, found {other:?}")))
                        }
                    }
                }
            }
            other => {
                return Err(tz.err(format!(
                    "expected `system`, `theorem`, `let` or `proof`, found {other:?}"
                )))
            }
        }
    }
    if script.theorems.is_empty() {
        return Err(ParseError::Syntax {
            line: 1,
            col: 1,
            msg: "script states no theorem".into(),
        });
    }
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_improved_proof_script() {
        let text = "\
system \"fig1.strm\"
theorem eutt s0 t0
theorem eutt s1 t1
let RHS = { (s1', t1') }
proof
  init
  acc X0
  step
  vis
qed
";
        let script = parse_script(text).unwrap();
        assert_eq!(script.system_path.as_deref(), Some("fig1.strm"));
        assert_eq!(script.theorems.len(), 2);
        assert_eq!(script.lets.len(), 1);
        assert_eq!(script.steps.len(), 4);
    }

    #[test]
    fn parses_with_clauses_and_literals() {
        let text = "\
theorem eutt a b
proof
  transU with { (r ++ s1, rq ++ t1) }
  closure strong with RS
  concatC
qed
";
        let script = parse_script(text).unwrap();
        assert!(matches!(
            &script.steps[0].rule,
            ScriptRule::TransU {
                with: SetRef::Literal(pairs)
            } if pairs.len() == 1
        ));
        assert!(matches!(
            &script.steps[1].rule,
            ScriptRule::Closure { name, with: Some(SetRef::Name(n)) } if name == "strong" && n == "RS"
        ));
        assert!(script.needs_concat_closure());
    }

    #[test]
    fn missing_theorem_is_an_error() {
        assert!(parse_script("proof\nqed\n").is_err());
    }

    #[test]
    fn trans_u_requires_targets() {
        let err = parse_script("theorem eutt a b\nproof\n  transU\nqed\n").unwrap_err();
        assert!(err.to_string().contains("with"), "{err}");
    }
}
