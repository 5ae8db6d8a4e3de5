//! Text format for scheduling trees.
//!
//! ```text
//! # two classes, the right one rate limited
//! domain flow_id 0..4
//! option line_rate 100
//!
//! node Root
//!   sched stfq
//!   weight Left 1
//!   weight Right 1
//!
//! node Left parent=Root
//!   match p.flow_id < 2
//!   sched stfq
//!
//! node Right parent=Root
//!   match p.flow_id >= 2
//!   sched stfq
//!   shaping tbf r=10 B=1500
//! ```
//!
//! `sched` and `shaping` name a library transaction, optionally followed by
//! `param=value` overrides, or give a transaction inline starting with the
//! `transaction` keyword and running until its braces balance. Directives
//! after a `node` line apply to that node; indentation is cosmetic. `domain`
//! ranges are half-open.

use std::fmt::Write as _;

use thiserror::Error;

use super::{validate_tree, FieldDomain, NodeSpec, SchedTree, TreeError, TreeSpec};
use crate::txn::{builtin, parse_predicate, parse_transaction, Decimal, ParseError, Predicate, Program, TxnLangError};

/// A transaction plus the text it was written as.
#[derive(Clone, Debug, PartialEq)]
pub struct TxnSpec {
    pub program: Program,
    pub text: String,
}

impl TxnSpec {
    /// Library transaction with parameter overrides, as in `tbf r=10 B=1500`.
    pub fn builtin(name: &str, params: &[(&str, Decimal)]) -> Result<Self, TxnLangError> {
        let program = builtin(name)?.with_params(params.iter().copied())?;
        let mut text = name.to_string();
        for (k, v) in params {
            write!(text, " {k}={v}").unwrap();
        }
        Ok(Self { program, text })
    }

    pub fn inline(source: &str) -> Result<Self, TxnLangError> {
        Ok(Self {
            program: parse_transaction(source)?,
            text: source.trim().to_string(),
        })
    }

    /// Parse either form.
    pub fn parse(text: &str) -> Result<Self, TxnLangError> {
        let text = text.trim();
        if text.starts_with("transaction") {
            return Self::inline(text);
        }
        let mut words = text.split_whitespace();
        let name = words.next().unwrap_or("");
        let mut params = Vec::new();
        for w in words {
            let bad = || TxnLangError::UnknownParam {
                txn: name.to_string(),
                param: w.to_string(),
            };
            let (k, v) = w.split_once('=').ok_or_else(bad)?;
            params.push((k, Decimal::parse(v).ok_or_else(bad)?));
        }
        Self::builtin(name, &params)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {err}")]
    Txn { line: usize, err: TxnLangError },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

impl ConfigError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. } | ConfigError::Txn { line, .. } => Some(*line),
            ConfigError::Tree(_) => None,
        }
    }
}

fn syntax<T>(line: usize, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Syntax {
        line,
        msg: msg.into(),
    })
}

/// Report a transaction error at its line within the config file.
fn txn_err(start: usize, err: TxnLangError) -> ConfigError {
    let line = match &err {
        TxnLangError::Parse(p) => start + p.line() - 1,
        _ => start,
    };
    ConfigError::Txn { line, err }
}

fn strip_comment(line: &str) -> &str {
    let cut = line.find('#').unwrap_or(line.len());
    &line[..cut]
}

struct PendingNode {
    line: usize,
    name: String,
    parent: Option<String>,
    predicate: Option<Predicate>,
    sched: Option<TxnSpec>,
    shaping: Option<TxnSpec>,
    weights: Vec<(String, Decimal)>,
}

impl PendingNode {
    fn finish(self) -> Result<NodeSpec, ConfigError> {
        let Some(sched) = self.sched else {
            return syntax(self.line, format!("node '{}' has no sched transaction", self.name));
        };
        Ok(NodeSpec {
            name: self.name,
            parent: self.parent,
            predicate: self.predicate.unwrap_or_else(Predicate::always),
            sched,
            shaping: self.shaping,
            weights: self.weights,
        })
    }
}

/// Parse a tree description without validating the tree.
pub fn parse_tree_spec(text: &str) -> Result<TreeSpec, ConfigError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut spec = TreeSpec::default();
    let mut cur: Option<PendingNode> = None;
    let mut i = 0;
    while i < lines.len() {
        let lineno = i + 1;
        let raw = lines[i];
        i += 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (word, rest) = match line.split_once(char::is_whitespace) {
            Some((w, r)) => (w, r.trim()),
            None => (line, ""),
        };
        match word {
            "node" => {
                if let Some(n) = cur.take() {
                    spec.nodes.push(n.finish()?);
                }
                let mut parts = rest.split_whitespace();
                let Some(name) = parts.next() else {
                    return syntax(lineno, "node needs a name");
                };
                let mut parent = None;
                for p in parts {
                    match p.strip_prefix("parent=") {
                        Some(v) if !v.is_empty() => parent = Some(v.to_string()),
                        _ => return syntax(lineno, format!("unexpected '{p}'")),
                    }
                }
                cur = Some(PendingNode {
                    line: lineno,
                    name: name.to_string(),
                    parent,
                    predicate: None,
                    sched: None,
                    shaping: None,
                    weights: Vec::new(),
                });
            }
            "domain" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let range = parts.get(1).and_then(|r| r.split_once(".."));
                let parsed = match (parts.as_slice(), range) {
                    ([field, _], Some((lo, hi))) => lo
                        .parse()
                        .ok()
                        .zip(hi.parse().ok())
                        .map(|(lo, hi)| FieldDomain {
                            field: field.to_string(),
                            lo,
                            hi,
                        }),
                    _ => None,
                };
                match parsed {
                    Some(d) => spec.domain.push(d),
                    None => return syntax(lineno, "expected 'domain <field> <lo>..<hi>'"),
                }
            }
            "option" => match rest.split_once(char::is_whitespace) {
                Some((k, v)) => {
                    spec.options.insert(k.to_string(), v.trim().to_string());
                }
                None => return syntax(lineno, "expected 'option <key> <value>'"),
            },
            "match" | "sched" | "shaping" | "weight" => {
                let Some(node) = cur.as_mut() else {
                    return syntax(lineno, format!("'{word}' outside a node"));
                };
                match word {
                    "match" => {
                        let p = parse_predicate(rest).map_err(|e| match e {
                            ParseError::Syntax { col, msg, .. } => ConfigError::Syntax {
                                line: lineno,
                                msg: format!("predicate column {col}: {msg}"),
                            },
                            e => txn_err(lineno, e.into()),
                        })?;
                        node.predicate = Some(p);
                    }
                    "weight" => {
                        let parts: Vec<&str> = rest.split_whitespace().collect();
                        match parts.as_slice() {
                            [key, w] => match Decimal::parse(w) {
                                Some(d) if d.num > 0 => node.weights.push((key.to_string(), d)),
                                _ => return syntax(lineno, format!("bad weight '{w}'")),
                            },
                            _ => return syntax(lineno, "expected 'weight <key> <value>'"),
                        }
                    }
                    _ => {
                        let mut body = rest.to_string();
                        if rest.starts_with("transaction") {
                            let mut depth = brace_depth(rest);
                            let mut seen_open = rest.contains('{');
                            while !(seen_open && depth == 0) {
                                let Some(next) = lines.get(i) else {
                                    return syntax(lineno, "unterminated inline transaction");
                                };
                                i += 1;
                                body.push('\n');
                                body.push_str(next);
                                depth += brace_depth(next);
                                seen_open |= next.contains('{');
                            }
                        }
                        let t = TxnSpec::parse(&body).map_err(|e| txn_err(lineno, e))?;
                        let slot = if word == "sched" {
                            &mut node.sched
                        } else {
                            &mut node.shaping
                        };
                        if slot.is_some() {
                            return syntax(lineno, format!("second '{word}' for node"));
                        }
                        *slot = Some(t);
                    }
                }
            }
            other => return syntax(lineno, format!("unknown directive '{other}'")),
        }
    }
    if let Some(n) = cur.take() {
        spec.nodes.push(n.finish()?);
    }
    Ok(spec)
}

fn brace_depth(line: &str) -> i64 {
    let code = strip_comment(line.split("//").next().unwrap_or(""));
    code.chars()
        .map(|c| match c {
            '{' => 1,
            '}' => -1,
            _ => 0,
        })
        .sum()
}

impl TreeSpec {
    /// Parse and validate.
    pub fn load(text: &str) -> Result<SchedTree, ConfigError> {
        Ok(validate_tree(&parse_tree_spec(text)?)?)
    }

    /// Text form; parsing it gives back an equal spec.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in &self.domain {
            writeln!(out, "domain {} {}..{}", d.field, d.lo, d.hi).unwrap();
        }
        for (k, v) in &self.options {
            writeln!(out, "option {k} {v}").unwrap();
        }
        for n in &self.nodes {
            out.push('\n');
            match &n.parent {
                Some(p) => writeln!(out, "node {} parent={p}", n.name),
                None => writeln!(out, "node {}", n.name),
            }
            .unwrap();
            if n.predicate != Predicate::always() {
                writeln!(out, "  match {}", n.predicate.source).unwrap();
            }
            write_txn(&mut out, "sched", &n.sched.text);
            if let Some(s) = &n.shaping {
                write_txn(&mut out, "shaping", &s.text);
            }
            for (k, w) in &n.weights {
                writeln!(out, "  weight {k} {w}").unwrap();
            }
        }
        out
    }
}

fn write_txn(out: &mut String, word: &str, text: &str) {
    let mut lines = text.lines();
    writeln!(out, "  {word} {}", lines.next().unwrap_or("")).unwrap();
    for l in lines {
        writeln!(out, "{l}").unwrap();
    }
}
