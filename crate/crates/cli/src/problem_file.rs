//! Line-oriented problem files:
//!
//! ```text
//! [problem]
//! dim_state = 1
//! dim_noise = 1
//! discount = 1.0
//! lipschitz = 2        # optional bound K
//!
//! [dynamics]
//! drift = "a1"                     # d expressions separated by ';'
//! diffusion = "1"                  # rows separated by ';', entries by ','
//!
//! [reward]
//! running = "0"
//! boundary = "1"
//!
//! [control]
//! dim = 1
//! lo = "-1"
//! hi = "1"
//! points = "21"
//!
//! [domain]
//! kind = box                       # or ball
//! lo = "0"                         # box: per-axis bounds
//! hi = "1"
//! # center = "0, 0"                # ball
//! # radius = 1
//! ```
//!
//! `#` starts a comment outside quotes. Values are numbers, bare words, or
//! double-quoted strings.

use std::collections::BTreeMap;

use exitperron_core::model::ModelError;
use exitperron_core::{ControlProblem, ControlSet, DomainGeometry, ProblemBuilder};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemFileError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("missing key `{key}` in section [{section}]")]
    Missing { section: &'static str, key: &'static str },
    #[error("line {line}: {msg}")]
    Value { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("problem", &["dim_state", "dim_noise", "discount", "lipschitz"]),
    ("dynamics", &["drift", "diffusion"]),
    ("reward", &["running", "boundary"]),
    ("control", &["dim", "lo", "hi", "points"]),
    ("domain", &["kind", "lo", "hi", "center", "radius"]),
];

type Sections = BTreeMap<&'static str, BTreeMap<&'static str, Entry>>;

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ProblemFileError {
    ProblemFileError::Syntax { line, col, msg: msg.into() }
}

fn lex(text: &str) -> Result<Sections, ProblemFileError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<(&'static str, &'static [&'static str])> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let indent = raw.len() - raw.trim_start().len();
        let body = raw.trim_start();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let Some(end) = rest.find(']') else {
                return Err(syntax(line, indent + 1, "unterminated section header"));
            };
            let tail = rest[end + 1..].trim();
            if !(tail.is_empty() || tail.starts_with('#')) {
                return Err(syntax(line, indent + end + 3, "unexpected text after section header"));
            }
            let name = rest[..end].trim();
            let Some(&(s, keys)) = SCHEMA.iter().find(|(s, _)| *s == name) else {
                return Err(syntax(line, indent + 2, format!("unknown section [{name}]")));
            };
            if sections.contains_key(s) {
                return Err(syntax(line, indent + 1, format!("section [{s}] appears twice")));
            }
            sections.insert(s, BTreeMap::new());
            current = Some((s, keys));
            continue;
        }
        let Some(eq) = body.find('=') else {
            return Err(syntax(line, indent + 1, "expected `key = value`"));
        };
        let key = body[..eq].trim();
        let Some((section, keys)) = current else {
            return Err(syntax(line, indent + 1, "key outside any section"));
        };
        let Some(&key) = keys.iter().find(|k| **k == key) else {
            return Err(syntax(line, indent + 1, format!("unknown key `{key}` in [{section}]")));
        };
        let value_start = indent + eq + 1;
        let value = parse_value(&body[eq + 1..], line, value_start)?;
        let map = sections.get_mut(section).expect("inserted with header");
        if map.insert(key, Entry { value, line }).is_some() {
            return Err(syntax(line, indent + 1, format!("duplicate key `{key}`")));
        }
    }
    Ok(sections)
}

/// `offset` is the zero-based column where `src` begins.
fn parse_value(src: &str, line: usize, offset: usize) -> Result<String, ProblemFileError> {
    let lead = src.len() - src.trim_start().len();
    let s = src.trim_start();
    let col = offset + lead + 1;
    let (value, rest, rest_col) = if let Some(inner) = s.strip_prefix('"') {
        let Some(end) = inner.find('"') else {
            return Err(syntax(line, col, "unterminated string"));
        };
        (inner[..end].to_string(), &inner[end + 1..], col + end + 2)
    } else {
        let end = s.find('#').unwrap_or(s.len());
        let v = s[..end].trim_end();
        if v.is_empty() {
            return Err(syntax(line, col, "missing value"));
        }
        if let Some(bad) = v.find(|c: char| c.is_whitespace()) {
            return Err(syntax(line, col + bad, "bare values cannot contain spaces; quote them"));
        }
        (v.to_string(), &s[end..], col + end)
    };
    let tail = rest.trim_start();
    if !(tail.is_empty() || tail.starts_with('#')) {
        let pos = rest_col + (rest.len() - tail.len());
        return Err(syntax(line, pos, "unexpected text after value"));
    }
    Ok(value)
}

/// Splits on `sep` outside parentheses.
fn split_top(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(s[start..i].trim());
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

struct Doc {
    sections: Sections,
}

impl Doc {
    fn get(&self, section: &'static str, key: &'static str) -> Result<&Entry, ProblemFileError> {
        self.opt(section, key).ok_or(ProblemFileError::Missing { section, key })
    }

    fn opt(&self, section: &'static str, key: &'static str) -> Option<&Entry> {
        self.sections.get(section).and_then(|m| m.get(key))
    }

    fn number<T: std::str::FromStr>(&self, section: &'static str, key: &'static str) -> Result<T, ProblemFileError> {
        let e = self.get(section, key)?;
        parse_number(&e.value, e.line, key)
    }

    fn numbers<T: std::str::FromStr>(
        &self,
        section: &'static str,
        key: &'static str,
        len: usize,
    ) -> Result<Vec<T>, ProblemFileError> {
        let e = self.get(section, key)?;
        let parts: Vec<&str> = e.value.split([',', ';']).map(str::trim).collect();
        if parts.len() != len {
            return Err(ProblemFileError::Value {
                line: e.line,
                msg: format!("`{key}` needs {len} entries, found {}", parts.len()),
            });
        }
        parts.iter().map(|p| parse_number(p, e.line, key)).collect()
    }
}

fn parse_number<T: std::str::FromStr>(s: &str, line: usize, key: &str) -> Result<T, ProblemFileError> {
    s.trim()
        .parse()
        .map_err(|_| ProblemFileError::Value { line, msg: format!("`{key}`: `{s}` is not a valid number") })
}

pub fn parse_problem(text: &str) -> Result<ControlProblem, ProblemFileError> {
    let doc = Doc { sections: lex(text)? };
    let d: usize = doc.number("problem", "dim_state")?;
    let m: usize = doc.number("problem", "dim_noise")?;
    let beta: f64 = doc.number("problem", "discount")?;

    let drift_entry = doc.get("dynamics", "drift")?;
    let drift = split_top(&drift_entry.value, ';');
    let diff_entry = doc.get("dynamics", "diffusion")?;
    let diffusion: Vec<Vec<&str>> =
        split_top(&diff_entry.value, ';').into_iter().map(|row| split_top(row, ',')).collect();

    let k: usize = doc.number("control", "dim")?;
    let lo: Vec<f64> = doc.numbers("control", "lo", k)?;
    let hi: Vec<f64> = doc.numbers("control", "hi", k)?;
    let points: Vec<usize> = doc.numbers("control", "points", k)?;
    let bounds: Vec<(f64, f64)> = lo.into_iter().zip(hi).collect();
    let control = ControlSet::new(&bounds, &points)?;

    let kind = doc.get("domain", "kind")?;
    let domain = match kind.value.as_str() {
        "box" => {
            let lo: Vec<f64> = doc.numbers("domain", "lo", d)?;
            let hi: Vec<f64> = doc.numbers("domain", "hi", d)?;
            let bounds: Vec<(f64, f64)> = lo.into_iter().zip(hi).collect();
            DomainGeometry::new_box(&bounds)?
        }
        "ball" => {
            let center: Vec<f64> = doc.numbers("domain", "center", d)?;
            let radius: f64 = doc.number("domain", "radius")?;
            DomainGeometry::new_ball(&center, radius)?
        }
        other => {
            return Err(ProblemFileError::Value {
                line: kind.line,
                msg: format!("domain kind must be `box` or `ball`, found `{other}`"),
            })
        }
    };

    let mut builder = ProblemBuilder::new(d, m)
        .discount(beta)
        .drift(&drift)
        .diffusion(&diffusion)
        .running(&doc.get("reward", "running")?.value)
        .boundary(&doc.get("reward", "boundary")?.value)
        .control(control)
        .domain(domain);
    if doc.opt("problem", "lipschitz").is_some() {
        builder = builder.lipschitz_bound(doc.number("problem", "lipschitz")?);
    }
    Ok(builder.build()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    const P2: &str = r#"
[problem]
dim_state = 1
dim_noise = 1
discount = 1
[dynamics]
drift = "a1"
diffusion = "1"
[reward]
running = "0"
boundary = "1"
[control]
dim = 1
lo = "-1"
hi = "1"
points = "21"
[domain]
kind = box
lo = "0"
hi = "1"
"#;

    #[test]
    fn catalog_entries_parse() {
        for (name, text) in catalog::ENTRIES {
            parse_problem(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn p2_has_21_actions() {
        let p = parse_problem(P2).unwrap();
        assert_eq!(p.control_set().len(), 21);
        assert_eq!(p.hamiltonian(&[0.5], &[1.0], &[0.0]).unwrap().value, 1.0);
    }

    #[test]
    fn negative_discount_is_rejected() {
        let text = P2.replace("discount = 1", "discount = -1");
        let err = parse_problem(&text).unwrap_err();
        assert!(err.to_string().contains("discount must be positive"), "{err}");
    }

    #[test]
    fn errors_carry_positions() {
        let text = P2.replace("drift = \"a1\"", "drift = \"a1");
        match parse_problem(&text).unwrap_err() {
            ProblemFileError::Syntax { line, col, .. } => assert_eq!((line, col), (7, 9)),
            e => panic!("{e}"),
        }
        let text = P2.replace("[reward]", "[rewards]");
        assert!(matches!(parse_problem(&text), Err(ProblemFileError::Syntax { line: 9, .. })));
        let text = P2.replace("kind = box", "kind = box extra");
        match parse_problem(&text).unwrap_err() {
            ProblemFileError::Syntax { line, col, .. } => assert_eq!((line, col), (18, 11)),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_and_mismatched_fields() {
        let text = P2.replace("boundary = \"1\"\n", "");
        assert!(matches!(
            parse_problem(&text),
            Err(ProblemFileError::Missing { section: "reward", key: "boundary" })
        ));
        let text = P2.replace("diffusion = \"1\"", "diffusion = \"1, 0\"");
        assert!(matches!(parse_problem(&text), Err(ProblemFileError::Model(ModelError::Dimension(_)))));
        let text = P2.replace("hi = \"1\"\npoints", "hi = \"-2\"\npoints");
        assert!(matches!(parse_problem(&text), Err(ProblemFileError::Model(_))));
        let text = P2.replace("[domain]", "[problem]");
        assert!(matches!(parse_problem(&text), Err(ProblemFileError::Syntax { .. })));
    }

    #[test]
    fn diffusion_rows_split_outside_parentheses() {
        let text = catalog::lookup("disc-2d").unwrap().replace(
            "diffusion = \"1, 0; 0, 1\"",
            "diffusion = \"max(1, 0), 0; 0, min(1, 2)\"",
        );
        let p = parse_problem(&text).unwrap();
        let mut out = [0.0; 4];
        p.covariance_at(&[0.0, 0.0], &[0.0], &mut out).unwrap();
        assert_eq!(out, [1.0, 0.0, 0.0, 1.0]);
    }
}
