//! Operational design domain (ODD) definitions.
//!
//! An [`OddDefinition`] is a named set of attribute constraints over the
//! keys of a [`DomainSnapshot`]. Keys are dotted strings in four namespaces:
//! `scenery.*`, `env.*`, `dyn.*` and `conn.*`. Connection metrics are plain
//! attributes, so a degraded link is handled by the same containment check
//! as rain or a construction zone.
//!
//! Evaluation is pure. A snapshot that lacks a constrained key is an error,
//! never an implicit "inside".

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hysteresis band used for keys without an explicit `hysteresis` line.
pub const DEFAULT_HYSTERESIS_BAND: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OddError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: duplicate entry for `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: inverted interval for `{key}` ({lo} > {hi})")]
    InvertedInterval {
        line: usize,
        key: String,
        lo: f64,
        hi: f64,
    },
    #[error("snapshot has no value for `{0}`")]
    MissingKey(String),
    #[error("value of `{key}` does not match its constraint kind")]
    TypeMismatch { key: String },
    #[error("constraints on `{key}` cannot be combined: {reason}")]
    Incompatible { key: String, reason: String },
}

/// A measured value in a [`DomainSnapshot`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Value {
    /// Parses a scalar the way scenario and ODD files write them.
    pub fn parse(raw: &str) -> Value {
        match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => match raw.parse::<f64>() {
                Ok(n) if !n.is_nan() => Value::Number(n),
                _ => Value::Text(raw.to_string()),
            },
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Closed interval; either bound may be infinite.
    Interval { lo: f64, hi: f64, unit: String },
    OneOf(BTreeSet<String>),
    Required(bool),
    /// Produced by intersecting contradictory constraints. Matches nothing.
    Unsatisfiable,
}

impl Constraint {
    fn kind(&self) -> &'static str {
        match self {
            Constraint::Interval { .. } => "interval",
            Constraint::OneOf(_) => "set",
            Constraint::Required(_) => "boolean",
            Constraint::Unsatisfiable => "unsatisfiable",
        }
    }

    /// Returns `(satisfied, margin)` for a measured value.
    fn evaluate(&self, key: &str, value: &Value) -> Result<(bool, f64), OddError> {
        let mismatch = || OddError::TypeMismatch {
            key: key.to_string(),
        };
        match (self, value) {
            (Constraint::Unsatisfiable, _) => Ok((false, -1.0)),
            (Constraint::Interval { lo, hi, .. }, Value::Number(x)) => {
                let margin = interval_margin(*lo, *hi, *x);
                Ok((*lo <= *x && *x <= *hi, margin))
            }
            (Constraint::OneOf(set), Value::Text(s)) => {
                let ok = set.contains(s);
                Ok((ok, if ok { 1.0 } else { -1.0 }))
            }
            (Constraint::Required(want), Value::Bool(b)) => {
                let ok = want == b;
                Ok((ok, if ok { 1.0 } else { -1.0 }))
            }
            _ => Err(mismatch()),
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Interval { lo, hi, unit } if unit.is_empty() => {
                write!(f, "in [{lo}, {hi}]")
            }
            Constraint::Interval { lo, hi, unit } => write!(f, "in [{lo}, {hi}] {unit}"),
            Constraint::OneOf(set) => {
                f.write_str("in {")?;
                for (i, v) in set.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(v)?;
                }
                f.write_str("}")
            }
            Constraint::Required(b) => write!(f, "required {b}"),
            Constraint::Unsatisfiable => f.write_str("never"),
        }
    }
}

/// Scale used to normalize distances for an interval.
///
/// Finite intervals use their width. Half-open intervals use the magnitude of
/// the finite bound (or 1 when that bound is zero).
fn interval_scale(lo: f64, hi: f64) -> Option<f64> {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => Some(hi - lo),
        (true, false) => Some(if lo == 0.0 { 1.0 } else { lo.abs() }),
        (false, true) => Some(if hi == 0.0 { 1.0 } else { hi.abs() }),
        (false, false) => None,
    }
}

fn interval_margin(lo: f64, hi: f64, x: f64) -> f64 {
    let Some(scale) = interval_scale(lo, hi) else {
        return 1.0;
    };
    if scale == 0.0 {
        return if x == lo { 0.0 } else { -1.0 };
    }
    if lo <= x && x <= hi {
        ((x - lo).min(hi - x) / scale).clamp(0.0, 1.0)
    } else {
        let d = if x < lo { lo - x } else { x - hi };
        let m = (-d / scale).clamp(-1.0, 0.0);
        // keep the sign strictly negative outside
        if m == 0.0 {
            -f64::MIN_POSITIVE
        } else {
            m
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddAttribute {
    pub key: String,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddDefinition {
    pub name: String,
    attributes: BTreeMap<String, Constraint>,
    hysteresis: BTreeMap<String, f64>,
}

impl OddDefinition {
    /// An unconstrained ODD that contains every snapshot.
    pub fn new(name: impl Into<String>) -> Self {
        OddDefinition {
            name: name.into(),
            attributes: BTreeMap::new(),
            hysteresis: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, constraint: Constraint) -> Result<Self, OddError> {
        self.insert(0, key, constraint)?;
        Ok(self)
    }

    pub fn with_band(mut self, key: &str, band: f64) -> Result<Self, OddError> {
        check_band(0, 0, band)?;
        if !self.attributes.contains_key(key) {
            return Err(OddError::Syntax {
                line: 0,
                column: 0,
                message: format!("hysteresis for unconstrained key `{key}`"),
            });
        }
        self.hysteresis.insert(key.to_string(), band);
        Ok(self)
    }

    fn insert(&mut self, line: usize, key: &str, constraint: Constraint) -> Result<(), OddError> {
        if let Constraint::Interval { lo, hi, .. } = &constraint {
            if lo > hi {
                return Err(OddError::InvertedInterval {
                    line,
                    key: key.to_string(),
                    lo: *lo,
                    hi: *hi,
                });
            }
        }
        if let Constraint::OneOf(set) = &constraint {
            if set.is_empty() {
                return Err(OddError::Syntax {
                    line,
                    column: 0,
                    message: format!("empty value set for `{key}`"),
                });
            }
        }
        if self.attributes.contains_key(key) {
            return Err(OddError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        self.attributes.insert(key.to_string(), constraint);
        Ok(())
    }

    pub fn attributes(&self) -> impl Iterator<Item = OddAttribute> + '_ {
        self.attributes.iter().map(|(k, c)| OddAttribute {
            key: k.clone(),
            constraint: c.clone(),
        })
    }

    pub fn constraint(&self, key: &str) -> Option<&Constraint> {
        self.attributes.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.attributes.keys().map(String::as_str)
    }

    pub fn is_unconstrained(&self) -> bool {
        self.attributes.is_empty()
    }

    /// True when some key can never be satisfied (the result of a
    /// contradictory intersection).
    pub fn is_empty_odd(&self) -> bool {
        self.attributes
            .values()
            .any(|c| matches!(c, Constraint::Unsatisfiable))
    }

    /// Hysteresis band for `key` as a fraction of the constraint width.
    pub fn band(&self, key: &str) -> f64 {
        self.hysteresis
            .get(key)
            .copied()
            .unwrap_or(DEFAULT_HYSTERESIS_BAND)
    }

    /// Per-attribute subset test: every snapshot inside `self` is inside
    /// `other`.
    pub fn is_subset_of(&self, other: &OddDefinition) -> bool {
        if self.is_empty_odd() {
            return true;
        }
        other.attributes.iter().all(|(key, outer)| {
            let Some(inner) = self.attributes.get(key) else {
                return false;
            };
            match (inner, outer) {
                (
                    Constraint::Interval { lo, hi, unit },
                    Constraint::Interval {
                        lo: olo,
                        hi: ohi,
                        unit: ounit,
                    },
                ) => unit == ounit && olo <= lo && hi <= ohi,
                (Constraint::OneOf(a), Constraint::OneOf(b)) => a.is_subset(b),
                (Constraint::Required(a), Constraint::Required(b)) => a == b,
                (_, Constraint::Unsatisfiable) => false,
                _ => false,
            }
        })
    }
}

/// Measured operational domain at one tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainSnapshot {
    pub tick: u64,
    pub values: BTreeMap<String, Value>,
}

impl DomainSnapshot {
    pub fn new(tick: u64) -> Self {
        DomainSnapshot {
            tick,
            values: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: Value) -> &mut Self {
        self.values.insert(key.to_string(), value);
        self
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.set(key, value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub key: String,
    pub measured: Value,
    pub constraint: Constraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentVerdict {
    pub inside: bool,
    pub violated: Vec<Violation>,
    pub margin: BTreeMap<String, f64>,
}

impl ContainmentVerdict {
    pub fn violated_keys(&self) -> impl Iterator<Item = &str> {
        self.violated.iter().map(|v| v.key.as_str())
    }
}

/// Checks `snap` against every constraint of `odd`.
pub fn contains(odd: &OddDefinition, snap: &DomainSnapshot) -> Result<ContainmentVerdict, OddError> {
    let mut violated = Vec::new();
    let mut margin = BTreeMap::new();
    for (key, constraint) in &odd.attributes {
        let value = snap
            .get(key)
            .ok_or_else(|| OddError::MissingKey(key.clone()))?;
        let (ok, m) = constraint.evaluate(key, value)?;
        margin.insert(key.clone(), m);
        if !ok {
            violated.push(Violation {
                key: key.clone(),
                measured: value.clone(),
                constraint: constraint.clone(),
            });
        }
    }
    Ok(ContainmentVerdict {
        inside: violated.is_empty(),
        violated,
        margin,
    })
}

/// Signed normalized distance to the border for every constrained key.
///
/// Positive inside, negative outside, clamped to `[-1, 1]`. Set and boolean
/// constraints report `+1` or `-1`.
pub fn distance_to_border(
    odd: &OddDefinition,
    snap: &DomainSnapshot,
) -> Result<BTreeMap<String, f64>, OddError> {
    contains(odd, snap).map(|v| v.margin)
}

/// Filters a raw verdict so that re-entry requires clearing the band.
///
/// Inside to outside passes through immediately. Outside to inside passes only
/// when every key violated in `prev` now has a margin of at least its band;
/// otherwise `prev` is held.
pub fn apply_hysteresis(
    prev: &ContainmentVerdict,
    raw: &ContainmentVerdict,
    margins: &BTreeMap<String, f64>,
    band: impl Fn(&str) -> f64,
) -> ContainmentVerdict {
    if !raw.inside || prev.inside {
        return raw.clone();
    }
    let cleared = prev.violated.iter().all(|v| {
        margins
            .get(&v.key)
            .is_some_and(|m| *m >= band(&v.key))
    });
    if cleared {
        raw.clone()
    } else {
        prev.clone()
    }
}

/// Stateful wrapper applying hysteresis across successive snapshots.
#[derive(Debug, Clone)]
pub struct OddMonitor {
    odd: OddDefinition,
    prev: Option<ContainmentVerdict>,
}

impl OddMonitor {
    pub fn new(odd: OddDefinition) -> Self {
        OddMonitor { odd, prev: None }
    }

    pub fn odd(&self) -> &OddDefinition {
        &self.odd
    }

    /// Evaluates `snap`. On error the previous verdict is kept for the next
    /// tick but nothing is returned as "inside".
    pub fn evaluate(&mut self, snap: &DomainSnapshot) -> Result<ContainmentVerdict, OddError> {
        let raw = contains(&self.odd, snap)?;
        let verdict = match &self.prev {
            None => raw,
            Some(prev) => apply_hysteresis(prev, &raw, &raw.margin, |k| self.odd.band(k)),
        };
        self.prev = Some(verdict.clone());
        Ok(verdict)
    }
}

/// Intersection of two ODDs: a snapshot is inside the result iff it is
/// inside both operands.
///
/// Contradictory constraints yield [`Constraint::Unsatisfiable`] for that key
/// rather than an error. Mixing constraint kinds or interval units on one key
/// is an error.
pub fn intersect(a: &OddDefinition, b: &OddDefinition) -> Result<OddDefinition, OddError> {
    let names: BTreeSet<&str> = a
        .name
        .split('&')
        .chain(b.name.split('&'))
        .filter(|s| !s.is_empty())
        .collect();
    let mut out = OddDefinition::new(names.into_iter().collect::<Vec<_>>().join("&"));

    let keys: BTreeSet<&String> = a.attributes.keys().chain(b.attributes.keys()).collect();
    for key in keys {
        let merged = match (a.attributes.get(key), b.attributes.get(key)) {
            (Some(x), None) | (None, Some(x)) => x.clone(),
            (Some(x), Some(y)) => merge(key, x, y)?,
            (None, None) => unreachable!(),
        };
        out.attributes.insert(key.clone(), merged);
        if a.hysteresis.contains_key(key) || b.hysteresis.contains_key(key) {
            out.hysteresis
                .insert(key.clone(), a.band(key).max(b.band(key)));
        }
    }
    Ok(out)
}

fn merge(key: &str, x: &Constraint, y: &Constraint) -> Result<Constraint, OddError> {
    use Constraint::*;
    Ok(match (x, y) {
        (Unsatisfiable, _) | (_, Unsatisfiable) => Unsatisfiable,
        (
            Interval { lo, hi, unit },
            Interval {
                lo: lo2,
                hi: hi2,
                unit: unit2,
            },
        ) => {
            if unit != unit2 {
                return Err(OddError::Incompatible {
                    key: key.to_string(),
                    reason: format!("units `{unit}` and `{unit2}`"),
                });
            }
            let (lo, hi) = (lo.max(*lo2), hi.min(*hi2));
            if lo > hi {
                Unsatisfiable
            } else {
                Interval {
                    lo,
                    hi,
                    unit: unit.clone(),
                }
            }
        }
        (OneOf(s), OneOf(t)) => {
            let common: BTreeSet<String> = s.intersection(t).cloned().collect();
            if common.is_empty() {
                Unsatisfiable
            } else {
                OneOf(common)
            }
        }
        (Required(p), Required(q)) => {
            if p == q {
                Required(*p)
            } else {
                Unsatisfiable
            }
        }
        _ => {
            return Err(OddError::Incompatible {
                key: key.to_string(),
                reason: format!("{} and {}", x.kind(), y.kind()),
            })
        }
    })
}

fn check_band(line: usize, column: usize, band: f64) -> Result<(), OddError> {
    if (0.0..0.5).contains(&band) {
        Ok(())
    } else {
        Err(OddError::Syntax {
            line,
            column,
            message: format!("hysteresis band {band} outside [0, 0.5)"),
        })
    }
}

fn is_key(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn is_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '&'))
}

/// Line cursor that keeps track of the 1-based column.
struct Cursor<'a> {
    line: usize,
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn column(&self) -> usize {
        self.text[..self.pos].chars().count() + 1
    }

    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.text.len()
    }

    fn err(&self, message: impl Into<String>) -> OddError {
        OddError::Syntax {
            line: self.line,
            column: self.column(),
            message: message.into(),
        }
    }

    /// Next whitespace-delimited token, stopping at any of `stops`.
    fn token(&mut self, stops: &[char]) -> Option<(&'a str, usize)> {
        self.skip_ws();
        let col = self.column();
        let rest = &self.text[self.pos..];
        let end = rest
            .find(|c: char| c.is_whitespace() || stops.contains(&c))
            .unwrap_or(rest.len());
        if end == 0 {
            return None;
        }
        self.pos += end;
        Some((&rest[..end], col))
    }

    fn expect(&mut self, c: char) -> Result<(), OddError> {
        self.skip_ws();
        if self.text[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn number(&mut self, stops: &[char]) -> Result<f64, OddError> {
        let (tok, col) = self
            .token(stops)
            .ok_or_else(|| self.err("expected a number"))?;
        match tok.parse::<f64>() {
            Ok(v) if !v.is_nan() => Ok(v),
            _ => Err(OddError::Syntax {
                line: self.line,
                column: col,
                message: format!("invalid number `{tok}`"),
            }),
        }
    }
}

/// Parses the line-oriented ODD definition format.
///
/// ```text
/// name ODD_T2
/// attr conn.latency_ms in [0, 250] ms
/// attr scenery.road_type in {highway, urban}
/// attr env.snow required false
/// hysteresis conn.latency_ms 0.1
/// ```
pub fn parse_odd_definition(text: &str) -> Result<OddDefinition, OddError> {
    let mut name: Option<String> = None;
    let mut odd = OddDefinition::new("");
    let mut bands: Vec<(usize, usize, String, f64)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut cur = Cursor {
            line: line_no,
            text: content,
            pos: 0,
        };
        let Some((directive, dcol)) = cur.token(&[]) else {
            continue;
        };
        match directive {
            "name" => {
                let (n, col) = cur.token(&[]).ok_or_else(|| cur.err("expected a name"))?;
                if !is_name(n) {
                    return Err(OddError::Syntax {
                        line: line_no,
                        column: col,
                        message: format!("invalid name `{n}`"),
                    });
                }
                if name.is_some() {
                    return Err(OddError::DuplicateKey {
                        line: line_no,
                        key: "name".into(),
                    });
                }
                name = Some(n.to_string());
            }
            "attr" => {
                let (key, kcol) = cur.token(&[]).ok_or_else(|| cur.err("expected a key"))?;
                if !is_key(key) {
                    return Err(OddError::Syntax {
                        line: line_no,
                        column: kcol,
                        message: format!("invalid key `{key}`"),
                    });
                }
                let (op, ocol) = cur
                    .token(&['[', '{'])
                    .ok_or_else(|| cur.err("expected `in`, `required` or `never`"))?;
                let constraint = match op {
                    "in" => {
                        cur.skip_ws();
                        if cur.text[cur.pos..].starts_with('[') {
                            cur.expect('[')?;
                            let lo = cur.number(&[','])?;
                            cur.expect(',')?;
                            let hi = cur.number(&[']'])?;
                            cur.expect(']')?;
                            let unit = match cur.token(&[]) {
                                Some((u, _)) => u.to_string(),
                                None => String::new(),
                            };
                            Constraint::Interval { lo, hi, unit }
                        } else if cur.text[cur.pos..].starts_with('{') {
                            cur.expect('{')?;
                            let mut set = BTreeSet::new();
                            loop {
                                let (v, vcol) = cur
                                    .token(&[',', '}'])
                                    .ok_or_else(|| cur.err("expected a set value"))?;
                                if !is_key(v) {
                                    return Err(OddError::Syntax {
                                        line: line_no,
                                        column: vcol,
                                        message: format!("invalid set value `{v}`"),
                                    });
                                }
                                set.insert(v.to_string());
                                cur.skip_ws();
                                if cur.text[cur.pos..].starts_with(',') {
                                    cur.pos += 1;
                                } else {
                                    cur.expect('}')?;
                                    break;
                                }
                            }
                            Constraint::OneOf(set)
                        } else {
                            return Err(cur.err("expected `[` or `{`"));
                        }
                    }
                    "required" => {
                        let (b, bcol) = cur
                            .token(&[])
                            .ok_or_else(|| cur.err("expected true or false"))?;
                        match b {
                            "true" => Constraint::Required(true),
                            "false" => Constraint::Required(false),
                            _ => {
                                return Err(OddError::Syntax {
                                    line: line_no,
                                    column: bcol,
                                    message: format!("expected true or false, got `{b}`"),
                                })
                            }
                        }
                    }
                    "never" => Constraint::Unsatisfiable,
                    other => {
                        return Err(OddError::Syntax {
                            line: line_no,
                            column: ocol,
                            message: format!("unknown operator `{other}`"),
                        })
                    }
                };
                if !cur.at_end() {
                    return Err(cur.err("trailing input"));
                }
                odd.insert(line_no, key, constraint)?;
            }
            "hysteresis" => {
                let (key, _) = cur.token(&[]).ok_or_else(|| cur.err("expected a key"))?;
                let col = {
                    cur.skip_ws();
                    cur.column()
                };
                let band = cur.number(&[])?;
                check_band(line_no, col, band)?;
                if !cur.at_end() {
                    return Err(cur.err("trailing input"));
                }
                if bands.iter().any(|(_, _, k, _)| k == key) {
                    return Err(OddError::DuplicateKey {
                        line: line_no,
                        key: key.to_string(),
                    });
                }
                bands.push((line_no, col, key.to_string(), band));
            }
            other => {
                return Err(OddError::Syntax {
                    line: line_no,
                    column: dcol,
                    message: format!("unknown directive `{other}`"),
                })
            }
        }
    }

    for (line, column, key, band) in bands {
        if !odd.attributes.contains_key(&key) {
            return Err(OddError::Syntax {
                line,
                column,
                message: format!("hysteresis for unconstrained key `{key}`"),
            });
        }
        odd.hysteresis.insert(key, band);
    }
    odd.name = name.ok_or(OddError::Syntax {
        line: text.lines().count().max(1),
        column: 1,
        message: "missing `name` directive".into(),
    })?;
    Ok(odd)
}

/// Canonical text form: keys sorted, one directive per line.
pub fn serialize_odd_definition(odd: &OddDefinition) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name {}", odd.name);
    for (key, c) in &odd.attributes {
        let _ = writeln!(out, "attr {key} {c}");
    }
    for (key, band) in &odd.hysteresis {
        let _ = writeln!(out, "hysteresis {key} {band}");
    }
    out
}

impl fmt::Display for OddDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_odd_definition(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(x: f64) -> Value {
        Value::Number(x)
    }

    #[test]
    fn parses_latency_border() {
        let odd = parse_odd_definition("name ODD_T2\nattr conn.latency_ms in [0, 250] ms\n").unwrap();
        assert_eq!(odd.name, "ODD_T2");
        assert_eq!(
            odd.constraint("conn.latency_ms"),
            Some(&Constraint::Interval {
                lo: 0.0,
                hi: 250.0,
                unit: "ms".into()
            })
        );
    }

    #[test]
    fn empty_attribute_list_matches_everything() {
        let odd = parse_odd_definition("# nothing constrained\nname any\n").unwrap();
        assert!(odd.is_unconstrained());
        let snap = DomainSnapshot::new(3).with("env.rain_mm_h", num(80.0));
        let v = contains(&odd, &snap).unwrap();
        assert!(v.inside);
        assert!(v.violated.is_empty());
    }

    #[test]
    fn inverted_interval_is_rejected() {
        let err = parse_odd_definition("name x\nattr a in [5, 3]\n").unwrap_err();
        assert!(matches!(err, OddError::InvertedInterval { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err =
            parse_odd_definition("name x\nattr a in [0, 3]\nattr a required true\n").unwrap_err();
        assert_eq!(
            err,
            OddError::DuplicateKey {
                line: 3,
                key: "a".into()
            }
        );
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let err = parse_odd_definition("name x\nattr a in [0, nope]\n").unwrap_err();
        assert_eq!(
            err,
            OddError::Syntax {
                line: 2,
                column: 15,
                message: "invalid number `nope`".into()
            }
        );
        let err = parse_odd_definition("name x\n  bogus\n").unwrap_err();
        assert!(matches!(err, OddError::Syntax { line: 2, column: 3, .. }));
        let err = parse_odd_definition("attr a in [0, 1]\n").unwrap_err();
        assert!(matches!(err, OddError::Syntax { .. }));
        let err = parse_odd_definition("name x\nhysteresis a 0.1\n").unwrap_err();
        assert!(matches!(err, OddError::Syntax { line: 2, .. }));
        let err = parse_odd_definition("name x\nattr a in [0,1]\nhysteresis a 0.5\n").unwrap_err();
        assert!(matches!(err, OddError::Syntax { line: 3, .. }));
    }

    #[test]
    fn canonical_serialization_sorts_keys() {
        let text = "name t\n\
                    attr scenery.road_type in {urban, highway}\n\
                    attr conn.latency_ms in [-inf, 250] ms # border\n\
                    attr env.snow required false\n\
                    hysteresis conn.latency_ms 0.1\n";
        let odd = parse_odd_definition(text).unwrap();
        let canon = serialize_odd_definition(&odd);
        assert_eq!(
            canon,
            "name t\n\
             attr conn.latency_ms in [-inf, 250] ms\n\
             attr env.snow required false\n\
             attr scenery.road_type in {highway, urban}\n\
             hysteresis conn.latency_ms 0.1\n"
        );
        assert_eq!(parse_odd_definition(&canon).unwrap(), odd);
    }

    #[test]
    fn latency_and_humidity_borders() {
        let odd = parse_odd_definition("name ads\nattr conn.latency_ms in [0, 250] ms\n").unwrap();
        let v = contains(&odd, &DomainSnapshot::new(0).with("conn.latency_ms", num(300.0))).unwrap();
        assert!(!v.inside);
        assert_eq!(v.violated_keys().collect::<Vec<_>>(), ["conn.latency_ms"]);

        let odd = parse_odd_definition("name ads\nattr env.humidity_pct in [0, 90] %\n").unwrap();
        let v = contains(&odd, &DomainSnapshot::new(0).with("env.humidity_pct", num(95.0))).unwrap();
        assert!(!v.inside);
    }

    #[test]
    fn missing_key_is_an_error() {
        let odd = parse_odd_definition("name ads\nattr env.rain_mm_h in [0, 1]\n").unwrap();
        assert_eq!(
            contains(&odd, &DomainSnapshot::new(0)).unwrap_err(),
            OddError::MissingKey("env.rain_mm_h".into())
        );
    }

    #[test]
    fn type_mismatch_is_an_error() {
        let odd = parse_odd_definition("name ads\nattr env.snow required false\n").unwrap();
        let snap = DomainSnapshot::new(0).with("env.snow", num(0.0));
        assert!(matches!(
            contains(&odd, &snap),
            Err(OddError::TypeMismatch { .. })
        ));
    }

    #[test]
    fn margins() {
        let odd = parse_odd_definition("name t\nattr conn.latency_ms in [0, 250] ms\n").unwrap();
        let m = |x| distance_to_border(&odd, &DomainSnapshot::new(0).with("conn.latency_ms", num(x)))
            .unwrap()["conn.latency_ms"];
        assert!((m(200.0) - 0.2).abs() < 1e-12);
        assert_eq!(m(250.0), 0.0);
        assert!(m(251.0) < 0.0);
        assert_eq!(m(10_000.0), -1.0);

        // zero-width interval
        assert_eq!(interval_margin(3.0, 3.0, 3.0), 0.0);
        assert_eq!(interval_margin(3.0, 3.0, 3.5), -1.0);
        // half-open interval normalizes by the finite bound
        assert!((interval_margin(f64::NEG_INFINITY, 250.0, 200.0) - 0.2).abs() < 1e-12);
        assert_eq!(interval_margin(f64::NEG_INFINITY, 2.0, 0.0), 1.0);
        assert_eq!(interval_margin(f64::NEG_INFINITY, f64::INFINITY, 7.0), 1.0);
    }

    #[test]
    fn set_and_boolean_margins_are_unit() {
        let odd = parse_odd_definition("name t\nattr r in {highway}\nattr s required false\n").unwrap();
        let snap = DomainSnapshot::new(0)
            .with("r", Value::Text("urban".into()))
            .with("s", Value::Bool(false));
        let v = contains(&odd, &snap).unwrap();
        assert_eq!(v.margin["r"], -1.0);
        assert_eq!(v.margin["s"], 1.0);
        assert_eq!(v.violated_keys().collect::<Vec<_>>(), ["r"]);
    }

    fn latency_odd(band: f64) -> OddDefinition {
        OddDefinition::new("t")
            .with(
                "conn.latency_ms",
                Constraint::Interval {
                    lo: 0.0,
                    hi: 250.0,
                    unit: "ms".into(),
                },
            )
            .unwrap()
            .with_band("conn.latency_ms", band)
            .unwrap()
    }

    #[test]
    fn zero_band_passes_raw_verdicts() {
        let mut mon = OddMonitor::new(latency_odd(0.0));
        let mut flips = 0;
        let mut last = None;
        for x in [249.0, 251.0, 249.0, 251.0, 249.0] {
            let v = mon
                .evaluate(&DomainSnapshot::new(0).with("conn.latency_ms", num(x)))
                .unwrap();
            assert_eq!(v.inside, x <= 250.0);
            if last.is_some_and(|l| l != v.inside) {
                flips += 1;
            }
            last = Some(v.inside);
        }
        assert_eq!(flips, 4);
    }

    #[test]
    fn band_suppresses_flapping() {
        let mut mon = OddMonitor::new(latency_odd(0.1));
        let seq = [249.0, 251.0, 249.0, 251.0, 249.0, 230.0, 225.0, 200.0];
        let inside: Vec<bool> = seq
            .iter()
            .map(|x| {
                mon.evaluate(&DomainSnapshot::new(0).with("conn.latency_ms", num(*x)))
                    .unwrap()
                    .inside
            })
            .collect();
        // 225 ms sits exactly at margin 0.1 and clears the band
        assert_eq!(inside, [true, false, false, false, false, false, true, true]);
    }

    #[test]
    fn held_verdict_when_margin_below_band() {
        let odd = latency_odd(0.1);
        let prev = contains(&odd, &DomainSnapshot::new(0).with("conn.latency_ms", num(300.0))).unwrap();
        // margin 0.05 = band / 2
        let raw = contains(&odd, &DomainSnapshot::new(1).with("conn.latency_ms", num(237.5))).unwrap();
        let out = apply_hysteresis(&prev, &raw, &raw.margin, |k| odd.band(k));
        assert!(!out.inside);
    }

    #[test]
    fn intersect_takes_tighter_bound() {
        let a = parse_odd_definition("name ads\nattr dyn.speed_limit_kmh in [0, 80] km/h\n").unwrap();
        let b = parse_odd_definition("name tele\nattr dyn.speed_limit_kmh in [0, 100] km/h\n").unwrap();
        let c = intersect(&a, &b).unwrap();
        assert_eq!(c.name, "ads&tele");
        assert_eq!(
            c.constraint("dyn.speed_limit_kmh"),
            Some(&Constraint::Interval {
                lo: 0.0,
                hi: 80.0,
                unit: "km/h".into()
            })
        );
    }

    #[test]
    fn intersect_with_unconstrained_is_identity() {
        let a = OddDefinition::new("b");
        let b = parse_odd_definition("name b\nattr env.rain_mm_h in [0, 3] mm/h\nhysteresis env.rain_mm_h 0.2\n").unwrap();
        assert_eq!(intersect(&a, &b).unwrap(), b);
    }

    #[test]
    fn contradictory_intersection_matches_nothing() {
        let a = parse_odd_definition("name a\nattr x in [0, 1]\n").unwrap();
        let b = parse_odd_definition("name b\nattr x in [2, 3]\n").unwrap();
        let c = intersect(&a, &b).unwrap();
        assert!(c.is_empty_odd());
        let text = serialize_odd_definition(&c);
        assert_eq!(text, "name a&b\nattr x never\n");
        assert_eq!(parse_odd_definition(&text).unwrap(), c);
        let v = contains(&c, &DomainSnapshot::new(0).with("x", num(0.5))).unwrap();
        assert!(!v.inside);
    }

    #[test]
    fn intersect_rejects_mixed_kinds_and_units() {
        let a = parse_odd_definition("name a\nattr x in [0, 1] ms\n").unwrap();
        let b = parse_odd_definition("name b\nattr x in [0, 1] s\n").unwrap();
        assert!(matches!(intersect(&a, &b), Err(OddError::Incompatible { .. })));
        let c = parse_odd_definition("name c\nattr x required true\n").unwrap();
        assert!(matches!(intersect(&a, &c), Err(OddError::Incompatible { .. })));
    }

    #[test]
    fn subset_relation() {
        let ads = parse_odd_definition(
            "name ads\nattr env.rain_mm_h in [0, 0.5] mm/h\nattr env.snow required false\n",
        )
        .unwrap();
        let t2 = parse_odd_definition("name t2\nattr env.rain_mm_h in [0, 20] mm/h\n").unwrap();
        assert!(ads.is_subset_of(&t2));
        assert!(!t2.is_subset_of(&ads));
    }
}
