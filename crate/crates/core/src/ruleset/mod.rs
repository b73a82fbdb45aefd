//! Rules, packets, and the matching semantics everything else is checked
//! against.
//!
//! A [`Schema`] fixes the field layout (prefix, range or masked fields of a
//! given bit width). A [`Rule`] carries one [`Condition`] per field and a
//! priority where the *smaller* value wins. [`Ruleset::linear_scan`] is the
//! reference classifier.

mod classbench;
mod features;
mod generate;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use classbench::{parse_rule_line, parse_ruleset, serialize_rule, serialize_ruleset};
pub use features::{raw_segments, segment_batch, segment_header, FeatureVector, SEGMENT_BITS};
pub use generate::{
    generate_ruleset, generate_traffic, read_trace, write_trace, RuleGenConfig, Trace,
};

pub type RuleId = u32;
pub type Priority = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RulesetError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("rule {id}: {msg}")]
    InvalidRule { id: RuleId, msg: String },
    #[error("duplicate rule id {0}")]
    DuplicateId(RuleId),
    #[error("duplicate priority {0}")]
    DuplicatePriority(Priority),
    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },
}

/// How a header field is matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Prefix(u8),
    Range(u8),
    Masked(u8),
}

impl FieldKind {
    pub fn width(self) -> u8 {
        match self {
            FieldKind::Prefix(w) | FieldKind::Range(w) | FieldKind::Masked(w) => w,
        }
    }

    pub fn max_value(self) -> u32 {
        low_mask(self.width())
    }

    pub fn is_prefix(self) -> bool {
        matches!(self, FieldKind::Prefix(_))
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldKind::Prefix(w) => write!(f, "p{w}"),
            FieldKind::Range(w) => write!(f, "r{w}"),
            FieldKind::Masked(w) => write!(f, "m{w}"),
        }
    }
}

/// `(1 << width) - 1` without overflow at width 32.
pub(crate) fn low_mask(width: u8) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

/// Mask selecting the top `len` bits of a `width`-bit field.
pub fn prefix_mask(width: u8, len: u8) -> u32 {
    let len = len.min(width);
    low_mask(width) & !low_mask(width - len)
}

/// Ordered list of field kinds shared by a ruleset and its packets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schema {
    fields: Vec<FieldKind>,
}

impl Schema {
    pub fn new(fields: Vec<FieldKind>) -> Result<Self, RulesetError> {
        if fields.is_empty() {
            return Err(RulesetError::Schema("no fields".into()));
        }
        for kind in &fields {
            let w = kind.width();
            if w == 0 || w > 32 {
                return Err(RulesetError::Schema(format!(
                    "field width {w} outside 1..=32"
                )));
            }
        }
        let prefix_bits: u32 = fields
            .iter()
            .filter(|k| k.is_prefix())
            .map(|k| u32::from(k.width()))
            .sum();
        if prefix_bits > 128 {
            return Err(RulesetError::Schema(format!(
                "prefix fields span {prefix_bits} bits, at most 128 supported"
            )));
        }
        Ok(Self { fields })
    }

    /// SIP, DIP (prefix), SP, DP (range), protocol (masked).
    pub fn five_tuple() -> Self {
        Self {
            fields: vec![
                FieldKind::Prefix(32),
                FieldKind::Prefix(32),
                FieldKind::Range(16),
                FieldKind::Range(16),
                FieldKind::Masked(8),
            ],
        }
    }

    /// `count` prefix fields of `width` bits each.
    pub fn prefixes(count: usize, width: u8) -> Result<Self, RulesetError> {
        Self::new(vec![FieldKind::Prefix(width); count])
    }

    pub fn fields(&self) -> &[FieldKind] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Indices of the prefix fields; these form tuple signatures.
    pub fn signature_fields(&self) -> Vec<usize> {
        self.fields
            .iter()
            .enumerate()
            .filter(|(_, k)| k.is_prefix())
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of 16-bit feature segments a packet of this schema produces.
    pub fn segment_count(&self) -> usize {
        self.fields
            .iter()
            .map(|k| usize::from(k.width()).div_ceil(SEGMENT_BITS as usize))
            .sum()
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, k) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

impl FromStr for Schema {
    type Err = RulesetError;

    /// Accepts `5tuple` or a comma list such as `p32,p32,r16,r16,m8`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("5tuple") || s.eq_ignore_ascii_case("five-tuple") {
            return Ok(Self::five_tuple());
        }
        let mut fields = Vec::new();
        for tok in s.split(',') {
            let tok = tok.trim();
            let bad = || RulesetError::Schema(format!("bad field kind {tok:?}"));
            let (kind, width) = tok.split_at_checked(1).ok_or_else(bad)?;
            let width: u8 = width.parse().map_err(|_| bad())?;
            fields.push(match kind {
                "p" => FieldKind::Prefix(width),
                "r" => FieldKind::Range(width),
                "m" => FieldKind::Masked(width),
                _ => return Err(bad()),
            });
        }
        Self::new(fields)
    }
}

/// Per-field match condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    /// Top `len` bits of the field equal those of `value`.
    Prefix { value: u32, len: u8 },
    /// `lo <= p <= hi`.
    Range { lo: u32, hi: u32 },
    /// `p & mask == value`.
    Masked { value: u32, mask: u32 },
}

impl Condition {
    pub fn wildcard(kind: FieldKind) -> Self {
        match kind {
            FieldKind::Prefix(_) => Condition::Prefix { value: 0, len: 0 },
            FieldKind::Range(w) => Condition::Range {
                lo: 0,
                hi: low_mask(w),
            },
            FieldKind::Masked(_) => Condition::Masked { value: 0, mask: 0 },
        }
    }

    #[inline]
    pub fn matches(&self, kind: FieldKind, p: u32) -> bool {
        match *self {
            Condition::Prefix { value, len } => {
                let mask = prefix_mask(kind.width(), len);
                p & mask == value
            }
            Condition::Range { lo, hi } => lo <= p && p <= hi,
            Condition::Masked { value, mask } => p & mask == value,
        }
    }

    pub fn prefix_len(&self) -> Option<u8> {
        match *self {
            Condition::Prefix { len, .. } => Some(len),
            _ => None,
        }
    }

    fn validate(&self, kind: FieldKind) -> Result<(), String> {
        let w = kind.width();
        let max = low_mask(w);
        match (*self, kind) {
            (Condition::Prefix { value, len }, FieldKind::Prefix(_)) => {
                if len > w {
                    return Err(format!("prefix length {len} exceeds field width {w}"));
                }
                if value & !prefix_mask(w, len) != 0 {
                    return Err(format!("prefix value {value:#x} has bits below /{len}"));
                }
            }
            (Condition::Range { lo, hi }, FieldKind::Range(_)) => {
                if lo > hi || hi > max {
                    return Err(format!("range {lo}..{hi} invalid for width {w}"));
                }
            }
            (Condition::Masked { value, mask }, FieldKind::Masked(_)) => {
                if mask > max || value & !mask != 0 {
                    return Err(format!("masked {value:#x}/{mask:#x} invalid for width {w}"));
                }
            }
            (c, k) => return Err(format!("condition {c:?} does not fit field kind {k}")),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub id: RuleId,
    pub priority: Priority,
    pub conditions: Vec<Condition>,
    pub action: u32,
}

impl Rule {
    pub fn new(id: RuleId, priority: Priority, conditions: Vec<Condition>, action: u32) -> Self {
        Self {
            id,
            priority,
            conditions,
            action,
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), RulesetError> {
        let invalid = |msg: String| RulesetError::InvalidRule { id: self.id, msg };
        if self.conditions.len() != schema.len() {
            return Err(invalid(format!(
                "{} conditions for a {}-field schema",
                self.conditions.len(),
                schema.len()
            )));
        }
        for (c, &k) in self.conditions.iter().zip(schema.fields()) {
            c.validate(k).map_err(invalid)?;
        }
        Ok(())
    }

    #[inline]
    pub fn matches(&self, schema: &Schema, packet: &Packet) -> bool {
        self.conditions
            .iter()
            .zip(schema.fields())
            .zip(packet.values())
            .all(|((c, &k), &p)| c.matches(k, p))
    }

    /// Prefix lengths of the signature fields (`l^R`).
    pub fn prefix_lengths(&self, signature_fields: &[usize]) -> Vec<u8> {
        signature_fields
            .iter()
            .map(|&i| self.conditions[i].prefix_len().unwrap_or(0))
            .collect()
    }
}

/// Header values, one per schema field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Packet(Vec<u32>);

impl Packet {
    pub fn new(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn check(&self, schema: &Schema) -> bool {
        self.0.len() == schema.len()
            && self
                .0
                .iter()
                .zip(schema.fields())
                .all(|(&v, k)| v <= k.max_value())
    }
}

impl From<Vec<u32>> for Packet {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

/// An immutable, validated set of rules with unique ids and priorities.
#[derive(Debug, Clone)]
pub struct Ruleset {
    schema: Schema,
    rules: Vec<Rule>,
    by_id: HashMap<RuleId, usize>,
    /// Rule positions sorted by ascending priority value.
    scan_order: Vec<usize>,
}

impl Ruleset {
    pub fn new(schema: Schema, rules: Vec<Rule>) -> Result<Self, RulesetError> {
        let mut by_id = HashMap::with_capacity(rules.len());
        let mut priorities = std::collections::HashSet::with_capacity(rules.len());
        for (i, r) in rules.iter().enumerate() {
            r.validate(&schema)?;
            if by_id.insert(r.id, i).is_some() {
                return Err(RulesetError::DuplicateId(r.id));
            }
            if !priorities.insert(r.priority) {
                return Err(RulesetError::DuplicatePriority(r.priority));
            }
        }
        let mut scan_order: Vec<usize> = (0..rules.len()).collect();
        scan_order.sort_by_key(|&i| rules[i].priority);
        Ok(Self {
            schema,
            rules,
            by_id,
            scan_order,
        })
    }

    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            rules: Vec::new(),
            by_id: HashMap::new(),
            scan_order: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: RuleId) -> Option<&Rule> {
        self.by_id.get(&id).map(|&i| &self.rules[i])
    }

    /// Highest-precedence matching rule, by exhaustive scan.
    pub fn linear_scan(&self, packet: &Packet) -> Option<&Rule> {
        self.scan_order
            .iter()
            .map(|&i| &self.rules[i])
            .find(|r| r.matches(&self.schema, packet))
    }

    pub fn into_rules(self) -> Vec<Rule> {
        self.rules
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    fn bits(pattern: &str) -> Condition {
        let len = pattern.chars().take_while(|c| *c != '*').count() as u8;
        let mut value = 0;
        for (i, c) in pattern.chars().enumerate() {
            if c == '1' {
                value |= 1 << (pattern.len() - 1 - i);
            }
        }
        Condition::Prefix { value, len }
    }

    /// The 8-rule, two 3-bit field example ruleset. Rule `Rn` has id and
    /// priority `n`.
    pub fn eight_rules() -> Ruleset {
        let rows = [
            ("000", "011"),
            ("000", "101"),
            ("00*", "11*"),
            ("110", "***"),
            ("111", "***"),
            ("***", "011"),
            ("***", "010"),
            ("0**", "0**"),
        ];
        let rules = rows
            .iter()
            .enumerate()
            .map(|(i, (x, y))| {
                let n = i as u32 + 1;
                Rule::new(n, n, vec![bits(x), bits(y)], 100 + n)
            })
            .collect();
        Ruleset::new(Schema::prefixes(2, 3).unwrap(), rules).unwrap()
    }

    pub fn eight_rules_rule(id: RuleId, priority: Priority, x: &str, y: &str) -> Rule {
        Rule::new(id, priority, vec![bits(x), bits(y)], 100 + id)
    }

    pub fn universe() -> Vec<Packet> {
        (0..8u32)
            .flat_map(|x| (0..8u32).map(move |y| Packet::new(vec![x, y])))
            .collect()
    }
}
