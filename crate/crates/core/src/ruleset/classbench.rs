//! ClassBench-style rule text.
//!
//! One rule per `@`-prefixed line. Per field, in schema order:
//!
//! * 32-bit prefix: `a.b.c.d/len`
//! * narrower prefix: a ternary pattern such as `01*`, or `value/len`
//! * range: `lo : hi`
//! * masked: `0x06/0xFF`
//!
//! Anything after the last schema field (e.g. the ClassBench flags column)
//! is ignored. The rule on line `i` (counting only rule lines) gets id,
//! priority and action `i`.

use std::fmt::Write as _;

use super::{low_mask, prefix_mask, Condition, FieldKind, Rule, Ruleset, RulesetError, Schema};

pub fn parse_ruleset(text: &str, schema: &Schema) -> Result<Ruleset, RulesetError> {
    let mut rules = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let idx = rules.len() as u32;
        let conditions = parse_rule_line(line, schema).map_err(|msg| RulesetError::Parse {
            line: lineno + 1,
            msg,
        })?;
        rules.push(Rule::new(idx, idx, conditions, idx));
    }
    Ruleset::new(schema.clone(), rules)
}

/// Decodes the conditions of a single `@...` line.
pub fn parse_rule_line(line: &str, schema: &Schema) -> Result<Vec<Condition>, String> {
    let body = line
        .trim()
        .strip_prefix('@')
        .ok_or_else(|| "rule line must start with '@'".to_string())?;
    let mut tokens = body.split_whitespace();
    let mut conditions = Vec::with_capacity(schema.len());
    for (field, &kind) in schema.fields().iter().enumerate() {
        let tok = tokens
            .next()
            .ok_or_else(|| format!("missing field {}", field + 1))?;
        let cond = match kind {
            FieldKind::Prefix(w) => parse_prefix(tok, w)?,
            FieldKind::Range(w) => {
                let (lo, hi) = if let Some((lo, hi)) = tok.split_once(':') {
                    let hi = if hi.is_empty() {
                        tokens.next().ok_or("range missing upper bound")?
                    } else {
                        hi
                    };
                    (lo.to_string(), hi.to_string())
                } else {
                    match tokens.next() {
                        Some(":") => {}
                        _ => return Err(format!("range {tok:?} missing ':'")),
                    }
                    let hi = tokens.next().ok_or("range missing upper bound")?;
                    (tok.to_string(), hi.to_string())
                };
                let lo = parse_int(&lo)?;
                let hi = parse_int(&hi)?;
                if lo > hi || hi > low_mask(w) {
                    return Err(format!("range {lo} : {hi} invalid for {w}-bit field"));
                }
                Condition::Range { lo, hi }
            }
            FieldKind::Masked(w) => {
                let (v, m) = tok
                    .split_once('/')
                    .ok_or_else(|| format!("masked field {tok:?} missing '/'"))?;
                let value = parse_int(v)?;
                let mask = parse_int(m)?;
                if mask > low_mask(w) || value > low_mask(w) {
                    return Err(format!("masked field {tok:?} exceeds {w} bits"));
                }
                Condition::Masked {
                    value: value & mask,
                    mask,
                }
            }
        };
        conditions.push(cond);
    }
    Ok(conditions)
}

fn parse_int(tok: &str) -> Result<u32, String> {
    let tok = tok.trim();
    let parsed = match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => tok.parse(),
    };
    parsed.map_err(|_| format!("bad integer {tok:?}"))
}

fn parse_prefix(tok: &str, width: u8) -> Result<Condition, String> {
    if let Some((addr, len)) = tok.split_once('/') {
        let len: u8 = len
            .parse()
            .map_err(|_| format!("bad prefix length in {tok:?}"))?;
        if len > width {
            return Err(format!("prefix length {len} exceeds {width} bits"));
        }
        let value = if addr.contains('.') {
            if width != 32 {
                return Err(format!("dotted address for a {width}-bit field"));
            }
            let octets: Vec<&str> = addr.split('.').collect();
            if octets.len() != 4 {
                return Err(format!("bad address {addr:?}"));
            }
            octets.iter().try_fold(0u32, |acc, o| {
                o.parse::<u8>()
                    .map(|b| (acc << 8) | u32::from(b))
                    .map_err(|_| format!("bad octet {o:?} in {addr:?}"))
            })?
        } else {
            let v = parse_int(addr)?;
            if v > low_mask(width) {
                return Err(format!("prefix value {v} exceeds {width} bits"));
            }
            v
        };
        return Ok(Condition::Prefix {
            value: value & prefix_mask(width, len),
            len,
        });
    }
    // ternary pattern
    if tok.len() != usize::from(width) {
        return Err(format!("pattern {tok:?} is not {width} bits wide"));
    }
    let mut value = 0u32;
    let mut len = 0u8;
    let mut seen_star = false;
    for c in tok.chars() {
        value <<= 1;
        match c {
            '0' | '1' if !seen_star => {
                value |= u32::from(c == '1');
                len += 1;
            }
            '*' => seen_star = true,
            _ => return Err(format!("bad prefix pattern {tok:?}")),
        }
    }
    Ok(Condition::Prefix { value, len })
}

pub fn serialize_rule(rule: &Rule, schema: &Schema) -> String {
    let mut out = String::from("@");
    for (i, (c, &kind)) in rule.conditions.iter().zip(schema.fields()).enumerate() {
        if i > 0 {
            out.push('\t');
        }
        let w = kind.width();
        match *c {
            Condition::Prefix { value, len } if w == 32 => {
                let b = value.to_be_bytes();
                let _ = write!(out, "{}.{}.{}.{}/{}", b[0], b[1], b[2], b[3], len);
            }
            Condition::Prefix { value, len } => {
                for bit in (0..w).rev() {
                    let pos = w - 1 - bit;
                    out.push(if pos >= len {
                        '*'
                    } else if value >> bit & 1 == 1 {
                        '1'
                    } else {
                        '0'
                    });
                }
            }
            Condition::Range { lo, hi } => {
                let _ = write!(out, "{lo} : {hi}");
            }
            Condition::Masked { value, mask } => {
                let digits = usize::from(w).div_ceil(4);
                let _ = write!(out, "0x{value:0digits$X}/0x{mask:0digits$X}");
            }
        }
    }
    out
}

/// Writes rules in ascending priority order, so that re-parsing preserves
/// relative precedence.
pub fn serialize_ruleset(ruleset: &Ruleset) -> String {
    let mut rules: Vec<&Rule> = ruleset.rules().iter().collect();
    rules.sort_by_key(|r| r.priority);
    let mut out = String::new();
    for r in rules {
        out.push_str(&serialize_rule(r, ruleset.schema()));
        out.push('\n');
    }
    out
}
