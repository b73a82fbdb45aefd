//! Synthetic rulesets and traffic.

use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    low_mask, prefix_mask, Condition, FieldKind, Packet, Rule, RuleId, Ruleset, RulesetError,
    Schema,
};

/// Knobs for [`generate_ruleset`].
#[derive(Debug, Clone)]
pub struct RuleGenConfig {
    pub rules: usize,
    /// Prefix-length vectors to draw signatures from. Entries whose length
    /// differs from the schema's prefix-field count are ignored; an empty
    /// palette draws each length uniformly.
    pub signatures: Vec<Vec<u8>>,
    /// Distinct base addresses per prefix field. Small pools yield heavily
    /// overlapping rules.
    pub address_pool: usize,
    pub seed: u64,
}

impl RuleGenConfig {
    /// ACL-like signature mix for 5-tuple rules.
    pub fn acl(rules: usize, seed: u64) -> Self {
        Self {
            rules,
            signatures: vec![
                vec![32, 32],
                vec![32, 24],
                vec![24, 32],
                vec![24, 24],
                vec![16, 32],
                vec![32, 16],
                vec![32, 0],
                vec![0, 32],
                vec![16, 16],
                vec![8, 24],
                vec![24, 8],
                vec![0, 0],
            ],
            address_pool: 16,
            seed,
        }
    }
}

const WELL_KNOWN_PORTS: [u32; 10] = [20, 21, 22, 25, 53, 80, 123, 443, 3306, 8080];

/// Rule `i` gets id, priority and action `i`.
pub fn generate_ruleset(schema: &Schema, config: &RuleGenConfig) -> Ruleset {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sig_fields = schema.signature_fields();
    let palette: Vec<&Vec<u8>> = config
        .signatures
        .iter()
        .filter(|s| s.len() == sig_fields.len())
        .collect();
    let pools: Vec<Vec<u32>> = schema
        .fields()
        .iter()
        .map(|k| {
            (0..config.address_pool.max(1))
                .map(|_| rng.random::<u32>() & k.max_value())
                .collect()
        })
        .collect();

    let rules = (0..config.rules)
        .map(|i| {
            let sig: Vec<u8> = match palette.choose(&mut rng) {
                Some(s) => s.to_vec(),
                None => sig_fields
                    .iter()
                    .map(|&f| rng.random_range(0..=schema.fields()[f].width()))
                    .collect(),
            };
            let mut next_sig = sig.iter();
            let conditions = schema
                .fields()
                .iter()
                .enumerate()
                .map(|(f, &kind)| match kind {
                    FieldKind::Prefix(w) => {
                        let len = (*next_sig.next().expect("one length per prefix field")).min(w);
                        let base = *pools[f].choose(&mut rng).expect("pool non-empty");
                        let top = w.min(8);
                        let value = if rng.random_bool(0.5) {
                            base
                        } else {
                            (base & prefix_mask(w, top)) | (rng.random::<u32>() & low_mask(w - top))
                        };
                        Condition::Prefix {
                            value: value & prefix_mask(w, len),
                            len,
                        }
                    }
                    FieldKind::Range(w) => random_range(&mut rng, w),
                    FieldKind::Masked(w) => {
                        let r: f64 = rng.random();
                        if r < 0.4 {
                            Condition::Masked { value: 0, mask: 0 }
                        } else {
                            let value = if w == 8 {
                                if r < 0.75 {
                                    6
                                } else {
                                    17
                                }
                            } else {
                                rng.random::<u32>() & low_mask(w)
                            };
                            Condition::Masked {
                                value,
                                mask: low_mask(w),
                            }
                        }
                    }
                })
                .collect();
            let id = i as u32;
            Rule::new(id, id, conditions, id)
        })
        .collect();
    Ruleset::new(schema.clone(), rules).expect("generated rules are valid")
}

fn random_range(rng: &mut impl Rng, width: u8) -> Condition {
    let max = low_mask(width);
    let r: f64 = rng.random();
    if r < 0.5 {
        Condition::Range { lo: 0, hi: max }
    } else if r < 0.8 {
        let v = if width == 16 {
            *WELL_KNOWN_PORTS.choose(rng).expect("non-empty")
        } else {
            rng.random::<u32>() & max
        };
        Condition::Range { lo: v, hi: v }
    } else if r < 0.9 && width == 16 {
        if rng.random_bool(0.5) {
            Condition::Range { lo: 1024, hi: max }
        } else {
            Condition::Range { lo: 0, hi: 1023 }
        }
    } else {
        let a = rng.random::<u32>() & max;
        let b = rng.random::<u32>() & max;
        Condition::Range {
            lo: a.min(b),
            hi: a.max(b),
        }
    }
}

/// Packets plus the linear-scan winner for each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub packets: Vec<Packet>,
    pub truth: Vec<Option<RuleId>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Recomputes ground truth against `ruleset`.
    pub fn relabel(&mut self, ruleset: &Ruleset) {
        self.truth = self
            .packets
            .iter()
            .map(|p| ruleset.linear_scan(p).map(|r| r.id))
            .collect();
    }
}

fn sample_inside(rng: &mut impl Rng, kind: FieldKind, cond: &Condition) -> u32 {
    let max = kind.max_value();
    match *cond {
        Condition::Prefix { value, len } => {
            value | (rng.random::<u32>() & !prefix_mask(kind.width(), len) & max)
        }
        Condition::Range { lo, hi } => rng.random_range(lo..=hi),
        Condition::Masked { value, mask } => value | (rng.random::<u32>() & !mask & max),
    }
}

/// Picks a rule uniformly per packet and samples a point inside it. Truth is
/// the linear-scan winner, which may outrank the sampled rule. An empty
/// ruleset yields uniformly random, unmatched packets.
pub fn generate_traffic(ruleset: &Ruleset, n: usize, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = ruleset.schema();
    let packets: Vec<Packet> = (0..n)
        .map(|_| match ruleset.rules().choose(&mut rng) {
            Some(rule) => Packet::new(
                schema
                    .fields()
                    .iter()
                    .zip(&rule.conditions)
                    .map(|(&k, c)| sample_inside(&mut rng, k, c))
                    .collect(),
            ),
            None => Packet::new(
                schema
                    .fields()
                    .iter()
                    .map(|k| rng.random::<u32>() & k.max_value())
                    .collect(),
            ),
        })
        .collect();
    let mut trace = Trace {
        packets,
        truth: Vec::new(),
    };
    trace.relabel(ruleset);
    trace
}

/// One packet per line, decimal field values, then the truth id or `-`.
pub fn write_trace(trace: &Trace) -> String {
    let mut out = String::new();
    for (i, p) in trace.packets.iter().enumerate() {
        for (j, v) in p.values().iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v}");
        }
        match trace.truth.get(i) {
            Some(Some(id)) => {
                let _ = write!(out, " {id}");
            }
            Some(None) => out.push_str(" -"),
            None => {}
        }
        out.push('\n');
    }
    out
}

/// Parses [`write_trace`] output. The truth column is optional, but must be
/// present on every line or on none; without it `truth` is empty.
pub fn read_trace(text: &str, schema: &Schema) -> Result<Trace, RulesetError> {
    let mut trace = Trace::default();
    let mut with_truth = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| RulesetError::Trace {
            line: lineno + 1,
            msg,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let has_truth = match toks.len() {
            n if n == schema.len() => false,
            n if n == schema.len() + 1 => true,
            n => return Err(err(format!("{n} columns, expected {}", schema.len()))),
        };
        if *with_truth.get_or_insert(has_truth) != has_truth {
            return Err(err("truth column present on some lines only".into()));
        }
        let values = toks[..schema.len()]
            .iter()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| err(format!("bad value {t:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let packet = Packet::new(values);
        if !packet.check(schema) {
            return Err(err("value exceeds field width".into()));
        }
        trace.packets.push(packet);
        if has_truth {
            let t = toks[schema.len()];
            trace.truth.push(if t == "-" {
                None
            } else {
                Some(t.parse().map_err(|_| err(format!("bad rule id {t:?}")))?)
            });
        }
    }
    Ok(trace)
}
