//! Tuple space middleware.
//!
//! Rules are grouped by the prefix lengths of their prefix fields (the
//! tuple signature). Each tuple is a hash table keyed by packet values
//! truncated to the signature; buckets hold rules in ascending priority
//! value. The tuple set is fixed once built: immediate updates only move
//! rules in and out of existing tuples, which keeps the model's class space
//! valid.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::hash::BuildHasherDefault;

use thiserror::Error;

use crate::ruleset::{
    parse_rule_line, prefix_mask, serialize_rule, Packet, Priority, Rule, RuleId, Ruleset,
    RulesetError, Schema,
};

pub type TupleIdx = usize;
pub type HashKey = u128;

type FixedState = BuildHasherDefault<DefaultHasher>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TssError {
    #[error("index has no tuples")]
    EmptyIndex,
    #[error("no tuple can host rule {0}: every tuple is longer than the rule in some field")]
    NoCandidateTuple(RuleId),
    #[error("rule id {0} already present")]
    DuplicateId(RuleId),
    #[error("priority {0} already in use")]
    DuplicatePriority(Priority),
    #[error(transparent)]
    Rule(#[from] RulesetError),
    #[error("index file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Prefix lengths of the signature fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TupleSignature(pub Vec<u8>);

impl TupleSignature {
    pub fn lengths(&self) -> &[u8] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().map(|&l| u32::from(l)).sum()
    }

    /// `self[i] <= other[i]` for every field.
    pub fn fits_under(&self, other: &[u8]) -> bool {
        self.0.iter().zip(other).all(|(t, r)| t <= r)
    }
}

impl fmt::Display for TupleSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Masks each value to its signature length and concatenates the results
/// big-endian into one key.
pub fn truncate_key(values: &[u32], widths: &[u8], signature: &[u8]) -> HashKey {
    values
        .iter()
        .zip(widths)
        .zip(signature)
        .fold(0, |key, ((&v, &w), &len)| {
            (key << w) | HashKey::from(v & prefix_mask(w, len))
        })
}

#[derive(Debug, Clone)]
pub struct Tuple {
    index: TupleIdx,
    signature: TupleSignature,
    buckets: HashMap<HashKey, Vec<Rule>, FixedState>,
    len: usize,
    max_precedence: Option<Priority>,
}

impl Tuple {
    fn new(index: TupleIdx, signature: TupleSignature) -> Self {
        Self {
            index,
            signature,
            buckets: HashMap::default(),
            len: 0,
            max_precedence: None,
        }
    }

    pub fn index(&self) -> TupleIdx {
        self.index
    }

    pub fn signature(&self) -> &TupleSignature {
        &self.signature
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Smallest priority value held, `None` when empty.
    pub fn max_precedence(&self) -> Option<Priority> {
        self.max_precedence
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.buckets.values().flatten()
    }

    fn insert(&mut self, key: HashKey, rule: Rule) {
        self.max_precedence = Some(
            self.max_precedence
                .map_or(rule.priority, |p| p.min(rule.priority)),
        );
        let bucket = self.buckets.entry(key).or_default();
        let pos = bucket.partition_point(|r| r.priority < rule.priority);
        bucket.insert(pos, rule);
        self.len += 1;
    }

    fn remove(&mut self, id: RuleId) -> Option<Rule> {
        let (key, pos) = self
            .buckets
            .iter()
            .find_map(|(k, b)| b.iter().position(|r| r.id == id).map(|i| (*k, i)))?;
        let bucket = self.buckets.get_mut(&key).expect("key just found");
        let rule = bucket.remove(pos);
        if bucket.is_empty() {
            self.buckets.remove(&key);
        }
        self.len -= 1;
        if self.max_precedence == Some(rule.priority) {
            self.max_precedence = self.rules().map(|r| r.priority).min();
        }
        Some(rule)
    }
}

/// Rule located by a lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hit {
    pub rule_id: RuleId,
    pub priority: Priority,
    pub action: u32,
    pub tuple: TupleIdx,
}

/// Outcome of a lookup plus the memory accesses it cost: one per bucket
/// probe and one per rule compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub hit: Option<Hit>,
    pub access_count: u32,
}

impl MatchResult {
    pub fn rule_id(&self) -> Option<RuleId> {
        self.hit.map(|h| h.rule_id)
    }
}

/// Field edits accepted by [`TssIndex::modify_rule`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RuleEdit {
    pub action: Option<u32>,
    pub priority: Option<Priority>,
}

#[derive(Debug, Clone)]
pub struct TssIndex {
    schema: Schema,
    sig_fields: Vec<usize>,
    sig_widths: Vec<u8>,
    tuples: Vec<Tuple>,
    precedence_order: Vec<TupleIdx>,
    mismatch_count: u64,
    locator: HashMap<RuleId, TupleIdx>,
    priorities: HashSet<Priority>,
    next_id: RuleId,
}

impl TssIndex {
    fn empty(schema: Schema) -> Self {
        let sig_fields = schema.signature_fields();
        let sig_widths = sig_fields
            .iter()
            .map(|&i| schema.fields()[i].width())
            .collect();
        Self {
            schema,
            sig_fields,
            sig_widths,
            tuples: Vec::new(),
            precedence_order: Vec::new(),
            mismatch_count: 0,
            locator: HashMap::new(),
            priorities: HashSet::new(),
            next_id: 0,
        }
    }

    /// One tuple per distinct signature, in first-occurrence order.
    pub fn build(ruleset: &Ruleset) -> Self {
        let mut tss = Self::empty(ruleset.schema().clone());
        let mut by_sig: HashMap<Vec<u8>, TupleIdx> = HashMap::new();
        for rule in ruleset.rules() {
            let sig = rule.prefix_lengths(&tss.sig_fields);
            let idx = *by_sig.entry(sig.clone()).or_insert_with(|| {
                tss.tuples
                    .push(Tuple::new(tss.tuples.len(), TupleSignature(sig)));
                tss.tuples.len() - 1
            });
            tss.place(idx, rule.clone());
        }
        tss.refresh_order();
        tss
    }

    fn place(&mut self, idx: TupleIdx, rule: Rule) {
        let key = self.rule_key(&rule, idx);
        self.locator.insert(rule.id, idx);
        self.priorities.insert(rule.priority);
        self.next_id = self.next_id.max(rule.id.saturating_add(1));
        self.tuples[idx].insert(key, rule);
    }

    fn refresh_order(&mut self) {
        let mut order: Vec<TupleIdx> = (0..self.tuples.len()).collect();
        // Empty tuples sort last.
        order.sort_by_key(|&i| (self.tuples[i].max_precedence.unwrap_or(Priority::MAX), i));
        self.precedence_order = order;
    }

    fn rule_key(&self, rule: &Rule, idx: TupleIdx) -> HashKey {
        let values: Vec<u32> = self
            .sig_fields
            .iter()
            .map(|&f| match rule.conditions[f] {
                crate::ruleset::Condition::Prefix { value, .. } => value,
                _ => 0,
            })
            .collect();
        truncate_key(&values, &self.sig_widths, &self.tuples[idx].signature.0)
    }

    #[inline]
    fn packet_key(&self, packet: &Packet, idx: TupleIdx) -> HashKey {
        let sig = &self.tuples[idx].signature.0;
        let vals = packet.values();
        self.sig_fields
            .iter()
            .zip(&self.sig_widths)
            .zip(sig)
            .fold(0, |key, ((&f, &w), &len)| {
                (key << w) | HashKey::from(vals[f] & prefix_mask(w, len))
            })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn tuple_count(&self) -> usize {
        self.tuples.len()
    }

    pub fn rule_count(&self) -> usize {
        self.locator.len()
    }

    pub fn precedence_order(&self) -> &[TupleIdx] {
        &self.precedence_order
    }

    /// Rules inserted since build whose own signature differs from their
    /// host tuple's. Deletions do not decrement it.
    pub fn mismatch_count(&self) -> u64 {
        self.mismatch_count
    }

    pub fn locate(&self, id: RuleId) -> Option<TupleIdx> {
        self.locator.get(&id).copied()
    }

    /// Next unused rule id.
    pub fn next_rule_id(&self) -> RuleId {
        self.next_id
    }

    /// Next priority value below every current rule's precedence.
    pub fn lowest_precedence_priority(&self) -> Priority {
        self.priorities.iter().max().map_or(0, |p| p + 1)
    }

    pub fn priority_in_use(&self, p: Priority) -> bool {
        self.priorities.contains(&p)
    }

    pub fn rule(&self, id: RuleId) -> Option<&Rule> {
        let idx = self.locate(id)?;
        self.tuples[idx].rules().find(|r| r.id == id)
    }

    /// Current rules, ascending priority value.
    pub fn rules(&self) -> Vec<Rule> {
        let mut all: Vec<Rule> = self
            .tuples
            .iter()
            .flat_map(|t| t.rules().cloned())
            .collect();
        all.sort_by_key(|r| r.priority);
        all
    }

    pub fn to_ruleset(&self) -> Ruleset {
        Ruleset::new(self.schema.clone(), self.rules())
            .expect("index keeps ids and priorities unique")
    }

    /// Probes one tuple and returns the first (highest-precedence) rule in
    /// the bucket that fully matches.
    pub fn lookup_in_tuple(&self, idx: TupleIdx, packet: &Packet) -> MatchResult {
        let tuple = &self.tuples[idx];
        let mut access_count = 1;
        let key = self.packet_key(packet, idx);
        let hit = tuple.buckets.get(&key).and_then(|bucket| {
            bucket.iter().find_map(|r| {
                access_count += 1;
                r.matches(&self.schema, packet).then_some(Hit {
                    rule_id: r.id,
                    priority: r.priority,
                    action: r.action,
                    tuple: idx,
                })
            })
        });
        MatchResult { hit, access_count }
    }

    /// Visits tuples best-precedence first, skipping `skip`, and stops once
    /// no remaining tuple can beat the current best.
    pub fn ordered_search(&self, packet: &Packet, skip: Option<TupleIdx>) -> MatchResult {
        self.ordered_search_from(packet, skip, MatchResult::default())
    }

    /// Like [`Self::ordered_search`], seeded with an existing best.
    pub fn ordered_search_from(
        &self,
        packet: &Packet,
        skip: Option<TupleIdx>,
        start: MatchResult,
    ) -> MatchResult {
        let mut best = start;
        for &idx in &self.precedence_order {
            let Some(max_prec) = self.tuples[idx].max_precedence else {
                break; // empty tuples are ordered last
            };
            if best.hit.is_some_and(|h| h.priority <= max_prec) {
                break;
            }
            if Some(idx) == skip {
                continue;
            }
            let r = self.lookup_in_tuple(idx, packet);
            best.access_count += r.access_count;
            if let Some(h) = r.hit {
                if best.hit.is_none_or(|b| h.priority < b.priority) {
                    best.hit = Some(h);
                }
            }
        }
        best
    }

    /// Probes every non-empty tuple except `skip`, no pruning.
    pub fn exhaustive_search(&self, packet: &Packet, skip: Option<TupleIdx>) -> MatchResult {
        let mut best = MatchResult::default();
        for idx in 0..self.tuples.len() {
            if Some(idx) == skip || self.tuples[idx].is_empty() {
                continue;
            }
            let r = self.lookup_in_tuple(idx, packet);
            best.access_count += r.access_count;
            if let Some(h) = r.hit {
                if best.hit.is_none_or(|b| h.priority < b.priority) {
                    best.hit = Some(h);
                }
            }
        }
        best
    }

    /// Restricted insertion: exact signature if present, otherwise the
    /// first tuple (construction order) with the largest total length among
    /// those no longer than the rule in any field.
    pub fn insert_rule(&mut self, rule: Rule) -> Result<TupleIdx, TssError> {
        if self.tuples.is_empty() {
            return Err(TssError::EmptyIndex);
        }
        rule.validate(&self.schema)?;
        if self.locator.contains_key(&rule.id) {
            return Err(TssError::DuplicateId(rule.id));
        }
        if self.priorities.contains(&rule.priority) {
            return Err(TssError::DuplicatePriority(rule.priority));
        }
        let own = rule.prefix_lengths(&self.sig_fields);
        let (idx, exact) = match self.tuples.iter().position(|t| t.signature.0 == own) {
            Some(i) => (i, true),
            None => {
                let mut best: Option<(TupleIdx, u32)> = None;
                for t in &self.tuples {
                    if t.signature.fits_under(&own)
                        && best.is_none_or(|(_, total)| t.signature.total() > total)
                    {
                        best = Some((t.index, t.signature.total()));
                    }
                }
                (best.ok_or(TssError::NoCandidateTuple(rule.id))?.0, false)
            }
        };
        self.place(idx, rule);
        if !exact {
            self.mismatch_count += 1;
        }
        self.refresh_order();
        Ok(idx)
    }

    /// Removes a rule; its tuple stays even if emptied.
    pub fn delete_rule(&mut self, id: RuleId) -> bool {
        let Some(idx) = self.locator.remove(&id) else {
            return false;
        };
        let rule = self.tuples[idx]
            .remove(id)
            .expect("locator and tuple contents agree");
        self.priorities.remove(&rule.priority);
        self.refresh_order();
        true
    }

    pub fn modify_rule(&mut self, id: RuleId, edit: RuleEdit) -> Result<bool, TssError> {
        let Some(idx) = self.locate(id) else {
            return Ok(false);
        };
        if let Some(p) = edit.priority {
            let current = self.rule(id).expect("located").priority;
            if p != current && self.priorities.contains(&p) {
                return Err(TssError::DuplicatePriority(p));
            }
        }
        let mut rule = self.tuples[idx].remove(id).expect("located");
        self.priorities.remove(&rule.priority);
        if let Some(a) = edit.action {
            rule.action = a;
        }
        if let Some(p) = edit.priority {
            rule.priority = p;
        }
        self.place(idx, rule);
        self.refresh_order();
        Ok(true)
    }

    /// Tab-separated per-tuple summary with a header row.
    pub fn summary(&self) -> String {
        let mut out = String::from("tuple\tsignature\trules\tmax_precedence\n");
        for t in &self.tuples {
            let prec = t
                .max_precedence
                .map_or_else(|| "-".to_string(), |p| p.to_string());
            let _ = writeln!(out, "{}\t{}\t{}\t{}", t.index, t.signature, t.len, prec);
        }
        out
    }

    /// Full text form: tuples, their rules and the mismatch counter.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# tang-tss v1\n");
        let _ = writeln!(out, "schema {}", self.schema);
        let _ = writeln!(out, "mismatch {}", self.mismatch_count);
        for t in &self.tuples {
            let _ = writeln!(out, "tuple {} {}", t.index, t.signature);
        }
        for r in self.rules() {
            let _ = writeln!(
                out,
                "rule {} {} {} {} {}",
                r.id,
                r.priority,
                r.action,
                self.locator[&r.id],
                serialize_rule(&r, &self.schema)
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TssError> {
        let mut tss: Option<Self> = None;
        let mut mismatch = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| TssError::Format {
                line: lineno + 1,
                msg,
            };
            let (kw, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kw {
                "schema" => {
                    let schema: Schema =
                        rest.parse().map_err(|e: RulesetError| err(e.to_string()))?;
                    tss = Some(Self::empty(schema));
                }
                "mismatch" => {
                    mismatch = rest
                        .trim()
                        .parse()
                        .map_err(|_| err("bad mismatch count".into()))?;
                }
                "tuple" => {
                    let t = tss
                        .as_mut()
                        .ok_or_else(|| err("tuple before schema".into()))?;
                    let (idx, sig) = rest
                        .split_once(' ')
                        .ok_or_else(|| err("tuple needs index and signature".into()))?;
                    let idx: TupleIdx = idx.parse().map_err(|_| err("bad tuple index".into()))?;
                    if idx != t.tuples.len() {
                        return Err(err(format!("tuple {idx} out of order")));
                    }
                    let lengths = sig
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.trim().parse::<u8>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| err("bad signature".into()))?;
                    if lengths.len() != t.sig_fields.len()
                        || lengths.iter().zip(&t.sig_widths).any(|(l, w)| l > w)
                    {
                        return Err(err("signature does not fit schema".into()));
                    }
                    t.tuples.push(Tuple::new(idx, TupleSignature(lengths)));
                }
                "rule" => {
                    let t = tss
                        .as_mut()
                        .ok_or_else(|| err("rule before schema".into()))?;
                    let mut parts = rest.splitn(5, ' ');
                    let mut num = |what: &str| -> Result<u32, TssError> {
                        parts
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| err(format!("bad {what}")))
                    };
                    let id = num("rule id")?;
                    let priority = num("priority")?;
                    let action = num("action")?;
                    let idx = num("tuple index")? as TupleIdx;
                    let body = parts
                        .next()
                        .ok_or_else(|| err("missing rule body".into()))?;
                    let conditions = parse_rule_line(body, &t.schema).map_err(err)?;
                    let rule = Rule::new(id, priority, conditions, action);
                    rule.validate(&t.schema)?;
                    if idx >= t.tuples.len() {
                        return Err(err(format!("unknown tuple {idx}")));
                    }
                    let sig = &t.tuples[idx].signature;
                    if !sig.fits_under(&rule.prefix_lengths(&t.sig_fields)) {
                        return Err(err(format!("rule {id} cannot live in tuple {idx}")));
                    }
                    if t.locator.contains_key(&id) {
                        return Err(TssError::DuplicateId(id));
                    }
                    if t.priorities.contains(&priority) {
                        return Err(TssError::DuplicatePriority(priority));
                    }
                    t.place(idx, rule);
                }
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }
        let mut tss = tss.ok_or(TssError::Format {
            line: 0,
            msg: "missing schema".into(),
        })?;
        tss.mismatch_count = mismatch;
        tss.refresh_order();
        Ok(tss)
    }
}
