//! Model-free classifiers used as references and for comparison runs.

use std::fmt;
use std::str::FromStr;

use crate::ruleset::{Packet, RuleId, Ruleset};
use crate::tss::{MatchResult, TssIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Priority-ordered tuple scan with pruning.
    Pstss,
    /// Scan of every rule in priority order.
    Linear,
}

impl Baseline {
    pub const ALL: [Baseline; 2] = [Baseline::Pstss, Baseline::Linear];
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Pstss => "pstss",
            Baseline::Linear => "linear",
        })
    }
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pstss" => Ok(Baseline::Pstss),
            "linear" => Ok(Baseline::Linear),
            other => Err(format!(
                "unknown baseline {other:?} (expected pstss or linear)"
            )),
        }
    }
}

pub fn pstss(tss: &TssIndex, packet: &Packet) -> MatchResult {
    tss.ordered_search(packet, None)
}

pub fn linear(ruleset: &Ruleset, packet: &Packet) -> Option<RuleId> {
    ruleset.linear_scan(packet).map(|r| r.id)
}

/// Winning rule ids for every packet under `baseline`.
pub fn classify_all(
    baseline: Baseline,
    tss: &TssIndex,
    ruleset: &Ruleset,
    packets: &[Packet],
) -> Vec<Option<RuleId>> {
    packets
        .iter()
        .map(|p| match baseline {
            Baseline::Pstss => pstss(tss, p).rule_id(),
            Baseline::Linear => linear(ruleset, p),
        })
        .collect()
}
