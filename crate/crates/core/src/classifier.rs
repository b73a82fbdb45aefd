//! Two-stage classification: predict a tuple, probe it, and fall back to an
//! ordered search over the remaining tuples when the probe finds nothing.
//!
//! A hit in the predicted tuple is returned as-is even when a better rule
//! lives elsewhere. Only `strict` mode verifies every hit globally.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::ResidualMlp;
use crate::ruleset::{segment_header, Packet, RuleId, Trace};
use crate::tss::{MatchResult, TssIndex, TupleIdx};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClassifierError {
    #[error("model predicts {model} classes but the index has {tuples} tuples")]
    ClassCount { model: usize, tuples: usize },
    #[error("model takes {model} inputs but the schema yields {schema} segments")]
    InputDim { model: usize, schema: usize },
    #[error("fixed prediction {idx} outside {tuples} tuples")]
    FixedOutOfRange { idx: TupleIdx, tuples: usize },
}

/// Source of tuple predictions.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Model(ResidualMlp<f32>),
    /// Always the same tuple.
    Fixed(TupleIdx),
    /// The tuple hosting the true winner (tuple 0 when nothing matches).
    Oracle,
}

impl Predictor {
    fn predict_one(&self, tss: &TssIndex, packet: &Packet) -> TupleIdx {
        match self {
            Predictor::Model(m) => {
                let f = segment_header(tss.schema(), packet);
                m.predict(f.as_slice())
                    .expect("dimensions checked at assembly")
            }
            Predictor::Fixed(idx) => *idx,
            Predictor::Oracle => tss.ordered_search(packet, None).hit.map_or(0, |h| h.tuple),
        }
    }

    /// Multiply-accumulates per prediction; zero for non-model predictors.
    pub fn macs(&self) -> u64 {
        match self {
            Predictor::Model(m) => m.config().macs(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassifierConfig {
    /// Verify every in-tuple hit against the other tuples.
    pub strict: bool,
    /// Action reported when nothing matches.
    pub default_action: Option<u32>,
}

/// Result of the search stage with the bookkeeping the stats need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classified {
    pub result: MatchResult,
    pub predicted: TupleIdx,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct Classifier {
    predictor: Predictor,
    tss: TssIndex,
    config: ClassifierConfig,
}

impl Classifier {
    pub fn new(
        predictor: Predictor,
        tss: TssIndex,
        config: ClassifierConfig,
    ) -> Result<Self, ClassifierError> {
        let tuples = tss.tuple_count();
        match &predictor {
            Predictor::Model(m) => {
                if m.num_classes() != tuples {
                    return Err(ClassifierError::ClassCount {
                        model: m.num_classes(),
                        tuples,
                    });
                }
                let schema = tss.schema().segment_count();
                if m.config().input_dim != schema {
                    return Err(ClassifierError::InputDim {
                        model: m.config().input_dim,
                        schema,
                    });
                }
            }
            Predictor::Fixed(idx) if *idx >= tuples => {
                return Err(ClassifierError::FixedOutOfRange { idx: *idx, tuples })
            }
            _ => {}
        }
        Ok(Self {
            predictor,
            tss,
            config,
        })
    }

    pub fn with_model(model: ResidualMlp<f32>, tss: TssIndex) -> Result<Self, ClassifierError> {
        Self::new(Predictor::Model(model), tss, ClassifierConfig::default())
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn model(&self) -> Option<&ResidualMlp<f32>> {
        match &self.predictor {
            Predictor::Model(m) => Some(m),
            _ => None,
        }
    }

    pub fn tss(&self) -> &TssIndex {
        &self.tss
    }

    /// Writer access to the index. The tuple set cannot change through
    /// it, so the predictor stays valid.
    pub fn tss_mut(&mut self) -> &mut TssIndex {
        &mut self.tss
    }

    pub fn config(&self) -> ClassifierConfig {
        self.config
    }

    pub fn set_strict(&mut self, strict: bool) {
        self.config.strict = strict;
    }

    /// Replaces the predictor, re-checking it against the index.
    pub fn set_predictor(&mut self, predictor: Predictor) -> Result<(), ClassifierError> {
        let checked = Self::new(predictor, TssIndex::clone(&self.tss), self.config)?;
        self.predictor = checked.predictor;
        Ok(())
    }

    /// First stage: one predicted tuple per packet.
    pub fn infer(&self, packets: &[Packet]) -> Vec<TupleIdx> {
        if self.tss.tuple_count() == 0 {
            return vec![0; packets.len()];
        }
        packets
            .iter()
            .map(|p| self.predictor.predict_one(&self.tss, p))
            .collect()
    }

    /// Second stage: probe the predicted tuple, fall back on a miss.
    pub fn search(&self, packet: &Packet, predicted: TupleIdx) -> Classified {
        if self.tss.tuple_count() == 0 {
            return Classified {
                result: MatchResult::default(),
                predicted,
                fallback: false,
            };
        }
        let first = self.tss.lookup_in_tuple(predicted, packet);
        if first.hit.is_some() {
            let result = if self.config.strict {
                self.tss.ordered_search_from(packet, Some(predicted), first)
            } else {
                first
            };
            Classified {
                result,
                predicted,
                fallback: false,
            }
        } else {
            Classified {
                result: self.tss.ordered_search_from(packet, Some(predicted), first),
                predicted,
                fallback: true,
            }
        }
    }

    pub fn classify_detailed(&self, packet: &Packet) -> Classified {
        let idx = self.infer(std::slice::from_ref(packet))[0];
        self.search(packet, idx)
    }

    pub fn classify(&self, packet: &Packet) -> MatchResult {
        self.classify_detailed(packet).result
    }

    pub fn classify_batch(&self, packets: &[Packet]) -> Vec<MatchResult> {
        self.infer(packets)
            .into_iter()
            .zip(packets)
            .map(|(idx, p)| self.search(p, idx).result)
            .collect()
    }

    /// Action for a result, falling back to the configured default.
    pub fn action(&self, result: &MatchResult) -> Option<u32> {
        result.hit.map(|h| h.action).or(self.config.default_action)
    }

    /// Classifies a trace and tallies accuracy against its ground truth
    /// (recomputed from the index when the trace carries none).
    pub fn evaluate(&self, trace: &Trace) -> ClassifyStats {
        let truth: Vec<Option<RuleId>> = if trace.truth.len() == trace.len() {
            trace.truth.clone()
        } else {
            trace
                .packets
                .iter()
                .map(|p| self.tss.ordered_search(p, None).rule_id())
                .collect()
        };
        let mut stats = ClassifyStats::default();
        let predicted = self.infer(&trace.packets);
        for ((p, idx), t) in trace.packets.iter().zip(predicted).zip(truth) {
            stats.record(&self.tss, &self.search(p, idx), t);
        }
        stats
    }
}

/// Counters behind the model-accuracy, classification-accuracy and
/// memory-access figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassifyStats {
    pub packets: u64,
    /// Packets whose ground truth is a rule.
    pub labeled: u64,
    /// Labeled packets whose predicted tuple hosts the true rule.
    pub model_correct: u64,
    /// Packets whose returned rule (or absence) equals the truth.
    pub classification_correct: u64,
    pub memory_accesses: u64,
    pub fallbacks: u64,
    /// In-tuple hits that lost to a better rule in another tuple.
    pub scenario1_errors: u64,
}

impl ClassifyStats {
    pub fn record(&mut self, tss: &TssIndex, c: &Classified, truth: Option<RuleId>) {
        self.packets += 1;
        self.memory_accesses += u64::from(c.result.access_count);
        self.fallbacks += u64::from(c.fallback);
        let returned = c.result.rule_id();
        self.classification_correct += u64::from(returned == truth);
        if let Some(id) = truth {
            self.labeled += 1;
            let host = tss.locate(id);
            self.model_correct += u64::from(host == Some(c.predicted));
            if !c.fallback && returned != truth {
                self.scenario1_errors += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ClassifyStats) {
        self.packets += other.packets;
        self.labeled += other.labeled;
        self.model_correct += other.model_correct;
        self.classification_correct += other.classification_correct;
        self.memory_accesses += other.memory_accesses;
        self.fallbacks += other.fallbacks;
        self.scenario1_errors += other.scenario1_errors;
    }

    pub fn model_accuracy(&self) -> f64 {
        ratio(self.model_correct, self.labeled)
    }

    pub fn classification_accuracy(&self) -> f64 {
        ratio(self.classification_correct, self.packets)
    }

    pub fn mean_accesses(&self) -> f64 {
        if self.packets == 0 {
            0.0
        } else {
            self.memory_accesses as f64 / self.packets as f64
        }
    }

    pub const CSV_HEADER: &'static str =
        "ruleset,model_acc,class_acc,tuple_count,mean_mem_accesses";

    pub fn csv_row(&self, ruleset: &str, tuple_count: usize) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "{ruleset},{:.6},{:.6},{tuple_count},{:.4}",
            self.model_accuracy(),
            self.classification_accuracy(),
            self.mean_accesses()
        );
        out
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}
