//! Immediate rule updates, deferred retraining, and the update-script
//! format.
//!
//! ```text
//! # comment
//! +@10.0.0.0/8 0.0.0.0/0 0 : 65535 80 : 80 0x06/0xFF   insert, next free priority
//! +7 @10.0.0.0/8 ...                                   insert with priority 7
//! -12                                                  delete rule 12
//! ~12 action=3 priority=9                              modify rule 12
//! !throughput 9.45                                     injected window throughput
//! ---                                                  end of window
//! ```

use crate::classifier::{Classifier, Predictor};
use crate::model::{
    generate_training_data, incremental_train, train, Budget, ModelConfig, ResidualMlp,
    TrainingConfig, TrainingSet,
};
use crate::ruleset::{parse_rule_line, Condition, Packet, Priority, Rule, RuleId, Schema};
use crate::tss::{RuleEdit, TssError, TssIndex};

use super::{MismatchThreshold, PipelineError, UpdateDecision};

#[derive(Debug, Clone, PartialEq)]
pub enum RuleUpdate {
    Insert(Rule),
    Delete(RuleId),
    Modify(RuleId, RuleEdit),
}

/// Applies one update to the index without touching the predictor.
/// Returns whether anything changed; a delete or modify of an unknown id
/// is a no-op.
pub fn apply_immediate(classifier: &mut Classifier, update: RuleUpdate) -> Result<bool, TssError> {
    let tss = classifier.tss_mut();
    match update {
        RuleUpdate::Insert(rule) => tss.insert_rule(rule).map(|_| true),
        RuleUpdate::Delete(id) => Ok(tss.delete_rule(id)),
        RuleUpdate::Modify(id, edit) => tss.modify_rule(id, edit),
    }
}

/// Deferred-update parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateEngine {
    pub theta: MismatchThreshold,
    pub training: TrainingConfig,
    /// Fine-tuning limit for incremental updates.
    pub budget: Budget,
    /// Shape for models trained from scratch; `None` reuses the current
    /// model's width and depth.
    pub model: Option<ModelConfig>,
}

impl Default for UpdateEngine {
    fn default() -> Self {
        Self {
            theta: MismatchThreshold::default(),
            training: TrainingConfig::default(),
            budget: Budget::epochs(50),
            model: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeferredOutcome {
    pub classifier: Classifier,
    /// Tuple-prediction accuracy on the labeled sample after training.
    pub accuracy: Option<f64>,
    /// Whether accuracy reached the training target.
    pub converged: bool,
}

/// Builds the classifier to deploy for `decision`. Incremental fine-tunes
/// the current model on `sample` labeled against the current index;
/// FullRetrain rebuilds the index (clearing its mismatch count) and trains
/// a fresh model. Below-target training still yields a classifier.
pub fn execute_deferred(
    classifier: &Classifier,
    decision: UpdateDecision,
    sample: &[Packet],
    engine: &UpdateEngine,
) -> Result<DeferredOutcome, PipelineError> {
    let unchanged = || DeferredOutcome {
        classifier: classifier.clone(),
        accuracy: None,
        converged: true,
    };
    match decision {
        UpdateDecision::None => Ok(unchanged()),
        UpdateDecision::Incremental => {
            let Some(model) = classifier.model() else {
                return Ok(unchanged());
            };
            let tss = classifier.tss();
            let raw = TrainingSet::label(tss, sample);
            let set = raw.oversample(engine.training.alpha);
            let model = incremental_train(model.clone(), &set, engine.budget, &engine.training)?;
            let accuracy = sample_accuracy(&model, &raw)?;
            let mut next = classifier.clone();
            next.set_predictor(Predictor::Model(model))?;
            Ok(DeferredOutcome {
                classifier: next,
                accuracy,
                converged: accuracy.is_none_or(|a| a >= engine.training.beta),
            })
        }
        UpdateDecision::FullRetrain => {
            let tss = TssIndex::build(&classifier.tss().to_ruleset());
            let predictor = match classifier.predictor() {
                Predictor::Model(old) => {
                    let shape = engine.model.unwrap_or(*old.config());
                    let config = ModelConfig {
                        input_dim: tss.schema().segment_count(),
                        classes: tss.tuple_count(),
                        ..shape
                    };
                    let raw = generate_training_data(&tss, sample, 1);
                    if raw.is_empty() {
                        return Err(PipelineError::Config(
                            "retraining sample matches no rule".into(),
                        ));
                    }
                    let fresh = ResidualMlp::new(config, engine.training.seed)?;
                    let outcome = train(fresh, &raw, &TrainingSet::default(), &engine.training)?;
                    let classifier =
                        Classifier::new(Predictor::Model(outcome.model), tss, classifier.config())?;
                    return Ok(DeferredOutcome {
                        classifier,
                        accuracy: Some(outcome.accuracy),
                        converged: outcome.converged,
                    });
                }
                other => other.clone(),
            };
            Ok(DeferredOutcome {
                classifier: Classifier::new(predictor, tss, classifier.config())?,
                accuracy: None,
                converged: true,
            })
        }
    }
}

fn sample_accuracy(
    model: &ResidualMlp<f32>,
    raw: &TrainingSet,
) -> Result<Option<f64>, PipelineError> {
    if raw.is_empty() {
        return Ok(None);
    }
    Ok(Some(model.accuracy(
        &raw.to_matrix(model.config().input_dim),
        &raw.labels,
    )?))
}

/// A scripted insert whose id and default priority are assigned when the
/// window is resolved against the live index.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptOp {
    Insert {
        priority: Option<Priority>,
        conditions: Vec<Condition>,
    },
    Delete(RuleId),
    Modify(RuleId, RuleEdit),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptWindow {
    pub ops: Vec<ScriptOp>,
    pub throughput: Option<f64>,
}

impl ScriptWindow {
    /// Turns ops into concrete updates. New rules take fresh ids, action
    /// equal to the id, and when no priority is given the next value past
    /// every priority in use.
    pub fn resolve(&self, tss: &TssIndex) -> Vec<RuleUpdate> {
        let mut next_id = tss.next_rule_id();
        let mut next_prio = tss.lowest_precedence_priority();
        let mut out = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            out.push(match op {
                ScriptOp::Insert {
                    priority,
                    conditions,
                } => {
                    let id = next_id;
                    next_id += 1;
                    let prio = priority.unwrap_or_else(|| {
                        next_prio += 1;
                        next_prio - 1
                    });
                    next_prio = next_prio.max(prio.saturating_add(1));
                    RuleUpdate::Insert(Rule::new(id, prio, conditions.clone(), id))
                }
                ScriptOp::Delete(id) => RuleUpdate::Delete(*id),
                ScriptOp::Modify(id, edit) => RuleUpdate::Modify(*id, *edit),
            });
        }
        out
    }
}

fn script_err(line: usize, msg: impl Into<String>) -> PipelineError {
    PipelineError::Script {
        line,
        msg: msg.into(),
    }
}

pub fn parse_update_script(
    text: &str,
    schema: &Schema,
) -> Result<Vec<ScriptWindow>, PipelineError> {
    let mut windows = vec![ScriptWindow::default()];
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cur = windows.last_mut().expect("never empty");
        if line == "---" {
            windows.push(ScriptWindow::default());
        } else if let Some(rest) = line.strip_prefix('+') {
            let rest = rest.trim_start();
            let (priority, body) = match rest.find('@') {
                Some(0) => (None, rest),
                Some(at) => {
                    let p = rest[..at]
                        .trim()
                        .parse::<Priority>()
                        .map_err(|e| script_err(line_no, format!("priority: {e}")))?;
                    (Some(p), &rest[at..])
                }
                None => return Err(script_err(line_no, "insert needs an @-prefixed rule")),
            };
            let conditions = parse_rule_line(body, schema).map_err(|m| script_err(line_no, m))?;
            cur.ops.push(ScriptOp::Insert {
                priority,
                conditions,
            });
        } else if let Some(rest) = line.strip_prefix('-') {
            let id = rest
                .trim()
                .parse()
                .map_err(|e| script_err(line_no, format!("rule id: {e}")))?;
            cur.ops.push(ScriptOp::Delete(id));
        } else if let Some(rest) = line.strip_prefix('~') {
            let mut words = rest.split_whitespace();
            let id = words
                .next()
                .ok_or_else(|| script_err(line_no, "modify needs a rule id"))?
                .parse()
                .map_err(|e| script_err(line_no, format!("rule id: {e}")))?;
            let mut edit = RuleEdit::default();
            for w in words {
                let (key, val) = w
                    .split_once('=')
                    .ok_or_else(|| script_err(line_no, format!("expected key=value, got {w:?}")))?;
                let val: u32 = val
                    .parse()
                    .map_err(|e| script_err(line_no, format!("{key}: {e}")))?;
                match key {
                    "action" => edit.action = Some(val),
                    "priority" => edit.priority = Some(val),
                    _ => return Err(script_err(line_no, format!("unknown field {key:?}"))),
                }
            }
            cur.ops.push(ScriptOp::Modify(id, edit));
        } else if let Some(rest) = line.strip_prefix('!') {
            let mut words = rest.split_whitespace();
            match (words.next(), words.next(), words.next()) {
                (Some("throughput"), Some(v), None) => {
                    let th: f64 = v
                        .parse()
                        .map_err(|e| script_err(line_no, format!("throughput: {e}")))?;
                    if th.is_nan() || th <= 0.0 {
                        return Err(script_err(line_no, "throughput must be positive"));
                    }
                    cur.throughput = Some(th);
                }
                _ => return Err(script_err(line_no, format!("unknown directive {line:?}"))),
            }
        } else {
            return Err(script_err(line_no, format!("unrecognised line {line:?}")));
        }
    }
    if windows.len() > 1
        && windows
            .last()
            .is_some_and(|w| w.ops.is_empty() && w.throughput.is_none())
    {
        windows.pop();
    }
    if windows.len() == 1 && windows[0] == ScriptWindow::default() {
        windows.clear();
    }
    Ok(windows)
}
