//! Windowed update simulation: apply each window's rule updates, stream
//! fresh traffic through the pipeline, close the window on the throughput
//! monitor, and run any deferred update before the next window.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{Classifier, ClassifyStats};
use crate::ruleset::{
    generate_ruleset, generate_traffic, Priority, Rule, RuleGenConfig, RuleId, Ruleset, Schema,
};
use crate::tss::TssError;

use super::update::ScriptOp;
use super::{
    apply_immediate, decide_update, execute_deferred, run_pipeline, PipelineConfig, PipelineError,
    ScriptWindow, SharedClassifier, ThroughputMonitor, UpdateDecision, UpdateEngine,
};

/// Source of window elapsed times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Clock {
    /// Measured pipeline time.
    Wall,
    /// Search-stage cost: memory accesses times a fixed latency.
    AccessCost { ns_per_access: f64 },
}

impl Default for Clock {
    fn default() -> Self {
        Clock::AccessCost {
            ns_per_access: 10.0,
        }
    }
}

pub const WINDOW_CSV_HEADER: &str = "window_index,packets,elapsed,throughput,decision_taken";

const DETAIL_CSV_HEADER: &str = "window_index,updates_applied,updates_failed,rules,mismatch_count,\
model_acc,class_acc,mean_mem_accesses,divergence,degradation,decision_taken,pre_deploy_acc,\
post_deploy_acc,converged";

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub window_index: usize,
    pub packets: u64,
    /// Seconds.
    pub elapsed: f64,
    /// Million packets per second.
    pub throughput: f64,
    pub decision: UpdateDecision,
    pub updates_applied: usize,
    pub updates_failed: usize,
    pub rules: usize,
    pub mismatch_count: u64,
    pub stats: ClassifyStats,
    /// Fraction of packets where the served result differs from the
    /// strict (globally verified) result.
    pub divergence: f64,
    pub degradation: f64,
    /// Model accuracy on a held-out trace before and after a deferred
    /// update was deployed.
    pub pre_deploy_acc: Option<f64>,
    pub post_deploy_acc: Option<f64>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimReport {
    pub rows: Vec<WindowRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |a| format!("{a:.6}"))
}

impl SimReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{WINDOW_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.9},{:.6},{}",
                r.window_index, r.packets, r.elapsed, r.throughput, r.decision
            );
        }
        out
    }

    pub fn detail_csv(&self) -> String {
        let mut out = format!("{DETAIL_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.4},{:.6},{:.6},{},{},{},{}",
                r.window_index,
                r.updates_applied,
                r.updates_failed,
                r.rules,
                r.mismatch_count,
                r.stats.model_accuracy(),
                r.stats.classification_accuracy(),
                r.stats.mean_accesses(),
                r.divergence,
                r.degradation,
                r.decision,
                opt(r.pre_deploy_acc),
                opt(r.post_deploy_acc),
                r.converged.map_or_else(String::new, |c| c.to_string()),
            );
        }
        out
    }
}

/// Drives windows against a shared classifier.
#[derive(Debug)]
pub struct Simulator {
    pub shared: SharedClassifier,
    pub monitor: ThroughputMonitor,
    pub engine: UpdateEngine,
    pub pipeline: PipelineConfig,
    pub clock: Clock,
    /// Whether deferred updates run at all.
    pub deferred: bool,
    pub packets_per_window: usize,
    /// Traffic sampled for (re)training.
    pub train_packets: usize,
    /// Held-out traffic for the pre/post deployment comparison.
    pub eval_packets: usize,
    pub seed: u64,
    window_index: usize,
}

impl Simulator {
    pub fn new(classifier: Classifier, engine: UpdateEngine, seed: u64) -> Self {
        Self {
            shared: SharedClassifier::new(classifier),
            monitor: ThroughputMonitor::default(),
            engine,
            pipeline: PipelineConfig::default(),
            clock: Clock::default(),
            deferred: true,
            packets_per_window: 10_000,
            train_packets: 10_000,
            eval_packets: 5_000,
            seed,
            window_index: 0,
        }
    }

    fn stream_seed(&self, stream: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((self.window_index as u64) << 8 | stream)
    }

    pub fn run(&mut self, windows: &[ScriptWindow]) -> Result<SimReport, PipelineError> {
        let mut report = SimReport::default();
        for w in windows {
            report.rows.push(self.run_window(w)?);
        }
        Ok(report)
    }

    pub fn run_window(&mut self, window: &ScriptWindow) -> Result<WindowRow, PipelineError> {
        let (applied, failed) = self.shared.write(|c| -> Result<_, PipelineError> {
            let (mut applied, mut failed) = (0, 0);
            for u in window.resolve(c.tss()) {
                match apply_immediate(c, u) {
                    Ok(true) => applied += 1,
                    Ok(false) => failed += 1,
                    // Restricted insertion found no host; only a rebuild helps.
                    Err(TssError::NoCandidateTuple(_)) => failed += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            Ok((applied, failed))
        })?;

        let served = self.shared.snapshot();
        let current = served.tss().to_ruleset();
        let trace = generate_traffic(&current, self.packets_per_window, self.stream_seed(1));
        let out = run_pipeline(&self.shared, trace.packets.iter().cloned(), &self.pipeline)?;

        let mut stats = ClassifyStats::default();
        let mut strict = Classifier::clone(&served);
        strict.set_strict(true);
        let mut diverged = 0u64;
        for ((p, c), &truth) in trace.packets.iter().zip(&out.outputs).zip(&trace.truth) {
            stats.record(served.tss(), c, truth);
            diverged +=
                u64::from(strict.search(p, c.predicted).result.rule_id() != c.result.rule_id());
        }
        let packets = stats.packets;

        let (elapsed, throughput) = match window.throughput {
            Some(th) => (packets as f64 / (th * 1e6), th),
            None => {
                let secs = match self.clock {
                    Clock::Wall => out.windows.iter().map(|w| w.elapsed.as_secs_f64()).sum(),
                    Clock::AccessCost { ns_per_access } => {
                        stats.memory_accesses as f64 * ns_per_access * 1e-9
                    }
                };
                let th = if secs > 0.0 {
                    packets as f64 / secs / 1e6
                } else {
                    0.0
                };
                (secs, th)
            }
        };
        if throughput > 0.0 {
            self.monitor.record_throughput(throughput);
        }
        let degradation = self.monitor.degradation();
        let mismatch_count = served.tss().mismatch_count();
        let decision = if self.deferred {
            decide_update(
                &self.monitor,
                mismatch_count,
                current.len(),
                self.engine.theta,
            )
        } else {
            UpdateDecision::None
        };

        let mut row = WindowRow {
            window_index: self.window_index,
            packets,
            elapsed,
            throughput,
            decision,
            updates_applied: applied,
            updates_failed: failed,
            rules: current.len(),
            mismatch_count,
            stats,
            divergence: if packets == 0 {
                0.0
            } else {
                diverged as f64 / packets as f64
            },
            degradation,
            pre_deploy_acc: None,
            post_deploy_acc: None,
            converged: None,
        };

        if decision != UpdateDecision::None {
            let sample = generate_traffic(&current, self.train_packets, self.stream_seed(2));
            let outcome = execute_deferred(&served, decision, &sample.packets, &self.engine)?;
            let held_out = generate_traffic(&current, self.eval_packets, self.stream_seed(3));
            row.pre_deploy_acc = Some(served.evaluate(&held_out).model_accuracy());
            row.post_deploy_acc = Some(outcome.classifier.evaluate(&held_out).model_accuracy());
            row.converged = Some(outcome.converged);
            self.shared.publish(outcome.classifier);
            if decision == UpdateDecision::FullRetrain {
                self.monitor.reset_base();
            }
        }
        self.window_index += 1;
        Ok(row)
    }
}

/// Rule churn for a generated dynamic scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicConfig {
    pub rules: usize,
    pub windows: usize,
    /// Deletions and insertions per window.
    pub churn: usize,
    /// Signatures new rules are drawn from; lengths absent from the base
    /// ruleset force mismatched insertions.
    pub drift_signatures: Vec<Vec<u8>>,
    pub seed: u64,
}

/// Base priorities are spread out by this factor so inserted rules can
/// land between existing ones.
const PRIORITY_SPACING: Priority = 4;

impl DynamicConfig {
    pub fn new(rules: usize, windows: usize, churn: usize, seed: u64) -> Self {
        let mut drift = RuleGenConfig::acl(0, 0).signatures;
        drift.extend([
            vec![28, 32],
            vec![32, 28],
            vec![20, 24],
            vec![24, 20],
            vec![28, 28],
        ]);
        Self {
            rules,
            windows,
            churn,
            drift_signatures: drift,
            seed,
        }
    }

    /// ACL-style ruleset whose priorities leave gaps for insertions.
    pub fn base_ruleset(&self, schema: &Schema) -> Ruleset {
        let rs = generate_ruleset(schema, &RuleGenConfig::acl(self.rules, self.seed));
        let rules = rs
            .into_rules()
            .into_iter()
            .map(|r| {
                Rule::new(
                    r.id,
                    r.priority * PRIORITY_SPACING + 1,
                    r.conditions,
                    r.action,
                )
            })
            .collect();
        Ruleset::new(schema.clone(), rules).expect("spacing keeps priorities unique")
    }
}

/// Per-window deletions of random live rules and insertions of new rules
/// at random unused priorities. Ids of inserted rules are predicted from
/// the order [`ScriptWindow::resolve`] assigns them.
pub fn scripted_windows(base: &Ruleset, config: &DynamicConfig) -> Vec<ScriptWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
    let fresh = generate_ruleset(
        base.schema(),
        &RuleGenConfig {
            rules: config.churn * config.windows,
            signatures: config.drift_signatures.clone(),
            address_pool: 16,
            seed: config.seed.wrapping_add(1),
        },
    );
    let mut live: Vec<RuleId> = base.rules().iter().map(|r| r.id).collect();
    let mut used: std::collections::HashSet<Priority> =
        base.rules().iter().map(|r| r.priority).collect();
    let span = base
        .rules()
        .iter()
        .map(|r| r.priority)
        .max()
        .map_or(1, |m| m + 1);
    let mut next_id = base.rules().iter().map(|r| r.id + 1).max().unwrap_or(0);
    let mut new_rules = fresh.rules().iter();
    let mut windows = Vec::with_capacity(config.windows);
    for _ in 0..config.windows {
        let mut ops = Vec::with_capacity(2 * config.churn);
        live.shuffle(&mut rng);
        for id in live.drain(..config.churn.min(live.len())) {
            ops.push(ScriptOp::Delete(id));
        }
        for _ in 0..config.churn {
            let rule = new_rules.next().expect("sized for every window");
            let priority = loop {
                let p = rng.random_range(0..span.saturating_add(config.churn as Priority * 4));
                if used.insert(p) {
                    break p;
                }
            };
            ops.push(ScriptOp::Insert {
                priority: Some(priority),
                conditions: rule.conditions.clone(),
            });
            live.push(next_id);
            next_id += 1;
        }
        windows.push(ScriptWindow {
            ops,
            throughput: None,
        });
    }
    windows
}
