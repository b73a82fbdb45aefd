//! Batched two-stage streaming with double buffering, plus the rule-update
//! machinery that runs beside it.
//!
//! The inference stage fills one buffer (split across `lanes` workers)
//! while the search stage drains the other. A stage can only take a buffer
//! the other has handed back, so inference stalls when search falls behind.

mod policy;
mod sim;
mod update;

use std::sync::atomic::{AtomicU8, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{Classified, Classifier};
use crate::ruleset::Packet;
use crate::tss::{MatchResult, TupleIdx};

pub use policy::{decide_update, MismatchThreshold, ThroughputMonitor, UpdateDecision};
pub use sim::{
    scripted_windows, Clock, DynamicConfig, SimReport, Simulator, WindowRow, WINDOW_CSV_HEADER,
};
pub use update::{
    apply_immediate, execute_deferred, parse_update_script, DeferredOutcome, RuleUpdate, ScriptOp,
    ScriptWindow, UpdateEngine,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("window elapsed time must be positive")]
    ZeroElapsed,
    #[error("update script line {line}: {msg}")]
    Script { line: usize, msg: String },
    #[error(transparent)]
    Tss(#[from] crate::tss::TssError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Classifier(#[from] crate::classifier::ClassifierError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Number of buffers shared by the two stages.
pub const BUFFER_DEPTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineConfig {
    pub batch_size: usize,
    /// Concurrent inference workers per batch.
    pub lanes: usize,
    /// Packets per report window; a window closes at the first batch
    /// boundary at or past this count.
    pub window: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            batch_size: 8192,
            lanes: 4,
            window: 1 << 20,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.batch_size == 0 || self.lanes == 0 || self.window == 0 {
            return Err(PipelineError::Config(format!(
                "batch_size, lanes and window must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Classifier handle readable by the pipeline and writable by the update
/// engine. Each batch runs on the snapshot taken when it entered inference.
#[derive(Debug)]
pub struct SharedClassifier(RwLock<Arc<Classifier>>);

impl SharedClassifier {
    pub fn new(classifier: Classifier) -> Self {
        Self(RwLock::new(Arc::new(classifier)))
    }

    pub fn snapshot(&self) -> Arc<Classifier> {
        Arc::clone(&self.0.read().expect("classifier lock poisoned"))
    }

    /// Exclusive writer. Copies the classifier first if a batch still holds
    /// the current snapshot.
    pub fn write<T>(&self, f: impl FnOnce(&mut Classifier) -> T) -> T {
        let mut guard = self.0.write().expect("classifier lock poisoned");
        f(Arc::make_mut(&mut guard))
    }

    pub fn publish(&self, classifier: Classifier) {
        *self.0.write().expect("classifier lock poisoned") = Arc::new(classifier);
    }
}

const FREE: u8 = 0;
const INFERENCE: u8 = 1;
const SEARCH: u8 = 2;

/// Checked ownership token per buffer. Every transition is a
/// compare-and-swap from the expected holder; any other state counts as a
/// violation.
#[derive(Debug)]
struct BufferLedger {
    owners: [AtomicU8; BUFFER_DEPTH],
    violations: AtomicUsize,
}

impl BufferLedger {
    fn new() -> Self {
        Self {
            owners: std::array::from_fn(|_| AtomicU8::new(FREE)),
            violations: AtomicUsize::new(0),
        }
    }

    fn transfer(&self, buf: usize, from: u8, to: u8) {
        if self.owners[buf]
            .compare_exchange(from, to, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            self.violations.fetch_add(1, Ordering::Relaxed);
        }
    }
}

struct Buffer {
    id: usize,
    packets: Vec<Packet>,
    predictions: Vec<TupleIdx>,
    classifier: Option<Arc<Classifier>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WindowReport {
    pub packets: u64,
    pub elapsed: Duration,
    pub memory_accesses: u64,
}

impl WindowReport {
    /// Packets per second of wall time; zero for an empty window.
    pub fn throughput(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            self.packets as f64 / secs
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    /// One entry per input packet, in input order.
    pub outputs: Vec<Classified>,
    pub windows: Vec<WindowReport>,
    pub batches: usize,
    /// Failed ownership transfers; zero unless the buffer protocol broke.
    pub ownership_violations: usize,
}

impl PipelineOutput {
    pub fn results(&self) -> Vec<MatchResult> {
        self.outputs.iter().map(|c| c.result).collect()
    }
}

/// Streams `source` through inference and search. Outputs equal
/// [`Classifier::classify_batch`] on the concatenated input.
pub fn run_pipeline<I>(
    classifier: &SharedClassifier,
    source: I,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError>
where
    I: IntoIterator<Item = Packet>,
    I::IntoIter: Send,
{
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.lanes)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let ledger = BufferLedger::new();
    let (free_tx, free_rx) = mpsc::sync_channel::<Buffer>(BUFFER_DEPTH);
    let (full_tx, full_rx) = mpsc::sync_channel::<Buffer>(BUFFER_DEPTH);
    for id in 0..BUFFER_DEPTH {
        free_tx
            .send(Buffer {
                id,
                packets: Vec::with_capacity(config.batch_size),
                predictions: Vec::with_capacity(config.batch_size),
                classifier: None,
            })
            .expect("receiver alive");
    }
    let mut source = source.into_iter();
    let mut out = PipelineOutput::default();

    std::thread::scope(|s| {
        let ledger = &ledger;
        let pool = &pool;
        s.spawn(move || {
            while let Ok(mut buf) = free_rx.recv() {
                ledger.transfer(buf.id, FREE, INFERENCE);
                buf.packets.clear();
                buf.packets.extend(source.by_ref().take(config.batch_size));
                if buf.packets.is_empty() {
                    ledger.transfer(buf.id, INFERENCE, FREE);
                    break;
                }
                let snapshot = classifier.snapshot();
                buf.predictions.clear();
                buf.predictions.resize(buf.packets.len(), 0);
                let seg = buf.packets.len().div_ceil(config.lanes);
                pool.install(|| {
                    buf.packets
                        .par_chunks(seg)
                        .zip(buf.predictions.par_chunks_mut(seg))
                        .for_each(|(p, o)| o.copy_from_slice(&snapshot.infer(p)));
                });
                buf.classifier = Some(snapshot);
                if full_tx.send(buf).is_err() {
                    break;
                }
            }
        });

        let mut window = WindowReport::default();
        let mut started = Instant::now();
        while let Ok(mut buf) = full_rx.recv() {
            ledger.transfer(buf.id, INFERENCE, SEARCH);
            let snapshot = buf.classifier.take().expect("filled by inference");
            for (p, &idx) in buf.packets.iter().zip(&buf.predictions) {
                let c = snapshot.search(p, idx);
                window.memory_accesses += u64::from(c.result.access_count);
                out.outputs.push(c);
            }
            window.packets += buf.packets.len() as u64;
            out.batches += 1;
            if window.packets >= config.window as u64 {
                window.elapsed = started.elapsed();
                out.windows.push(std::mem::take(&mut window));
                started = Instant::now();
            }
            ledger.transfer(buf.id, SEARCH, FREE);
            // Inference may already have quit on an empty source.
            let _ = free_tx.send(buf);
        }
        if window.packets > 0 {
            window.elapsed = started.elapsed();
            out.windows.push(window);
        }
    });

    out.ownership_violations = ledger.violations.load(Ordering::Relaxed);
    Ok(out)
}
