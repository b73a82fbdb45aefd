//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tang_core::baseline;
use tang_core::classifier::{Classified, Classifier, ClassifierConfig, ClassifyStats, Predictor};
use tang_core::model::{
    train, Budget, Dense, ModelConfig, ResidualMlp, TrainingConfig, TrainingSet,
};
use tang_core::pipeline::{
    decide_update, run_pipeline, scripted_windows, DynamicConfig, MismatchThreshold,
    PipelineConfig, SharedClassifier, Simulator, ThroughputMonitor, UpdateDecision, UpdateEngine,
};
use tang_core::ruleset::{
    generate_ruleset, generate_traffic, segment_header, Condition, FieldKind, Packet, Rule,
    RuleGenConfig, RuleId, Ruleset, Schema, Trace,
};
use tang_core::tss::TssIndex;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if let false = $cond {
            return Err(format!($($fmt)+));
        }
    };
}

// Independent brute-force reference, written against the field semantics
// rather than the library's matcher.
fn field_matches(kind: FieldKind, c: &Condition, v: u32) -> bool {
    match (*c, kind) {
        (Condition::Prefix { value, len }, FieldKind::Prefix(w)) => {
            len == 0 || (v >> (w - len)) == (value >> (w - len))
        }
        (Condition::Range { lo, hi }, _) => lo <= v && v <= hi,
        (Condition::Masked { value, mask }, _) => v & mask == value & mask,
        _ => false,
    }
}

fn reference(rs: &Ruleset, p: &Packet) -> Option<RuleId> {
    let fields = rs.schema().fields();
    rs.rules()
        .iter()
        .filter(|r| {
            r.conditions
                .iter()
                .zip(fields)
                .zip(p.values())
                .all(|((c, &k), &v)| field_matches(k, c, v))
        })
        .min_by_key(|r| r.priority)
        .map(|r| r.id)
}

fn ternary(pattern: &str) -> Condition {
    let len = pattern.trim_end_matches('*').len() as u8;
    let value = pattern
        .chars()
        .fold(0u32, |acc, c| (acc << 1) | u32::from(c == '1'));
    Condition::Prefix { value, len }
}

fn rule(n: u32, x: &str, y: &str) -> Rule {
    Rule::new(n, n, vec![ternary(x), ternary(y)], n)
}

fn eight_rules() -> Ruleset {
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
        .zip(1..)
        .map(|((x, y), n)| rule(n, x, y))
        .collect();
    Ruleset::new(Schema::prefixes(2, 3).unwrap(), rules).unwrap()
}

fn universe() -> Vec<Packet> {
    (0..8)
        .flat_map(|x| (0..8).map(move |y| Packet::new(vec![x, y])))
        .collect()
}

fn labeled(rs: &Ruleset, packets: Vec<Packet>) -> Trace {
    let truth = packets.iter().map(|p| reference(rs, p)).collect();
    Trace { packets, truth }
}

fn random_packets(schema: &Schema, n: usize, rng: &mut ChaCha8Rng) -> Vec<Packet> {
    (0..n)
        .map(|_| {
            Packet::new(
                schema
                    .fields()
                    .iter()
                    .map(|k| rng.random::<u32>() & k.max_value())
                    .collect(),
            )
        })
        .collect()
}

fn random_model(tss: &TssIndex, seed: u64) -> ResidualMlp<f32> {
    ResidualMlp::new(
        ModelConfig::desk(tss.schema().segment_count(), tss.tuple_count()),
        seed,
    )
    .unwrap()
}

fn within(start: Instant, limit: Duration) -> Outcome {
    let t = start.elapsed();
    if t <= limit {
        Ok(format!("{:.2}s", t.as_secs_f64()))
    } else {
        Err(format!("took {t:?}, limit {limit:?}"))
    }
}

fn eight_rules_golden() -> Outcome {
    let start = Instant::now();
    let tss = TssIndex::build(&eight_rules());
    let expected: [(&[u8], &[RuleId]); 5] = [
        (&[3, 3], &[1, 2]),
        (&[2, 2], &[3]),
        (&[3, 0], &[4, 5]),
        (&[0, 3], &[6, 7]),
        (&[1, 1], &[8]),
    ];
    ensure!(tss.tuple_count() == 5, "{} tuples", tss.tuple_count());
    for (t, (sig, members)) in tss.tuples().iter().zip(expected) {
        let mut ids: Vec<RuleId> = t.rules().map(|r| r.id).collect();
        ids.sort_unstable();
        ensure!(
            t.signature().0 == sig,
            "tuple {} signature {}",
            t.index(),
            t.signature()
        );
        ensure!(ids == members, "tuple {} holds {ids:?}", t.index());
    }
    let t = within(start, Duration::from_secs(1))?;
    Ok(format!("5 tuples with expected memberships, {t}"))
}

fn insertion_examples() -> Outcome {
    let start = Instant::now();
    let mut tss = TssIndex::build(&eight_rules());
    let t9 = tss
        .insert_rule(rule(9, "000", "100"))
        .map_err(|e| e.to_string())?;
    ensure!(
        t9 == 0 && tss.mismatch_count() == 0,
        "R9 -> T{} mismatch {}",
        t9 + 1,
        tss.mismatch_count()
    );
    let t10 = tss
        .insert_rule(rule(10, "100", "0**"))
        .map_err(|e| e.to_string())?;
    ensure!(
        t10 == 2 && tss.mismatch_count() == 1,
        "R10 -> T{} mismatch {}",
        t10 + 1,
        tss.mismatch_count()
    );
    ensure!(tss.tuple_count() == 5, "tuple count changed");
    let t = within(start, Duration::from_secs(1))?;
    Ok(format!(
        "R9 -> T1 (mismatch 0), R10 -> T3 (mismatch 1), {t}"
    ))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut checked = 0u64;
    let mut fallbacks = 0u64;

    let rs = eight_rules();
    let tss = TssIndex::build(&rs);
    let mut cases: Vec<(Ruleset, Vec<Packet>, Vec<Predictor>)> = vec![(
        rs,
        universe(),
        (0..tss.tuple_count())
            .map(Predictor::Fixed)
            .chain([Predictor::Model(random_model(&tss, 1)), Predictor::Oracle])
            .collect(),
    )];

    let schema = Schema::five_tuple();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..20u64 {
        let rules = [50, 200, 500, 1000][i as usize % 4];
        let cfg = if i % 3 == 2 {
            RuleGenConfig {
                rules,
                signatures: vec![],
                address_pool: 8,
                seed: i,
            }
        } else {
            RuleGenConfig::acl(rules, i)
        };
        let rs = generate_ruleset(&schema, &cfg);
        let mut packets = generate_traffic(&rs, 8000, 100 + i).packets;
        packets.extend(random_packets(&schema, 2000, &mut rng));
        let tss = TssIndex::build(&rs);
        cases.push((rs, packets, vec![Predictor::Model(random_model(&tss, i))]));
    }
    ensure!(cases.len() == 21, "case count");

    for (rs, packets, predictors) in cases {
        let tss = TssIndex::build(&rs);
        let expected: Vec<Option<RuleId>> = packets.iter().map(|p| reference(&rs, p)).collect();
        for (p, want) in packets.iter().zip(&expected) {
            ensure!(
                baseline::pstss(&tss, p).rule_id() == *want,
                "pstss differs on {p:?}"
            );
        }
        for predictor in predictors {
            let mut c = Classifier::new(predictor, tss.clone(), ClassifierConfig::default())
                .map_err(|e| e.to_string())?;
            let default_out: Vec<Classified> =
                packets.iter().map(|p| c.classify_detailed(p)).collect();
            c.set_strict(true);
            for ((p, d), want) in packets.iter().zip(&default_out).zip(&expected) {
                ensure!(c.classify(p).rule_id() == *want, "strict differs on {p:?}");
                if d.fallback {
                    fallbacks += 1;
                    ensure!(d.result.rule_id() == *want, "fallback differs on {p:?}");
                }
                checked += 1;
            }
        }
    }
    let t = within(start, Duration::from_secs(120))?;
    Ok(format!(
        "{checked} lookups, {fallbacks} fallbacks, 0 mismatches, {t}"
    ))
}

fn train_eight_rules() -> Result<(TssIndex, ResidualMlp<f32>, f64), String> {
    let rs = eight_rules();
    let tss = TssIndex::build(&rs);
    let set = TrainingSet::label(&tss, &universe());
    let cfg = ModelConfig {
        input_dim: 2,
        neurons: 32,
        blocks: 2,
        classes: 5,
    };
    let model = ResidualMlp::new(cfg, 0).map_err(|e| e.to_string())?;
    let out = train(
        model,
        &set,
        &TrainingSet::default(),
        &TrainingConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut labeled = 0;
    let mut correct = 0;
    for p in universe() {
        if let Some(id) = reference(&rs, &p) {
            labeled += 1;
            let f = segment_header(tss.schema(), &p);
            let predicted = out.model.predict(f.as_slice()).map_err(|e| e.to_string())?;
            correct += usize::from(tss.locate(id) == Some(predicted));
        }
    }
    Ok((tss, out.model, correct as f64 / labeled as f64))
}

fn trainability() -> Outcome {
    let start = Instant::now();
    let (_, _, acc) = train_eight_rules()?;
    ensure!(acc >= 0.95, "accuracy {acc:.4}");
    let t = within(start, Duration::from_secs(300))?;
    Ok(format!("tuple accuracy {acc:.4} on 41 labeled points, {t}"))
}

fn accuracy_ordering() -> Outcome {
    let mut traces = 0;
    let mut check = |s: ClassifyStats, what: &str| -> Result<(), String> {
        traces += 1;
        ensure!(
            s.classification_accuracy() >= s.model_accuracy(),
            "{what}: class {:.4} < model {:.4}",
            s.classification_accuracy(),
            s.model_accuracy()
        );
        Ok(())
    };

    let rs = eight_rules();
    let trace = labeled(&rs, universe());
    let (tss, model, _) = train_eight_rules()?;
    let c = Classifier::with_model(model, tss.clone()).map_err(|e| e.to_string())?;
    check(c.evaluate(&trace), "trained table")?;
    for t in 0..tss.tuple_count() {
        let c = Classifier::new(
            Predictor::Fixed(t),
            tss.clone(),
            ClassifierConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        check(c.evaluate(&trace), "fixed predictor")?;
    }

    let schema = Schema::five_tuple();
    for i in 0..8u64 {
        let rs = generate_ruleset(&schema, &RuleGenConfig::acl(300, 40 + i));
        let tss = TssIndex::build(&rs);
        let c = Classifier::with_model(random_model(&tss, i), tss.clone())
            .map_err(|e| e.to_string())?;
        let trace = labeled(&rs, generate_traffic(&rs, 4000, i).packets);
        check(c.evaluate(&trace), "random model")?;
        if i == 0 {
            let set = TrainingSet::label(&tss, &generate_traffic(&rs, 4000, 99).packets);
            let cfg = TrainingConfig {
                epochs_per_round: 30,
                max_rounds: 1,
                ..TrainingConfig::default()
            };
            let out = train(random_model(&tss, 5), &set, &TrainingSet::default(), &cfg)
                .map_err(|e| e.to_string())?;
            let c = Classifier::with_model(out.model, tss).map_err(|e| e.to_string())?;
            check(c.evaluate(&trace), "trained generated")?;
        }
    }
    Ok(format!("{traces} traces, 0 violations"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut probes = 0;
    let mut worst = 0.0f64;
    let eps = 1e-6;
    for m_idx in 0..6u64 {
        let cfg = ModelConfig {
            input_dim: rng.random_range(2..8),
            neurons: rng.random_range(3..10),
            blocks: rng.random_range(0..4),
            classes: rng.random_range(2..6),
        };
        let mut model = ResidualMlp::<f64>::new(cfg, m_idx).map_err(|e| e.to_string())?;
        let params: Vec<f64> = model
            .parameters()
            .iter()
            .map(|v| v + rng.random_range(-0.2..0.2))
            .collect();
        model.set_parameters(&params).map_err(|e| e.to_string())?;
        let rows = 5;
        let labels: Vec<usize> = (0..rows)
            .map(|_| rng.random_range(0..cfg.classes))
            .collect();
        // redraw inputs until no ReLU sits within reach of the step
        let x = loop {
            let x = Array2::from_shape_fn((rows, cfg.input_dim), |_| rng.random_range(-1.0..1.0));
            if model.min_relu_margin(x.view()) > 1e-4 {
                break x;
            }
        };
        let (_, grads) = model
            .loss_and_gradients(x.view(), &labels)
            .map_err(|e| e.to_string())?;
        let analytic = grads.flatten();
        for _ in 0..30 {
            let i = rng.random_range(0..params.len());
            let mut p = params.clone();
            p[i] = params[i] + eps;
            model.set_parameters(&p).map_err(|e| e.to_string())?;
            let up = model.loss(x.view(), &labels).map_err(|e| e.to_string())?;
            p[i] = params[i] - eps;
            model.set_parameters(&p).map_err(|e| e.to_string())?;
            let down = model.loss(x.view(), &labels).map_err(|e| e.to_string())?;
            let numeric = (up - down) / (2.0 * eps);
            let err =
                (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(err);
            probes += 1;
        }
        model.set_parameters(&params).map_err(|e| e.to_string())?;
    }
    ensure!(probes >= 100, "{probes} probes");
    ensure!(worst < 1e-4, "max relative error {worst:e}");
    let t = within(start, Duration::from_secs(30))?;
    Ok(format!(
        "{probes} probes, max relative error {worst:.2e}, {t}"
    ))
}

fn zero_block_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let deep_cfg = ModelConfig {
        input_dim: 4,
        neurons: 16,
        blocks: 3,
        classes: 6,
    };
    let mut deep = ResidualMlp::<f32>::new(deep_cfg, 1).map_err(|e| e.to_string())?;
    for b in 0..deep_cfg.blocks {
        let (fc1, fc2) = deep.block_mut(b);
        *fc1 = Dense::zeros(16, 16);
        *fc2 = Dense::zeros(16, 16);
    }
    let shallow = ResidualMlp::from_layers(
        ModelConfig {
            blocks: 0,
            ..deep_cfg
        },
        vec![deep.input_layer().clone(), deep.output_layer().clone()],
    )
    .map_err(|e| e.to_string())?;
    for _ in 0..500 {
        let x: Vec<f32> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a: Vec<u32> = deep
            .forward(&x)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let b: Vec<u32> = shallow
            .forward(&x)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|v| v.to_bits())
            .collect();
        ensure!(a == b, "logits differ for {x:?}");
    }
    Ok("3 zeroed blocks reproduce the block-free network bit for bit on 500 inputs".into())
}

fn mac_independence() -> Outcome {
    let schema = Schema::five_tuple();
    let palette = vec![
        vec![32, 32],
        vec![24, 24],
        vec![16, 32],
        vec![32, 0],
        vec![8, 8],
        vec![0, 0],
    ];
    let mut per_size = Vec::new();
    for rules in [100, 1000] {
        let rs = generate_ruleset(
            &schema,
            &RuleGenConfig {
                rules,
                signatures: palette.clone(),
                address_pool: 16,
                seed: 3,
            },
        );
        let tss = TssIndex::build(&rs);
        ensure!(
            tss.tuple_count() == palette.len(),
            "{rules} rules: {} tuples",
            tss.tuple_count()
        );
        let model = random_model(&tss, 0);
        let c = Classifier::with_model(model, tss).map_err(|e| e.to_string())?;
        let model = c.model().expect("model predictor");
        let mut counts = Vec::new();
        for p in generate_traffic(&rs, 200, 1).packets {
            let mut macs = 0u64;
            model
                .forward_counted(segment_header(c.tss().schema(), &p).as_slice(), &mut macs)
                .map_err(|e| e.to_string())?;
            counts.push(macs);
        }
        counts.dedup();
        ensure!(
            counts.len() == 1,
            "{rules} rules: varying MAC counts {counts:?}"
        );
        per_size.push((counts[0], c.predictor().macs()));
    }
    ensure!(
        per_size[0] == per_size[1],
        "MAC counts differ: {per_size:?}"
    );
    let (s, n, b, c) = (7u64, 64u64, 2u64, 6u64);
    ensure!(
        per_size[0].0 == s * n + 2 * b * n * n + n * c,
        "count {} off the closed form",
        per_size[0].0
    );
    Ok(format!(
        "{} MACs per packet for 100 and 1000 rules",
        per_size[0].0
    ))
}

fn pipeline_equivalence() -> Outcome {
    let start = Instant::now();
    let schema = Schema::five_tuple();
    let rs = generate_ruleset(&schema, &RuleGenConfig::acl(1000, 77));
    let tss = TssIndex::build(&rs);
    let mut packets = generate_traffic(&rs, 90_000, 5).packets;
    packets.extend(random_packets(
        &schema,
        10_000,
        &mut ChaCha8Rng::seed_from_u64(6),
    ));
    let classifier =
        Classifier::with_model(random_model(&tss, 4), tss).map_err(|e| e.to_string())?;
    let expected: Vec<_> = packets.iter().map(|p| classifier.classify(p)).collect();
    let shared = SharedClassifier::new(classifier);
    let mut runs = 0;
    for lanes in [1, 2, 4] {
        for batch_size in [1, 256, 8192] {
            let cfg = PipelineConfig {
                batch_size,
                lanes,
                window: 25_000,
            };
            let out =
                run_pipeline(&shared, packets.iter().cloned(), &cfg).map_err(|e| e.to_string())?;
            ensure!(out.ownership_violations == 0, "buffer ownership violated");
            let got = out.results();
            ensure!(
                got.len() == expected.len(),
                "lanes {lanes} batch {batch_size}: {} outputs",
                got.len()
            );
            let bad = got.iter().zip(&expected).filter(|(a, b)| a != b).count();
            ensure!(
                bad == 0,
                "lanes {lanes} batch {batch_size}: {bad} mismatches"
            );
            runs += 1;
        }
    }
    let t = within(start, Duration::from_secs(120))?;
    Ok(format!(
        "{runs} configurations x 100000 packets, 0 mismatches, {t}"
    ))
}

fn update_policy() -> Outcome {
    let mut m = ThroughputMonitor::new(0.05);
    m.record_throughput(10.23);
    m.record_throughput(9.45);
    let deg = m.degradation();
    ensure!(
        (deg * 100.0 * 100.0).round() / 100.0 == 7.62,
        "degradation {deg}"
    );
    let theta = MismatchThreshold::Absolute(10_000);
    let d = decide_update(&m, 4000, 100_000, theta);
    ensure!(d == UpdateDecision::Incremental, "got {d}");
    let d = decide_update(&m, 10_001, 100_000, theta);
    ensure!(d == UpdateDecision::FullRetrain, "got {d}");
    Ok(format!(
        "degradation {:.2}%: incremental below theta, full retrain above",
        deg * 100.0
    ))
}

fn dynamic_scenario() -> Outcome {
    let start = Instant::now();
    let scenario = DynamicConfig::new(400, 6, 40, 7);
    let base = scenario.base_ruleset(&Schema::five_tuple());
    let tss = TssIndex::build(&base);
    let training = TrainingConfig {
        epochs_per_round: 60,
        decay_every: 40,
        max_rounds: 1,
        ..TrainingConfig::default()
    };
    let set = TrainingSet::label(&tss, &generate_traffic(&base, 8000, 11).packets);
    let trained = train(
        random_model(&tss, 0),
        &set,
        &TrainingSet::default(),
        &training,
    )
    .map_err(|e| e.to_string())?;
    let classifier = Classifier::with_model(trained.model, tss).map_err(|e| e.to_string())?;
    let windows = scripted_windows(&base, &scenario);

    let run = |deferred: bool| {
        let engine = UpdateEngine {
            theta: MismatchThreshold::Absolute(10_000),
            training: training.clone(),
            budget: Budget::epochs(20),
            model: None,
        };
        let mut sim = Simulator::new(classifier.clone(), engine, 5);
        sim.deferred = deferred;
        sim.packets_per_window = 10_000;
        sim.train_packets = 8000;
        sim.pipeline.batch_size = 1024;
        sim.run(&windows).map_err(|e| e.to_string())
    };

    let iu = run(false)?;
    let mism: Vec<u64> = iu.rows.iter().map(|r| r.mismatch_count).collect();
    ensure!(
        mism.windows(2).all(|w| w[0] < w[1]),
        "mismatches not growing: {mism:?}"
    );
    ensure!(
        iu.rows.iter().all(|r| r.decision == UpdateDecision::None),
        "IU-only took a decision"
    );
    let first = iu.rows.first().map_or(0.0, |r| r.divergence);
    let last = iu.rows.last().map_or(0.0, |r| r.divergence);
    ensure!(last > first, "divergence {first:.4} -> {last:.4}");

    let du = run(true)?;
    let deployed: Vec<_> = du
        .rows
        .iter()
        .filter(|r| r.decision != UpdateDecision::None)
        .collect();
    ensure!(!deployed.is_empty(), "no deferred update triggered");
    for r in &deployed {
        ensure!(
            r.degradation > 0.05,
            "window {} triggered at {:.4}",
            r.window_index,
            r.degradation
        );
        let (pre, post) = (
            r.pre_deploy_acc.unwrap_or(1.0),
            r.post_deploy_acc.unwrap_or(0.0),
        );
        ensure!(
            post >= pre,
            "window {}: post-deploy {post:.4} < pre-deploy {pre:.4}",
            r.window_index
        );
    }
    let r = deployed[0];
    let t = within(start, Duration::from_secs(900))?;
    Ok(format!(
        "mismatches {mism:?}, divergence {first:.3} -> {last:.3}; {} at window {} (degradation {:.1}%), accuracy {:.3} -> {:.3}, {t}",
        r.decision,
        r.window_index,
        r.degradation * 100.0,
        r.pre_deploy_acc.unwrap_or(f64::NAN),
        r.post_deploy_acc.unwrap_or(f64::NAN),
    ))
}

fn memory_accounting() -> Outcome {
    let rs = eight_rules();
    let tss = TssIndex::build(&rs);
    let packet = Packet::new(vec![0b000, 0b011]);
    // R1 shares its T1 bucket with no other rule
    let r1_key = |r: &Rule| r.conditions.clone();
    let bucket_mates = tss.tuples()[0]
        .rules()
        .filter(|r| r1_key(r) == r1_key(rs.get(1).unwrap()))
        .count();
    ensure!(bucket_mates == 1, "bucket holds {bucket_mates} rules");
    let c = Classifier::new(Predictor::Oracle, tss.clone(), ClassifierConfig::default())
        .map_err(|e| e.to_string())?;
    let hit = c.classify_detailed(&packet);
    ensure!(
        hit.result.rule_id() == Some(1) && !hit.fallback && hit.result.access_count == 2,
        "got {hit:?}"
    );

    let schema = Schema::five_tuple();
    let rs = generate_ruleset(&schema, &RuleGenConfig::acl(500, 12));
    let tss = TssIndex::build(&rs);
    let c = Classifier::with_model(random_model(&tss, 2), tss).map_err(|e| e.to_string())?;
    let trace = labeled(&rs, generate_traffic(&rs, 5000, 3).packets);
    let once = c.evaluate(&trace);
    let mut twice_trace = trace.clone();
    twice_trace.packets.extend(trace.packets.iter().cloned());
    twice_trace.truth.extend(trace.truth.iter().cloned());
    let twice = c.evaluate(&twice_trace);
    let doubled = ClassifyStats {
        packets: 2 * once.packets,
        labeled: 2 * once.labeled,
        model_correct: 2 * once.model_correct,
        classification_correct: 2 * once.classification_correct,
        memory_accesses: 2 * once.memory_accesses,
        fallbacks: 2 * once.fallbacks,
        scenario1_errors: 2 * once.scenario1_errors,
    };
    ensure!(twice == doubled, "replay {twice:?} vs {doubled:?}");
    Ok(format!(
        "singleton hit = 2 accesses; replay doubles {} accesses to {}",
        once.memory_accesses, twice.memory_accesses
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("eight-rule golden build", eight_rules_golden),
        ("insertion examples", insertion_examples),
        ("oracle equivalence", oracle_equivalence),
        ("model trainability", trainability),
        ("accuracy ordering", accuracy_ordering),
        ("gradient check", gradient_check),
        ("zero-block identity", zero_block_identity),
        ("MAC count independence", mac_independence),
        ("pipeline equivalence", pipeline_equivalence),
        ("update-policy arithmetic", update_policy),
        ("dynamic scenario shape", dynamic_scenario),
        ("memory-access accounting", memory_accounting),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
