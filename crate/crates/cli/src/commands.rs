use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};

use tang_core::baseline::{self, Baseline};
use tang_core::classifier::{Classifier, ClassifierConfig, ClassifyStats, Predictor};
use tang_core::model::{
    load_model, log_to_csv, save_model, train, Budget, ModelConfig, ResidualMlp, TrainingConfig,
    TrainingSet,
};
use tang_core::pipeline::{
    parse_update_script, run_pipeline, scripted_windows, Clock, DynamicConfig, MismatchThreshold,
    PipelineConfig, SharedClassifier, Simulator, ThroughputMonitor, UpdateEngine,
};
use tang_core::ruleset::{
    generate_ruleset, generate_traffic, parse_ruleset, read_trace, serialize_ruleset, write_trace,
    RuleGenConfig, Ruleset, Schema, Trace,
};
use tang_core::tss::TssIndex;
use tang_core::MODEL_MAGIC;

use crate::{
    BenchArgs, BuildArgs, ClassifierArgs, Cli, Command, EvalArgs, GenArgs, InspectArgs, ModelArgs,
    TrafficArgs, TrainArgs, UpdateSimArgs,
};

pub const INDEX_FILE: &str = "index.tss";
pub const MODEL_FILE: &str = "model.bin";
pub const BENCH_CSV_HEADER: &str = "engine,lanes,batch_size,packets,elapsed_s,mpps";

const INDEX_HEADER: &str = "# tang-tss";

pub fn name(command: &Command) -> &'static str {
    match command {
        Command::Gen(_) => "gen",
        Command::Build(_) => "build",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Bench(_) => "bench",
        Command::UpdateSim(_) => "update-sim",
        Command::Inspect(_) => "inspect",
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        out_dir: &cli.out_dir,
        seed: cli.seed,
    };
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Build(a) => build(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::UpdateSim(a) => update_sim(&ctx, a),
        Command::Inspect(a) => inspect(a),
    }
}

struct Ctx<'a> {
    out_dir: &'a Path,
    seed: u64,
}

impl Ctx<'_> {
    fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::create_dir_all(self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(file);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn schema(text: &str) -> Result<Schema> {
    text.parse()
        .map_err(|e| anyhow::anyhow!("schema {text:?}: {e}"))
}

fn load_index(path: &Path) -> Result<TssIndex> {
    let text = read(path)?;
    TssIndex::from_text(&text).with_context(|| format!("parsing index {}", path.display()))
}

/// Accepts either a ClassBench ruleset or a saved index.
fn load_rules_or_index(path: &Path, schema_text: &str) -> Result<TssIndex> {
    let text = read(path)?;
    if text.starts_with(INDEX_HEADER) {
        return TssIndex::from_text(&text)
            .with_context(|| format!("parsing index {}", path.display()));
    }
    let rs = parse_ruleset(&text, &schema(schema_text)?)
        .with_context(|| format!("parsing ruleset {}", path.display()))?;
    ensure!(!rs.is_empty(), "ruleset {} has no rules", path.display());
    Ok(TssIndex::build(&rs))
}

fn traffic(args: &TrafficArgs, ruleset: &Ruleset, seed: u64) -> Result<Trace> {
    match &args.trace {
        Some(path) => {
            let mut trace = read_trace(&read(path)?, ruleset.schema())
                .with_context(|| format!("parsing trace {}", path.display()))?;
            if trace.truth.len() != trace.len() {
                trace.relabel(ruleset);
            }
            Ok(trace)
        }
        None => Ok(generate_traffic(ruleset, args.packets, seed)),
    }
}

fn load_classifier(args: &ClassifierArgs) -> Result<Classifier> {
    let tss = load_index(&args.index)?;
    let predictor = if args.oracle {
        Predictor::Oracle
    } else if let Some(t) = args.fixed_tuple {
        Predictor::Fixed(t)
    } else if let Some(path) = &args.model {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let model = load_model(std::io::BufReader::new(file))
            .with_context(|| format!("loading model {}", path.display()))?;
        Predictor::Model(model)
    } else {
        bail!("a predictor is required: --model, --oracle or --fixed-tuple");
    };
    let config = ClassifierConfig {
        strict: args.strict,
        default_action: None,
    };
    Ok(Classifier::new(predictor, tss, config)?)
}

fn training_config(m: &ModelArgs, seed: u64) -> TrainingConfig {
    TrainingConfig {
        alpha: m.alpha,
        beta: m.beta,
        batch_size: m.batch_size,
        epochs_per_round: m.epochs,
        learning_rate: m.lr,
        lr_decay: m.lr_decay,
        decay_every: m.decay_every,
        max_rounds: m.max_rounds,
        seed,
    }
}

fn gen(ctx: &Ctx, a: &GenArgs) -> Result<()> {
    let schema = Schema::five_tuple();
    let mut cfg = RuleGenConfig::acl(a.rules, ctx.seed);
    if a.uniform_signatures {
        cfg.signatures.clear();
    }
    let rs = generate_ruleset(&schema, &cfg);
    ctx.write(&a.rules_file, serialize_ruleset(&rs))?;
    println!(
        "rules={} file={}",
        rs.len(),
        ctx.out_dir.join(&a.rules_file).display()
    );
    if let Some(n) = a.packets {
        let trace = generate_traffic(&rs, n, ctx.seed.wrapping_add(1));
        ctx.write(&a.trace_file, write_trace(&trace))?;
        println!(
            "packets={} file={}",
            n,
            ctx.out_dir.join(&a.trace_file).display()
        );
    }
    Ok(())
}

fn build(ctx: &Ctx, a: &BuildArgs) -> Result<()> {
    let text = read(&a.ruleset)?;
    let rs = parse_ruleset(&text, &schema(&a.schema.schema)?)
        .with_context(|| format!("parsing ruleset {}", a.ruleset.display()))?;
    ensure!(
        !rs.is_empty(),
        "ruleset {} has no rules",
        a.ruleset.display()
    );
    let tss = TssIndex::build(&rs);
    print!("{}", tss.summary());
    println!("tuples={} rules={}", tss.tuple_count(), tss.rule_count());
    ctx.write(INDEX_FILE, tss.to_text())
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let tss = load_rules_or_index(&a.input, &a.schema.schema)?;
    let rs = tss.to_ruleset();
    let trace = traffic(&a.traffic, &rs, ctx.seed)?;
    let raw = TrainingSet::label(&tss, &trace.packets);
    ensure!(!raw.is_empty(), "no training packet matches a rule");
    // Generated traffic gets a fresh held-out trace for evaluation.
    let eval = match a.traffic.trace {
        Some(_) => TrainingSet::default(),
        None => {
            let n = (a.traffic.packets / 4).max(1);
            TrainingSet::label(
                &tss,
                &generate_traffic(&rs, n, ctx.seed.wrapping_add(1)).packets,
            )
        }
    };
    let config = ModelConfig {
        input_dim: tss.schema().segment_count(),
        neurons: a.model.neurons,
        blocks: a.model.blocks,
        classes: tss.tuple_count(),
    };
    let model = ResidualMlp::new(config, ctx.seed)?;
    let tc = training_config(&a.model, ctx.seed);
    let start = Instant::now();
    let out = train(model, &raw, &eval, &tc)?;
    let secs = start.elapsed().as_secs_f64();

    let mut bytes = Vec::new();
    save_model(&out.model, &mut bytes)?;
    ctx.write(MODEL_FILE, bytes)?;
    ctx.write(INDEX_FILE, tss.to_text())?;
    ctx.write("train_log.csv", log_to_csv(&out.log))?;
    let status = if out.converged {
        "ok"
    } else {
        "below_threshold"
    };
    ctx.write(
        "train_summary.csv",
        format!(
            "accuracy,beta,converged,rounds,final_alpha,status\n{:.6},{},{},{},{},{status}\n",
            out.accuracy, tc.beta, out.converged, out.rounds, out.final_alpha
        ),
    )?;
    println!(
        "tuples={} examples={} accuracy={:.6} converged={} rounds={} alpha={} status={status} seconds={secs:.2}",
        tss.tuple_count(),
        raw.len(),
        out.accuracy,
        out.converged,
        out.rounds,
        out.final_alpha
    );
    Ok(())
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let c = load_classifier(&a.classifier)?;
    let trace = traffic(&a.traffic, &c.tss().to_ruleset(), ctx.seed)?;
    let stats = c.evaluate(&trace);
    let csv = format!(
        "{}\n{}\n",
        ClassifyStats::CSV_HEADER,
        stats.csv_row(&a.name, c.tss().tuple_count())
    );
    print!("{csv}");
    ctx.write("eval.csv", csv)
}

fn bench(ctx: &Ctx, a: &BenchArgs) -> Result<()> {
    let baselines = a
        .baseline
        .iter()
        .map(|b| b.parse::<Baseline>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    ensure!(!a.lanes.is_empty(), "no lane counts given");
    let c = load_classifier(&a.classifier)?;
    let rs = c.tss().to_ruleset();
    let trace = traffic(&a.traffic, &rs, ctx.seed)?;
    let packets = &trace.packets;

    let mut strict = c.clone();
    strict.set_strict(true);
    let reference = baseline::classify_all(Baseline::Linear, c.tss(), &rs, packets);
    let verified: Vec<_> = strict
        .classify_batch(packets)
        .iter()
        .map(|r| r.rule_id())
        .collect();
    ensure!(
        verified == reference,
        "strict classification disagrees with linear scan"
    );
    for &b in &baselines {
        ensure!(
            baseline::classify_all(b, c.tss(), &rs, packets) == reference,
            "{b} disagrees with linear scan"
        );
    }

    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    let mut row = |engine: &str, lanes: usize, batch: usize, secs: f64| {
        let mpps = if secs > 0.0 {
            packets.len() as f64 / secs / 1e6
        } else {
            0.0
        };
        csv.push_str(&format!(
            "{engine},{lanes},{batch},{},{secs:.6},{mpps:.4}\n",
            packets.len()
        ));
    };
    let shared = SharedClassifier::new(c);
    let mut first: Option<Vec<_>> = None;
    for &lanes in &a.lanes {
        let cfg = PipelineConfig {
            batch_size: a.batch_size,
            lanes,
            ..PipelineConfig::default()
        };
        let start = Instant::now();
        let out = run_pipeline(&shared, packets.iter().cloned(), &cfg)?;
        let secs = start.elapsed().as_secs_f64();
        let results = out.results();
        match &first {
            Some(f) => ensure!(*f == results, "lanes={lanes} changed the results"),
            None => first = Some(results),
        }
        row("tang", lanes, a.batch_size, secs);
    }
    let snapshot = shared.snapshot();
    for &b in &baselines {
        let start = Instant::now();
        let out = baseline::classify_all(b, snapshot.tss(), &rs, packets);
        let secs = start.elapsed().as_secs_f64();
        std::hint::black_box(out);
        row(&b.to_string(), 1, 1, secs);
    }
    print!("{csv}");
    ctx.write("bench.csv", csv)
}

fn parse_theta(text: &str) -> Result<MismatchThreshold> {
    match text.strip_suffix('%') {
        Some(pct) => {
            let v: f64 = pct
                .trim()
                .parse()
                .with_context(|| format!("theta {text:?}"))?;
            Ok(MismatchThreshold::Proportional(v / 100.0))
        }
        None => Ok(MismatchThreshold::Absolute(
            text.trim()
                .parse()
                .with_context(|| format!("theta {text:?}"))?,
        )),
    }
}

fn update_sim(ctx: &Ctx, a: &UpdateSimArgs) -> Result<()> {
    let theta = parse_theta(&a.theta)?;
    let c = load_classifier(&a.classifier)?;
    let windows = match &a.script {
        Some(path) => parse_update_script(&read(path)?, c.tss().schema())
            .with_context(|| format!("parsing script {}", path.display()))?,
        None => {
            let rs = c.tss().to_ruleset();
            let cfg = DynamicConfig {
                rules: rs.len(),
                windows: a.windows,
                churn: a.churn,
                seed: ctx.seed,
                ..DynamicConfig::new(0, 0, 0, ctx.seed)
            };
            scripted_windows(&rs, &cfg)
        }
    };
    let engine = UpdateEngine {
        theta,
        training: training_config(&a.model, ctx.seed),
        budget: Budget::epochs(a.incremental_epochs),
        model: None,
    };
    let mut sim = Simulator::new(c, engine, ctx.seed);
    sim.monitor = ThroughputMonitor::new(a.tau);
    sim.deferred = !a.no_deferred;
    sim.packets_per_window = a.packets_per_window;
    sim.train_packets = a.train_packets;
    if a.wall_clock {
        sim.clock = Clock::Wall;
    }
    let report = sim.run(&windows)?;
    let csv = report.to_csv();
    print!("{csv}");
    ctx.write("update_sim.csv", csv)?;
    ctx.write("update_sim_detail.csv", report.detail_csv())
}

fn inspect(a: &InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    if bytes.starts_with(&MODEL_MAGIC) {
        let m = load_model(bytes.as_slice())?;
        let c = m.config();
        println!(
            "model input_dim={} neurons={} blocks={} classes={} params={} macs_per_packet={}",
            c.input_dim,
            c.neurons,
            c.blocks,
            c.classes,
            m.param_count(),
            c.macs()
        );
        return Ok(());
    }
    let text = String::from_utf8(bytes).context("file is neither a model nor an index")?;
    ensure!(
        text.starts_with(INDEX_HEADER),
        "file is neither a model nor an index"
    );
    let tss = TssIndex::from_text(&text)?;
    print!("{}", tss.summary());
    println!(
        "schema={} tuples={} rules={} mismatches={}",
        tss.schema(),
        tss.tuple_count(),
        tss.rule_count(),
        tss.mismatch_count()
    );
    Ok(())
}
