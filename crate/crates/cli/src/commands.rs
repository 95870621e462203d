use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use e2ek::assign::{
    assign_fixed, assign_one_to_one, assign_stal, stal_threshold, AnchorCandidate, GroundTruth, QualityExponents,
    StalConfig,
};
use e2ek::bench::{run_bench, BenchPlan, LatencySample, SummaryRow};
use e2ek::convergence::{compare, CompareConfig, Problem};
use e2ek::postprocess::{
    dfl_decode, direct_decode, nms as greedy_nms, read_detections, DflLogits, RawRegression, DEFAULT_BINS,
};
use e2ek::sched_loss::{lambda_at, ProgLossSchedule};
use e2ek::toytrain::{
    evaluate, generate_scenes, read_model, train as run_training, write_model, AssignerKind, Difficulty, SceneLayout,
    SyntheticScene, ToyHead, TrainConfig, METRICS_HEADER,
};

use crate::error::CliError;
use crate::output::{create_output, emit_json, emit_rows, parse_json, parse_value, read_input, Format, Provenance};
use crate::GlobalArgs;

#[derive(Debug, Serialize)]
struct DetRow {
    class_id: u32,
    score: f64,
    xc: f64,
    yc: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Args)]
pub struct NmsArgs {
    /// Detection CSV (`class_id,score,xc,yc,w,h`); `-` reads stdin.
    #[arg(long)]
    pub input: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Suppress when IoU with a kept box is at least this value.
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Only suppress within a class.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub class_aware: bool,
}

pub fn nms(g: &GlobalArgs, a: NmsArgs) -> Result<(), CliError> {
    let dets = read_detections(read_input(&a.input)?.as_slice())?;
    let kept = greedy_nms(&dets, a.iou_threshold, a.class_aware)?;
    let rows: Vec<DetRow> = kept
        .iter()
        .map(|d| DetRow {
            class_id: d.class_id,
            score: d.score,
            xc: d.bbox.xc,
            yc: d.bbox.yc,
            w: d.bbox.w,
            h: d.bbox.h,
        })
        .collect();
    let prov = Provenance::new("nms", g.seed).flag("iou_threshold", a.iou_threshold).flag("class_aware", a.class_aware);
    let out = create_output(&g.out_dir, a.output.as_deref())?;
    emit_rows(out, &prov, &["class_id", "score", "xc", "yc", "w", "h"], &rows, g.format)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DecodeKind {
    /// Rows of `4 * bins` logits -> `l,t,r,b` expectations in bin units.
    Dfl,
    /// Rows of `ax,ay,stride,r0,r1,r2,r3` -> `xc,yc,w,h`.
    Direct,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long, value_enum)]
    pub kind: DecodeKind,
    /// Input CSV with a header row; `-` reads stdin.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Bins per coordinate for `dfl`.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Serialize)]
struct LtrbRow {
    l: f64,
    t: f64,
    r: f64,
    b: f64,
}

#[derive(Debug, Serialize)]
struct BoxRow {
    xc: f64,
    yc: f64,
    w: f64,
    h: f64,
}

fn parse_numeric_rows(bytes: &[u8], width: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(bytes);
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr
            .read_record(&mut record)
            .map_err(|e| CliError::usage(format!("line {}: {e}", e.position().map_or(0, |p| p.line()))))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(CliError::usage(format!("line {line}: expected {width} fields, found {}", record.len())));
        }
        let vals = record
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CliError::usage(format!("line {line}: expected finite numbers")))?;
        rows.push(vals);
    }
    Ok(rows)
}

pub fn decode(g: &GlobalArgs, a: DecodeArgs) -> Result<(), CliError> {
    let bytes = read_input(&a.input)?;
    let out = create_output(&g.out_dir, a.output.as_deref())?;
    match a.kind {
        DecodeKind::Dfl => {
            if a.bins < 2 {
                return Err(CliError::usage("--bins must be >= 2"));
            }
            let rows = parse_numeric_rows(&bytes, 4 * a.bins)?;
            let mut decoded = Vec::with_capacity(rows.len());
            for r in rows {
                let [l, t, rr, b] = dfl_decode(&DflLogits::new(a.bins, r)?).0;
                decoded.push(LtrbRow { l, t, r: rr, b });
            }
            let prov = Provenance::new("decode", g.seed).flag("kind", "dfl").flag("bins", a.bins);
            emit_rows(out, &prov, &["l", "t", "r", "b"], &decoded, g.format)
        }
        DecodeKind::Direct => {
            let rows = parse_numeric_rows(&bytes, 7)?;
            let mut decoded = Vec::with_capacity(rows.len());
            for r in rows {
                let raw = RawRegression([r[3], r[4], r[5], r[6]]);
                let b = direct_decode(&raw, (r[0], r[1]), r[2])?;
                decoded.push(BoxRow { xc: b.xc, yc: b.yc, w: b.w, h: b.h });
            }
            let prov = Provenance::new("decode", g.seed).flag("kind", "direct");
            emit_rows(out, &prov, &["xc", "yc", "w", "h"], &decoded, g.format)
        }
    }
}

/// Scene document for `assign`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignScene {
    gts: Vec<GroundTruth<f64>>,
    anchors: Vec<AnchorCandidate<f64>>,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// JSON `{"gts": [...], "anchors": [...]}`.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value = "stal")]
    pub assigner: AssignerKind,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Threshold for the fixed assigner.
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tau_base: f64,
    #[arg(long, default_value_t = 0.8)]
    pub alpha_decay: f64,
    /// One-to-one quality exponent on the class score.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// One-to-one quality exponent on the IoU.
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
}

fn assigner_name(a: AssignerKind) -> &'static str {
    match a {
        AssignerKind::Fixed => "fixed",
        AssignerKind::Stal => "stal",
        AssignerKind::OneToOne => "one_to_one",
    }
}

pub fn assign(g: &GlobalArgs, a: AssignArgs) -> Result<(), CliError> {
    let scene: AssignScene = parse_json("scene", &read_input(&a.scene)?)?;
    let gts = scene
        .gts
        .iter()
        .map(|gt| GroundTruth::new(gt.bbox, gt.class_id, gt.image_area))
        .collect::<e2ek::Result<Vec<_>>>()?;
    let mut prov = Provenance::new("assign", g.seed).flag("assigner", assigner_name(a.assigner));
    let (result, thresholds) = match a.assigner {
        AssignerKind::Fixed => {
            prov = prov.flag("tau", a.tau);
            (assign_fixed(&gts, &scene.anchors, a.tau)?, Some(vec![a.tau; gts.len()]))
        }
        AssignerKind::Stal => {
            prov = prov.flag("tau_base", a.tau_base).flag("alpha_decay", a.alpha_decay);
            let cfg = StalConfig::new(a.tau_base, a.alpha_decay)?;
            let th = gts.iter().map(|gt| stal_threshold(gt, &cfg)).collect();
            (assign_stal(&gts, &scene.anchors, &cfg)?, Some(th))
        }
        AssignerKind::OneToOne => {
            prov = prov.flag("gamma", a.gamma).flag("delta", a.delta);
            let exps = QualityExponents { gamma: a.gamma, delta: a.delta };
            (assign_one_to_one(&gts, &scene.anchors, &exps)?, None)
        }
    };
    let doc = json!({
        "provenance": prov.to_json(),
        "thresholds": thresholds,
        "num_positives": result.num_positives(),
        "unmatched_gts": result.unmatched_gts(),
        "result": result,
    });
    emit_json(create_output(&g.out_dir, a.output.as_deref())?, &doc)
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 0.7)]
    pub lambda_start: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lambda_end: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: u32,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct LambdaRow {
    epoch: u32,
    lambda: f64,
}

pub fn schedule(g: &GlobalArgs, a: ScheduleArgs) -> Result<(), CliError> {
    let sched = ProgLossSchedule::new(a.lambda_start, a.lambda_end, a.epochs)?;
    let rows = (0..=a.epochs)
        .map(|t| Ok(LambdaRow { epoch: t, lambda: lambda_at(&sched, t)? }))
        .collect::<e2ek::Result<Vec<_>>>()?;
    let prov = Provenance::new("schedule", g.seed)
        .flag("lambda_start", a.lambda_start)
        .flag("lambda_end", a.lambda_end)
        .flag("epochs", a.epochs);
    emit_rows(create_output(&g.out_dir, a.output.as_deref())?, &prov, &["epoch", "lambda"], &rows, g.format)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TrainConfig JSON; omitted fields take defaults and a missing `seed`
    /// takes the global seed.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metrics output, relative to --out-dir.
    #[arg(long, default_value = "metrics.csv")]
    pub metrics: PathBuf,
    /// Model output, relative to --out-dir.
    #[arg(long, default_value = "model.e2ek")]
    pub model: PathBuf,
}

/// Loads a training config, filling `seed` from the global seed when the
/// document does not set it.
pub fn load_train_config(path: Option<&Path>, seed: u64) -> Result<TrainConfig, CliError> {
    let mut value = match path {
        Some(p) => serde_json::from_slice::<Value>(&read_input(p)?)
            .map_err(|e| CliError::usage(format!("config: invalid JSON: {e}")))?,
        None => json!({}),
    };
    let obj = value.as_object_mut().ok_or_else(|| CliError::usage("config: expected a JSON object"))?;
    obj.entry("seed").or_insert(json!(seed));
    let cfg: TrainConfig = parse_value("config", value)?;
    cfg.validate().map_err(|e| CliError::usage(format!("config: {e}")))?;
    Ok(cfg)
}

pub fn train(g: &GlobalArgs, a: TrainArgs) -> Result<(), CliError> {
    let cfg = load_train_config(a.config.as_deref(), g.seed)?;
    let outcome = run_training(&cfg)?;
    let config_json = serde_json::to_string(&cfg).map_err(|e| CliError::runtime(e.to_string()))?;
    let prov = Provenance::new("train", cfg.seed).flag("config", config_json);
    emit_rows(create_output(&g.out_dir, Some(&a.metrics))?, &prov, &METRICS_HEADER, &outcome.metrics, g.format)?;
    let mut model = create_output(&g.out_dir, Some(&a.model))?;
    write_model(&mut model, &outcome.head)?;
    let last = outcome.metrics.last().expect("epochs >= 1");
    println!("duplicate_rate={} recall={}", last.duplicate_rate, last.recall);
    Ok(())
}

/// Scene file written by `scene-gen`.
#[derive(Debug, Deserialize)]
struct SceneFile {
    scenes: Vec<SyntheticScene>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Scene JSON from `scene-gen`; when omitted, held-out scenes are
    /// generated from the seed.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long, default_value = "dense")]
    pub difficulty: Difficulty,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Metrics JSON output; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

pub fn eval(g: &GlobalArgs, a: EvalArgs) -> Result<(), CliError> {
    let head: ToyHead = read_model(read_input(&a.model)?.as_slice())?;
    let mut prov = Provenance::new("eval", g.seed);
    let scenes = match &a.scenes {
        Some(p) => {
            let file: SceneFile = parse_json("scenes", &read_input(p)?)?;
            for sc in &file.scenes {
                sc.verify()?;
            }
            file.scenes
        }
        None => {
            prov = prov.flag("difficulty", difficulty_name(a.difficulty)).flag("count", a.count);
            let layout = SceneLayout { num_classes: head.num_classes(), ..SceneLayout::default() };
            let cfg = TrainConfig { seed: g.seed, difficulty: a.difficulty, layout, ..TrainConfig::default() };
            cfg.eval_scenes(a.count)?
        }
    };
    let m = evaluate(&head, &scenes)?;
    let doc = json!({ "provenance": prov.to_json(), "metrics": m });
    let to_stdout = a.output.is_none();
    emit_json(create_output(&g.out_dir, a.output.as_deref())?, &doc)?;
    let line = format!("duplicate_rate={} recall={}", m.duplicate_rate, m.recall);
    if to_stdout {
        eprintln!("{line}");
    } else {
        println!("{line}");
    }
    Ok(())
}

fn difficulty_name(d: Difficulty) -> &'static str {
    match d {
        Difficulty::Sparse => "sparse",
        Difficulty::Dense => "dense",
        Difficulty::TinyObjects => "tiny-objects",
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// BenchPlan JSON; defaults when omitted.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Override the plan's repeat count.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Override the plan's object counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Write a single JSON document instead of the two CSVs.
    #[arg(long)]
    pub json: bool,
    #[arg(long, default_value = "samples.csv")]
    pub samples: PathBuf,
    #[arg(long, default_value = "summary.csv")]
    pub summary: PathBuf,
    /// JSON report path, relative to --out-dir.
    #[arg(long, default_value = "bench.json")]
    pub report: PathBuf,
}

pub fn bench(g: &GlobalArgs, a: BenchArgs) -> Result<(), CliError> {
    let mut plan = match &a.plan {
        Some(p) => parse_json::<BenchPlan>("plan", &read_input(p)?)?,
        None => BenchPlan { seed: g.seed, ..BenchPlan::default() },
    };
    if let Some(r) = a.repeats {
        plan.repeats = r;
    }
    if let Some(c) = a.counts {
        plan.object_counts = c;
    }
    plan.validate()?;
    let report = run_bench(&plan)?;
    let counts: Vec<String> = plan.object_counts.iter().map(|c| c.to_string()).collect();
    let mut prov = Provenance::new("bench", plan.seed)
        .flag("object_counts", counts.join(","))
        .flag("repeats", plan.repeats)
        .flag("warmup", plan.warmup)
        .flag("duplicate_factor", plan.duplicate_factor)
        .flag("slots", plan.slots)
        .note("timing values are nondeterministic")
        .note(format!("pinned={} clock_resolution_ns={}", report.pinned, report.clock_resolution_ns));
    for w in &report.warnings {
        prov = prov.note(format!("warning: {w}"));
        eprintln!("warning: {w}");
    }
    if a.json || g.format == Format::Json {
        let doc = json!({ "provenance": prov.to_json(), "report": report });
        emit_json(create_output(&g.out_dir, Some(&a.report))?, &doc)?;
    } else {
        emit_rows::<LatencySample>(
            create_output(&g.out_dir, Some(&a.samples))?,
            &prov,
            &["pipeline", "object_count", "repeat", "elapsed_ns"],
            &report.samples,
            Format::Csv,
        )?;
        emit_rows::<SummaryRow>(
            create_output(&g.out_dir, Some(&a.summary))?,
            &prov,
            &["pipeline", "object_count", "median_ns", "mad_ns", "ns_per_detection"],
            &report.summary,
            Format::Csv,
        )?;
    }
    println!("{:<14} {:>8} {:>14} {:>12} {:>14}", "pipeline", "objects", "median_ns", "mad_ns", "ns_per_slot");
    for r in &report.summary {
        println!(
            "{:<14} {:>8} {:>14.0} {:>12.0} {:>14.3}",
            r.pipeline.name(),
            r.object_count,
            r.median_ns,
            r.mad_ns,
            r.ns_per_detection
        );
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct OptimCompareArgs {
    /// One of quadratic, logistic, toyhead.
    #[arg(long)]
    pub problem: Problem,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Learning rate; a per-problem default when omitted.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha_mix: f64,
    #[arg(long, default_value_t = 5)]
    pub ns_iterations: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

pub fn optim_compare(g: &GlobalArgs, a: OptimCompareArgs) -> Result<(), CliError> {
    let cfg = CompareConfig {
        problem: a.problem,
        steps: a.steps,
        lr: a.lr.unwrap_or(a.problem.default_lr()),
        beta: a.beta,
        alpha_mix: a.alpha_mix,
        ns_iterations: a.ns_iterations,
        seed: g.seed,
    };
    let points = compare(&cfg)?;
    let prov = Provenance::new("optim-compare", g.seed)
        .flag("problem", a.problem.name())
        .flag("steps", cfg.steps)
        .flag("lr", cfg.lr)
        .flag("beta", cfg.beta)
        .flag("alpha_mix", cfg.alpha_mix)
        .flag("ns_iterations", cfg.ns_iterations);
    emit_rows(
        create_output(&g.out_dir, a.output.as_deref())?,
        &prov,
        &["step", "loss_sgd", "loss_musgd"],
        &points,
        g.format,
    )
}

#[derive(Debug, Args)]
pub struct SceneGenArgs {
    #[arg(long, default_value = "dense")]
    pub difficulty: Difficulty,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// Cells per image side.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    pub image_size: u32,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

pub fn scene_gen(g: &GlobalArgs, a: SceneGenArgs) -> Result<(), CliError> {
    let layout = SceneLayout { image_size: a.image_size, grid: a.grid, num_classes: a.classes };
    let scenes = generate_scenes(g.seed, e2ek::rng::streams::SCENES, a.count, a.difficulty, layout)?;
    let prov = Provenance::new("scene-gen", g.seed)
        .flag("difficulty", difficulty_name(a.difficulty))
        .flag("count", a.count)
        .flag("grid", a.grid)
        .flag("image_size", a.image_size)
        .flag("classes", a.classes);
    let doc = json!({ "provenance": prov.to_json(), "scenes": scenes });
    emit_json(create_output(&g.out_dir, a.output.as_deref())?, &doc)
}
