//! Latency harness for the inference tails and coordinate decoders.
//!
//! Every pipeline sees a fixed number of candidate slots (one per anchor of
//! a three-level 640-pixel feature pyramid). `object_count` controls how many
//! of those slots hold confident, overlapping detections; the rest score
//! below the confidence threshold. Per-element costs divide by the slot count.

use std::hint::black_box;
use std::io::{Read, Write};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::postprocess::csv_io::csv_to_io;
use crate::postprocess::{
    dfl_decode, direct_decode_unchecked, end_to_end_select, nms, Detection, DflLogits, RawRegression, DEFAULT_BINS,
};
use crate::rng;

/// Anchors of a 640-pixel input at strides 8, 16 and 32.
pub const DEFAULT_SLOTS: usize = 80 * 80 + 40 * 40 + 20 * 20;
const IMAGE_PX: f32 = 640.0;
const PYRAMID_STRIDES: [u32; 3] = [8, 16, 32];
const CONF_THRESHOLD: f32 = 0.25;
const NMS_IOU: f32 = 0.5;
const NUM_CLASSES: u32 = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Confidence filter followed by class-aware greedy NMS.
    NmsTail,
    /// Confidence filter only.
    E2eTail,
    /// Softmax-expectation decode of every slot.
    DflDecode,
    /// Direct regression decode of every slot.
    DirectDecode,
}

impl Pipeline {
    pub const ALL: [Pipeline; 4] = [Pipeline::NmsTail, Pipeline::E2eTail, Pipeline::DflDecode, Pipeline::DirectDecode];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::NmsTail => "nms_tail",
            Pipeline::E2eTail => "e2e_tail",
            Pipeline::DflDecode => "dfl_decode",
            Pipeline::DirectDecode => "direct_decode",
        }
    }
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Pipeline {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            Error::arg("pipeline", format!("unknown `{s}` (nms_tail, e2e_tail, dfl_decode, direct_decode)"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub pipeline: Pipeline,
    pub object_count: usize,
    pub repeat: usize,
    pub elapsed_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchPlan {
    pub object_counts: Vec<usize>,
    pub repeats: usize,
    pub warmup: usize,
    /// Confident copies generated per object.
    pub duplicate_factor: f64,
    pub slots: usize,
    pub seed: u64,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            object_counts: vec![1, 10, 100, 300, 1000],
            repeats: 50,
            warmup: 10,
            duplicate_factor: 3.0,
            slots: DEFAULT_SLOTS,
            seed: rng::DEFAULT_SEED,
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.repeats < 3 {
            return Err(Error::arg("repeats", format!("{} < 3", self.repeats)));
        }
        if !(self.duplicate_factor >= 1.0 && self.duplicate_factor.is_finite()) {
            return Err(Error::arg("duplicate_factor", format!("{} must be finite and >= 1", self.duplicate_factor)));
        }
        if self.object_counts.is_empty() {
            return Err(Error::arg("object_counts", "must not be empty"));
        }
        if self.slots == 0 {
            return Err(Error::arg("slots", "must be >= 1"));
        }
        for &n in &self.object_counts {
            if self.confident_slots(n) > self.slots {
                return Err(Error::arg(
                    "object_counts",
                    format!("{n} objects x {} copies exceed {} slots", self.duplicate_factor, self.slots),
                ));
            }
        }
        Ok(())
    }

    fn confident_slots(&self, objects: usize) -> usize {
        (objects as f64 * self.duplicate_factor).round() as usize
    }
}

/// Pre-generated inputs for one object count. Nothing here is built inside
/// a timed region.
pub struct BenchInputs {
    pub detections: Vec<Detection<f32>>,
    pub dfl: Vec<DflLogits<f32>>,
    pub raw: Vec<RawRegression<f32>>,
    pub anchors: Vec<((f32, f32), f32)>,
}

fn pyramid_anchors(slots: usize) -> Vec<((f32, f32), f32)> {
    let mut out = Vec::with_capacity(slots);
    'levels: loop {
        for s in PYRAMID_STRIDES {
            let n = (IMAGE_PX as u32 / s) as usize;
            let stride = s as f32 / IMAGE_PX;
            for idx in 0..n * n {
                if out.len() == slots {
                    break 'levels;
                }
                let (r, c) = (idx / n, idx % n);
                out.push((((c as f32 + 0.5) * stride, (r as f32 + 0.5) * stride), stride));
            }
        }
    }
    out
}

/// Builds the inputs for `objects` confident objects.
pub fn make_inputs(plan: &BenchPlan, objects: usize) -> BenchInputs {
    let mut rng = rng::stream(plan.seed ^ (objects as u64).rotate_left(32), rng::streams::BENCH);
    let confident = plan.confident_slots(objects).min(plan.slots);
    let mut detections = Vec::with_capacity(plan.slots);
    for i in 0..confident {
        // Copies of one object share its box up to a small jitter.
        let obj = i % objects.max(1);
        let mut orng = rng::stream(plan.seed.wrapping_add(obj as u64), rng::streams::BENCH);
        let w: f32 = orng.gen_range(0.02..0.1);
        let h: f32 = orng.gen_range(0.02..0.1);
        let xc: f32 = orng.gen_range(0.05..0.95);
        let yc: f32 = orng.gen_range(0.05..0.95);
        let class_id = orng.gen_range(0..NUM_CLASSES);
        let (jx, jy) = (0.05 * w, 0.05 * h);
        let bbox = BBox { xc: xc + rng.gen_range(-jx..=jx), yc: yc + rng.gen_range(-jy..=jy), w, h };
        detections.push(Detection { bbox, class_id, score: rng.gen_range(0.5..1.0) });
    }
    while detections.len() < plan.slots {
        let bbox = BBox { xc: rng.gen(), yc: rng.gen(), w: rng.gen_range(0.01..0.2), h: rng.gen_range(0.01..0.2) };
        detections.push(Detection { bbox, class_id: rng.gen_range(0..NUM_CLASSES), score: rng.gen_range(0.0..0.2) });
    }
    detections.shuffle(&mut rng);

    let dfl = (0..plan.slots)
        .map(|_| {
            let logits = (0..4 * DEFAULT_BINS).map(|_| rng.gen_range(-4.0f32..4.0)).collect();
            DflLogits::new(DEFAULT_BINS, logits).expect("4 x bins logits")
        })
        .collect();
    let raw = (0..plan.slots).map(|_| RawRegression(std::array::from_fn(|_| rng.gen_range(-2.0f32..2.0)))).collect();
    BenchInputs { detections, dfl, raw, anchors: pyramid_anchors(plan.slots) }
}

fn box_checksum(b: &BBox<f32>) -> f64 {
    (b.xc + b.yc + b.w + b.h) as f64
}

/// Runs one pipeline once and returns a checksum of its output.
pub fn run_pipeline(p: Pipeline, inputs: &BenchInputs) -> f64 {
    match p {
        Pipeline::NmsTail => {
            let kept = end_to_end_select(&inputs.detections, CONF_THRESHOLD);
            let out = nms(&kept, NMS_IOU, true).expect("valid threshold");
            out.len() as f64 + out.iter().map(|d| d.score as f64).sum::<f64>()
        }
        Pipeline::E2eTail => {
            let out = end_to_end_select(&inputs.detections, CONF_THRESHOLD);
            out.len() as f64 + out.iter().map(|d| d.score as f64).sum::<f64>()
        }
        Pipeline::DflDecode => inputs
            .dfl
            .iter()
            .zip(&inputs.anchors)
            .map(|(l, &((ax, ay), s))| {
                let [dl, dt, dr, db] = dfl_decode(l).0;
                let b = BBox {
                    xc: ax + (dr - dl) * s / 2.0,
                    yc: ay + (db - dt) * s / 2.0,
                    w: (dl + dr) * s,
                    h: (dt + db) * s,
                };
                box_checksum(&b)
            })
            .sum(),
        Pipeline::DirectDecode => inputs
            .raw
            .iter()
            .zip(&inputs.anchors)
            .map(|(r, &(a, s))| box_checksum(&direct_decode_unchecked(r, a, s)))
            .sum(),
    }
}

/// Smallest observable step of the monotonic clock.
pub fn clock_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let t0 = Instant::now();
        let mut t1 = Instant::now();
        while t1 == t0 {
            t1 = Instant::now();
        }
        best = best.min(t1 - t0);
    }
    best
}

/// Pins the calling thread to the CPU it is running on. Returns the
/// previous affinity mask so it can be restored, or `None` when pinning is
/// unavailable.
#[cfg(target_os = "linux")]
fn pin_current_thread() -> Option<libc::cpu_set_t> {
    // SAFETY: cpu_set_t is plain data; the libc calls only read/write the
    // provided sets for the calling thread (pid 0).
    unsafe {
        let mut old: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut old) != 0 {
            return None;
        }
        let cpu = libc::sched_getcpu();
        if cpu < 0 {
            return None;
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu as usize, &mut set);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return None;
        }
        Some(old)
    }
}

#[cfg(target_os = "linux")]
fn unpin_current_thread(old: libc::cpu_set_t) {
    // SAFETY: restores a mask previously returned by sched_getaffinity.
    unsafe {
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &old);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples: Vec<LatencySample>,
    pub summary: Vec<SummaryRow>,
    pub slots: usize,
    pub pinned: bool,
    pub clock_resolution_ns: u64,
    pub warnings: Vec<String>,
}

/// Warmup plus `repeats` timed runs of every pipeline at every object count.
pub fn run_bench(plan: &BenchPlan) -> Result<BenchReport> {
    plan.validate()?;
    #[cfg(target_os = "linux")]
    let saved = pin_current_thread();
    #[cfg(target_os = "linux")]
    let pinned = saved.is_some();
    #[cfg(not(target_os = "linux"))]
    let pinned = false;

    let resolution = clock_resolution();
    let mut warnings = Vec::new();
    if resolution > Duration::from_micros(1) {
        warnings.push(format!("clock resolution {resolution:?} is coarser than 1us"));
    }
    if !pinned {
        warnings.push("could not pin to a single CPU".to_string());
    }

    let mut samples = Vec::with_capacity(plan.object_counts.len() * Pipeline::ALL.len() * plan.repeats);
    for &count in &plan.object_counts {
        let inputs = make_inputs(plan, count);
        for p in Pipeline::ALL {
            for _ in 0..plan.warmup {
                black_box(run_pipeline(p, black_box(&inputs)));
            }
            for repeat in 0..plan.repeats {
                let t0 = Instant::now();
                let checksum = run_pipeline(p, black_box(&inputs));
                let elapsed = t0.elapsed();
                black_box(checksum);
                let elapsed_ns = u64::try_from(elapsed.as_nanos()).unwrap_or(u64::MAX).max(1);
                samples.push(LatencySample { pipeline: p, object_count: count, repeat, elapsed_ns });
            }
        }
    }

    #[cfg(target_os = "linux")]
    if let Some(old) = saved {
        unpin_current_thread(old);
    }
    let summary = summarize(&samples, plan.slots)?;
    Ok(BenchReport {
        samples,
        summary,
        slots: plan.slots,
        pinned,
        clock_resolution_ns: u64::try_from(resolution.as_nanos()).unwrap_or(u64::MAX),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub pipeline: Pipeline,
    pub object_count: usize,
    pub median_ns: f64,
    pub mad_ns: f64,
    /// `median_ns` divided by the number of candidate slots processed.
    pub ns_per_detection: f64,
}

/// Median of a non-empty slice; the mean of the middle pair for even sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Median absolute deviation from the median.
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    median(&values.iter().map(|v| (v - m).abs()).collect::<Vec<_>>())
}

/// Per (pipeline, object_count) median and MAD, in order of first appearance.
pub fn summarize(samples: &[LatencySample], slots: usize) -> Result<Vec<SummaryRow>> {
    if samples.is_empty() {
        return Err(Error::Empty("latency samples"));
    }
    if slots == 0 {
        return Err(Error::arg("slots", "must be >= 1"));
    }
    let mut keys: Vec<(Pipeline, usize)> = Vec::new();
    for s in samples {
        if !keys.contains(&(s.pipeline, s.object_count)) {
            keys.push((s.pipeline, s.object_count));
        }
    }
    Ok(keys
        .into_iter()
        .map(|(pipeline, object_count)| {
            let v: Vec<f64> = samples
                .iter()
                .filter(|s| s.pipeline == pipeline && s.object_count == object_count)
                .map(|s| s.elapsed_ns as f64)
                .collect();
            let median_ns = median(&v);
            SummaryRow {
                pipeline,
                object_count,
                median_ns,
                mad_ns: mad(&v),
                ns_per_detection: median_ns / slots as f64,
            }
        })
        .collect())
}

fn write_comments<W: Write>(w: &mut W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    Ok(())
}

/// `pipeline,object_count,repeat,elapsed_ns`.
pub fn write_samples_csv<W: Write>(mut w: W, comments: &[String], samples: &[LatencySample]) -> Result<()> {
    write_comments(&mut w, comments)?;
    let mut wtr = csv::Writer::from_writer(w);
    for s in samples {
        wtr.serialize(s).map_err(csv_to_io)?;
    }
    if samples.is_empty() {
        wtr.write_record(["pipeline", "object_count", "repeat", "elapsed_ns"]).map_err(csv_to_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// `pipeline,object_count,median_ns,mad_ns,ns_per_detection`.
pub fn write_summary_csv<W: Write>(mut w: W, comments: &[String], rows: &[SummaryRow]) -> Result<()> {
    write_comments(&mut w, comments)?;
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r).map_err(csv_to_io)?;
    }
    if rows.is_empty() {
        wtr.write_record(["pipeline", "object_count", "median_ns", "mad_ns", "ns_per_detection"]).map_err(csv_to_io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rdr.deserialize()
        .map(|row| {
            row.map_err(|e: csv::Error| Error::Parse {
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan() -> BenchPlan {
        BenchPlan { object_counts: vec![1], repeats: 3, warmup: 0, slots: 256, ..BenchPlan::default() }
    }

    #[test]
    fn cardinality() {
        let r = run_bench(&tiny_plan()).unwrap();
        assert_eq!(r.samples.len(), 4 * 3);
        assert!(r.samples.iter().all(|s| s.elapsed_ns > 0));
        assert_eq!(r.summary.len(), 4);
    }

    #[test]
    fn robust_statistics() {
        assert_eq!(median(&[1.0, 2.0, 100.0]), 2.0);
        assert_eq!(mad(&[5.0; 7]), 0.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(mad(&[1.0, 2.0, 100.0]), 1.0);
    }

    #[test]
    fn summarize_empty_is_error() {
        assert!(summarize(&[], 10).is_err());
    }

    #[test]
    fn inputs_have_requested_confident_slots() {
        let plan = BenchPlan { slots: 2000, ..BenchPlan::default() };
        for n in [1, 10, 300] {
            let inp = make_inputs(&plan, n);
            assert_eq!(inp.detections.len(), 2000);
            assert_eq!(inp.anchors.len(), 2000);
            assert_eq!(inp.detections.iter().filter(|d| d.score >= CONF_THRESHOLD).count(), 3 * n);
        }
        assert_eq!(pyramid_anchors(DEFAULT_SLOTS).len(), 8400);
    }

    #[test]
    fn nms_keeps_about_one_box_per_object() {
        let plan = BenchPlan::default();
        let inp = make_inputs(&plan, 100);
        let kept = end_to_end_select(&inp.detections, CONF_THRESHOLD);
        let out = nms(&kept, NMS_IOU, true).unwrap();
        assert!(out.len() <= 100 && out.len() >= 90, "{}", out.len());
    }

    #[test]
    fn plan_validation() {
        assert!(BenchPlan { repeats: 2, ..BenchPlan::default() }.validate().is_err());
        assert!(BenchPlan { duplicate_factor: 0.5, ..BenchPlan::default() }.validate().is_err());
        assert!(BenchPlan { object_counts: vec![5000], ..BenchPlan::default() }.validate().is_err());
        assert!(BenchPlan::default().validate().is_ok());
    }
}
