//! IoU metrics, planning-corridor masks, detector evaluation, studies and
//! the inference benchmark.
//!
//! Scores are computed on the raw in-range live points of each frame. A
//! detector labels the downsampled scan and every raw point takes the label
//! of the voxel it was merged into, so runs with different voxel sizes are
//! scored against the same points and the same truth. Confusion counts are
//! pooled over all frames before IoUs are taken.

mod bench;
mod study;

pub use bench::{benchmark_inference, infer_frame, RuntimeStats};
pub use study::{run_study, StudyConfig, StudyKind, Table};

use serde::{Deserialize, Serialize};

use crate::baseline::classify_distances;
use crate::dataset::{PreparedFrame, PreparedSequence};
use crate::error::{invalid, Result};
use crate::geometry::Point3;
use crate::model::ChangeModel;
use crate::Label;

/// Binary confusion counts with Changed as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_labels(pred: &[Label], truth: &[Label]) -> Result<Self> {
        Self::masked(pred, truth, None)
    }

    /// Counts only points where `mask` is true.
    pub fn masked(pred: &[Label], truth: &[Label], mask: Option<&[bool]>) -> Result<Self> {
        if pred.len() != truth.len() || mask.is_some_and(|m| m.len() != pred.len()) {
            return invalid(format!(
                "prediction, truth and mask lengths differ ({}, {}, {:?})",
                pred.len(),
                truth.len(),
                mask.map(|m| m.len())
            ));
        }
        let mut c = Self::default();
        for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            match (p.is_changed(), t.is_changed()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// IoU of `class`; 1 when the class is absent from both prediction and truth.
    pub fn iou(&self, class: Label) -> f64 {
        let (inter, union) = match class {
            Label::Changed => (self.tp, self.tp + self.fp + self.fn_),
            Label::Consistent => (self.tn, self.tn + self.fp + self.fn_),
        };
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn iou_changed(&self) -> f64 {
        self.iou(Label::Changed)
    }

    pub fn miou(&self) -> f64 {
        0.5 * (self.iou(Label::Changed) + self.iou(Label::Consistent))
    }
}

pub fn iou(pred: &[Label], truth: &[Label], class: Label) -> Result<f64> {
    Ok(Confusion::from_labels(pred, truth)?.iou(class))
}

pub fn miou(pred: &[Label], truth: &[Label]) -> Result<f64> {
    Ok(Confusion::from_labels(pred, truth)?.miou())
}

/// Band around the taught path within the planning horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub path: Vec<[f64; 2]>,
    /// Full width in metres.
    pub width: f64,
    /// Maximum range from the sensor in metres.
    pub range: f64,
}

impl Corridor {
    pub const DEFAULT_WIDTH: f64 = 5.0;
    pub const DEFAULT_RANGE: f64 = 10.0;

    pub fn new(path: Vec<[f64; 2]>, width: f64, range: f64) -> Result<Self> {
        if path.is_empty() {
            return invalid("corridor path has no vertices");
        }
        if !(width > 0.0) {
            return invalid(format!("corridor width must be positive, got {width}"));
        }
        if !(range > 0.0) {
            return invalid(format!("corridor range must be positive, got {range}"));
        }
        Ok(Self { path, width, range })
    }

    pub fn with_defaults(path: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(path, Self::DEFAULT_WIDTH, Self::DEFAULT_RANGE)
    }

    /// Planar distance from `(x, y)` to the path polyline.
    pub fn lateral_distance(&self, x: f64, y: f64) -> f64 {
        if self.path.len() == 1 {
            let a = self.path[0];
            return (x - a[0]).hypot(y - a[1]);
        }
        self.path
            .windows(2)
            .map(|w| segment_distance([x, y], w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether a world point seen from `sensor` lies in the corridor.
    pub fn contains(&self, world: &Point3, sensor: &Point3) -> bool {
        (world - sensor).norm() <= self.range && self.lateral_distance(world.x, world.y) <= 0.5 * self.width
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Mask over the frame's raw points.
pub fn corridor_filter(frame: &PreparedFrame, corridor: &Corridor) -> Vec<bool> {
    let sensor = frame.sensor_position();
    frame
        .raw
        .points()
        .iter()
        .map(|p| corridor.contains(&frame.pose.apply(p), &sensor))
        .collect()
}

/// Something that labels a prepared frame.
pub trait ChangeDetector {
    fn name(&self) -> String;

    /// One label per raw point of `frame`.
    fn detect(&self, frame: &PreparedFrame) -> Result<Vec<Label>>;
}

/// Raw-point labels from labels of the downsampled points.
pub fn expand_labels(frame: &PreparedFrame, downsampled: &[Label]) -> Result<Vec<Label>> {
    if downsampled.len() != frame.live.len() {
        return invalid(format!("{} labels for {} downsampled points", downsampled.len(), frame.live.len()));
    }
    Ok(frame.raw_membership.iter().map(|&m| downsampled[m]).collect())
}

pub struct ModelDetector {
    pub model: ChangeModel<f32>,
    /// Changed where the probability exceeds this.
    pub threshold: f64,
}

impl ModelDetector {
    pub fn new(model: ChangeModel<f32>) -> Self {
        Self { model, threshold: 0.5 }
    }

    /// Labels of the downsampled points.
    pub fn detect_downsampled(&self, frame: &PreparedFrame) -> Result<Vec<Label>> {
        let p = infer_frame(&self.model, frame)?;
        Ok(p.iter().map(|&v| Label::from_bool(v > self.threshold)).collect())
    }
}

impl ChangeDetector for ModelDetector {
    fn name(&self) -> String {
        "model".into()
    }

    fn detect(&self, frame: &PreparedFrame) -> Result<Vec<Label>> {
        expand_labels(frame, &self.detect_downsampled(frame)?)
    }
}

/// Nearest-neighbour threshold on the downsampled scan.
pub struct BaselineDetector {
    pub threshold: f64,
}

impl ChangeDetector for BaselineDetector {
    fn name(&self) -> String {
        format!("baseline@{:.2}", self.threshold)
    }

    fn detect(&self, frame: &PreparedFrame) -> Result<Vec<Label>> {
        expand_labels(frame, &classify_distances(&frame.map_distances, self.threshold))
    }
}

/// Returns the generator's truth. Used to check the evaluation plumbing.
pub struct TruthDetector;

impl ChangeDetector for TruthDetector {
    fn name(&self) -> String {
        "truth".into()
    }

    fn detect(&self, frame: &PreparedFrame) -> Result<Vec<Label>> {
        Ok(frame.raw_truth.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub name: String,
    pub frames: usize,
    pub full: Confusion,
    pub corridor: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub detector: String,
    pub sequences: Vec<SequenceReport>,
    pub iou_changed: f64,
    pub corridor_iou_changed: f64,
    pub miou: f64,
    pub runtime: Option<RuntimeStats>,
}

impl EvalReport {
    fn from_sequences(detector: String, sequences: Vec<SequenceReport>) -> Self {
        let mut full = Confusion::default();
        let mut corr = Confusion::default();
        for s in &sequences {
            full.add(&s.full);
            corr.add(&s.corridor);
        }
        Self {
            detector,
            sequences,
            iou_changed: full.iou_changed(),
            corridor_iou_changed: corr.iou_changed(),
            miou: full.miou(),
            runtime: None,
        }
    }

    pub fn pooled(&self) -> Confusion {
        let mut c = Confusion::default();
        for s in &self.sequences {
            c.add(&s.full);
        }
        c
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sequence", "frames", "tp", "fp", "fn", "tn", "iou_ch", "corridor_iou_ch", "miou"])?;
        let rows = self.sequences.iter().map(|s| (s.name.clone(), s.frames, s.full, s.corridor));
        let overall = (
            "all".to_string(),
            self.sequences.iter().map(|s| s.frames).sum(),
            self.pooled(),
            {
                let mut c = Confusion::default();
                self.sequences.iter().for_each(|s| c.add(&s.corridor));
                c
            },
        );
        for (name, frames, full, corr) in rows.chain(std::iter::once(overall)) {
            w.write_record([
                name,
                frames.to_string(),
                full.tp.to_string(),
                full.fp.to_string(),
                full.fn_.to_string(),
                full.tn.to_string(),
                full.iou_changed().to_string(),
                corr.iou_changed().to_string(),
                full.miou().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores `detector` on every frame; the corridor follows each sequence's taught path.
pub fn evaluate(
    detector: &dyn ChangeDetector,
    sequences: &[(&str, &PreparedSequence)],
    corridor_width: f64,
    corridor_range: f64,
) -> Result<EvalReport> {
    let mut reports = Vec::new();
    for &(name, seq) in sequences {
        let corridor = Corridor::new(seq.taught_path.clone(), corridor_width, corridor_range)?;
        let mut full = Confusion::default();
        let mut corr = Confusion::default();
        for f in &seq.frames {
            let pred = detector.detect(f)?;
            full.add(&Confusion::from_labels(&pred, &f.raw_truth)?);
            let mask = corridor_filter(f, &corridor);
            corr.add(&Confusion::masked(&pred, &f.raw_truth, Some(&mask))?);
        }
        reports.push(SequenceReport {
            name: name.to_string(),
            frames: seq.frames.len(),
            full,
            corridor: corr,
        });
    }
    Ok(EvalReport::from_sequences(detector.name(), reports))
}

/// Baseline threshold with the highest pooled IoU_ch over `sequences`.
///
/// The threshold is tuned on the evaluation data itself, which favours the
/// baseline. Ties keep the smaller threshold.
pub fn best_baseline(
    sequences: &[(&str, &PreparedSequence)],
    thresholds: &[f64],
    corridor_width: f64,
    corridor_range: f64,
) -> Result<(f64, EvalReport)> {
    let mut best: Option<(f64, EvalReport)> = None;
    for &t in thresholds {
        let r = evaluate(&BaselineDetector { threshold: t }, sequences, corridor_width, corridor_range)?;
        if best.as_ref().is_none_or(|(_, b)| r.iou_changed > b.iou_changed) {
            best = Some((t, r));
        }
    }
    best.ok_or_else(|| crate::Error::InvalidArgument("no baseline thresholds given".into()))
}
