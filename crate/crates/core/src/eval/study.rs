use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{best_baseline, evaluate, ChangeDetector, EvalReport, ModelDetector};
use crate::baseline::default_sweep;
use crate::dataset::{prepare, PrepareConfig, PreparedSequence, Sequence};
use crate::error::{invalid, Result};
use crate::model::ChangeModel;
use crate::trainer::{train, LossTerms, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    VoxelSweep,
    LossAblation,
    MethodCompare,
}

impl std::str::FromStr for StudyKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "voxel_sweep" => Ok(Self::VoxelSweep),
            "loss_ablation" => Ok(Self::LossAblation),
            "method_compare" => Ok(Self::MethodCompare),
            _ => invalid(format!("unknown study '{s}'")),
        }
    }
}

pub struct StudyConfig {
    pub train: Vec<Sequence>,
    pub eval: Vec<(String, Sequence)>,
    pub prepare: PrepareConfig,
    pub train_cfg: TrainConfig,
    pub map_voxels: Vec<f64>,
    pub live_voxels: Vec<f64>,
    pub corridor_width: f64,
    pub corridor_range: f64,
    pub baseline_thresholds: Vec<f64>,
    /// Detectors scored by the method comparison; when empty a model is
    /// trained with `train_cfg`.
    pub detectors: Vec<Box<dyn ChangeDetector>>,
    /// Adds the best-threshold baseline to the method comparison.
    pub include_baseline: bool,
}

impl StudyConfig {
    pub fn new(train: Vec<Sequence>, eval: Vec<(String, Sequence)>, train_cfg: TrainConfig) -> Self {
        Self {
            train,
            eval,
            prepare: PrepareConfig::default(),
            train_cfg,
            map_voxels: vec![0.1, 0.2, 0.3],
            live_voxels: vec![0.05, 0.15, 0.3],
            corridor_width: super::Corridor::DEFAULT_WIDTH,
            corridor_range: super::Corridor::DEFAULT_RANGE,
            baseline_thresholds: default_sweep(),
            detectors: Vec::new(),
            include_baseline: true,
        }
    }
}

/// A numeric table with labelled rows and columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub row_label: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == col)?;
        self.rows.iter().find(|(r, _)| r == row).map(|(_, v)| v[c])
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![self.row_label.clone()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (name, vals) in &self.rows {
            let mut rec = vec![name.clone()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct StudyOutput {
    pub tables: Vec<Table>,
    /// Every evaluation behind the tables, in row order.
    pub reports: Vec<EvalReport>,
    /// Models trained by the study, in the same order.
    pub models: Vec<ChangeModel<f32>>,
}

fn prepare_all(seqs: &[Sequence], cfg: &PrepareConfig) -> Result<Vec<PreparedSequence>> {
    seqs.iter().map(|s| prepare(s, cfg)).collect()
}

fn prepare_named(seqs: &[(String, Sequence)], cfg: &PrepareConfig) -> Result<Vec<(String, PreparedSequence)>> {
    seqs.iter().map(|(n, s)| Ok((n.clone(), prepare(s, cfg)?))).collect()
}

fn borrow(v: &[(String, PreparedSequence)]) -> Vec<(&str, &PreparedSequence)> {
    v.iter().map(|(n, s)| (n.as_str(), s)).collect()
}

fn voxel_label(v: f64) -> String {
    format!("{v:.2}")
}

pub fn run_study(kind: StudyKind, cfg: &StudyConfig) -> Result<StudyOutput> {
    if cfg.eval.is_empty() {
        return invalid("study needs at least one evaluation sequence");
    }
    let needs_training = match kind {
        StudyKind::MethodCompare => cfg.detectors.is_empty(),
        _ => true,
    };
    if needs_training && cfg.train.is_empty() {
        return invalid("study needs training sequences");
    }
    let (w, r) = (cfg.corridor_width, cfg.corridor_range);
    match kind {
        StudyKind::VoxelSweep => {
            let cols: Vec<String> = cfg.live_voxels.iter().map(|&v| voxel_label(v)).collect();
            let mut corridor_rows = Vec::new();
            let mut full_rows = Vec::new();
            let mut reports = Vec::new();
            let mut models = Vec::new();
            for &mv in &cfg.map_voxels {
                let mut crow = Vec::new();
                let mut frow = Vec::new();
                for &lv in &cfg.live_voxels {
                    let pc = PrepareConfig {
                        map_voxel: mv,
                        live_voxel: lv,
                        ..cfg.prepare
                    };
                    let model = train(&prepare_all(&cfg.train, &pc)?, &cfg.train_cfg)?.model;
                    let eval = prepare_named(&cfg.eval, &pc)?;
                    let det = ModelDetector::new(model);
                    let rep = evaluate(&det, &borrow(&eval), w, r)?;
                    models.push(det.model);
                    crow.push(rep.corridor_iou_changed);
                    frow.push(rep.iou_changed);
                    reports.push(rep);
                }
                corridor_rows.push((voxel_label(mv), crow));
                full_rows.push((voxel_label(mv), frow));
            }
            Ok(StudyOutput {
                tables: vec![
                    Table {
                        name: "voxel_sweep_corridor_iou_ch".into(),
                        row_label: "map_voxel\\live_voxel".into(),
                        columns: cols.clone(),
                        rows: corridor_rows,
                    },
                    Table {
                        name: "voxel_sweep_iou_ch".into(),
                        row_label: "map_voxel\\live_voxel".into(),
                        columns: cols,
                        rows: full_rows,
                    },
                ],
                reports,
                models,
            })
        }
        StudyKind::LossAblation => {
            let train_data = prepare_all(&cfg.train, &cfg.prepare)?;
            let eval = prepare_named(&cfg.eval, &cfg.prepare)?;
            let rows = [
                ("cham", LossTerms { chamfer: true, class_balance: false, temporal: false }),
                ("class", LossTerms { chamfer: false, class_balance: true, temporal: false }),
                ("cham+class", LossTerms { chamfer: true, class_balance: true, temporal: false }),
                ("cham+class+temporal", LossTerms::default()),
            ];
            let mut out = Vec::new();
            let mut reports = Vec::new();
            let mut models = Vec::new();
            for (name, terms) in rows {
                let tc = TrainConfig { terms, ..cfg.train_cfg.clone() };
                let model = train(&train_data, &tc)?.model;
                let det = ModelDetector::new(model);
                let mut rep = evaluate(&det, &borrow(&eval), w, r)?;
                models.push(det.model);
                rep.detector = name.into();
                let c = rep.pooled();
                let frac = (c.tp + c.fp) as f64 / c.total().max(1) as f64;
                out.push((name.to_string(), vec![rep.iou_changed, rep.corridor_iou_changed, rep.miou, frac]));
                reports.push(rep);
            }
            Ok(StudyOutput {
                tables: vec![Table {
                    name: "loss_ablation".into(),
                    row_label: "losses".into(),
                    columns: ["iou_ch", "corridor_iou_ch", "miou", "predicted_changed"].map(String::from).to_vec(),
                    rows: out,
                }],
                reports,
                models,
            })
        }
        StudyKind::MethodCompare => {
            let eval = prepare_named(&cfg.eval, &cfg.prepare)?;
            let mut reports = Vec::new();
            let mut models = Vec::new();
            if cfg.detectors.is_empty() {
                let model = train(&prepare_all(&cfg.train, &cfg.prepare)?, &cfg.train_cfg)?.model;
                let det = ModelDetector::new(model);
                reports.push(evaluate(&det, &borrow(&eval), w, r)?);
                models.push(det.model);
            }
            for d in &cfg.detectors {
                reports.push(evaluate(d.as_ref(), &borrow(&eval), w, r)?);
            }
            if cfg.include_baseline {
                reports.push(best_baseline(&borrow(&eval), &cfg.baseline_thresholds, w, r)?.1);
            }
            let rows = reports
                .iter()
                .map(|rep| (rep.detector.clone(), vec![rep.iou_changed, rep.corridor_iou_changed, rep.miou]))
                .collect();
            Ok(StudyOutput {
                tables: vec![Table {
                    name: "method_compare".into(),
                    row_label: "method".into(),
                    columns: ["iou_ch", "corridor_iou_ch", "miou"].map(String::from).to_vec(),
                    rows,
                }],
                reports,
                models,
            })
        }
    }
}
