use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lidar_change::baseline::default_sweep;
use lidar_change::costmap::{inflate, CostMapConfig, Pose2};
use lidar_change::dataset::{generate_sequence, prepare, read_sequence, write_sequence, PrepareConfig, PreparedSequence, SceneSpec, Sequence};
use lidar_change::eval::{
    benchmark_inference, best_baseline, evaluate, run_study, BaselineDetector, ChangeDetector, ModelDetector, StudyConfig,
    StudyKind,
};
use lidar_change::geometry::{PointCloud, SENSOR_FRAME};
use lidar_change::losses::LossWeights;
use lidar_change::model::{load_checkpoint, save_checkpoint, ChangeModel, ModelConfig};
use lidar_change::pgm::{write_label_pgm, write_range_pgm};
use lidar_change::projection::{ProjectionConfig, Raster, NO_PIXEL, NO_POINT};
use lidar_change::trainer::{finetune, train, write_log, TrainConfig, FINETUNE_LR_SCALE};
use lidar_change::Label;

#[derive(Parser)]
#[command(name = "lidar-change", version, about = "Unsupervised LiDAR change detection against a prior map")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesise a teach-and-repeat sequence from a scene file.
    Generate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write range images, label images and the cost map of one frame as PGM.
    Render {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Predict labels with this checkpoint instead of using the truth.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        robot_radius: f64,
        #[command(flatten)]
        prep: PrepArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from scratch.
    Train {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "8,16,32,64")]
        channels: String,
    },
    /// Continue training a checkpoint with a reduced learning rate.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = FINETUNE_LR_SCALE)]
        lr_scale: f64,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Label every raw point of every frame; writes one CSV per frame.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[command(flatten)]
        prep: PrepArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the nearest-neighbour baseline, at one threshold or the best of a sweep.
    Baseline {
        #[arg(long, required = true)]
        seq: Vec<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        corridor: CorridorArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint; optionally time inference.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        seq: Vec<PathBuf>,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        corridor: CorridorArgs,
        /// Number of frames to time end-to-end inference over (0 = skip).
        #[arg(long, default_value_t = 0)]
        bench: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Voxel sweep, loss ablation or method comparison; writes CSV tables.
    Study {
        #[arg(long, value_parser = parse_kind)]
        kind: StudyKind,
        #[arg(long, required = true)]
        train_seq: Vec<PathBuf>,
        #[arg(long, required = true)]
        eval_seq: Vec<PathBuf>,
        #[arg(long, default_value = "8,16,32,64")]
        channels: String,
        /// Extra checkpoints for the method comparison.
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        lambda1: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda2: f64,
        #[arg(long, default_value_t = 1500)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        prep: PrepArgs,
        #[command(flatten)]
        corridor: CorridorArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<StudyKind, String> {
    s.parse().map_err(|e: lidar_change::Error| e.to_string())
}

#[derive(Args, Clone)]
struct PrepArgs {
    #[arg(long, default_value_t = 0.2)]
    map_voxel: f64,
    #[arg(long, default_value_t = 0.05)]
    live_voxel: f64,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 10.0)]
    max_range: f64,
}

impl PrepArgs {
    fn config(&self) -> PrepareConfig {
        PrepareConfig {
            projection: ProjectionConfig {
                height: self.height,
                width: self.width,
                max_range: self.max_range,
                ..ProjectionConfig::desk()
            },
            map_voxel: self.map_voxel,
            live_voxel: self.live_voxel,
        }
    }

    /// The same settings sized for `model`.
    fn for_model(&self, model: &ModelConfig) -> PrepareConfig {
        let mut c = self.config();
        c.projection.height = model.height;
        c.projection.width = model.width;
        c
    }
}

#[derive(Args, Clone)]
struct CorridorArgs {
    #[arg(long, default_value_t = 5.0)]
    corridor_width: f64,
    /// Corridor range limit, metres.
    #[arg(long, default_value_t = 10.0)]
    range: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required = true)]
    seq: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1500)]
    steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[command(flatten)]
    prep: PrepArgs,
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self, model: ModelConfig) -> Result<TrainConfig> {
        let mut c = TrainConfig::new(model);
        c.weights = LossWeights::new(self.lambda1, self.lambda2)?;
        c.seed = self.seed;
        c.steps = self.steps;
        c.optim.lr = self.lr;
        c.patience = (self.patience > 0).then_some(self.patience);
        Ok(c)
    }
}

fn parse_channels(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse().with_context(|| format!("bad channel count '{v}'")))
        .collect()
}

fn load_seq(dir: &Path) -> Result<Sequence> {
    read_sequence(dir).with_context(|| format!("reading sequence {}", dir.display()))
}

fn load_prepared(dirs: &[PathBuf], cfg: &PrepareConfig) -> Result<Vec<PreparedSequence>> {
    dirs.iter().map(|d| Ok(prepare(&load_seq(d)?, cfg)?)).collect()
}

fn seq_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn run_training(args: &TrainArgs, cfg: &TrainConfig, init: Option<(ChangeModel<f32>, f64)>) -> Result<()> {
    let data = load_prepared(&args.seq, &args.prep.for_model(&cfg.model))?;
    let out = match init {
        Some((model, scale)) => finetune(model, &data, cfg, scale)?,
        None => train(&data, cfg)?,
    };
    save_checkpoint(&args.out, &out.model)?;
    if let Some(log) = &args.log {
        write_log(log, &out.log)?;
    }
    if let Some(last) = out.log.last() {
        println!(
            "{} steps, final total {:.5} (chamfer {:.5}, class {:.5}, temporal {:.5}){}",
            last.step,
            last.total,
            last.chamfer,
            last.class_balance,
            last.temporal,
            if out.stopped_early { ", stopped early" } else { "" }
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn print_report(r: &lidar_change::eval::EvalReport) {
    println!(
        "{}: IoU_ch {:.4}  corridor IoU_ch {:.4}  mIoU {:.4}",
        r.detector, r.iou_changed, r.corridor_iou_changed, r.miou
    );
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Generate { scene, seed, out } => {
            let spec = SceneSpec::load(&scene)?;
            let seq = generate_sequence(&spec, seed)?;
            write_sequence(&out, &seq)?;
            println!("{} frames, {} map points -> {}", seq.frames.len(), seq.map.len(), out.display());
        }
        Cmd::Render {
            seq,
            frame,
            model,
            robot_radius,
            prep,
            out,
        } => {
            let model = model.map(load_checkpoint::<f32>).transpose()?;
            let cfg = match &model {
                Some(m) => prep.for_model(m.config()),
                None => prep.config(),
            };
            let prepared = prepare(&load_seq(&seq)?, &cfg)?;
            let f = prepared
                .frames
                .iter()
                .find(|f| f.index == frame)
                .with_context(|| format!("no frame {frame}"))?;
            fs::create_dir_all(&out)?;
            write_range_pgm(out.join("live_range.pgm"), &f.live_image.ranges)?;
            write_range_pgm(out.join("map_range.pgm"), &f.map_image.ranges)?;
            let labels = match model {
                Some(m) => ModelDetector::new(m).detect_downsampled(f)?,
                None => f.truth.clone(),
            };
            let img = &f.live_image;
            let mut raster = Raster::filled(img.height(), img.width(), Label::Consistent);
            for (&px, l) in img.point_pixel.iter().zip(&labels) {
                if px != NO_PIXEL && img.index.data[px as usize] != NO_POINT {
                    raster.data[px as usize] = *l;
                }
            }
            write_label_pgm(out.join("labels.pgm"), &raster)?;
            let changed: Vec<_> = f
                .live
                .points()
                .iter()
                .zip(&labels)
                .filter(|(_, l)| l.is_changed())
                .map(|(p, _)| *p)
                .collect();
            let cm = inflate(&PointCloud::new(SENSOR_FRAME, changed), robot_radius, &CostMapConfig::default(), Pose2::new(0.0, 0.0, 0.0))?;
            cm.write_pgm(out.join("costmap.pgm"))?;
            cm.write_csv(out.join("costmap.csv"))?;
            println!("frame {frame}: {} occupied cells -> {}", cm.occupied(), out.display());
        }
        Cmd::Train { train: args, channels } => {
            let model = ModelConfig::new(args.prep.height, args.prep.width).with_channels(&parse_channels(&channels)?);
            let cfg = args.config(model)?;
            run_training(&args, &cfg, None)?;
        }
        Cmd::Finetune {
            checkpoint,
            lr_scale,
            train: args,
        } => {
            let model = load_checkpoint::<f32>(&checkpoint)?;
            let cfg = args.config(model.config().clone())?;
            run_training(&args, &cfg, Some((model, lr_scale)))?;
        }
        Cmd::Infer { model, seq, prep, out } => {
            let m = load_checkpoint::<f32>(&model)?;
            let prepared = prepare(&load_seq(&seq)?, &prep.for_model(m.config()))?;
            let det = ModelDetector::new(m);
            fs::create_dir_all(&out)?;
            for f in &prepared.frames {
                let labels = det.detect(f)?;
                let mut w = std::io::BufWriter::new(fs::File::create(out.join(format!("{:04}.csv", f.index)))?);
                use std::io::Write;
                writeln!(w, "x,y,z,label")?;
                for (p, l) in f.raw.points().iter().zip(&labels) {
                    writeln!(w, "{},{},{},{}", p.x, p.y, p.z, l.as_u8())?;
                }
            }
            println!("labelled {} frames -> {}", prepared.frames.len(), out.display());
        }
        Cmd::Baseline {
            seq,
            threshold,
            prep,
            corridor,
            out,
        } => {
            let data = load_prepared(&seq, &prep.config())?;
            let names: Vec<String> = seq.iter().map(|d| seq_name(d)).collect();
            let named: Vec<(&str, &PreparedSequence)> = names.iter().map(String::as_str).zip(&data).collect();
            let report = match threshold {
                Some(t) => evaluate(&BaselineDetector { threshold: t }, &named, corridor.corridor_width, corridor.range)?,
                None => best_baseline(&named, &default_sweep(), corridor.corridor_width, corridor.range)?.1,
            };
            print_report(&report);
            if let Some(o) = out {
                report.write_csv(o)?;
            }
        }
        Cmd::Eval {
            model,
            seq,
            prep,
            corridor,
            bench,
            out,
        } => {
            let m = load_checkpoint::<f32>(&model)?;
            let cfg = prep.for_model(m.config());
            let data = load_prepared(&seq, &cfg)?;
            let names: Vec<String> = seq.iter().map(|d| seq_name(d)).collect();
            let named: Vec<(&str, &PreparedSequence)> = names.iter().map(String::as_str).zip(&data).collect();
            let det = ModelDetector::new(m);
            let mut report = evaluate(&det, &named, corridor.corridor_width, corridor.range)?;
            if bench > 0 {
                let frames: Vec<_> = data.iter().flat_map(|s| s.frames.iter().cloned()).collect();
                let stats = benchmark_inference(&det.model, &frames, &cfg.projection, bench)?;
                println!("inference {stats}");
                report.runtime = Some(stats);
            }
            print_report(&report);
            if let Some(o) = out {
                report.write_csv(o)?;
            }
        }
        Cmd::Study {
            kind,
            train_seq,
            eval_seq,
            channels,
            model,
            lambda1,
            lambda2,
            steps,
            lr,
            seed,
            prep,
            corridor,
            out,
        } => {
            let mc = ModelConfig::new(prep.height, prep.width).with_channels(&parse_channels(&channels)?);
            let mut tc = TrainConfig::new(mc);
            tc.weights = LossWeights::new(lambda1, lambda2)?;
            tc.steps = steps;
            tc.optim.lr = lr;
            tc.seed = seed;
            tc.patience = None;
            let train_seqs = train_seq.iter().map(|d| load_seq(d)).collect::<Result<Vec<_>>>()?;
            let eval_seqs = eval_seq.iter().map(|d| Ok((seq_name(d), load_seq(d)?))).collect::<Result<Vec<_>>>()?;
            let mut sc = StudyConfig::new(train_seqs, eval_seqs, tc);
            sc.prepare = prep.config();
            sc.corridor_width = corridor.corridor_width;
            sc.corridor_range = corridor.range;
            for path in &model {
                let m = load_checkpoint::<f32>(path)?;
                if m.config().height != prep.height || m.config().width != prep.width {
                    bail!("{} expects {}x{} images", path.display(), m.config().height, m.config().width);
                }
                let d: Box<dyn ChangeDetector> = Box::new(ModelDetector::new(m));
                sc.detectors.push(d);
            }
            let result = run_study(kind, &sc)?;
            fs::create_dir_all(&out)?;
            for t in &result.tables {
                let path = out.join(format!("{}.csv", t.name));
                t.write_csv(&path)?;
                println!("{}:", t.name);
                println!("  {:<24}{}", t.row_label, t.columns.iter().map(|c| format!("{c:>18}")).collect::<String>());
                for (name, vals) in &t.rows {
                    println!("  {:<24}{}", name, vals.iter().map(|v| format!("{v:>18.4}")).collect::<String>());
                }
            }
        }
    }
    Ok(())
}
