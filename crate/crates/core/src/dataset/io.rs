//! Sequence directory reading and writing.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::{read_ply, write_ply, RigidTransform, SENSOR_FRAME};
use crate::Label;

fn frame_name(dir: &Path, sub: &str, index: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{index:04}.{ext}"))
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "CSV",
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn write_sequence(dir: impl AsRef<Path>, seq: &Sequence) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("frames"))?;
    fs::create_dir_all(dir.join("truth"))?;
    write_ply(dir.join("map.ply"), &seq.map)?;

    let mut poses = csv::Writer::from_path(dir.join("poses.csv"))?;
    let mut header = vec!["frame".to_string()];
    for r in 0..3 {
        for c in 0..4 {
            header.push(format!("t{r}{c}"));
        }
    }
    header.push("odometer".into());
    poses.write_record(&header)?;
    for f in &seq.frames {
        let mut rec = vec![f.index.to_string()];
        rec.extend(f.pose.to_row_major().iter().map(|v| v.to_string()));
        rec.push(f.odometer.to_string());
        poses.write_record(&rec)?;

        write_ply(frame_name(dir, "frames", f.index, "ply"), &f.live)?;
        let mut truth = csv::Writer::from_path(frame_name(dir, "truth", f.index, "csv"))?;
        truth.write_record(["index", "label"])?;
        for (i, l) in f.truth.iter().enumerate() {
            truth.write_record([i.to_string(), l.as_u8().to_string()])?;
        }
        truth.flush()?;
    }
    poses.flush()?;

    let mut path = csv::Writer::from_path(dir.join("teach_path.csv"))?;
    path.write_record(["x", "y"])?;
    for p in &seq.taught_path {
        path.write_record([p[0].to_string(), p[1].to_string()])?;
    }
    path.flush()?;
    Ok(())
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| format_err(path, format!("'{s}' is not a number")))
}

pub fn read_sequence(dir: impl AsRef<Path>) -> Result<Sequence> {
    let dir = dir.as_ref();
    let map = read_ply(dir.join("map.ply"))?;

    let poses_path = dir.join("poses.csv");
    let mut frames = Vec::new();
    for rec in csv::Reader::from_path(&poses_path)?.records() {
        let rec = rec?;
        if rec.len() != 14 {
            return Err(format_err(&poses_path, format!("expected 14 columns, found {}", rec.len())));
        }
        let index: usize = rec[0].trim().parse().map_err(|_| format_err(&poses_path, "bad frame index"))?;
        let mut m = [0.0; 12];
        for (k, v) in m.iter_mut().enumerate() {
            *v = parse_f64(&poses_path, &rec[k + 1])?;
        }
        let pose = RigidTransform::from_row_major(&m)?;
        let odometer = parse_f64(&poses_path, &rec[13])?;

        let mut live = read_ply(frame_name(dir, "frames", index, "ply"))?;
        live.set_frame_id(SENSOR_FRAME);
        let truth_path = frame_name(dir, "truth", index, "csv");
        let mut truth = vec![Label::Consistent; live.len()];
        let mut seen = 0;
        for row in csv::Reader::from_path(&truth_path)?.records() {
            let row = row?;
            let i: usize = row.get(0).and_then(|v| v.trim().parse().ok()).ok_or_else(|| format_err(&truth_path, "bad point index"))?;
            let l = row
                .get(1)
                .and_then(|v| v.trim().parse::<u8>().ok())
                .and_then(Label::from_u8)
                .ok_or_else(|| format_err(&truth_path, "bad label"))?;
            if i >= truth.len() {
                return Err(format_err(&truth_path, format!("point index {i} out of range")));
            }
            truth[i] = l;
            seen += 1;
        }
        if seen != live.len() {
            return Err(format_err(&truth_path, format!("{seen} labels for {} points", live.len())));
        }
        frames.push(Frame {
            index,
            pose,
            odometer,
            live,
            truth,
        });
    }

    let path_file = dir.join("teach_path.csv");
    let mut taught_path = Vec::new();
    for rec in csv::Reader::from_path(&path_file)?.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(format_err(&path_file, "expected x,y"));
        }
        taught_path.push([parse_f64(&path_file, &rec[0])?, parse_f64(&path_file, &rec[1])?]);
    }
    Ok(Sequence {
        map,
        frames,
        taught_path,
    })
}
