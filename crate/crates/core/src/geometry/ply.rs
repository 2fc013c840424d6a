//! ASCII PLY reading and writing.
//!
//! Only the `vertex` element is interpreted: `x`, `y`, `z` and an optional
//! `intensity` property. Other vertex properties and other elements are
//! skipped. The frame tag travels in a `comment frame_id <tag>` header line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Point3, PointCloud, WORLD_FRAME};
use crate::error::{Error, Result};

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    fs::write(path, to_ply_string(cloud))?;
    Ok(())
}

pub fn to_ply_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 + cloud.len() * 48);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "comment frame_id {}", cloud.frame_id());
    let _ = writeln!(s, "element vertex {}", cloud.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.intensity().is_some() {
        s.push_str("property double intensity\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        match cloud.intensity() {
            Some(inten) => {
                let _ = writeln!(s, "{} {} {} {}", p.x, p.y, p.z, inten[i]);
            }
            None => {
                let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
            }
        }
    }
    s
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_ply(&text).map_err(|msg| Error::Format {
        kind: "PLY",
        path: path.to_path_buf(),
        msg,
    })
}

struct ElementHeader {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub(crate) fn parse_ply(text: &str) -> std::result::Result<PointCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut frame_id = WORLD_FRAME.to_string();
    let mut elements: Vec<ElementHeader> = Vec::new();
    let mut header_done = false;
    for line in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err("only ascii PLY is supported".into());
                }
            }
            Some("comment") => {
                if tok.next() == Some("frame_id") {
                    if let Some(f) = tok.next() {
                        frame_id = f.to_string();
                    }
                }
            }
            Some("element") => {
                let name = tok.next().ok_or("element without name")?.to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or("element without count")?;
                elements.push(ElementHeader {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or("property before element")?;
                let kind = tok.next().ok_or("property without type")?;
                let name = if kind == "list" {
                    // list <count type> <item type> <name>
                    tok.nth(2)
                } else {
                    tok.next()
                };
                el.properties.push(name.ok_or("property without name")?.to_string());
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            _ => {}
        }
    }
    if !header_done {
        return Err("missing end_header".into());
    }

    let mut points = Vec::new();
    let mut intensity: Option<Vec<f64>> = None;
    let mut body = lines.filter(|l| !l.trim().is_empty());
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                body.next().ok_or("truncated element data")?;
            }
            continue;
        }
        let col = |n: &str| el.properties.iter().position(|p| p == n);
        let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err("vertex element lacks x/y/z".into()),
        };
        let ii = col("intensity");
        points.reserve(el.count);
        let mut inten = ii.map(|_| Vec::with_capacity(el.count));
        for row in 0..el.count {
            let line = body.next().ok_or_else(|| format!("truncated vertex data at row {row}"))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            let get = |c: usize| -> std::result::Result<f64, String> {
                vals.get(c)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| format!("bad value in vertex row {row}"))
            };
            let p = Point3::new(get(xi)?, get(yi)?, get(zi)?);
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(format!("non-finite coordinate in vertex row {row}"));
            }
            points.push(p);
            if let (Some(c), Some(v)) = (ii, inten.as_mut()) {
                v.push(get(c)?);
            }
        }
        intensity = inten;
    }
    match intensity {
        Some(inten) => PointCloud::with_intensity(frame_id, points, inten).map_err(|e| e.to_string()),
        None => Ok(PointCloud::new(frame_id, points)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SENSOR_FRAME;

    #[test]
    fn round_trip_with_intensity() {
        let cloud = PointCloud::with_intensity(
            SENSOR_FRAME,
            vec![Point3::new(0.1, -2.5, 3.0e-7), Point3::new(1.0 / 3.0, 4.0, 5.0)],
            vec![0.25, 0.95],
        )
        .unwrap();
        let back = parse_ply(&to_ply_string(&cloud)).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn ignores_unknown_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\ncomment made elsewhere\nelement vertex 2\nproperty float x\nproperty float y\nproperty uchar red\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 2 255 3\n4 5 0 6\n3 0 1 1\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.points(), &[Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
        assert!(c.intensity().is_none());
        assert_eq!(c.frame_id(), WORLD_FRAME);
    }

    #[test]
    fn rejects_binary_and_truncated() {
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        assert!(parse_ply("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").is_err());
    }
}
