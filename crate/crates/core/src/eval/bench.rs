use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::PreparedFrame;
use crate::error::{invalid, Result};
use crate::model::{ChangeModel, Real};
use crate::projection::{backproject, render, ProjectionConfig};

/// Changed probability of each downsampled live point of `frame`.
pub fn infer_frame<T: Real>(model: &ChangeModel<T>, frame: &PreparedFrame) -> Result<Vec<f64>> {
    let logits = model.forward(&frame.live_image, &frame.map_image)?;
    backproject(&logits.p_changed(), &frame.live_image, frame.live.len(), 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub frames: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl std::fmt::Display for RuntimeStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1} ± {:.1} ms over {} frames", self.mean_ms, self.std_ms, self.frames)
    }
}

/// Times render + forward + back-projection for `count` frames, cycling
/// through `frames`. Frames are re-rendered with `proj`, which must match
/// the model's input size.
pub fn benchmark_inference<T: Real>(
    model: &ChangeModel<T>,
    frames: &[PreparedFrame],
    proj: &ProjectionConfig,
    count: usize,
) -> Result<RuntimeStats> {
    if frames.is_empty() || count == 0 {
        return invalid("benchmark needs at least one frame");
    }
    let mut times = Vec::with_capacity(count);
    for k in 0..count {
        let f = &frames[k % frames.len()];
        let start = Instant::now();
        let live = render(&f.live, proj);
        let map = render(&f.map_view, proj);
        let logits = model.forward(&live, &map)?;
        let p = backproject(&logits.p_changed(), &live, f.live.len(), 0.0)?;
        std::hint::black_box(p);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(RuntimeStats {
        frames: times.len(),
        mean_ms: mean,
        std_ms: var.sqrt(),
    })
}
