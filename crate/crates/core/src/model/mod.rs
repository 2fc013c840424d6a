//! Range-image change segmentation network.
//!
//! Input is a 2-channel `H × W` image stacking the live and map range images
//! (ranges divided by `range_scale`, empty pixels 0). The encoder runs four
//! double convolutions with 2×2 max pooling between stages; the decoder
//! upsamples bilinearly, concatenates the matching encoder output and runs
//! another double convolution, three times. A final convolution produces two
//! logits per pixel (Consistent, Changed).
//!
//! The first convolution and the classifier use `first_last_kernel`
//! (default 1×2), all others `interior_kernel` (default 3×3). Every
//! convolution except the classifier is followed by a ReLU. Azimuth padding
//! is circular, elevation padding is zero.
//!
//! Gradients are computed by a hand-written reverse pass over a tape kept in
//! [`ForwardState`].

mod checkpoint;
mod layers;
mod real;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::projection::{RangeImage, Raster};
use crate::Label;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use real::Real;

use layers::ConvSpec;

/// Number of encoder stages.
pub const STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub encoder_channels: Vec<usize>,
    /// (rows, cols) of the first and the classifier convolution.
    pub first_last_kernel: (usize, usize),
    pub interior_kernel: (usize, usize),
    pub num_classes: usize,
    /// Ranges are divided by this before entering the network.
    pub range_scale: f64,
}

impl ModelConfig {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            encoder_channels: vec![16, 32, 64, 128],
            first_last_kernel: (1, 2),
            interior_kernel: (3, 3),
            num_classes: 2,
            range_scale: 10.0,
        }
    }

    pub fn with_channels(mut self, channels: &[usize]) -> Self {
        self.encoder_channels = channels.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != STAGES {
            return invalid(format!("expected {STAGES} encoder stages, got {}", self.encoder_channels.len()));
        }
        if self.encoder_channels.contains(&0) {
            return invalid("encoder channel count of zero");
        }
        let div = 1 << (STAGES - 1);
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return invalid(format!("image {}x{} is not divisible by {div}", self.height, self.width));
        }
        let ok = |k: (usize, usize)| k.0 >= 1 && k.1 >= 1;
        if !ok(self.first_last_kernel) || !ok(self.interior_kernel) {
            return invalid("kernel sizes must be at least 1x1");
        }
        if self.num_classes != 2 {
            return invalid(format!("a two-class head is required, got {}", self.num_classes));
        }
        if !(self.range_scale > 0.0 && self.range_scale.is_finite()) {
            return invalid("range_scale must be positive");
        }
        Ok(())
    }

    /// Named convolutions in execution order.
    pub(crate) fn convs(&self) -> Vec<(String, ConvSpec)> {
        let ch = &self.encoder_channels;
        let spec = |cin, cout, k: (usize, usize)| ConvSpec {
            cin,
            cout,
            kh: k.0,
            kw: k.1,
        };
        let mut out = Vec::new();
        for s in 0..STAGES {
            let (cin, k) = if s == 0 { (2, self.first_last_kernel) } else { (ch[s - 1], self.interior_kernel) };
            out.push((format!("enc{s}.conv0"), spec(cin, ch[s], k)));
            out.push((format!("enc{s}.conv1"), spec(ch[s], ch[s], self.interior_kernel)));
        }
        for s in (0..STAGES - 1).rev() {
            out.push((format!("dec{s}.conv0"), spec(ch[s + 1] + ch[s], ch[s], self.interior_kernel)));
            out.push((format!("dec{s}.conv1"), spec(ch[s], ch[s], self.interior_kernel)));
        }
        out.push(("head".into(), spec(ch[0], self.num_classes, self.first_last_kernel)));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.convs().iter().map(|(_, s)| s.weight_len() + s.cout).sum()
    }

    fn level(&self, s: usize) -> (usize, usize) {
        (self.height >> s, self.width >> s)
    }
}

fn enc_index(s: usize) -> usize {
    2 * s
}

fn dec_index(s: usize) -> usize {
    2 * STAGES + 2 * (STAGES - 2 - s)
}

const HEAD: usize = 2 * STAGES + 2 * (STAGES - 1);

/// One convolution's weights (`cout × cin × kh × kw`) and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub name: String,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Per-pixel class scores, class-major (`2 × H × W`).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLogits {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PixelLogits {
    pub fn logit(&self, class: usize, row: usize, col: usize) -> f64 {
        self.data[(class * self.height + row) * self.width + col]
    }

    /// Softmax probability of Changed per pixel.
    pub fn p_changed(&self) -> Raster<f64> {
        let hw = self.height * self.width;
        let data = (0..hw).map(|i| p_changed(self.data[i], self.data[hw + i])).collect();
        Raster {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// Two-class softmax: probability of class 1 given logits `(z0, z1)`.
pub fn p_changed(z0: f64, z1: f64) -> f64 {
    1.0 / (1.0 + (z0 - z1).exp())
}

/// Changed where the softmax probability exceeds `threshold`; ties stay Consistent.
pub fn predict_labels(logits: &PixelLogits, threshold: f64) -> Raster<Label> {
    let p = logits.p_changed();
    Raster {
        height: p.height,
        width: p.width,
        data: p.data.iter().map(|&v| Label::from_bool(v > threshold)).collect(),
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvRecord {
    input: usize,
    output: usize,
    level: usize,
}

#[derive(Debug, Default)]
struct Tape<T> {
    bufs: Vec<Vec<T>>,
    convs: Vec<Option<ConvRecord>>,
    pools: Vec<Vec<u32>>,
    p_changed: Vec<T>,
}

impl<T> Tape<T> {
    fn push(&mut self, v: Vec<T>) -> usize {
        self.bufs.push(v);
        self.bufs.len() - 1
    }
}

/// Activations retained by a training forward pass for [`ChangeModel::backward`].
#[derive(Debug)]
pub struct ForwardState<T> {
    tape: Option<Tape<T>>,
}

impl<T> Default for ForwardState<T> {
    fn default() -> Self {
        Self { tape: None }
    }
}

impl<T> ForwardState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_ready(&self) -> bool {
        self.tape.is_some()
    }
}

/// Parameter gradients, laid out like [`ChangeModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub convs: Vec<ConvParams<T>>,
}

impl<T: Real> Gradients<T> {
    fn zeros_like(params: &[ConvParams<T>]) -> Self {
        Self {
            convs: params
                .iter()
                .map(|p| ConvParams {
                    name: p.name.clone(),
                    weight: vec![T::zero(); p.weight.len()],
                    bias: vec![T::zero(); p.bias.len()],
                })
                .collect(),
        }
    }

    /// Flat views over (weights, bias) in parameter order.
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.convs.iter().flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()])
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeModel<T> {
    config: ModelConfig,
    seed: u64,
    params: Vec<ConvParams<T>>,
}

impl<T: Real> ChangeModel<T> {
    /// Seeded fan-in scaled uniform initialisation, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .convs()
            .into_iter()
            .map(|(name, s)| {
                let bound = (6.0 / s.patch() as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("finite bound");
                ConvParams {
                    name,
                    weight: (0..s.weight_len()).map(|_| T::from_f64(dist.sample(&mut rng))).collect(),
                    bias: vec![T::zero(); s.cout],
                }
            })
            .collect();
        Ok(Self { config, seed, params })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        for p in &mut m.params {
            p.weight.fill(T::zero());
        }
        Ok(m)
    }

    pub(crate) fn from_parts(config: ModelConfig, seed: u64, params: Vec<ConvParams<T>>) -> Result<Self> {
        config.validate()?;
        let convs = config.convs();
        if convs.len() != params.len() {
            return invalid(format!("expected {} tensors pairs, got {}", convs.len(), params.len()));
        }
        for ((name, s), p) in convs.iter().zip(&params) {
            if &p.name != name || p.weight.len() != s.weight_len() || p.bias.len() != s.cout {
                return invalid(format!("parameter tensor '{}' does not match the configuration", p.name));
            }
            if p.weight.iter().chain(&p.bias).any(|v| !v.is_finite()) {
                return invalid(format!("parameter tensor '{}' has non-finite values", p.name));
            }
        }
        Ok(Self { config, seed, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[ConvParams<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    /// Same network with a different element type.
    pub fn cast<U: Real>(&self) -> ChangeModel<U> {
        ChangeModel {
            config: self.config.clone(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|p| ConvParams {
                    name: p.name.clone(),
                    weight: p.weight.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                    bias: p.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Stacks the two range images into the network input.
    pub fn input_tensor(&self, live: &RangeImage, map: &RangeImage) -> Result<Vec<T>> {
        let (h, w) = (self.config.height, self.config.width);
        for (name, img) in [("live", live), ("map", map)] {
            if img.height() != h || img.width() != w {
                return invalid(format!("{name} image is {}x{}, model expects {h}x{w}", img.height(), img.width()));
            }
        }
        let scale = self.config.range_scale;
        Ok(live
            .ranges
            .data
            .iter()
            .chain(&map.ranges.data)
            .map(|&r| T::from_f64(r / scale))
            .collect())
    }

    pub fn forward(&self, live: &RangeImage, map: &RangeImage) -> Result<PixelLogits> {
        let input = self.input_tensor(live, map)?;
        Ok(self.logits_of(self.run(input).0))
    }

    /// Forward pass that keeps the activations needed by [`Self::backward`].
    pub fn forward_retained(&self, live: &RangeImage, map: &RangeImage, state: &mut ForwardState<T>) -> Result<PixelLogits> {
        let input = self.input_tensor(live, map)?;
        self.forward_tensor_retained(input, state)
    }

    pub fn forward_tensor(&self, input: Vec<T>) -> Result<PixelLogits> {
        self.check_input(&input)?;
        Ok(self.logits_of(self.run(input).0))
    }

    pub fn forward_tensor_retained(&self, input: Vec<T>, state: &mut ForwardState<T>) -> Result<PixelLogits> {
        self.check_input(&input)?;
        let (logits, mut tape) = self.run(input);
        let hw = self.config.height * self.config.width;
        tape.p_changed = (0..hw)
            .map(|i| {
                let (z0, z1) = (logits[i], logits[hw + i]);
                T::one() / (T::one() + (z0 - z1).exp())
            })
            .collect();
        state.tape = Some(tape);
        Ok(self.logits_of(logits))
    }

    /// Parameter gradients of a loss given `∂loss/∂p_changed` per pixel.
    ///
    /// Consumes the tape stored by the last retained forward pass.
    pub fn backward(&self, state: &mut ForwardState<T>, grad_p: &Raster<f64>) -> Result<Gradients<T>> {
        let (h, w) = (self.config.height, self.config.width);
        if grad_p.height != h || grad_p.width != w {
            return invalid(format!("gradient raster is {}x{}, model expects {h}x{w}", grad_p.height, grad_p.width));
        }
        let tape = state
            .tape
            .take()
            .ok_or_else(|| Error::InvalidState("backward called without a retained forward pass".into()))?;
        let hw = h * w;
        // dp/dz1 = p(1-p), dp/dz0 = -p(1-p)
        let mut dlogits = vec![T::zero(); 2 * hw];
        for i in 0..hw {
            let p = tape.p_changed[i];
            let g = T::from_f64(grad_p.data[i]) * p * (T::one() - p);
            dlogits[i] = -g;
            dlogits[hw + i] = g;
        }
        Ok(self.reverse(&tape, dlogits))
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        let want = 2 * self.config.height * self.config.width;
        if input.len() != want {
            return invalid(format!("input tensor has {} values, expected {want}", input.len()));
        }
        Ok(())
    }

    fn logits_of(&self, logits: Vec<T>) -> PixelLogits {
        PixelLogits {
            height: self.config.height,
            width: self.config.width,
            data: logits.into_iter().map(Real::as_f64).collect(),
        }
    }

    fn spec(&self, ci: usize) -> ConvSpec {
        let p = &self.params[ci];
        let (kh, kw) = if ci == 0 || ci == HEAD {
            self.config.first_last_kernel
        } else {
            self.config.interior_kernel
        };
        let cout = p.bias.len();
        ConvSpec {
            cin: p.weight.len() / (cout * kh * kw),
            cout,
            kh,
            kw,
        }
    }

    fn conv_step(&self, tape: &mut Tape<T>, ci: usize, input: usize, level: usize, relu: bool) -> usize {
        let (h, w) = self.config.level(level);
        let p = &self.params[ci];
        let mut out = layers::conv_forward(&tape.bufs[input], &p.weight, &p.bias, &self.spec(ci), h, w);
        if relu {
            layers::relu_inplace(&mut out);
        }
        let output = tape.push(out);
        tape.convs[ci] = Some(ConvRecord { input, output, level });
        output
    }

    fn run(&self, input: Vec<T>) -> (Vec<T>, Tape<T>) {
        let ch = &self.config.encoder_channels;
        let mut tape = Tape {
            convs: vec![None; self.params.len()],
            ..Tape::default()
        };
        let mut cur = tape.push(input);
        let mut skips = [0usize; STAGES];
        for s in 0..STAGES {
            if s > 0 {
                let (h, w) = self.config.level(s - 1);
                let (pooled, arg) = layers::maxpool2(&tape.bufs[cur], ch[s - 1], h, w);
                tape.pools.push(arg);
                cur = tape.push(pooled);
            }
            cur = self.conv_step(&mut tape, enc_index(s), cur, s, true);
            cur = self.conv_step(&mut tape, enc_index(s) + 1, cur, s, true);
            skips[s] = cur;
        }
        for s in (0..STAGES - 1).rev() {
            let (h, w) = self.config.level(s + 1);
            let mut cat = layers::upsample2(&tape.bufs[cur], ch[s + 1], h, w);
            cat.extend_from_slice(&tape.bufs[skips[s]]);
            cur = tape.push(cat);
            cur = self.conv_step(&mut tape, dec_index(s), cur, s, true);
            cur = self.conv_step(&mut tape, dec_index(s) + 1, cur, s, true);
        }
        let out = self.conv_step(&mut tape, HEAD, cur, 0, false);
        let logits = std::mem::take(&mut tape.bufs[out]);
        (logits, tape)
    }

    /// Backpropagates through conv `ci`; `grad` is w.r.t. its (post-ReLU) output.
    fn conv_back(&self, tape: &Tape<T>, grads: &mut Gradients<T>, ci: usize, mut grad: Vec<T>, relu: bool, need_input: bool) -> Option<Vec<T>> {
        let rec = tape.convs[ci].expect("conv recorded on the tape");
        if relu {
            layers::relu_backward(&mut grad, &tape.bufs[rec.output]);
        }
        let (h, w) = self.config.level(rec.level);
        let g = &mut grads.convs[ci];
        layers::conv_backward(
            &tape.bufs[rec.input],
            &self.params[ci].weight,
            &grad,
            &self.spec(ci),
            h,
            w,
            &mut g.weight,
            &mut g.bias,
            need_input,
        )
    }

    fn reverse(&self, tape: &Tape<T>, dlogits: Vec<T>) -> Gradients<T> {
        let ch = &self.config.encoder_channels;
        let mut grads = Gradients::zeros_like(&self.params);
        let mut g = self.conv_back(tape, &mut grads, HEAD, dlogits, false, true).unwrap();
        let mut skip_grads: Vec<Vec<T>> = vec![Vec::new(); STAGES];
        for s in 0..STAGES - 1 {
            g = self.conv_back(tape, &mut grads, dec_index(s) + 1, g, true, true).unwrap();
            let mut gcat = self.conv_back(tape, &mut grads, dec_index(s), g, true, true).unwrap();
            let (h, w) = self.config.level(s + 1);
            let split = ch[s + 1] * 4 * h * w;
            skip_grads[s] = gcat.split_off(split);
            g = layers::upsample2_backward(&gcat, ch[s + 1], h, w);
        }
        for s in (0..STAGES).rev() {
            if s < STAGES - 1 {
                for (a, b) in g.iter_mut().zip(&skip_grads[s]) {
                    *a += *b;
                }
            }
            g = self.conv_back(tape, &mut grads, enc_index(s) + 1, g, true, true).unwrap();
            let need = s > 0;
            match self.conv_back(tape, &mut grads, enc_index(s), g, true, need) {
                Some(gin) => {
                    let (h, w) = self.config.level(s - 1);
                    g = layers::maxpool2_backward(&gin, &tape.pools[s - 1], ch[s - 1], h, w);
                }
                None => break,
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_tie_is_consistent() {
        let l = PixelLogits {
            height: 1,
            width: 2,
            data: vec![0.0, 0.0, 0.0, 10.0],
        };
        let labels = predict_labels(&l, 0.5);
        assert_eq!(labels.data, vec![Label::Consistent, Label::Changed]);
    }

    #[test]
    fn config_rejects_bad_shapes() {
        assert!(ModelConfig::new(12, 16).validate().is_err());
        assert!(ModelConfig::new(8, 16).with_channels(&[4, 4, 4]).validate().is_err());
        assert!(ModelConfig::new(8, 16).validate().is_ok());
    }

    #[test]
    fn conv_order_and_shapes() {
        let cfg = ModelConfig::new(8, 16).with_channels(&[2, 3, 4, 5]);
        let names: Vec<String> = cfg.convs().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), HEAD + 1);
        assert_eq!(names[dec_index(2)], "dec2.conv0");
        assert_eq!(names[dec_index(0) + 1], "dec0.conv1");
        assert_eq!(names[HEAD], "head");
        let convs = cfg.convs();
        assert_eq!(convs[dec_index(1)].1.cin, 4 + 3);
    }
}
