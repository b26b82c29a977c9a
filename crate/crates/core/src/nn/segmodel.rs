//! Compact U-shaped encoder–decoder producing a per-pixel foreground
//! probability.
//!
//! Level `l` runs one 3×3 convolution at resolution `res / 2^l`; the deepest
//! level adds extra bottleneck convolutions. The decoder upsamples
//! bilinearly, concatenates the matching encoder map and applies a 3×3
//! convolution. The last decoder map (full resolution, `widths[0]` channels)
//! is the feature tap used by the pixel discriminator; a 1×1 head turns it
//! into logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{self, Conv, ConvInput};
use crate::nn::Segmenter;
use crate::num::Real;
use crate::rng::SeededRng;
use crate::types::{Image, ProbMap};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub bottleneck_convs: usize,
    pub resolution: usize,
}

impl Arch {
    /// Four levels with widths (16, 32, 64, 128), about 0.39M parameters.
    pub fn standard(resolution: usize) -> Self {
        Self { in_channels: 3, widths: vec![16, 32, 64, 128], bottleneck_convs: 2, resolution }
    }

    /// Same topology at half width, for quick CPU experiments.
    pub fn compact(resolution: usize) -> Self {
        Self { in_channels: 3, widths: vec![8, 16, 32, 64], bottleneck_convs: 2, resolution }
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn feature_channels(&self) -> usize {
        self.widths[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.in_channels == 0 {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        if self.bottleneck_convs == 0 {
            return Err(Error::Config("bottleneck_convs must be >= 1".into()));
        }
        let factor = 1usize << (self.levels() - 1);
        if self.resolution == 0 || !self.resolution.is_multiple_of(factor) {
            return Err(Error::Dimension(format!(
                "resolution {} not divisible by {factor} ({} levels)",
                self.resolution,
                self.levels()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamView {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    enc: Vec<Conv>,
    bottleneck: Vec<Conv>,
    /// `dec[l]` produces level `l` from level `l + 1`.
    dec: Vec<Conv>,
    head: Conv,
    n_params: usize,
}

impl Layout {
    fn new(arch: &Arch) -> Self {
        let w = &arch.widths;
        let mut off = 0;
        let mut enc = Vec::new();
        for l in 0..w.len() {
            let cin = if l == 0 { arch.in_channels } else { w[l - 1] };
            let (c, next) = Conv::at(off, cin, w[l], 3);
            enc.push(c);
            off = next;
        }
        let mut bottleneck = Vec::new();
        let deep = *w.last().expect("validated");
        for _ in 1..arch.bottleneck_convs {
            let (c, next) = Conv::at(off, deep, deep, 3);
            bottleneck.push(c);
            off = next;
        }
        let mut dec = Vec::new();
        for l in 0..w.len().saturating_sub(1) {
            let (c, next) = Conv::at(off, w[l + 1] + w[l], w[l], 3);
            dec.push(c);
            off = next;
        }
        let (head, next) = Conv::at(off, w[0], 1, 1);
        Self { enc, bottleneck, dec, head, n_params: next }
    }

    fn all(&self) -> Vec<(String, Conv)> {
        let mut v = Vec::new();
        v.extend(self.enc.iter().enumerate().map(|(i, c)| (format!("enc{i}"), *c)));
        v.extend(self.bottleneck.iter().enumerate().map(|(i, c)| (format!("bottleneck{i}"), *c)));
        v.extend(self.dec.iter().enumerate().map(|(i, c)| (format!("dec{i}"), *c)));
        v.push(("head".into(), self.head));
        v
    }
}

#[derive(Clone, Debug)]
pub struct SegModel<T: Real = f32> {
    arch: Arch,
    layout: Layout,
    params: Vec<T>,
}

struct ConvStep<T> {
    input: ConvInput<T>,
    out: Vec<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Forward<T> {
    enc: Vec<ConvStep<T>>,
    bottleneck: Vec<ConvStep<T>>,
    pool_arg: Vec<Vec<u32>>,
    dec: Vec<ConvStep<T>>,
    head_input: ConvInput<T>,
    logits: Vec<T>,
    probs: Vec<T>,
}

impl<T: Real> Forward<T> {
    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    /// Pre-logit feature map, `widths[0] × H × W`.
    pub fn features(&self) -> &[T] {
        match self.dec.first() {
            Some(step) => &step.out,
            None => self.bottleneck.last().map(|s| &s.out).unwrap_or(&self.enc[0].out),
        }
    }
}

impl<T: Real> SegModel<T> {
    /// He-normal initialisation for hidden convolutions, zero biases.
    pub fn new(arch: Arch, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![T::zero(); layout.n_params];
        for (name, conv) in layout.all() {
            let gain = if name == "head" { 1.0 } else { 2.0 };
            let std = (gain / conv.fan_in() as f64).sqrt();
            for p in &mut params[conv.w_off..conv.w_off + conv.n_weights()] {
                *p = T::lit(std * rng.normal());
            }
        }
        Ok(Self { arch, layout, params })
    }

    pub fn from_params(arch: Arch, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.n_params {
            return Err(Error::Dimension(format!(
                "architecture needs {} parameters, got {}",
                layout.n_params,
                params.len()
            )));
        }
        Ok(Self { arch, layout, params })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param_views(&self) -> Vec<ParamView> {
        let mut views = Vec::new();
        for (name, c) in self.layout.all() {
            views.push(ParamView { name: format!("{name}.weight"), offset: c.w_off, len: c.n_weights() });
            views.push(ParamView { name: format!("{name}.bias"), offset: c.b_off, len: c.cout });
        }
        views
    }

    /// Zeroes the 1×1 output head, making every prediction exactly 0.5.
    pub fn zero_head(&mut self) {
        let h = self.layout.head;
        self.params[h.w_off..h.b_off + h.cout].fill(T::zero());
    }

    pub fn cast<U: Real>(&self) -> SegModel<U> {
        SegModel {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let r = self.arch.resolution;
        if image.height() != r || image.width() != r {
            return Err(Error::Dimension(format!(
                "model expects {r}x{r}, image is {}x{}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Network input: planar channels shifted to be zero-centred.
    pub fn prepare(&self, image: &Image) -> Result<Vec<T>> {
        self.check_input(image)?;
        let half = T::lit(0.5);
        Ok(image.to_planar().into_iter().map(|v| T::lit(v as f64) - half).collect())
    }

    pub fn forward(&self, input: &[T]) -> Forward<T> {
        let p = &self.params;
        let lv = self.arch.levels();
        let mut size = self.arch.resolution;
        let mut enc: Vec<ConvStep<T>> = Vec::with_capacity(lv);
        let mut pool_arg = Vec::with_capacity(lv.saturating_sub(1));
        let mut cur: Vec<T> = input.to_vec();
        for (l, conv) in self.layout.enc.iter().enumerate() {
            if l > 0 {
                let (pooled, arg) = layers::maxpool2(&enc[l - 1].out, conv.cin, size, size);
                size /= 2;
                pool_arg.push(arg);
                cur = pooled;
            }
            let (mut out, inp) = layers::conv_forward(p, conv, &cur, size, size);
            layers::leaky_relu_inplace(&mut out);
            enc.push(ConvStep { input: inp, out });
        }
        let mut bottleneck = Vec::with_capacity(self.layout.bottleneck.len());
        for conv in &self.layout.bottleneck {
            let prev = bottleneck.last().map(|s: &ConvStep<T>| &s.out).unwrap_or(&enc[lv - 1].out);
            let (mut out, inp) = layers::conv_forward(p, conv, prev, size, size);
            layers::leaky_relu_inplace(&mut out);
            bottleneck.push(ConvStep { input: inp, out });
        }
        let mut deep = bottleneck.last().map(|s| s.out.clone()).unwrap_or_else(|| enc[lv - 1].out.clone());
        let mut dec_rev = Vec::with_capacity(lv.saturating_sub(1));
        for l in (0..lv.saturating_sub(1)).rev() {
            let conv = &self.layout.dec[l];
            let c_deep = self.arch.widths[l + 1];
            let up = layers::upsample2(&deep, c_deep, size, size);
            size *= 2;
            let mut cat = up;
            cat.extend_from_slice(&enc[l].out);
            let (mut out, inp) = layers::conv_forward(p, conv, &cat, size, size);
            layers::leaky_relu_inplace(&mut out);
            deep = out.clone();
            dec_rev.push(ConvStep { input: inp, out });
        }
        dec_rev.reverse();
        let (logits, head_input) = layers::conv_forward(p, &self.layout.head, &deep, size, size);
        let probs = logits.iter().map(|&z| layers::sigmoid(z)).collect();
        Forward { enc, bottleneck, pool_arg, dec: dec_rev, head_input, logits, probs }
    }

    /// Gradient of a scalar loss with respect to all parameters, given its
    /// gradient with respect to the logits and, optionally, an extra gradient
    /// arriving at the feature tap. Accumulates into `grads`.
    pub fn backward(&self, fwd: &Forward<T>, dlogits: &[T], dfeatures: Option<&[T]>, grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len());
        let p = &self.params;
        let lv = self.arch.levels();
        let res = self.arch.resolution;
        let mut size = res;
        let mut g = layers::conv_backward(p, grads, &self.layout.head, &fwd.head_input, dlogits, size, size, true)
            .expect("dx requested");
        if let Some(extra) = dfeatures {
            for (a, b) in g.iter_mut().zip(extra) {
                *a += *b;
            }
        }
        // decoder, shallow to deep
        let mut dskip: Vec<Option<Vec<T>>> = vec![None; lv];
        for l in 0..lv.saturating_sub(1) {
            let conv = &self.layout.dec[l];
            let step = &fwd.dec[l];
            layers::leaky_relu_backward(&step.out, &mut g);
            let dcat = layers::conv_backward(p, grads, conv, &step.input, &g, size, size, true).expect("dx");
            let c_deep = self.arch.widths[l + 1];
            let split = c_deep * size * size;
            dskip[l] = Some(dcat[split..].to_vec());
            size /= 2;
            g = layers::upsample2_backward(&dcat[..split], c_deep, size, size);
        }
        // bottleneck
        for (i, conv) in self.layout.bottleneck.iter().enumerate().rev() {
            let step = &fwd.bottleneck[i];
            layers::leaky_relu_backward(&step.out, &mut g);
            g = layers::conv_backward(p, grads, conv, &step.input, &g, size, size, true).expect("dx");
        }
        // encoder, deep to shallow
        for l in (0..lv).rev() {
            if let Some(skip) = dskip[l].take() {
                for (a, b) in g.iter_mut().zip(&skip) {
                    *a += *b;
                }
            }
            let step = &fwd.enc[l];
            layers::leaky_relu_backward(&step.out, &mut g);
            let conv = &self.layout.enc[l];
            let dx = layers::conv_backward(p, grads, conv, &step.input, &g, size, size, l > 0);
            if l > 0 {
                let input_len = conv.cin * (2 * size) * (2 * size);
                g = layers::maxpool2_backward(&dx.expect("dx"), &fwd.pool_arg[l - 1], input_len);
                size *= 2;
            }
        }
    }

    pub fn predict_probs(&self, image: &Image) -> Result<ProbMap<T>> {
        let fwd = self.forward(&self.prepare(image)?);
        let r = self.arch.resolution;
        ProbMap::new(r, r, fwd.probs)
    }
}

impl<T: Real> Segmenter for SegModel<T> {
    fn predict(&self, image: &Image) -> Result<ProbMap> {
        let probs = self.predict_probs(image)?;
        let data = probs.as_slice().iter().map(|v| v.as_f64() as f32).collect();
        ProbMap::new(probs.height(), probs.width(), data)
    }
}
