//! Pixel-wise adversarial feature alignment through a gradient reversal layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{self, Conv, ConvInput};
use crate::nn::{bce_with_logit_grad, OptimState};
use crate::num::Real;
use crate::rng::SeededRng;
use crate::types::BinaryMask;

/// Identity forward.
pub fn grl_forward<T: Copy>(x: &[T]) -> Vec<T> {
    x.to_vec()
}

/// `-lambda · upstream`.
pub fn grl_backward<T: Real>(upstream: &[T], lambda: f64) -> Vec<T> {
    let s = T::lit(-lambda);
    upstream.iter().map(|&g| g * s).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientReversal {
    pub lambda: f64,
}

/// Schedule for the reversal coefficient over adaptation epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    #[default]
    Constant,
    /// `lambda · (2 / (1 + exp(-10 p)) - 1)` with `p` the training progress.
    Ramp,
}

impl LambdaSchedule {
    pub fn at(self, lambda: f64, progress: f64) -> f64 {
        match self {
            LambdaSchedule::Constant => lambda,
            LambdaSchedule::Ramp => lambda * (2.0 / (1.0 + (-10.0 * progress.clamp(0.0, 1.0)).exp()) - 1.0),
        }
    }
}

/// Three convolutions (3×3, 3×3, 1×1) mapping a feature map to a
/// per-pixel probability that it came from the target domain.
#[derive(Clone, Debug)]
pub struct PixelDiscriminator<T: Real = f32> {
    pub in_channels: usize,
    pub hidden: usize,
    convs: [Conv; 3],
    params: Vec<T>,
}

pub struct DiscForward<T> {
    inputs: Vec<ConvInput<T>>,
    acts: Vec<Vec<T>>,
    probs: Vec<T>,
    h: usize,
    w: usize,
}

impl<T: Real> DiscForward<T> {
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

impl<T: Real> PixelDiscriminator<T> {
    pub fn new(in_channels: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let (c0, o) = Conv::at(0, in_channels, hidden, 3);
        let (c1, o) = Conv::at(o, hidden, hidden, 3);
        let (c2, n) = Conv::at(o, hidden, 1, 1);
        let mut params = vec![T::zero(); n];
        for (i, c) in [c0, c1, c2].iter().enumerate() {
            let gain = if i == 2 { 1.0 } else { 2.0 };
            let std = (gain / c.fan_in() as f64).sqrt();
            for p in &mut params[c.w_off..c.w_off + c.n_weights()] {
                *p = T::lit(std * rng.normal());
            }
        }
        Self { in_channels, hidden, convs: [c0, c1, c2], params }
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

    pub fn forward(&self, features: &[T], h: usize, w: usize) -> Result<DiscForward<T>> {
        if features.len() != self.in_channels * h * w {
            return Err(Error::Dimension(format!(
                "discriminator expects {}x{h}x{w} features, got {} values",
                self.in_channels,
                features.len()
            )));
        }
        let mut inputs = Vec::with_capacity(3);
        let mut acts = Vec::with_capacity(2);
        let mut cur = features.to_vec();
        for (i, conv) in self.convs.iter().enumerate() {
            let (mut out, inp) = layers::conv_forward(&self.params, conv, &cur, h, w);
            inputs.push(inp);
            if i < 2 {
                layers::leaky_relu_inplace(&mut out);
                acts.push(out.clone());
            }
            cur = out;
        }
        let probs = cur.iter().map(|&z| layers::sigmoid(z)).collect();
        Ok(DiscForward { inputs, acts, probs, h, w })
    }

    /// Accumulates parameter gradients; returns the gradient at the input features.
    pub fn backward(&self, fwd: &DiscForward<T>, dlogits: &[T], grads: &mut [T]) -> Vec<T> {
        let (h, w) = (fwd.h, fwd.w);
        let mut g = dlogits.to_vec();
        for i in (0..3).rev() {
            if i < 2 {
                layers::leaky_relu_backward(&fwd.acts[i], &mut g);
            }
            g = layers::conv_backward(&self.params, grads, &self.convs[i], &fwd.inputs[i], &g, h, w, true)
                .expect("dx requested");
        }
        g
    }

    /// Per-pixel domain BCE for one feature map. Adds the parameter gradient
    /// (scaled by `weight`) into `grads`; returns the loss, the feature
    /// gradient (same scale) and the fraction of pixels classified correctly.
    pub fn domain_loss(
        &self,
        features: &[T],
        h: usize,
        w: usize,
        is_target: bool,
        weight: f64,
        grads: &mut [T],
    ) -> Result<(f64, Vec<T>, f64)> {
        let fwd = self.forward(features, h, w)?;
        let label = BinaryMask::filled(h, w, is_target);
        let (loss, dlogits) = bce_with_logit_grad(fwd.probs(), &label, None, weight)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("adversarial loss {loss}")));
        }
        let half = T::lit(0.5);
        let correct = fwd.probs.iter().filter(|&&p| (p > half) == is_target).count();
        let dfeat = self.backward(&fwd, &dlogits, grads);
        Ok((loss, dfeat, correct as f64 / (h * w) as f64))
    }
}

/// Discriminator with its optimizer, paired with one segmentation model.
#[derive(Clone, Debug)]
pub struct AdvBranch<T: Real = f32> {
    pub disc: PixelDiscriminator<T>,
    pub opt: OptimState<T>,
    pub lambda: f64,
    pub weight: f64,
    grads: Vec<T>,
    loss_sum: f64,
    acc_sum: f64,
    count: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvStats {
    pub disc_loss: f64,
    pub disc_accuracy: f64,
}

impl<T: Real> AdvBranch<T> {
    pub fn new(feature_channels: usize, learning_rate: f64, lambda: f64, weight: f64, rng: &mut SeededRng) -> Self {
        let disc = PixelDiscriminator::new(feature_channels, 16, rng);
        let n = disc.n_params();
        Self {
            disc,
            opt: OptimState::adam(n, learning_rate),
            lambda,
            weight,
            grads: vec![T::zero(); n],
            loss_sum: 0.0,
            acc_sum: 0.0,
            count: 0,
        }
    }

    /// Discriminator loss on one feature map, averaged over `batch_len`
    /// maps. Returns the reversed, weighted gradient for the feature
    /// extractor, or `None` when the reversal coefficient is zero.
    pub fn observe(
        &mut self,
        features: &[T],
        h: usize,
        w: usize,
        is_target: bool,
        batch_len: usize,
    ) -> Result<Option<Vec<T>>> {
        let scale = 1.0 / batch_len as f64;
        let (loss, dfeat, acc) = self.disc.domain_loss(features, h, w, is_target, scale, &mut self.grads)?;
        self.loss_sum += loss;
        self.acc_sum += acc;
        self.count += 1;
        if self.lambda == 0.0 || self.weight == 0.0 {
            return Ok(None);
        }
        Ok(Some(grl_backward(&dfeat, self.lambda * self.weight)))
    }

    /// Applies the accumulated discriminator gradient.
    pub fn step(&mut self) -> Result<()> {
        crate::nn::check_finite(&self.grads)?;
        self.opt.apply(self.disc.params_mut(), &self.grads)?;
        self.grads.iter_mut().for_each(|g| *g = T::zero());
        Ok(())
    }

    /// Mean loss and accuracy since the last call.
    pub fn take_stats(&mut self) -> AdvStats {
        let n = self.count.max(1) as f64;
        let s = AdvStats { disc_loss: self.loss_sum / n, disc_accuracy: self.acc_sum / n };
        self.loss_sum = 0.0;
        self.acc_sum = 0.0;
        self.count = 0;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn grl_identity_and_scaling() {
        let x = vec![1.5f32, -2.0, 0.0];
        assert_eq!(grl_forward(&grl_forward(&x)), x);
        let g = grl_backward(&[1.0f64; 4], 0.1);
        assert!(g.iter().all(|&v| v == -0.1));
        assert!(grl_backward(&[3.0f64; 2], 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_schedule() {
        assert_eq!(LambdaSchedule::Ramp.at(0.1, 0.0), 0.0);
        assert!((LambdaSchedule::Ramp.at(0.1, 1.0) - 0.1).abs() < 1e-4);
        assert_eq!(LambdaSchedule::Constant.at(0.1, 0.3), 0.1);
    }

    #[test]
    fn discriminator_outputs_probabilities() {
        let d = PixelDiscriminator::<f32>::new(4, 6, &mut seeded_rng(1));
        let mut r = seeded_rng(2);
        let feats: Vec<f32> = (0..4 * 5 * 7).map(|_| (r.normal() * 3.0) as f32).collect();
        let f = d.forward(&feats, 5, 7).unwrap();
        assert_eq!(f.probs().len(), 35);
        assert!(f.probs().iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(d.forward(&feats, 5, 6).is_err());
    }

    #[test]
    fn separable_constant_domains() {
        let (c, h, w) = (4, 4, 4);
        let src = vec![0.2f32; c * h * w];
        let tgt = vec![-0.3f32; c * h * w];
        let mut branch = AdvBranch::<f32>::new(c, 1e-2, 0.0, 1.0, &mut seeded_rng(5));
        for _ in 0..100 {
            branch.observe(&src, h, w, false, 2).unwrap();
            branch.observe(&tgt, h, w, true, 2).unwrap();
            branch.step().unwrap();
        }
        branch.take_stats();
        branch.observe(&src, h, w, false, 2).unwrap();
        branch.observe(&tgt, h, w, true, 2).unwrap();
        assert!(branch.take_stats().disc_accuracy > 0.95);
    }
}
