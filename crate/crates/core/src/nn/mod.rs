//! Segmentation network, loss, optimizer and training primitives.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod segmodel;

pub use loss::{bce_loss, bce_with_logit_grad};
pub use optim::OptimState;
pub use segmodel::{Arch, Forward, ParamView, SegModel};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::num::Real;
use rand::RngCore;

use crate::rng::{seeded_rng, SeededRng};
use crate::types::{BinaryMask, Image, ProbMap};

/// Anything that maps an image to a foreground probability map.
pub trait Segmenter {
    fn predict(&self, image: &Image) -> Result<ProbMap>;
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn predict(&self, image: &Image) -> Result<ProbMap> {
        (**self).predict(image)
    }
}

pub fn threshold_predict<S: Segmenter + ?Sized>(model: &S, image: &Image, t: f32) -> Result<BinaryMask> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0,1), got {t}")));
    }
    Ok(model.predict(image)?.threshold(t))
}

/// Forward + backward for one image. Adds `weight ×` the gradient of the
/// masked mean BCE into `grads` and returns the (unweighted) loss.
pub fn accumulate<T: Real>(
    model: &SegModel<T>,
    image: &Image,
    target: &BinaryMask,
    pixel_mask: Option<&BinaryMask>,
    weight: f64,
    grads: &mut [T],
) -> Result<f64> {
    let fwd = model.forward(&model.prepare(image)?);
    let (loss, dlogits) = bce_with_logit_grad(fwd.probs(), target, pixel_mask, weight)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("segmentation loss {loss}")));
    }
    model.backward(&fwd, &dlogits, None, grads);
    Ok(loss)
}

pub fn check_finite<T: Real>(grads: &[T]) -> Result<()> {
    match grads.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("gradient component {i} is {}", grads[i]))),
        None => Ok(()),
    }
}

/// One optimizer step on the mean BCE of a batch. Returns the pre-step loss.
pub fn train_step<T: Real>(
    model: &mut SegModel<T>,
    batch: &[(&Image, &BinaryMask)],
    opt: &mut OptimState<T>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    let w = 1.0 / batch.len() as f64;
    let mut grads = vec![T::zero(); model.n_params()];
    let mut total = 0.0;
    for (image, mask) in batch {
        total += accumulate(model, image, mask, None, w, &mut grads)?;
    }
    let loss = total * w;
    check_finite(&grads)?;
    opt.apply(model.params_mut(), &grads)?;
    Ok(loss)
}

/// One pass over `samples` in shuffled batches of `batch_size`.
/// Returns the mean pre-step batch loss.
pub fn supervised_epoch<T: Real>(
    model: &mut SegModel<T>,
    opt: &mut OptimState<T>,
    samples: &[Sample],
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    if samples.is_empty() || batch_size == 0 {
        return Err(Error::Empty("supervised epoch needs samples and batch_size > 0".into()));
    }
    // same draw layout as adaptation epochs, so a run without pseudo-labels
    // continues exactly like plain supervised training
    let epoch = seeded_rng(rng.next_u64());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    epoch.named("labeled").shuffle(&mut order);
    let mut total = 0.0;
    let mut steps = 0;
    for chunk in order.chunks(batch_size) {
        let batch = chunk.iter().map(|&i| Ok((&samples[i].image, samples[i].mask()?))).collect::<Result<Vec<_>>>()?;
        total += train_step(model, &batch, opt)?;
        steps += 1;
    }
    Ok(total / steps as f64)
}
