//! In-process cache of supervised training trajectories.
//!
//! Many variants share a stage (the source model doubles as the consensus
//! reference, several variants pretrain on the same style-adapted set). A
//! trajectory is keyed by everything that determines it, so a cached model
//! is bit-identical to retraining. Snapshots are kept at every requested
//! epoch count and the latest state can be resumed.

use std::collections::HashMap;

use crate::config::ExperimentConfig;
use crate::dataset::Sample;
use crate::error::Result;
use crate::nn::{supervised_epoch, Arch, OptimState, SegModel};
use crate::rng::{fnv1a, SeededRng};

struct Trajectory {
    snapshots: HashMap<usize, Stage>,
    latest: (usize, SegModel<f32>, OptimState<f32>, SeededRng, Vec<f64>),
}

/// Model, optimizer state, shuffle stream and per-epoch loss after a number
/// of epochs. Continuing with `rng` extends the same trajectory.
#[derive(Clone)]
pub struct Stage {
    pub model: SegModel<f32>,
    pub opt: OptimState<f32>,
    pub rng: SeededRng,
    pub curve: Vec<f64>,
}

#[derive(Default)]
pub struct ModelCache {
    entries: HashMap<u64, Trajectory>,
    pub hits: usize,
    pub misses: usize,
}

fn fingerprint(samples: &[Sample]) -> u64 {
    let mut bytes = Vec::with_capacity(samples.len() * 64);
    for s in samples {
        bytes.extend_from_slice(s.sample_id.as_bytes());
        bytes.push(0);
        for v in s.image.as_slice() {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        if let Some(m) = &s.mask {
            bytes.extend(m.as_slice().iter().map(|&b| b as u8));
        }
    }
    fnv1a(&bytes)
}

impl ModelCache {
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Model after `epochs` supervised epochs on `samples`, initialised and
    /// shuffled from streams of `root` named after `init`. Intermediate
    /// states at `keep` epoch counts are retained for later requests.
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        &mut self,
        init: &str,
        samples: &[Sample],
        epochs: usize,
        keep: &[usize],
        arch: &Arch,
        cfg: &ExperimentConfig,
        root: &SeededRng,
    ) -> Result<Stage> {
        let key_text = format!(
            "{init}|{:016x}|{arch:?}|{}|{}|{}|{}",
            fingerprint(samples),
            cfg.learning_rate,
            cfg.batch_size,
            cfg.seed,
            root.seed()
        );
        let key = fnv1a(key_text.as_bytes());
        if let Some(t) = self.entries.get(&key) {
            if let Some(stage) = t.snapshots.get(&epochs) {
                self.hits += 1;
                return Ok(stage.clone());
            }
        }
        self.misses += 1;
        let traj = match self.entries.remove(&key) {
            Some(t) if t.latest.0 <= epochs => t,
            // latest is past the request: restart (rare; snapshots cover the usual splits)
            _ => {
                let model = SegModel::new(arch.clone(), &mut root.named(&format!("init/{init}")))?;
                let opt = OptimState::adam(model.n_params(), cfg.learning_rate);
                let rng = root.named(&format!("train/{init}"));
                Trajectory { snapshots: HashMap::new(), latest: (0, model, opt, rng, Vec::new()) }
            }
        };
        let Trajectory { mut snapshots, latest } = traj;
        let (mut done, mut model, mut opt, mut rng, mut curve) = latest;
        while done < epochs {
            curve.push(supervised_epoch(&mut model, &mut opt, samples, cfg.batch_size, &mut rng)?);
            done += 1;
            if keep.contains(&done) && done < epochs {
                snapshots.insert(
                    done,
                    Stage { model: model.clone(), opt: opt.clone(), rng: rng.clone(), curve: curve.clone() },
                );
            }
        }
        let out = Stage { model: model.clone(), opt: opt.clone(), rng: rng.clone(), curve: curve.clone() };
        snapshots.insert(epochs, out.clone());
        self.entries.insert(key, Trajectory { snapshots, latest: (done, model, opt, rng, curve) });
        Ok(out)
    }
}
