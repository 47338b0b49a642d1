//! Pose sequences, per-coordinate normalization and train/test datasets.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::JOINTS;
use crate::synth::{synth_generate, Family, SynthParams};
use crate::tensor::Tensor;

/// Ordered frames of `joints × 3` coordinates, stored frame-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence {
    pub id: String,
    pub family: Option<String>,
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl PoseSequence {
    pub fn new(id: impl Into<String>, family: Option<String>, frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::contract("a sequence needs at least one frame and one joint"));
        }
        if data.len() != frames * joints * 3 {
            return Err(Error::shape(format!(
                "{frames} frames × {joints} joints × 3 needs {} values, got {}",
                frames * joints * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("pose coordinates must be finite"));
        }
        Ok(Self {
            id: id.into(),
            family,
            frames,
            joints,
            data,
        })
    }

    /// Builds a sequence from a `[frames, joints·3]` tensor.
    pub fn from_tensor(id: impl Into<String>, family: Option<String>, joints: usize, t: &Tensor) -> Result<Self> {
        let frames = t.len() / (joints * 3).max(1);
        Self::new(id, family, frames, joints, t.data().to_vec())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// Values per frame (`joints · 3`).
    pub fn frame_width(&self) -> usize {
        self.joints * 3
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let w = self.frame_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn first_frame(&self) -> &[f64] {
        self.frame(0)
    }

    pub fn last_frame(&self) -> &[f64] {
        self.frame(self.frames - 1)
    }

    pub fn joint(&self, frame: usize, joint: usize) -> [f64; 3] {
        let f = self.frame(frame);
        [f[joint * 3], f[joint * 3 + 1], f[joint * 3 + 2]]
    }

    /// `[frames, joints·3]` view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.frames, self.frame_width()], self.data.clone()).expect("valid sequence")
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.id.clone(), self.family.clone(), self.frames, self.joints, data)
    }

    /// Joins sequences with equal joint counts end to end.
    pub fn concat(id: impl Into<String>, parts: &[PoseSequence]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::contract("nothing to concatenate"))?;
        if parts.iter().any(|p| p.joints != first.joints) {
            return Err(Error::contract("cannot concatenate sequences with different joint counts"));
        }
        let data: Vec<f64> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        let frames = parts.iter().map(|p| p.frames).sum();
        Self::new(id, first.family.clone(), frames, first.joints, data)
    }
}

/// Per-coordinate mean and standard deviation over a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-6;

impl NormStats {
    /// Mean 0, std 1 for `width` coordinates.
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, seq: &PoseSequence) -> Result<()> {
        if seq.frame_width() != self.width() {
            return Err(Error::shape(format!(
                "stats cover {} coordinates, sequence frames have {}",
                self.width(),
                seq.frame_width()
            )));
        }
        Ok(())
    }

    pub fn normalize_frame(&self, frame: &[f64]) -> Vec<f64> {
        frame
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_frame(&self, frame: &[f64]) -> Vec<f64> {
        frame
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn normalize(&self, seq: &PoseSequence) -> Result<PoseSequence> {
        self.check(seq)?;
        let w = self.width();
        let data = seq.data.chunks(w).flat_map(|f| self.normalize_frame(f)).collect();
        seq.with_data(data)
    }

    pub fn denormalize(&self, seq: &PoseSequence) -> Result<PoseSequence> {
        self.check(seq)?;
        let w = self.width();
        let data = seq.data.chunks(w).flat_map(|f| self.denormalize_frame(f)).collect();
        seq.with_data(data)
    }
}

/// Pooled per-coordinate statistics over every frame of `train`.
pub fn fit_norm_stats(train: &[PoseSequence]) -> Result<NormStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::contract("cannot fit normalization statistics on an empty set"))?;
    let w = first.frame_width();
    if train.iter().any(|s| s.frame_width() != w) {
        return Err(Error::shape("sequences disagree on joint count"));
    }
    let count = train.iter().map(|s| s.frames).sum::<usize>() as f64;
    let mut mean = vec![0.0; w];
    for s in train {
        for f in s.data.chunks(w) {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; w];
    for s in train {
        for f in s.data.chunks(w) {
            for ((acc, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let std = var.iter().map(|v| (v / count).sqrt().max(STD_FLOOR)).collect();
    Ok(NormStats { mean, std })
}

/// Everything that determines a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count_per_family: usize,
    pub families: Vec<Family>,
    #[serde(default)]
    pub held_out: Vec<Family>,
    pub split_ratio: f64,
    pub seed: u64,
    pub frames: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count_per_family: 125,
            families: Family::ALL.to_vec(),
            held_out: Vec::new(),
            split_ratio: 0.8,
            seed: 0,
            frames: 50,
        }
    }
}

/// Train/test partitions with statistics fitted on the train split only.
/// Sequences are stored in world coordinates; use [`Dataset::normalized`]
/// for model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<PoseSequence>,
    pub test: Vec<PoseSequence>,
    pub stats: NormStats,
    pub held_out: Vec<Family>,
}

/// Independent per-sequence seed derived from a root seed and an index.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(index.wrapping_add(1));
    rng.gen()
}

/// Randomized generator parameters for one sequence of `family`.
pub fn sample_params(family: Family, rng: &mut impl Rng) -> SynthParams {
    let (lo, hi) = family.amplitude_range();
    SynthParams {
        amplitude: rng.gen_range(lo..=hi),
        frequency: rng.gen_range(0.5..=2.0),
        phase: rng.gen_range(0.0..std::f64::consts::TAU),
        posture: rng.gen_range(0..crate::skeleton::POSTURE_NAMES.len()),
    }
}

/// Generates `count_per_family` sequences per family and splits them.
/// Held-out families go entirely to test; the rest split per family.
pub fn make_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if !(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0) {
        return Err(Error::contract(format!("split ratio {} not in (0, 1)", cfg.split_ratio)));
    }
    if cfg.frames < 2 {
        return Err(Error::contract("sequences need at least two frames"));
    }
    let fams: BTreeSet<Family> = cfg.families.iter().copied().collect();
    if fams.len() != cfg.families.len() {
        return Err(Error::contract("families listed twice"));
    }
    if let Some(h) = cfg.held_out.iter().find(|h| !fams.contains(h)) {
        return Err(Error::contract(format!(
            "held-out family `{}` is not among the generated families",
            h.name()
        )));
    }
    if cfg.count_per_family == 0 {
        return Err(Error::contract("count per family must be positive"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    for (fi, &family) in cfg.families.iter().enumerate() {
        let mut seqs = Vec::with_capacity(cfg.count_per_family);
        for j in 0..cfg.count_per_family {
            let index = (fi * cfg.count_per_family + j) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index));
            let params = sample_params(family, &mut rng);
            let seed: u64 = rng.gen();
            let mut s = synth_generate(family, &params, seed, cfg.frames)?;
            s.id = format!("{}-{j:04}", family.name());
            seqs.push(s);
        }
        if cfg.held_out.contains(&family) {
            test.extend(seqs);
            continue;
        }
        let n_train = ((cfg.split_ratio * seqs.len() as f64).round() as usize).clamp(1, seqs.len());
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.shuffle(&mut split_rng);
        let mut in_train = vec![false; seqs.len()];
        for &i in &order[..n_train] {
            in_train[i] = true;
        }
        for (s, t) in seqs.into_iter().zip(in_train) {
            if t {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    if train.is_empty() {
        return Err(Error::contract("every family is held out; the train split is empty"));
    }
    let stats = fit_norm_stats(&train)?;
    Ok(Dataset {
        train,
        test,
        stats,
        held_out: cfg.held_out.clone(),
    })
}

impl Dataset {
    /// Both splits mapped through the train statistics.
    pub fn normalized(&self) -> Result<(Vec<PoseSequence>, Vec<PoseSequence>)> {
        let tr = self.train.iter().map(|s| self.stats.normalize(s)).collect::<Result<_>>()?;
        let te = self.test.iter().map(|s| self.stats.normalize(s)).collect::<Result<_>>()?;
        Ok((tr, te))
    }

    pub fn frames(&self) -> usize {
        self.train[0].frames()
    }

    pub fn joints(&self) -> usize {
        self.train[0].joints()
    }
}

/// Family label index for classification, in [`Family::ALL`] order.
pub fn family_index(seq: &PoseSequence) -> Result<usize> {
    let name = seq
        .family
        .as_deref()
        .ok_or_else(|| Error::contract(format!("sequence `{}` carries no family label", seq.id)))?;
    Ok(Family::parse(name)?.index())
}

/// Default joint count of generated data.
pub const DEFAULT_JOINTS: usize = JOINTS;
