//! Procedural motion generator: six behavior families driven by
//! amplitude/frequency/phase around a jittered starting posture, rendered
//! through forward kinematics so bone lengths never change.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::PoseSequence;
use crate::error::{Error, Result};
use crate::skeleton::{forward_kinematics, initial_posture, Angles, Limb, JOINTS, POSTURE_NAMES, R_WRIST};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ArmRaise,
    Wave,
    Squat,
    WalkInPlace,
    SitToStand,
    IdleSway,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::ArmRaise,
        Family::Wave,
        Family::Squat,
        Family::WalkInPlace,
        Family::SitToStand,
        Family::IdleSway,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::ArmRaise => "arm-raise",
            Family::Wave => "wave",
            Family::Squat => "squat",
            Family::WalkInPlace => "walk-in-place",
            Family::SitToStand => "sit-to-stand",
            Family::IdleSway => "idle-sway",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown behavior family `{s}`")))
    }

    /// Comma-separated names, or `all`.
    pub fn parse_list(s: &str) -> Result<Vec<Family>> {
        if s.trim() == "all" {
            return Ok(Family::ALL.to_vec());
        }
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Family::parse)
            .collect()
    }

    pub fn index(self) -> usize {
        Family::ALL.iter().position(|&f| f == self).expect("listed")
    }

    /// Amplitude range used when sampling datasets. Units are family
    /// specific: metres of wrist rise for arm-raise, radians otherwise, and
    /// the completed fraction of the transition for sit-to-stand.
    pub fn amplitude_range(self) -> (f64, f64) {
        match self {
            Family::ArmRaise => (0.15, 0.45),
            Family::Wave => (0.4, 1.0),
            Family::Squat => (0.3, 0.8),
            Family::WalkInPlace => (0.3, 0.7),
            Family::SitToStand => (0.6, 1.0),
            Family::IdleSway => (0.05, 0.2),
        }
    }
}

/// Continuous generator parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub amplitude: f64,
    /// Cycles (or ramp speed) per sequence.
    pub frequency: f64,
    pub phase: f64,
    /// Index into [`POSTURE_NAMES`].
    pub posture: usize,
}

/// Standard deviation (radians) of the static per-sequence angle jitter.
pub const JITTER: f64 = 0.03;

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Ramp window `(start, duration)` in normalized time for ramp families.
pub fn ramp_window(p: &SynthParams) -> (f64, f64) {
    let start = 0.1 + 0.2 * (p.phase.rem_euclid(TAU) / TAU);
    let dur = (0.6 / p.frequency).clamp(0.2, 0.85 - start);
    (start, dur)
}

fn ramp(p: &SynthParams, t: f64) -> f64 {
    let (s, d) = ramp_window(p);
    smoothstep((t - s) / d)
}

fn jitter_limb(l: &mut Limb, rng: &mut impl Rng) {
    l.pitch += JITTER * rng.sample::<f64, _>(StandardNormal);
    l.abduction += JITTER * rng.sample::<f64, _>(StandardNormal);
    l.bend = (l.bend + JITTER * rng.sample::<f64, _>(StandardNormal)).max(0.0);
}

fn jitter(a: &mut Angles, rng: &mut impl Rng) {
    a.lean += JITTER * rng.sample::<f64, _>(StandardNormal);
    a.roll += JITTER * rng.sample::<f64, _>(StandardNormal);
    a.head_pitch += JITTER * rng.sample::<f64, _>(StandardNormal);
    for l in [&mut a.left_leg, &mut a.right_leg, &mut a.left_arm, &mut a.right_arm] {
        jitter_limb(l, rng);
    }
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

fn lerp_limb(a: &Limb, b: &Limb, w: f64) -> Limb {
    Limb {
        pitch: lerp(a.pitch, b.pitch, w),
        abduction: lerp(a.abduction, b.abduction, w),
        bend: lerp(a.bend, b.bend, w),
    }
}

fn lerp_angles(a: &Angles, b: &Angles, w: f64) -> Angles {
    Angles {
        pelvis_x: lerp(a.pelvis_x, b.pelvis_x, w),
        pelvis_z: lerp(a.pelvis_z, b.pelvis_z, w),
        lean: lerp(a.lean, b.lean, w),
        roll: lerp(a.roll, b.roll, w),
        head_pitch: lerp(a.head_pitch, b.head_pitch, w),
        left_leg: lerp_limb(&a.left_leg, &b.left_leg, w),
        right_leg: lerp_limb(&a.right_leg, &b.right_leg, w),
        left_arm: lerp_limb(&a.left_arm, &b.left_arm, w),
        right_arm: lerp_limb(&a.right_arm, &b.right_arm, w),
    }
}

fn wrist_height(a: &Angles, pitch: f64) -> f64 {
    let mut b = *a;
    b.right_arm.pitch = pitch;
    forward_kinematics(&b)[R_WRIST][1]
}

/// Right-shoulder pitch range over which the wrist height increases
/// monotonically, starting at the current pitch.
fn raise_range(a: &Angles) -> (f64, f64) {
    let lo = a.right_arm.pitch;
    let steps = 2000;
    let mut best = lo;
    let mut prev = wrist_height(a, lo);
    for i in 1..=steps {
        let p = lo + (PI + 0.5 - lo) * i as f64 / steps as f64;
        let h = wrist_height(a, p);
        if h < prev {
            break;
        }
        prev = h;
        best = p;
    }
    (lo, best)
}

/// Largest wrist rise an arm-raise can realize from posture `a`.
pub fn max_arm_raise(a: &Angles) -> f64 {
    let (lo, hi) = raise_range(a);
    wrist_height(a, hi) - wrist_height(a, lo)
}

/// Shoulder pitch in `[lo, hi]` whose wrist height equals `target`.
fn solve_pitch(a: &Angles, lo: f64, hi: f64, target: f64) -> f64 {
    let (mut l, mut h) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (l + h);
        if wrist_height(a, m) < target {
            l = m;
        } else {
            h = m;
        }
        if h - l < 1e-15 {
            break;
        }
    }
    0.5 * (l + h)
}

/// The jittered starting posture of a sequence.
pub fn base_angles(params: &SynthParams, seed: u64) -> Result<Angles> {
    let mut a = initial_posture(params.posture).ok_or_else(|| {
        Error::contract(format!(
            "initial posture id {} out of range (0..{})",
            params.posture,
            POSTURE_NAMES.len()
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    jitter(&mut a, &mut rng);
    Ok(a)
}

/// Angles of every frame of a synthetic sequence.
pub fn synth_angles(family: Family, params: &SynthParams, seed: u64, frames: usize) -> Result<Vec<Angles>> {
    if !(params.amplitude >= 0.0 && params.amplitude.is_finite()) {
        return Err(Error::contract(format!("amplitude must be ≥ 0, got {}", params.amplitude)));
    }
    if !(params.frequency > 0.0 && params.frequency.is_finite()) {
        return Err(Error::contract(format!("frequency must be > 0, got {}", params.frequency)));
    }
    if frames == 0 {
        return Err(Error::contract("frames must be positive"));
    }
    let base = base_angles(params, seed)?;
    let a = params.amplitude;
    let f = params.frequency;
    let ph = params.phase;
    let time = |i: usize| {
        if frames == 1 {
            0.0
        } else {
            i as f64 / (frames - 1) as f64
        }
    };

    let raise = if family == Family::ArmRaise {
        let (lo, hi) = raise_range(&base);
        let h0 = wrist_height(&base, lo);
        let rise = a.min(wrist_height(&base, hi) - h0);
        Some((lo, hi, h0, rise))
    } else {
        None
    };
    let opposite = if family == Family::SitToStand {
        let seated = 0.5 * (base.left_leg.pitch + base.right_leg.pitch) > 0.7;
        let id = if seated { 0 } else { 1 };
        let mut target = initial_posture(id).expect("built-in posture");
        // keep the sequence's individual jitter on the target too
        let tmpl = initial_posture(params.posture).expect("checked above");
        target.lean += base.lean - tmpl.lean;
        target.roll += base.roll - tmpl.roll;
        Some(target)
    } else {
        None
    };

    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = time(i);
        let mut q = base;
        match family {
            Family::ArmRaise => {
                let (lo, hi, h0, rise) = raise.expect("set for arm-raise");
                let r = ramp(params, t);
                q.right_arm.pitch = if rise * r <= 0.0 {
                    lo
                } else {
                    solve_pitch(&base, lo, hi, h0 + rise * r)
                };
            }
            Family::Wave => {
                let lift = (a / 0.3).min(1.0) * smoothstep(t / 0.25);
                q.right_arm.pitch = lerp(base.right_arm.pitch, 2.5, lift);
                q.right_arm.abduction += 0.3 * lift;
                let osc = 0.5 * (1.0 + (TAU * (2.0 + 2.0 * f) * t + ph).sin());
                q.right_arm.bend = base.right_arm.bend + lift * a * osc;
            }
            Family::Squat => {
                let o = a * (PI * f * t + 0.5 * ph).sin().powi(2);
                for leg in [&mut q.left_leg, &mut q.right_leg] {
                    leg.pitch += o;
                    leg.bend += 2.0 * o;
                }
                q.lean += 0.6 * o;
                q.left_arm.pitch += 0.8 * o;
                q.right_arm.pitch += 0.8 * o;
            }
            Family::WalkInPlace => {
                let s = (TAU * (1.0 + f) * t + ph).sin();
                let (l, r) = (a * s.max(0.0), a * (-s).max(0.0));
                q.left_leg.pitch += l;
                q.left_leg.bend += 2.0 * l;
                q.right_leg.pitch += r;
                q.right_leg.bend += 2.0 * r;
                q.left_arm.pitch -= 0.6 * a * s;
                q.right_arm.pitch += 0.6 * a * s;
            }
            Family::SitToStand => {
                let target = opposite.expect("set for sit-to-stand");
                let r = ramp(params, t);
                let w = a.min(1.0) * r;
                q = lerp_angles(&base, &target, w);
                q.lean += 0.4 * a * (PI * r).sin();
            }
            Family::IdleSway => {
                let s = (TAU * f * t + ph).sin();
                q.roll += a * s;
                q.pelvis_x += 0.3 * a * s;
                q.left_arm.abduction += 0.5 * a * s;
                q.right_arm.abduction -= 0.5 * a * s;
                q.head_pitch += 0.5 * a * (2.0 * TAU * f * t + ph).sin();
            }
        }
        out.push(q);
    }
    Ok(out)
}

/// One synthetic sequence in world coordinates.
pub fn synth_generate(family: Family, params: &SynthParams, seed: u64, frames: usize) -> Result<PoseSequence> {
    let angles = synth_angles(family, params, seed, frames)?;
    let mut data = Vec::with_capacity(frames * JOINTS * 3);
    for q in &angles {
        for p in forward_kinematics(q) {
            data.extend_from_slice(&p);
        }
    }
    PoseSequence::new(
        format!("{}-{seed:016x}", family.name()),
        Some(family.name().to_string()),
        frames,
        JOINTS,
        data,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{bone_lengths, BONE_LENGTHS};

    fn params(a: f64, posture: usize) -> SynthParams {
        SynthParams {
            amplitude: a,
            frequency: 1.3,
            phase: 0.7,
            posture,
        }
    }

    #[test]
    fn zero_amplitude_freezes_the_initial_posture() {
        for fam in Family::ALL {
            for posture in 0..POSTURE_NAMES.len() {
                let s = synth_generate(fam, &params(0.0, posture), 3, 12).unwrap();
                for i in 1..s.frames() {
                    assert_eq!(s.frame(i), s.frame(0), "{fam:?} posture {posture} frame {i}");
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        for fam in Family::ALL {
            let a = synth_generate(fam, &params(0.5, 2), 42, 20).unwrap();
            let b = synth_generate(fam, &params(0.5, 2), 42, 20).unwrap();
            let c = synth_generate(fam, &params(0.5, 2), 43, 20).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.data(), c.data());
        }
    }

    #[test]
    fn bones_stay_rigid() {
        for fam in Family::ALL {
            let (lo, hi) = fam.amplitude_range();
            for posture in 0..POSTURE_NAMES.len() {
                let s = synth_generate(fam, &params(0.5 * (lo + hi), posture), 9, 50).unwrap();
                for i in 0..s.frames() {
                    for (l, e) in bone_lengths(s.frame(i)).iter().zip(BONE_LENGTHS) {
                        assert!((l - e).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn arm_raise_lifts_the_wrist_by_exactly_the_amplitude() {
        for posture in 0..POSTURE_NAMES.len() {
            for &a in &[0.15, 0.3, 0.45] {
                let p = params(a, posture);
                let base = base_angles(&p, 5).unwrap();
                assert!(max_arm_raise(&base) > 0.45);
                let s = synth_generate(Family::ArmRaise, &p, 5, 50).unwrap();
                let h: Vec<f64> = (0..50).map(|i| s.joint(i, R_WRIST)[1]).collect();
                // independent kinematic evaluation: heights from the frames
                for w in h.windows(2) {
                    assert!(w[1] >= w[0] - 1e-12, "non-monotone wrist height");
                }
                let (start, dur) = ramp_window(&p);
                let end = ((start + dur) * 49.0).ceil() as usize;
                assert!(end < 50);
                assert!((h[end] - h[0] - a).abs() < 1e-9, "rise {} vs {a}", h[end] - h[0]);
                assert!((h[49] - h[0] - a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(Family::parse("moonwalk").is_err());
        assert_eq!(Family::parse("walk-in-place").unwrap(), Family::WalkInPlace);
        assert!(synth_generate(Family::Wave, &params(-1.0, 0), 0, 5).is_err());
        let mut p = params(0.1, 0);
        p.frequency = 0.0;
        assert!(synth_generate(Family::Wave, &p, 0, 5).is_err());
        assert!(synth_generate(Family::Wave, &params(0.1, 99), 0, 5).is_err());
        assert_eq!(Family::parse_list("all").unwrap().len(), 6);
        assert_eq!(
            Family::parse_list("squat, wave").unwrap(),
            vec![Family::Squat, Family::Wave]
        );
    }

    #[test]
    fn sit_to_stand_changes_pelvis_height() {
        let s = synth_generate(Family::SitToStand, &params(1.0, 1), 1, 50).unwrap();
        let rise = s.joint(49, 0)[1] - s.joint(0, 0)[1];
        assert!(rise > 0.3, "sitting → standing should raise the pelvis, got {rise}");
        let s = synth_generate(Family::SitToStand, &params(1.0, 0), 1, 50).unwrap();
        assert!(s.joint(49, 0)[1] < s.joint(0, 0)[1] - 0.3);
    }
}
