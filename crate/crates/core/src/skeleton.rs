//! The 17-joint skeleton: topology, bone lengths and angle-driven forward
//! kinematics. Coordinates are in metres with `y` pointing up, `z` forward and
//! `+x` towards the body's left side.

use serde::{Deserialize, Serialize};

pub const JOINTS: usize = 17;

pub const PELVIS: usize = 0;
pub const R_HIP: usize = 1;
pub const R_KNEE: usize = 2;
pub const R_ANKLE: usize = 3;
pub const L_HIP: usize = 4;
pub const L_KNEE: usize = 5;
pub const L_ANKLE: usize = 6;
pub const SPINE: usize = 7;
pub const THORAX: usize = 8;
pub const NECK: usize = 9;
pub const HEAD: usize = 10;
pub const L_SHOULDER: usize = 11;
pub const L_ELBOW: usize = 12;
pub const L_WRIST: usize = 13;
pub const R_SHOULDER: usize = 14;
pub const R_ELBOW: usize = 15;
pub const R_WRIST: usize = 16;

pub const JOINT_NAMES: [&str; JOINTS] = [
    "pelvis",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

/// Parent → child pairs; every non-root joint appears exactly once as a child.
pub const BONES: [(usize, usize); 16] = [
    (PELVIS, R_HIP),
    (R_HIP, R_KNEE),
    (R_KNEE, R_ANKLE),
    (PELVIS, L_HIP),
    (L_HIP, L_KNEE),
    (L_KNEE, L_ANKLE),
    (PELVIS, SPINE),
    (SPINE, THORAX),
    (THORAX, NECK),
    (NECK, HEAD),
    (THORAX, L_SHOULDER),
    (L_SHOULDER, L_ELBOW),
    (L_ELBOW, L_WRIST),
    (THORAX, R_SHOULDER),
    (R_SHOULDER, R_ELBOW),
    (R_ELBOW, R_WRIST),
];

/// Bone lengths in metres, indexed like [`BONES`].
pub const BONE_LENGTHS: [f64; 16] = [
    0.13, 0.45, 0.44, 0.13, 0.45, 0.44, 0.23, 0.25, 0.10, 0.12, 0.15, 0.28, 0.25, 0.15, 0.28, 0.25,
];

pub type Point = [f64; 3];

/// Joint angles of one limb (radians).
///
/// `pitch` rotates the proximal segment forward from hanging straight down
/// (0 = down, π/2 = horizontal forward, π = straight up); `abduction` tilts
/// it sideways away from the body; `bend` is the distal joint's flexion
/// (knee bends backwards, elbow forwards).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Limb {
    pub pitch: f64,
    pub abduction: f64,
    pub bend: f64,
}

/// A posture in angle space. Forward kinematics turns it into joint positions
/// with exactly the fixed bone lengths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    /// Horizontal pelvis offset (x, z); height is derived from ground contact.
    pub pelvis_x: f64,
    pub pelvis_z: f64,
    /// Forward lean of the spine from vertical.
    pub lean: f64,
    /// Sideways lean of the spine (towards +x).
    pub roll: f64,
    /// Extra forward pitch of the head on the neck.
    pub head_pitch: f64,
    pub left_leg: Limb,
    pub right_leg: Limb,
    pub left_arm: Limb,
    pub right_arm: Limb,
}

/// Unit direction of a segment with the given forward pitch and sideways tilt.
/// `side` is +1 for the left side of the body, −1 for the right.
fn limb_dir(pitch: f64, abduction: f64, side: f64) -> Point {
    let (sp, cp) = pitch.sin_cos();
    let (sa, ca) = abduction.sin_cos();
    [side * sa, -cp * ca, sp * ca]
}

fn add(a: Point, len: f64, d: Point) -> Point {
    [a[0] + len * d[0], a[1] + len * d[1], a[2] + len * d[2]]
}

/// Vertical drop from hip to ankle for a leg.
fn leg_drop(leg: &Limb) -> f64 {
    let thigh = limb_dir(leg.pitch, leg.abduction, 1.0);
    let shin = limb_dir(leg.pitch - leg.bend, leg.abduction, 1.0);
    -(BONE_LENGTHS[1] * thigh[1] + BONE_LENGTHS[2] * shin[1])
}

/// Joint positions for `a`; the pelvis height is chosen so the lower ankle
/// rests at `y = ANKLE_HEIGHT`.
pub fn forward_kinematics(a: &Angles) -> [Point; JOINTS] {
    let mut p = [[0.0; 3]; JOINTS];
    let drop = leg_drop(&a.left_leg).max(leg_drop(&a.right_leg));
    p[PELVIS] = [a.pelvis_x, ANKLE_HEIGHT + drop, a.pelvis_z];

    let legs = [
        (R_HIP, R_KNEE, R_ANKLE, &a.right_leg, -1.0, 0usize),
        (L_HIP, L_KNEE, L_ANKLE, &a.left_leg, 1.0, 3usize),
    ];
    for (hip, knee, ankle, leg, side, b) in legs {
        p[hip] = add(p[PELVIS], BONE_LENGTHS[b], [side, 0.0, 0.0]);
        p[knee] = add(p[hip], BONE_LENGTHS[b + 1], limb_dir(leg.pitch, leg.abduction, side));
        p[ankle] = add(
            p[knee],
            BONE_LENGTHS[b + 2],
            limb_dir(leg.pitch - leg.bend, leg.abduction, side),
        );
    }

    let (sl, cl) = a.lean.sin_cos();
    let (sr, cr) = a.roll.sin_cos();
    let up = [sr * cl, cr * cl, sl];
    p[SPINE] = add(p[PELVIS], BONE_LENGTHS[6], up);
    p[THORAX] = add(p[SPINE], BONE_LENGTHS[7], up);
    p[NECK] = add(p[THORAX], BONE_LENGTHS[8], up);
    let (sh, ch) = (a.lean + a.head_pitch).sin_cos();
    p[HEAD] = add(p[NECK], BONE_LENGTHS[9], [sr * ch, cr * ch, sh]);

    // shoulder girdle stays perpendicular to the rolled spine
    let arms = [
        (L_SHOULDER, L_ELBOW, L_WRIST, &a.left_arm, 1.0, 10usize),
        (R_SHOULDER, R_ELBOW, R_WRIST, &a.right_arm, -1.0, 13usize),
    ];
    for (shoulder, elbow, wrist, arm, side, b) in arms {
        p[shoulder] = add(p[THORAX], BONE_LENGTHS[b], [side * cr, -side * sr, 0.0]);
        p[elbow] = add(p[shoulder], BONE_LENGTHS[b + 1], limb_dir(arm.pitch, arm.abduction, side));
        p[wrist] = add(
            p[elbow],
            BONE_LENGTHS[b + 2],
            limb_dir(arm.pitch + arm.bend, arm.abduction, side),
        );
    }
    p
}

/// Height of the ankle joint above the floor.
pub const ANKLE_HEIGHT: f64 = 0.08;

/// Euclidean length of every bone for a flat `[K·3]` posture.
pub fn bone_lengths(frame: &[f64]) -> [f64; 16] {
    let mut out = [0.0; 16];
    for (i, &(a, b)) in BONES.iter().enumerate() {
        let d: f64 = (0..3).map(|c| (frame[a * 3 + c] - frame[b * 3 + c]).powi(2)).sum();
        out[i] = d.sqrt();
    }
    out
}

/// Named starting postures used by the synthetic generator.
pub const POSTURE_NAMES: [&str; 6] = ["standing", "sitting", "half-squat", "leaning", "arms-folded", "wide-stance"];

pub fn initial_posture(id: usize) -> Option<Angles> {
    let hang = |abd: f64| Limb {
        pitch: 0.1,
        abduction: abd,
        bend: 0.15,
    };
    let straight = |abd: f64| Limb {
        pitch: 0.0,
        abduction: abd,
        bend: 0.0,
    };
    let base = Angles {
        left_arm: hang(0.12),
        right_arm: hang(0.12),
        left_leg: straight(0.03),
        right_leg: straight(0.03),
        ..Default::default()
    };
    let a = match id {
        0 => base,
        1 => {
            let thigh = Limb {
                pitch: std::f64::consts::FRAC_PI_2,
                abduction: 0.08,
                bend: std::f64::consts::FRAC_PI_2,
            };
            let arm = Limb {
                pitch: 0.35,
                abduction: 0.1,
                bend: 0.9,
            };
            Angles {
                lean: 0.12,
                left_leg: thigh,
                right_leg: thigh,
                left_arm: arm,
                right_arm: arm,
                ..base
            }
        }
        2 => {
            let leg = Limb {
                pitch: 0.8,
                abduction: 0.1,
                bend: 1.3,
            };
            let arm = Limb {
                pitch: 0.6,
                abduction: 0.1,
                bend: 0.3,
            };
            Angles {
                lean: 0.4,
                left_leg: leg,
                right_leg: leg,
                left_arm: arm,
                right_arm: arm,
                ..base
            }
        }
        3 => Angles {
            lean: 0.3,
            head_pitch: 0.2,
            left_arm: hang(0.05),
            right_arm: hang(0.05),
            ..base
        },
        4 => {
            let arm = Limb {
                pitch: 0.5,
                abduction: -0.15,
                bend: 1.4,
            };
            Angles {
                left_arm: arm,
                right_arm: arm,
                ..base
            }
        }
        5 => Angles {
            left_leg: straight(0.2),
            right_leg: straight(0.2),
            left_arm: hang(0.4),
            right_arm: hang(0.4),
            ..base
        },
        _ => return None,
    };
    Some(a)
}
