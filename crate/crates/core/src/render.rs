//! Stick-figure SVG rendering: one still per frame plus a SMIL animation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::PoseSequence;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::skeleton::{BONES, JOINTS};

/// Orthographic view plane; the dropped axis is the depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ViewPlane {
    /// x right, y up (drops z).
    #[default]
    Front,
    /// z right, y up (drops x).
    Side,
    /// x right, z up (drops y).
    Top,
}

impl ViewPlane {
    fn project(self, p: [f64; 3]) -> (f64, f64) {
        match self {
            ViewPlane::Front => (p[0], p[1]),
            ViewPlane::Side => (p[2], p[1]),
            ViewPlane::Top => (p[0], p[2]),
        }
    }
}

impl FromStr for ViewPlane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" => Ok(ViewPlane::Front),
            "side" => Ok(ViewPlane::Side),
            "top" => Ok(ViewPlane::Top),
            other => Err(Error::contract(format!("unknown view plane `{other}` (front, side, top)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub fps: f64,
    pub view: ViewPlane,
    /// Width and height of the square canvas in pixels.
    pub size: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            fps: 25.0,
            view: ViewPlane::Front,
            size: 400,
        }
    }
}

/// SVG documents for a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub frames: Vec<String>,
    pub animated: String,
}

/// Maps world coordinates of the projected plane to pixels, shared by all
/// frames so the figure does not jump between stills.
struct Camera {
    min: (f64, f64),
    scale: f64,
    offset: (f64, f64),
    size: f64,
}

impl Camera {
    fn fit(points: &[(f64, f64)], size: f64) -> Self {
        let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| points.iter().map(pick).fold(init, f);
        let min = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::min, f64::INFINITY, |p| p.1));
        let max = (fold(f64::max, f64::NEG_INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
        let span = (max.0 - min.0).max(max.1 - min.1);
        // a degenerate figure (all joints coincide) is drawn at a 1 m scale
        let span = if span > 1e-9 { span } else { 1.0 };
        let usable = size * 0.9;
        let scale = usable / span;
        let offset = (
            (size - (max.0 - min.0) * scale) / 2.0,
            (size - (max.1 - min.1) * scale) / 2.0,
        );
        Self { min, scale, offset, size }
    }

    /// Pixel position (SVG y grows downward).
    fn px(&self, p: (f64, f64)) -> (f64, f64) {
        let x = self.offset.0 + (p.0 - self.min.0) * self.scale;
        let y = self.size - (self.offset.1 + (p.1 - self.min.1) * self.scale);
        (x, y)
    }
}

fn header(out: &mut String, size: u32) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(out, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
}

const BONE_STYLE: &str = r#"stroke="black" stroke-width="3" stroke-linecap="round""#;
const JOINT_STYLE: &str = r##"r="3" fill="#c03030""##;

fn pixel_frames(seq: &PoseSequence, cfg: &RenderConfig) -> Result<Vec<Vec<(f64, f64)>>> {
    if seq.joints() != JOINTS {
        return Err(Error::contract(format!(
            "rendering needs the {JOINTS}-joint skeleton, sequence `{}` has {} joints",
            seq.id,
            seq.joints()
        )));
    }
    if seq.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::contract(format!("sequence `{}` has non-finite coordinates", seq.id)));
    }
    if !(cfg.fps.is_finite() && cfg.fps > 0.0) || cfg.size == 0 {
        return Err(Error::contract("rendering needs a positive fps and canvas size"));
    }
    let projected: Vec<Vec<(f64, f64)>> = (0..seq.frames())
        .map(|f| (0..JOINTS).map(|j| cfg.view.project(seq.joint(f, j))).collect())
        .collect();
    let all: Vec<(f64, f64)> = projected.iter().flatten().copied().collect();
    let cam = Camera::fit(&all, cfg.size as f64);
    Ok(projected.into_iter().map(|fr| fr.into_iter().map(|p| cam.px(p)).collect()).collect())
}

fn still(points: &[(f64, f64)], size: u32) -> String {
    let mut s = String::new();
    header(&mut s, size);
    for &(a, b) in BONES.iter() {
        let (p, q) = (points[a], points[b]);
        let _ = writeln!(s, r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" {BONE_STYLE}/>"#, p.0, p.1, q.0, q.1);
    }
    for p in points {
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" {JOINT_STYLE}/>"#, p.0, p.1);
    }
    s.push_str("</svg>\n");
    s
}

fn values(track: impl Iterator<Item = f64>) -> String {
    track.map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(";")
}

fn animated(frames: &[Vec<(f64, f64)>], cfg: &RenderConfig) -> String {
    let dur = frames.len() as f64 / cfg.fps;
    let anim = |attr: &str, track: String| {
        format!(r#"<animate attributeName="{attr}" values="{track}" dur="{dur:.6}s" calcMode="discrete" repeatCount="indefinite"/>"#)
    };
    let mut s = String::new();
    header(&mut s, cfg.size);
    let first = &frames[0];
    for &(a, b) in BONES.iter() {
        let _ = writeln!(
            s,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" {BONE_STYLE}>"#,
            first[a].0, first[a].1, first[b].0, first[b].1
        );
        for (attr, joint, axis) in [("x1", a, 0), ("y1", a, 1), ("x2", b, 0), ("y2", b, 1)] {
            let track = values(frames.iter().map(|f| if axis == 0 { f[joint].0 } else { f[joint].1 }));
            let _ = writeln!(s, "{}", anim(attr, track));
        }
        s.push_str("</line>\n");
    }
    for j in 0..JOINTS {
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" {JOINT_STYLE}>"#, first[j].0, first[j].1);
        let _ = writeln!(s, "{}", anim("cx", values(frames.iter().map(|f| f[j].0))));
        let _ = writeln!(s, "{}", anim("cy", values(frames.iter().map(|f| f[j].1))));
        s.push_str("</circle>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Renders every frame of a world-coordinate sequence plus an animation.
pub fn render_sequence(seq: &PoseSequence, cfg: &RenderConfig) -> Result<Rendered> {
    let frames = pixel_frames(seq, cfg)?;
    Ok(Rendered {
        frames: frames.iter().map(|f| still(f, cfg.size)).collect(),
        animated: animated(&frames, cfg),
    })
}

/// Writes `frame-NNNN.svg` for every frame and `animated.svg` into `dir`;
/// returns the written paths (frames first).
pub fn render_to_dir(seq: &PoseSequence, dir: &Path, cfg: &RenderConfig) -> Result<Vec<PathBuf>> {
    let r = render_sequence(seq, cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(r.frames.len() + 1);
    for (i, svg) in r.frames.iter().enumerate() {
        let p = dir.join(format!("frame-{i:04}.svg"));
        write_atomic(&p, svg.as_bytes())?;
        paths.push(p);
    }
    let p = dir.join("animated.svg");
    write_atomic(&p, r.animated.as_bytes())?;
    paths.push(p);
    Ok(paths)
}
