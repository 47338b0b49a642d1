//! Renders a synthetic sequence as SVG stills plus an animated SVG.
//!
//! cargo run --example render_stick_figure -- [out-dir]

use behave::render::{render_to_dir, RenderConfig, ViewPlane};
use behave::synth::{synth_generate, Family, SynthParams};

fn main() -> behave::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("behave-render"));
    let params = SynthParams {
        amplitude: 0.8,
        frequency: 1.0,
        phase: 0.0,
        posture: 0,
    };
    let seq = synth_generate(Family::Wave, &params, 1, 50)?;
    let cfg = RenderConfig {
        view: ViewPlane::Front,
        ..RenderConfig::default()
    };
    let paths = render_to_dir(&seq, &out, &cfg)?;
    println!("{} files written; open {} in a browser", paths.len(), paths.last().unwrap().display());
    Ok(())
}
