use behave::render::{render_sequence, render_to_dir, RenderConfig, ViewPlane};
use behave::skeleton::{forward_kinematics, initial_posture, BONES, HEAD, JOINTS, L_ANKLE};
use behave::{Error, PoseSequence};

fn standing(frames: usize) -> PoseSequence {
    let pts = forward_kinematics(&initial_posture(0).unwrap());
    let frame: Vec<f64> = pts.iter().flat_map(|p| p.iter().copied()).collect();
    let data = (0..frames).flat_map(|f| frame.iter().map(move |v| v + 0.01 * f as f64)).collect();
    PoseSequence::new("stand", None, frames, JOINTS, data).unwrap()
}

fn parse(svg: &str) -> roxmltree::Document<'_> {
    roxmltree::Document::parse(svg).expect("well-formed SVG")
}

fn attr(node: roxmltree::Node<'_, '_>, name: &str) -> f64 {
    node.attribute(name).unwrap().parse().unwrap()
}

#[test]
fn one_frame_gives_one_still_and_one_animation() {
    let dir = tempfile::tempdir().unwrap();
    let paths = render_to_dir(&standing(1), dir.path(), &RenderConfig::default()).unwrap();
    assert_eq!(paths.len(), 2);
    let mut names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["animated.svg", "frame-0000.svg"]);
    for p in paths {
        parse(&std::fs::read_to_string(p).unwrap());
    }
}

#[test]
fn stills_draw_every_bone_and_joint() {
    let r = render_sequence(&standing(3), &RenderConfig::default()).unwrap();
    assert_eq!(r.frames.len(), 3);
    for svg in &r.frames {
        let doc = parse(svg);
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("line")).count(), BONES.len());
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), JOINTS);
    }
    let doc = parse(&r.animated);
    let anims: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("animate")).collect();
    assert_eq!(anims.len(), BONES.len() * 4 + JOINTS * 2);
    assert!(anims.iter().all(|a| a.attribute("values").unwrap().split(';').count() == 3));
    assert_eq!(anims[0].attribute("dur"), Some("0.120000s"));
}

#[test]
fn the_head_is_drawn_above_the_feet() {
    let r = render_sequence(&standing(1), &RenderConfig::default()).unwrap();
    let doc = parse(&r.frames[0]);
    let circles: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("circle")).collect();
    // SVG y grows downward
    assert!(attr(circles[HEAD], "cy") < attr(circles[L_ANKLE], "cy"));
    for c in circles {
        let (x, y) = (attr(c, "cx"), attr(c, "cy"));
        assert!((0.0..=400.0).contains(&x) && (0.0..=400.0).contains(&y));
    }
}

#[test]
fn rendering_is_deterministic() {
    let cfg = RenderConfig {
        view: ViewPlane::Side,
        ..RenderConfig::default()
    };
    let a = render_sequence(&standing(4), &cfg).unwrap();
    let b = render_sequence(&standing(4), &cfg).unwrap();
    assert_eq!(a, b);
    let front = render_sequence(&standing(4), &RenderConfig::default()).unwrap();
    assert_ne!(a.frames[0], front.frames[0]);
}

#[test]
fn a_degenerate_figure_still_renders() {
    let seq = PoseSequence::new("origin", None, 2, JOINTS, vec![0.0; 2 * JOINTS * 3]).unwrap();
    let r = render_sequence(&seq, &RenderConfig::default()).unwrap();
    for svg in r.frames.iter().chain([&r.animated]) {
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        parse(svg);
    }
}

#[test]
fn wrong_skeletons_and_settings_are_rejected() {
    let seq = PoseSequence::new("small", None, 1, 3, vec![0.0; 9]).unwrap();
    assert!(matches!(render_sequence(&seq, &RenderConfig::default()), Err(Error::Contract(_))));
    let bad_fps = RenderConfig {
        fps: 0.0,
        ..RenderConfig::default()
    };
    assert!(matches!(render_sequence(&standing(1), &bad_fps), Err(Error::Contract(_))));
    assert!("diagonal".parse::<ViewPlane>().is_err());
    assert_eq!("top".parse::<ViewPlane>().unwrap(), ViewPlane::Top);
}
