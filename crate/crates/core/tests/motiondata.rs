use behave::data::{derive_seed, fit_norm_stats, make_dataset, STD_FLOOR};
use behave::seqio::{decode_sequences, encode_sequences, load_sequences, save_sequences};
use behave::skeleton::{bone_lengths, forward_kinematics, initial_posture, BONE_LENGTHS, JOINTS, L_ANKLE, R_ANKLE};
use behave::synth::{synth_generate, Family, SynthParams};
use behave::{DatasetConfig, Error, NormStats, PoseSequence};
use proptest::prelude::*;

fn small_cfg(seed: u64) -> DatasetConfig {
    DatasetConfig {
        count_per_family: 5,
        frames: 12,
        seed,
        ..DatasetConfig::default()
    }
}

fn family() -> impl Strategy<Value = Family> {
    prop::sample::select(Family::ALL.to_vec())
}

fn params() -> impl Strategy<Value = SynthParams> {
    (0.0f64..1.2, 0.5f64..2.0, 0.0f64..std::f64::consts::TAU, 0usize..6).prop_map(|(amplitude, frequency, phase, posture)| {
        SynthParams {
            amplitude,
            frequency,
            phase,
            posture,
        }
    })
}

fn sequence(frames: usize, joints: usize) -> impl Strategy<Value = PoseSequence> {
    prop::collection::vec(-5.0f64..5.0, frames * joints * 3)
        .prop_map(move |d| PoseSequence::new("s", Some("wave".into()), frames, joints, d).unwrap())
}

#[test]
fn every_named_posture_stands_on_the_floor_with_exact_bones() {
    for id in 0..6 {
        let pts = forward_kinematics(&initial_posture(id).unwrap());
        let flat: Vec<f64> = pts.iter().flat_map(|p| p.iter().copied()).collect();
        for (got, want) in bone_lengths(&flat).iter().zip(BONE_LENGTHS) {
            assert!((got - want).abs() < 1e-12);
        }
        let lowest = pts[L_ANKLE][1].min(pts[R_ANKLE][1]);
        assert!((lowest - behave::skeleton::ANKLE_HEIGHT).abs() < 1e-12, "posture {id}");
    }
    assert!(initial_posture(6).is_none());
}

#[test]
fn datasets_are_reproducible_and_seed_dependent() {
    let a = make_dataset(&small_cfg(3)).unwrap();
    let b = make_dataset(&small_cfg(3)).unwrap();
    let c = make_dataset(&small_cfg(4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.train[0].data(), c.train[0].data());
    assert_eq!(a.train.len() + a.test.len(), 30);
    assert_eq!(a.train.len(), 24);
}

#[test]
fn held_out_families_only_appear_in_test() {
    let cfg = DatasetConfig {
        held_out: vec![Family::Squat],
        ..small_cfg(1)
    };
    let d = make_dataset(&cfg).unwrap();
    assert!(d.train.iter().all(|s| s.family.as_deref() != Some("squat")));
    assert_eq!(d.test.iter().filter(|s| s.family.as_deref() == Some("squat")).count(), 5);
}

#[test]
fn stats_come_from_the_train_split_only() {
    let d = make_dataset(&small_cfg(2)).unwrap();
    assert_eq!(d.stats, fit_norm_stats(&d.train).unwrap());
    let (tr, _) = d.normalized().unwrap();
    // every normalized coordinate channel has zero mean over train frames
    let w = tr[0].frame_width();
    let n = (tr.len() * tr[0].frames()) as f64;
    for c in 0..w {
        let m: f64 = tr.iter().flat_map(|s| (0..s.frames()).map(move |f| s.frame(f)[c])).sum::<f64>() / n;
        assert!(m.abs() < 1e-9);
    }
}

#[test]
fn bad_dataset_configs_are_contract_errors() {
    for cfg in [
        DatasetConfig { split_ratio: 1.0, ..small_cfg(0) },
        DatasetConfig { frames: 1, ..small_cfg(0) },
        DatasetConfig { count_per_family: 0, ..small_cfg(0) },
        DatasetConfig { families: vec![Family::Wave, Family::Wave], ..small_cfg(0) },
        DatasetConfig { families: vec![Family::Wave], held_out: vec![Family::Squat], ..small_cfg(0) },
        DatasetConfig { families: vec![Family::Wave], held_out: vec![Family::Wave], ..small_cfg(0) },
    ] {
        assert!(matches!(make_dataset(&cfg), Err(Error::Contract(_))), "{cfg:?}");
    }
}

#[test]
fn malformed_files_name_the_record() {
    let seqs = make_dataset(&small_cfg(0)).unwrap().train;
    let text = encode_sequences(&seqs[..2]).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"id\": 3}";
    let broken = lines.join("\n");
    assert!(matches!(decode_sequences(&broken), Err(Error::Format { record: 2, .. })));
    let truncated: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
    assert!(matches!(decode_sequences(&truncated), Err(Error::Format { .. })));
    assert!(matches!(decode_sequences(""), Err(Error::Format { record: 0, .. })));
}

#[test]
fn files_round_trip_on_disk() {
    let seqs = make_dataset(&small_cfg(5)).unwrap().test;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("test.jsonl");
    save_sequences(&p, &seqs).unwrap();
    assert_eq!(load_sequences(&p).unwrap(), seqs);
}

#[test]
fn family_names_parse_back() {
    for f in Family::ALL {
        assert_eq!(Family::parse(f.name()).unwrap(), f);
    }
    assert_eq!(Family::parse_list("all").unwrap(), Family::ALL.to_vec());
    assert!(Family::parse("moonwalk").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synthetic_motion_preserves_bone_lengths(f in family(), p in params(), seed in any::<u64>()) {
        let s = synth_generate(f, &p, seed, 15).unwrap();
        prop_assert_eq!(s.joints(), JOINTS);
        prop_assert_eq!(s.family.as_deref(), Some(f.name()));
        for t in 0..s.frames() {
            for (got, want) in bone_lengths(s.frame(t)).iter().zip(BONE_LENGTHS) {
                prop_assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn synthesis_is_a_pure_function_of_its_inputs(f in family(), p in params(), seed in any::<u64>()) {
        prop_assert_eq!(synth_generate(f, &p, seed, 8).unwrap(), synth_generate(f, &p, seed, 8).unwrap());
    }

    #[test]
    fn normalize_then_denormalize_is_identity(seqs in prop::collection::vec(sequence(4, 3), 1..5), probe in sequence(4, 3)) {
        let stats = fit_norm_stats(&seqs).unwrap();
        prop_assert!(stats.std.iter().all(|&s| s >= STD_FLOOR));
        let back = stats.denormalize(&stats.normalize(&probe).unwrap()).unwrap();
        for (a, b) in back.data().iter().zip(probe.data()) {
            prop_assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn identity_stats_change_nothing(probe in sequence(3, 2)) {
        let id = NormStats::identity(6);
        prop_assert_eq!(id.normalize(&probe).unwrap(), probe);
    }

    #[test]
    fn encoding_round_trips_exactly(seqs in prop::collection::vec(sequence(3, 2), 0..4)) {
        if seqs.is_empty() {
            prop_assert!(matches!(encode_sequences(&seqs), Err(Error::Contract(_))));
        } else {
            let (h, back) = decode_sequences(&encode_sequences(&seqs).unwrap()).unwrap();
            prop_assert_eq!((h.frames, h.joints, h.dims), (3, 2, 3));
            prop_assert_eq!(back, seqs);
        }
    }

    #[test]
    fn derived_seeds_are_distinct_across_indices(root in any::<u64>(), i in 0u64..1000, j in 0u64..1000) {
        prop_assume!(i != j);
        prop_assert_ne!(derive_seed(root, i), derive_seed(root, j));
        prop_assert_eq!(derive_seed(root, i), derive_seed(root, i));
    }
}
