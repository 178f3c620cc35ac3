use std::f64::consts::FRAC_PI_2;
use std::fs;

use graspmt::autodiff::Tensor;
use graspmt::data::cornell::{read_annotations, write_depth, write_rgb};
use graspmt::data::{
    augment, load_cornell_dir, load_splits, synth_generate, write_synth_dir, AugmentConfig,
    LoadOptions, Sample, SynthConfig,
};
use graspmt::geometry::{is_success, GraspRect};
use graspmt::Error;

const UNIT_SQUARE: &str = "9.5 9.5\n10.5 9.5\n10.5 10.5\n9.5 10.5\n";

fn rect(x: f64, y: f64, t: f64, w: f64, h: f64) -> GraspRect<f64> {
    GraspRect::new(x, y, t, w, h).unwrap()
}

#[test]
fn minimal_cornell_directory() {
    let dir = tempfile::tempdir().unwrap();
    let rgb = Tensor::<f64>::from_fn(&[3, 32, 32], |i| (i % 7) as f64 / 7.0);
    write_rgb(&rgb, &dir.path().join("pcd0100r.png")).unwrap();
    let depth = Tensor::<f64>::from_fn(&[1, 32, 32], |i| 0.6 + (i % 32) as f64 * 1e-3);
    write_depth(&depth, &dir.path().join("pcd0100d.png")).unwrap();
    fs::write(dir.path().join("pcd0100cpos.txt"), UNIT_SQUARE).unwrap();

    let samples = load_cornell_dir::<f64>(dir.path(), &LoadOptions::default()).unwrap();
    assert_eq!(samples.len(), 1);
    let s = &samples[0];
    assert_eq!(s.id, "pcd0100");
    assert_eq!(s.annotations.len(), 1);
    assert!(s.labelled);
    assert_eq!(s.depth.as_ref().unwrap().shape(), &[3, 32, 32]);
    let a = s.annotations[0];
    let want = [10.0, 10.0, 0.0, 1.0, 1.0];
    for (got, w) in [a.x, a.y, a.theta, a.w, a.h].iter().zip(want) {
        assert!((got - w).abs() < 1e-12, "{a:?}");
    }

    let rgb_only = LoadOptions {
        rgb_only: true,
        ..LoadOptions::default()
    };
    let s = &load_cornell_dir::<f64>(dir.path(), &rgb_only).unwrap()[0];
    assert!(s.depth.is_none());
}

#[test]
fn malformed_rect_file_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("xcpos.txt");
    fs::write(&path, format!("{UNIT_SQUARE}1.0 2.0\n3.0 4.0\n")).unwrap();
    match read_annotations::<f64>(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn unreadable_directory_is_an_error() {
    let missing = std::path::Path::new("/nonexistent/graspmt-data");
    assert!(load_cornell_dir::<f32>(missing, &LoadOptions::default()).is_err());
}

fn labelled_sample(anns: Vec<GraspRect<f64>>) -> Sample<f64> {
    let rgb = Tensor::from_fn(&[3, 32, 32], |i| (i % 13) as f64 / 13.0);
    let depth = Tensor::from_fn(&[3, 32, 32], |i| (i % 5) as f64 - 2.0);
    Sample::new("a", rgb, Some(depth), anns, "test").unwrap()
}

#[test]
fn augmentation_is_deterministic_per_seed() {
    let s = labelled_sample(vec![rect(16.0, 15.0, 0.3, 8.0, 4.0)]);
    let cfg = AugmentConfig::default();
    assert_eq!(augment(&s, &cfg, 42), augment(&s, &cfg, 42));
}

#[test]
fn double_flip_restores_the_sample() {
    let s = labelled_sample(vec![
        rect(12.0, 15.0, 0.3, 8.0, 4.0),
        rect(20.5, 9.0, -1.1, 6.0, 3.0),
    ]);
    let cfg = AugmentConfig {
        flip_prob: 1.0,
        ..AugmentConfig::none()
    };
    let (once, geo) = augment(&s, &cfg, 1);
    assert!(geo.flip);
    let (twice, _) = augment(&once, &cfg, 2);
    assert_eq!(twice.rgb, s.rgb);
    for (a, b) in twice.annotations.iter().zip(&s.annotations) {
        assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
        assert!((a.theta - b.theta).abs() < 1e-12);
        assert_eq!((a.w, a.h), (b.w, b.h));
    }
}

#[test]
fn quarter_turn_of_zero_orientation() {
    let s = labelled_sample(vec![rect(16.0, 16.0, 0.0, 8.0, 4.0)]);
    let cfg = AugmentConfig {
        rotate90: true,
        ..AugmentConfig::none()
    };
    // Search seeds for a single quarter turn rather than assuming the RNG layout.
    let (out, _) = (0..100)
        .map(|seed| augment(&s, &cfg, seed))
        .find(|(_, g)| g.quarter_turns == 1)
        .expect("some seed draws one quarter turn");
    assert!((out.annotations[0].theta + FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn synthetic_generation_is_deterministic_and_self_consistent() {
    let cfg = SynthConfig::source(3);
    let a = synth_generate::<f32>(&cfg, 6, 4).unwrap();
    let b = synth_generate::<f32>(&cfg, 6, 4).unwrap();
    assert_eq!(a.labelled, b.labelled);
    assert_eq!(a.unlabelled, b.unlabelled);
    assert_eq!(a.eval, b.eval);
    assert!(a
        .unlabelled
        .iter()
        .all(|s| !s.labelled && s.annotations.is_empty()));
    for s in a.labelled.iter().chain(&a.eval) {
        assert!(!s.annotations.is_empty() && s.annotations.len() <= 5);
        for g in &s.annotations {
            assert!(is_success(g, std::slice::from_ref(g)).unwrap());
        }
    }
}

#[test]
fn target_domain_differs_in_pixels_and_drops_depth() {
    let src = synth_generate::<f32>(&SynthConfig::source(0), 3, 0).unwrap();
    let tgt = synth_generate::<f32>(&SynthConfig::target(0), 3, 0).unwrap();
    for (s, t) in src.labelled.iter().zip(&tgt.labelled) {
        assert!(s.depth.is_some() && t.depth.is_none());
        let diff: f32 = s
            .rgb
            .data()
            .iter()
            .zip(t.rgb.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff / s.rgb.len() as f32 > 0.05);
    }
}

#[test]
fn written_dataset_reloads_identically() {
    let cfg = SynthConfig::source(1);
    let dir = tempfile::tempdir().unwrap();
    write_synth_dir(&cfg, 4, 3, dir.path()).unwrap();
    let loaded = load_splits::<f32>(dir.path(), &LoadOptions::default()).unwrap();
    let mem = synth_generate::<f32>(&cfg, 4, 3).unwrap();
    for (a, b) in [
        (&loaded.labelled, &mem.labelled),
        (&loaded.unlabelled, &mem.unlabelled),
        (&loaded.eval, &mem.eval),
    ] {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.rgb, y.rgb);
            assert_eq!(x.depth, y.depth);
            assert_eq!(x.annotations.len(), y.annotations.len());
            for (p, q) in x.annotations.iter().zip(&y.annotations) {
                assert!((p.x - q.x).abs() < 1e-3 && (p.theta - q.theta).abs() < 1e-3);
            }
        }
    }
}
