mod common;

use std::sync::Arc;

use common::*;
use elda::background::{self, batch_stats, build_offline_from_images, merge};
use elda::bench::{self, make_synthetic_sequence, SyntheticSpec, Trajectory};
use elda::detector::{classify, raw_score, train_detector, ExemplarDetector, LdaSolver};
use elda::features::{extract_hog, extract_patch, GrayImage};
use elda::{BackgroundModel, BoundingBox, FeatureVector, ObjectModel, HOG_DIM};
use rand::Rng;

fn fv(v: Vec<f64>) -> FeatureVector {
    FeatureVector::new(v).unwrap()
}

#[test]
fn detector_matches_dense_solve() {
    let mut r = rng(1);
    for _ in 0..10 {
        let d = 8;
        let bg = model_with(&mut r, d, 12, 0.0);
        let x = fv(random_vec(&mut r, d));
        let reg = 1e-3;
        let det = train_detector(&x, &bg, reg, 1).unwrap();
        let mut a = bg.cov().to_vec();
        for i in 0..d {
            a[i * d + i] += reg;
        }
        let rhs: Vec<f64> = x.as_slice().iter().zip(bg.mean()).map(|(p, m)| p - m).collect();
        let w = dense_solve(&a, &rhs);
        assert!(rel_err(det.weights(), &w) <= 1e-9);
        let mid: Vec<f64> = x.as_slice().iter().zip(bg.mean()).map(|(p, m)| (p + m) / 2.0).collect();
        assert!((det.bias() + naive_dot(&w, &mid)).abs() <= 1e-9 * det.bias().abs().max(1.0));
    }
}

#[test]
fn training_is_bit_reproducible() {
    let mut r = rng(2);
    let bg = Arc::new(model_with(&mut r, 32, 20, 0.0));
    let x = fv(random_vec(&mut r, 32));
    let s1 = LdaSolver::with_default_reg(bg.clone()).unwrap();
    let s2 = LdaSolver::with_default_reg(bg).unwrap();
    let a = s1.train(&x, 3).unwrap();
    assert_eq!(a, s1.train(&x, 3).unwrap());
    assert_eq!(a, s2.train(&x, 3).unwrap());
}

#[test]
fn raw_score_matches_naive_dot() {
    let mut r = rng(3);
    for _ in 0..20 {
        let d = r.random_range(1..300);
        let w = random_vec(&mut r, d);
        let b: f64 = r.random_range(-3.0..3.0);
        let x = random_vec(&mut r, d);
        let det = ExemplarDetector::from_parts(w.clone(), b, 1, fv(x.clone())).unwrap();
        let expect = naive_dot(&w, &x) + b;
        let got = raw_score(&det, &fv(x)).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }
}

#[test]
fn classify_breaks_ties_toward_background() {
    let det = ExemplarDetector::from_parts(vec![1.0, 0.0], -1.0, 1, fv(vec![2.0, 0.0])).unwrap();
    assert_eq!(classify(&det, &fv(vec![1.0, 5.0])).unwrap(), -1);
    assert_eq!(classify(&det, &fv(vec![1.5, 0.0])).unwrap(), 1);
    assert_eq!(classify(&det, &fv(vec![0.5, 0.0])).unwrap(), -1);
}

#[test]
fn ensemble_weights_and_sums_match_scalar_oracles() {
    let mut r = rng(4);
    let d = 10;
    let bg = Arc::new(model_with(&mut r, d, 14, 0.1));
    let solver = LdaSolver::with_default_reg(bg).unwrap();
    let x1 = random_vec(&mut r, d);
    let mut m = ObjectModel::init(&fv(x1.clone()), &solver, 50, 1).unwrap();
    let h1 = m.long_term().detector.clone();
    let s1 = naive_dot(h1.weights(), &x1) + h1.bias();
    for k in 2..=4 {
        let x: Vec<f64> = x1.iter().map(|v| v + r.random_range(-0.5..0.5)).collect();
        let expect = ((naive_dot(h1.weights(), &x) + h1.bias()) / s1).max(0.0);
        let got = m.exemplar_weight(&fv(x.clone())).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
        m.admit(&fv(x), k, &solver).unwrap();
    }
    for _ in 0..10 {
        let x = random_vec(&mut r, d);
        let mut expect = naive_dot(h1.weights(), &x) + h1.bias();
        for wd in m.short_term() {
            expect += wd.weight * (naive_dot(wd.detector.weights(), &x) + wd.detector.bias());
        }
        let x = fv(x);
        let tol = 1e-12 * expect.abs().max(1.0);
        assert!((m.explicit_score(&x).unwrap() - expect).abs() <= tol);
        assert!((m.ensemble_score(&x).unwrap() - expect).abs() <= 1e-10 * expect.abs().max(1.0));
    }
}

#[test]
fn batch_stats_matches_two_pass() {
    let mut r = rng(5);
    let xs = random_features(&mut r, 100, 8);
    let m = batch_stats(8, &xs).unwrap();
    let (mean, cov) = two_pass_cov(8, &xs);
    assert_eq!(m.count(), 100);
    assert!(rel_err(m.mean(), &mean) <= 1e-12);
    assert!(rel_err(m.cov(), &cov) <= 1e-12);
    for i in 0..8 {
        for j in 0..8 {
            assert_eq!(m.cov_at(i, j), m.cov_at(j, i));
        }
    }
}

#[test]
fn fold_merge_of_three_batches() {
    let mut r = rng(6);
    let xs = random_features(&mut r, 300, 8);
    let mut acc = BackgroundModel::empty(8);
    for chunk in xs.chunks(100) {
        acc = merge(&acc, &batch_stats(8, chunk).unwrap()).unwrap();
    }
    let whole = batch_stats(8, &xs).unwrap();
    assert_eq!(acc.count(), 300);
    assert!(rel_err(acc.cov(), whole.cov()) <= 1e-9);
    assert!(rel_err(acc.mean(), whole.mean()) <= 1e-9);
}

#[test]
fn empty_model_is_zero() {
    let m = BackgroundModel::empty(5);
    assert_eq!(m.count(), 0);
    assert!(m.mean().iter().chain(m.cov()).all(|&v| v == 0.0));
    assert!(merge(&m, &BackgroundModel::empty(4)).is_err());
}

#[test]
fn offline_build_is_seeded_and_round_trips() {
    let images = noise_images(9, 2, 100, 80);
    let a = build_offline_from_images(&images, 30, 4).unwrap();
    let b = build_offline_from_images(&images, 30, 4).unwrap();
    assert_eq!(a.count(), 30);
    assert_eq!(a.dim(), HOG_DIM);
    let bytes = background::encode_model(&a);
    assert_eq!(bytes, background::encode_model(&b));
    assert_eq!(&bytes[..8], b"ELDABG1\0");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bg.bin");
    background::save_model(&a, &path).unwrap();
    assert_eq!(background::load_model(&path).unwrap(), a);
    assert!(background::decode_model(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(background::decode_model(&bad).is_err());
}

#[test]
fn ramp_energy_sits_in_the_zero_bin() {
    let ramp = GrayImage::from_fn(64, 64, |x, _| x as f64 / 128.0).unwrap();
    let f = extract_hog(&ramp).unwrap();
    let oracle = hog_oracle(&ramp);
    for (a, b) in f.as_slice().iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-10);
    }
    for (i, v) in f.as_slice().iter().enumerate() {
        if i % 9 != 0 {
            assert_eq!(*v, 0.0, "component {i}");
        }
    }
    assert!(f.as_slice().iter().step_by(9).all(|&v| v > 0.0));
}

#[test]
fn hog_is_bounded_and_matches_oracle_on_textures() {
    let mut r = rng(7);
    for _ in 0..3 {
        let p = random_patch(&mut r);
        let f = extract_hog(&p).unwrap();
        assert!(f.as_slice().iter().all(|&v| (0.0..=0.2).contains(&v)));
        for (a, b) in f.as_slice().iter().zip(&hog_oracle(&p)) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn patch_outside_frame_replicates_edges() {
    let frame = GrayImage::from_fn(100, 80, |x, y| ((x * 3 + y * 5) % 17) as f64 / 17.0).unwrap();
    let b = BoundingBox::new(-32.0, 10.0, 64.0, 64.0).unwrap();
    let p = extract_patch(&frame, &b).unwrap();
    for v in 0..64 {
        for u in 0..32 {
            assert_eq!(p.get(u, v), frame.get(0, 10 + v));
        }
        for u in 32..64 {
            assert_eq!(p.get(u, v), frame.get(u - 32, 10 + v));
        }
    }

    // Fractional, scaled box against a scalar bilinear oracle.
    let b = BoundingBox::new(70.5, -12.25, 41.0, 37.0).unwrap();
    let p = extract_patch(&frame, &b).unwrap();
    let px = |x: i64, y: i64| frame.get(x.clamp(0, 99) as usize, y.clamp(0, 79) as usize);
    for v in 0..64 {
        for u in 0..64 {
            let sx = (70.5 + (u as f64 + 0.5) * 41.0 / 64.0 - 0.5).clamp(0.0, 99.0);
            let sy = (-12.25 + (v as f64 + 0.5) * 37.0 / 64.0 - 0.5).clamp(0.0, 79.0);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let expect = (1.0 - fy) * ((1.0 - fx) * px(x0, y0) + fx * px(x0 + 1, y0))
                + fy * ((1.0 - fx) * px(x0, y0 + 1) + fx * px(x0 + 1, y0 + 1));
            assert!((p.get(u, v) - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn cle_matches_naive_distance_mean() {
    let mut r = rng(8);
    let mut boxes = || {
        (0..50)
            .map(|_| {
                BoundingBox::new(
                    r.random_range(-50.0..50.0),
                    r.random_range(-50.0..50.0),
                    r.random_range(1.0..40.0),
                    r.random_range(1.0..40.0),
                )
                .unwrap()
            })
            .collect::<Vec<_>>()
    };
    let a = boxes();
    let b = boxes();
    let expect = a
        .iter()
        .zip(&b)
        .map(|(p, q)| {
            let dx = (p.x + p.w / 2.0) - (q.x + q.w / 2.0);
            let dy = (p.y + p.h / 2.0) - (q.y + q.h / 2.0);
            (dx * dx + dy * dy).sqrt()
        })
        .sum::<f64>()
        / 50.0;
    assert!((bench::cle(&a, &b).unwrap() - expect).abs() <= 1e-12 * expect);
}

#[test]
fn synthetic_sequences() {
    let spec = SyntheticSpec {
        count: 5,
        ..SyntheticSpec::default()
    };
    let (frames, gt) = make_synthetic_sequence(&spec).unwrap();
    assert_eq!(frames.len(), 5);
    assert!(gt.iter().all(|b| *b == gt[0]));
    let (again, _) = make_synthetic_sequence(&spec).unwrap();
    assert_eq!(frames, again);

    let clean = SyntheticSpec {
        noise: 0.0,
        count: 2,
        ..SyntheticSpec::default()
    };
    let (frames, gt) = make_synthetic_sequence(&clean).unwrap();
    let b = gt[0];
    let mut inside = Vec::new();
    for y in 0..240 {
        for x in 0..320 {
            let v = frames[0].get(x, y);
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            if xf > b.x && xf < b.x + b.w && yf > b.y && yf < b.y + b.h {
                inside.push(v);
            } else if xf < b.x - 1.0 || xf > b.x + b.w + 1.0 || yf < b.y - 1.0 || yf > b.y + b.h + 1.0 {
                assert_eq!(v, 0.5, "background pixel ({x}, {y})");
            }
        }
    }
    assert!(inside.iter().any(|&v| v != inside[0]));

    let exiting = SyntheticSpec {
        trajectory: Trajectory::Linear {
            start: (160.0, 120.0),
            velocity: (20.0, 0.0),
        },
        count: 20,
        ..SyntheticSpec::default()
    };
    assert!(make_synthetic_sequence(&exiting).is_err());
}
