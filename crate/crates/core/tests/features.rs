use d3_core::features::{
    d3_score, first_order, first_order_cosine, first_order_l2, second_order_diff, sigma_score, DistanceKind,
    EmbeddingSeries, FeatureOrder, ScalarSeries,
};
use d3_core::D3Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn l2_oracle(v: &[Vec<f64>], dt: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..v.len() - 1 {
        let mut s = 0.0;
        for i in 0..v[k].len() {
            let d = v[k + 1][i] - v[k][i];
            s += d * d;
        }
        out.push(s.sqrt() / dt);
    }
    out
}

fn cos_oracle(v: &[Vec<f64>], dt: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..v.len() - 1 {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for i in 0..v[k].len() {
            dot += v[k][i] * v[k + 1][i];
            na += v[k][i] * v[k][i];
            nb += v[k + 1][i] * v[k + 1][i];
        }
        out.push(dot / (na.sqrt() * nb.sqrt()) / dt);
    }
    out
}

fn diff_oracle(f: &[f64], dt: f64) -> Vec<f64> {
    (0..f.len() - 1).map(|i| (f[i + 1] - f[i]) / dt).collect()
}

fn std_oracle(f: &[f64]) -> f64 {
    let m = f.len() as f64;
    let mean = f.iter().sum::<f64>() / m;
    (f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

fn random_vectors(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<Vec<f64>> {
    (0..t).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn first(values: Vec<f64>, dt: f64) -> ScalarSeries {
    ScalarSeries {
        values,
        order: FeatureOrder::First,
        distance: DistanceKind::L2,
        dt,
    }
}

#[test]
fn l2_and_cosine_match_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v = random_vectors(&mut rng, 10, 8);
    let f0 = EmbeddingSeries::new(v.clone(), 0.125).unwrap();
    let l2 = first_order_l2(&f0).unwrap();
    assert_eq!(l2.len(), 9);
    for (a, b) in l2.values.iter().zip(l2_oracle(&v, 0.125)) {
        assert!(close(*a, b, 1e-12), "{a} {b}");
    }
    for (a, b) in first_order_cosine(&f0).unwrap().values.iter().zip(cos_oracle(&v, 0.125)) {
        assert!(close(*a, b, 1e-12), "{a} {b}");
    }
}

#[test]
fn second_difference_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f: Vec<f64> = (0..14).map(|_| rng.random_range(0.0..3.0)).collect();
    let f2 = second_order_diff(&first(f.clone(), 0.125)).unwrap();
    assert_eq!(f2.len(), 13);
    assert_eq!(f2.order, FeatureOrder::Second);
    for (a, b) in f2.values.iter().zip(diff_oracle(&f, 0.125)) {
        assert!(close(*a, b, 1e-12));
    }
}

#[test]
fn composition_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f0 = EmbeddingSeries::new(random_vectors(&mut rng, 16, 512), 1.0).unwrap();
    let direct = d3_score(&f0, DistanceKind::L2, FeatureOrder::Second).unwrap();
    let composed = sigma_score(&second_order_diff(&first_order_l2(&f0).unwrap()).unwrap()).unwrap();
    assert_eq!(direct.sigma.to_bits(), composed.sigma.to_bits());
    assert_eq!(direct.fake_score, -direct.sigma);
}

#[test]
fn first_order_mode_uses_f1_deviation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let v = random_vectors(&mut rng, 6, 4);
    let f0 = EmbeddingSeries::new(v.clone(), 1.0).unwrap();
    let s = d3_score(&f0, DistanceKind::L2, FeatureOrder::First).unwrap();
    assert!(close(s.sigma, std_oracle(&l2_oracle(&v, 1.0)), 1e-12));
    let short = EmbeddingSeries::new(v[..2].to_vec(), 1.0).unwrap();
    assert!(matches!(
        d3_score(&short, DistanceKind::L2, FeatureOrder::First),
        Err(D3Error::TooFewFrames { min: 3, .. })
    ));
    let three = EmbeddingSeries::new(v[..3].to_vec(), 1.0).unwrap();
    assert!(matches!(
        d3_score(&three, DistanceKind::L2, FeatureOrder::Second),
        Err(D3Error::TooFewFrames { got: 3, min: 4 })
    ));
}

#[test]
fn mismatched_dimensions_are_rejected() {
    let err = EmbeddingSeries::new(vec![vec![1.0, 2.0], vec![1.0]], 1.0).unwrap_err();
    assert!(matches!(err, D3Error::ShapeError(_)));
    assert!(EmbeddingSeries::new(vec![vec![f64::NAN]], 1.0).is_err());
}

fn series_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, f64)> {
    (4usize..20, 1usize..24).prop_flat_map(|(t, n)| {
        (
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), t),
            0.05f64..4.0,
        )
    })
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}

proptest! {
    #[test]
    fn length_contract((v, dt) in series_strategy()) {
        let t = v.len();
        let f0 = EmbeddingSeries::new(v, dt).unwrap();
        let f1 = first_order_l2(&f0).unwrap();
        prop_assert_eq!(f1.len(), t - 1);
        prop_assert_eq!(second_order_diff(&f1).unwrap().len(), t - 2);
    }

    #[test]
    fn second_difference_is_linear(
        f in prop::collection::vec(-5.0f64..5.0, 2..30),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = f.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
        let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = second_order_diff(&first(mix, 1.0)).unwrap().values;
        let df = second_order_diff(&first(f.clone(), 1.0)).unwrap().values;
        let dg = second_order_diff(&first(g, 1.0)).unwrap().values;
        for i in 0..lhs.len() {
            let rhs = a * df[i] + b * dg[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "{} vs {}", lhs[i], rhs);
        }
    }

    #[test]
    fn iterated_difference_is_three_point_form(
        s in prop::collection::vec(-5.0f64..5.0, 3..30),
        h in 0.1f64..3.0,
    ) {
        let d1: Vec<f64> = (0..s.len() - 1).map(|i| (s[i + 1] - s[i]) / h).collect();
        let d2 = second_order_diff(&first(d1, h)).unwrap().values;
        for (i, v) in d2.iter().enumerate() {
            let x = i + 1;
            let three = (s[x + 1] - 2.0 * s[x] + s[x - 1]) / (h * h);
            prop_assert!((v - three).abs() <= 1e-9 * (1.0 + three.abs()));
        }
    }

    #[test]
    fn l2_sigma_scales_with_embeddings((v, dt) in series_strategy(), c in 0.01f64..100.0) {
        let f0 = EmbeddingSeries::new(v.clone(), dt).unwrap();
        let scaled: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| c * x).collect()).collect();
        let fc = EmbeddingSeries::new(scaled, dt).unwrap();
        let s = d3_score(&f0, DistanceKind::L2, FeatureOrder::Second).unwrap().sigma;
        let sc = d3_score(&fc, DistanceKind::L2, FeatureOrder::Second).unwrap().sigma;
        prop_assert!((sc - c * s).abs() <= 1e-9 * (c * s).max(1e-12));
    }

    #[test]
    fn sigma_scales_with_inverse_dt_squared((v, _) in series_strategy(), d in 0.05f64..8.0) {
        let s1 = d3_score(&EmbeddingSeries::new(v.clone(), 1.0).unwrap(), DistanceKind::L2, FeatureOrder::Second).unwrap().sigma;
        let sd = d3_score(&EmbeddingSeries::new(v, d).unwrap(), DistanceKind::L2, FeatureOrder::Second).unwrap().sigma;
        prop_assert!((sd - s1 / (d * d)).abs() <= 1e-9 * (s1 / (d * d)).max(1e-12));
    }

    #[test]
    fn batch_ranking_survives_scale_and_dt(
        batch in prop::collection::vec(prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 6), 8), 2..8),
        c in 0.1f64..10.0,
        d in 0.1f64..4.0,
    ) {
        let sig = |scale: f64, dt: f64| -> Vec<f64> {
            batch.iter().map(|v| {
                let v: Vec<Vec<f64>> = v.iter().map(|r| r.iter().map(|x| scale * x).collect()).collect();
                d3_score(&EmbeddingSeries::new(v, dt).unwrap(), DistanceKind::L2, FeatureOrder::Second).unwrap().sigma
            }).collect()
        };
        let base = sig(1.0, 1.0);
        // Rankings are compared only when no two sigmas are nearly tied.
        let mut sorted = base.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[1] - w[0] > 1e-6 * w[1].abs().max(1e-9)));
        prop_assert_eq!(argsort(&base), argsort(&sig(c, 1.0)));
        prop_assert_eq!(argsort(&base), argsort(&sig(1.0, d)));
    }

    #[test]
    fn cosine_ignores_per_frame_scale(
        (v, dt) in series_strategy(),
        scales in prop::collection::vec(0.01f64..100.0, 20),
    ) {
        prop_assume!(v.iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let scaled: Vec<Vec<f64>> = v.iter().zip(&scales).map(|(r, c)| r.iter().map(|x| c * x).collect()).collect();
        let a = first_order(&EmbeddingSeries::new(v, dt).unwrap(), DistanceKind::Cosine).unwrap();
        let b = first_order(&EmbeddingSeries::new(scaled, dt).unwrap(), DistanceKind::Cosine).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn sigma_is_nonnegative_and_zero_only_when_constant(f2 in prop::collection::vec(-3.0f64..3.0, 2..20)) {
        let s = sigma_score(&ScalarSeries { values: f2.clone(), order: FeatureOrder::Second, distance: DistanceKind::L2, dt: 1.0 }).unwrap();
        prop_assert!(s.sigma >= 0.0);
        let constant = f2.iter().all(|x| *x == f2[0]);
        prop_assert_eq!(s.sigma == 0.0, constant);
        prop_assert!(close(s.sigma, std_oracle(&f2), 1e-9) || constant);
    }
}
