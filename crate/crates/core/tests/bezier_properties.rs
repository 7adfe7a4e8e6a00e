use bezsketch_core::bezier::{binomial, split_points};
use bezsketch_core::svg::{stroke_segments, HighDegree, PlacedStroke};
use bezsketch_core::{
    bernstein, curve_noise_cov, decasteljau, decode_stroke, eval_curve, perturb, BBox,
    ControlPolygon, DiagonalNoise, Point,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn polygon_strategy(max_degree: usize) -> impl Strategy<Value = ControlPolygon> {
    prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..=max_degree + 1).prop_map(|v| {
        ControlPolygon::new(v.into_iter().map(|(x, y)| Point::new(x, y)).collect()).unwrap()
    })
}

/// Bernstein form written out from factorials, independent of the library's table.
fn naive_eval(poly: &ControlPolygon, t: f64) -> Point {
    let n = poly.degree();
    let fact = |k: usize| (1..=k).fold(1.0, |a, b| a * b as f64);
    let mut acc = Point::ORIGIN;
    for (i, &p) in poly.points().iter().enumerate() {
        let w =
            fact(n) / (fact(i) * fact(n - i)) * t.powi(i as i32) * (1.0 - t).powi((n - i) as i32);
        acc += p * w;
    }
    acc
}

fn scale_of(poly: &ControlPolygon) -> f64 {
    poly.points().iter().map(|p| p.norm()).fold(1.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_of_unity(n in 1usize..=12, t in 0.0f64..=1.0) {
        let sum: f64 = (0..=n).map(|i| bernstein(i, n, t).unwrap()).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn endpoints_interpolate(poly in polygon_strategy(12)) {
        let s = scale_of(&poly);
        prop_assert!(eval_curve(&poly, 0.0).unwrap().dist(poly.first()) <= 1e-12 * s);
        prop_assert!(eval_curve(&poly, 1.0).unwrap().dist(poly.last()) <= 1e-12 * s);
    }

    #[test]
    fn decasteljau_matches_bernstein(poly in polygon_strategy(12), t in 0.0f64..=1.0) {
        let (p, _, _) = decasteljau(&poly, t).unwrap();
        let q = eval_curve(&poly, t).unwrap();
        prop_assert!(p.dist(q) <= 1e-12 * scale_of(&poly));
        prop_assert!(q.dist(naive_eval(&poly, t)) <= 1e-11 * scale_of(&poly));
    }

    #[test]
    fn subdivision_halves_reproduce_curve(poly in polygon_strategy(9), split in 0.05f64..0.95, s in 0.0f64..=1.0) {
        let (_, left, right) = decasteljau(&poly, split).unwrap();
        let t = s * split;
        let a = eval_curve(&left, s).unwrap();
        prop_assert!(a.dist(eval_curve(&poly, t).unwrap()) < 1e-9 * scale_of(&poly));
        let t = split + s * (1.0 - split);
        let b = eval_curve(&right, s).unwrap();
        prop_assert!(b.dist(eval_curve(&poly, t).unwrap()) < 1e-9 * scale_of(&poly));
    }

    #[test]
    fn affine_invariance(
        poly in polygon_strategy(12),
        t in 0.0f64..=1.0,
        m in prop::array::uniform4(-3.0f64..3.0),
        shift in prop::array::uniform2(-50.0f64..50.0),
    ) {
        let f = |p: Point| Point::new(m[0] * p.x + m[1] * p.y + shift[0], m[2] * p.x + m[3] * p.y + shift[1]);
        let mapped = poly.map(f).unwrap();
        let lhs = eval_curve(&mapped, t).unwrap();
        let rhs = f(eval_curve(&poly, t).unwrap());
        prop_assert!(lhs.dist(rhs) < 1e-10 * scale_of(&poly) * 10.0);
    }

    #[test]
    fn elevation_is_exact(poly in polygon_strategy(8), t in 0.0f64..=1.0) {
        let e = poly.elevate();
        prop_assert!(eval_curve(&e, t).unwrap().dist(eval_curve(&poly, t).unwrap()) < 1e-10 * scale_of(&poly));
    }
}

#[test]
fn binomial_table_matches_pascal_recurrence() {
    let mut row = vec![1.0f64];
    for n in 0..=20 {
        for (i, &v) in row.iter().enumerate() {
            assert_eq!(binomial(n, i), v, "C({n},{i})");
        }
        let mut next = vec![1.0; n + 2];
        for i in 1..=n {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
}

#[test]
fn split_points_endpoints_are_shared() {
    let pts: Vec<Point> = (0..6)
        .map(|i| Point::new(i as f64, (i * i) as f64))
        .collect();
    let (mid, left, right) = split_points(&pts, 0.3);
    assert_eq!(left.last(), Some(&mid));
    assert_eq!(right.first(), Some(&mid));
}

/// Sample mean and variance of a curve point under control-point noise agree with
/// the propagated covariance to within three standard errors.
#[test]
fn noise_propagates_through_bernstein_weights() {
    const SAMPLES: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for degree in [3usize, 9] {
        let poly = ControlPolygon::new(
            (0..=degree)
                .map(|i| Point::new(i as f64, ((i * 7) % 5) as f64))
                .collect(),
        )
        .unwrap();
        let vars: Vec<[f64; 2]> = (0..=degree)
            .map(|i| [0.5 + 0.3 * i as f64, 2.0 - 0.1 * i as f64])
            .collect();
        let noise = DiagonalNoise::new(vars).unwrap();
        let ts: Vec<f64> = (0..10).map(|k| 0.05 + 0.1 * k as f64).collect();
        let mut sum = vec![[0.0f64; 2]; ts.len()];
        let mut sum_sq = vec![[0.0f64; 2]; ts.len()];
        for _ in 0..SAMPLES {
            let noisy = perturb(&poly, &noise, &mut rng).unwrap();
            for (k, &t) in ts.iter().enumerate() {
                let p = eval_curve(&noisy, t).unwrap() - eval_curve(&poly, t).unwrap();
                sum[k][0] += p.x;
                sum[k][1] += p.y;
                sum_sq[k][0] += p.x * p.x;
                sum_sq[k][1] += p.y * p.y;
            }
        }
        for (k, &t) in ts.iter().enumerate() {
            let cov = curve_noise_cov(&noise, degree, t).unwrap();
            for c in 0..2 {
                let mean = sum[k][c] / SAMPLES as f64;
                let var = sum_sq[k][c] / SAMPLES as f64 - mean * mean;
                let mean_se = (cov[c] / SAMPLES as f64).sqrt();
                // Standard error of a Gaussian sample variance.
                let var_se = cov[c] * (2.0 / (SAMPLES as f64 - 1.0)).sqrt();
                assert!(
                    mean.abs() < 3.0 * mean_se,
                    "degree {degree} t {t} comp {c}: mean {mean}"
                );
                assert!(
                    (var - cov[c]).abs() < 3.0 * var_se,
                    "degree {degree} t {t} comp {c}: var {var} vs {}",
                    cov[c]
                );
            }
        }
    }
}

#[test]
fn high_degree_svg_stays_near_the_curve() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let poly = ControlPolygon::new(
            (0..10)
                .map(|_| Point::new(rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0)))
                .collect(),
        )
        .unwrap();
        let placed = PlacedStroke::new(Point::new(3.0, -4.0), poly.clone());
        let truth = decode_stroke(&placed.absolute(), 256).unwrap();
        let diag = BBox::of(&truth).unwrap().diagonal();
        let segments = stroke_segments(&placed, HighDegree::default()).unwrap();
        assert!(segments.len() > 1);
        let rendered: Vec<Point> = segments.iter().flat_map(|s| s.sample(32)).collect();
        let dist_to = |p: Point, set: &[Point]| {
            set.windows(2)
                .map(|w| {
                    let ab = w[1] - w[0];
                    let s = if ab.norm_sq() > 0.0 {
                        ((p - w[0]).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    p.dist(w[0] + ab * s)
                })
                .fold(f64::INFINITY, f64::min)
        };
        let forward = rendered
            .iter()
            .map(|&p| dist_to(p, &truth))
            .fold(0.0, f64::max);
        let backward = truth
            .iter()
            .map(|&p| dist_to(p, &rendered))
            .fold(0.0, f64::max);
        assert!(
            forward.max(backward) < 0.005 * diag,
            "deviation {} of diagonal {diag}",
            forward.max(backward)
        );
    }
}
