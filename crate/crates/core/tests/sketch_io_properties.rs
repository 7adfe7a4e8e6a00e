use bezsketch_core::sketch_io::{
    augment_control_points, denormalize_stroke, discrete_curvature, normalize_stroke,
    parse_stroke3, segment_strokes, split_stroke, write_stroke3, EncodedSketch, EncodedStroke,
    PenState, RawSketch, Stroke,
};
use bezsketch_core::Point;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn raw_sketch() -> impl Strategy<Value = RawSketch> {
    prop::collection::vec((-50i32..50, -50i32..50, prop::bool::weighted(0.2)), 1..120).prop_map(
        |rows| {
            let points = rows
                .iter()
                .map(|&(x, y, _)| Point::new(x as f64, y as f64))
                .collect();
            let pen = rows
                .iter()
                .map(|&(_, _, up)| if up { PenState::Up } else { PenState::Down })
                .collect();
            RawSketch::new(points, pen, None).unwrap()
        },
    )
}

fn stroke() -> impl Strategy<Value = Stroke> {
    prop::collection::vec((-200.0f64..200.0, -200.0f64..200.0), 2..400)
        .prop_map(|v| Stroke::new(v.into_iter().map(|(x, y)| Point::new(x, y)).collect()).unwrap())
}

proptest! {
    #[test]
    fn segmentation_conserves_points(sketch in raw_sketch()) {
        let seg = segment_strokes(&sketch);
        prop_assert_eq!(seg.sequence.total_points() + seg.dropped, sketch.len());
        prop_assert!(seg.sequence.strokes.iter().all(|s| s.len() >= 2));
    }

    #[test]
    fn stroke3_round_trips_integer_data(sketch in raw_sketch()) {
        let rows = write_stroke3(&sketch);
        let back = parse_stroke3(&rows).unwrap();
        prop_assert_eq!(back.points(), sketch.points());
        prop_assert_eq!(back.pen(), sketch.pen());
        prop_assert_eq!(write_stroke3(&back), rows);
    }

    #[test]
    fn normalization_round_trips(s in stroke()) {
        let n = normalize_stroke(&s).unwrap();
        prop_assert_eq!(n.points[0], Point::ORIGIN);
        let back = denormalize_stroke(&n);
        for (a, b) in back.points.iter().zip(&s.points) {
            prop_assert!(a.dist(*b) < 1e-9);
        }
    }

    #[test]
    fn split_pieces_cover_the_stroke(s in stroke(), max_len in 2usize..150, threshold in 0.5f64..3.0) {
        let pieces = split_stroke(&s, max_len, threshold);
        let mut joined = pieces[0].points.clone();
        for w in pieces.windows(2) {
            prop_assert_eq!(w[0].points.last(), w[1].points.first());
        }
        for p in &pieces[1..] {
            joined.extend_from_slice(&p.points[1..]);
        }
        prop_assert_eq!(&joined, &s.points);
        for p in &pieces {
            prop_assert!(p.len() <= max_len && p.len() >= 2);
            let corners = (1..p.len() - 1).filter(|&i| discrete_curvature(p, i).unwrap() > threshold).count();
            prop_assert!(corners <= 1, "piece with {} corners", corners);
        }
    }
}

/// Brute-force scan for corners in a "Z", then check the split lands on one.
#[test]
fn z_stroke_splits_at_a_scanned_corner() {
    let mut pts = Vec::new();
    for i in 0..20 {
        pts.push(Point::new(i as f64, 0.0));
    }
    for i in 1..20 {
        pts.push(Point::new(19.0 - i as f64, i as f64 * 0.9));
    }
    for i in 1..20 {
        pts.push(Point::new(i as f64, 17.1));
    }
    let stroke = Stroke::new(pts.clone()).unwrap();
    let corners: Vec<Point> = (1..pts.len() - 1)
        .filter(|&i| {
            let (a, b, c) = (pts[i - 1], pts[i], pts[i + 1]);
            let u = b - a;
            let v = c - b;
            let cos = u.dot(v) / (u.norm() * v.norm());
            cos.acos() > 2.0 * std::f64::consts::PI / 3.0
        })
        .map(|i| pts[i])
        .collect();
    assert_eq!(corners.len(), 2);
    let pieces = split_stroke(&stroke, 128, 2.0 * std::f64::consts::PI / 3.0);
    assert!(pieces.len() >= 2);
    assert!(corners.contains(&pieces[1].points[0]));
}

#[test]
fn augmentation_noise_has_unit_variance() {
    let strokes = vec![EncodedStroke {
        degree: 9,
        offset: Point::new(3.0, 4.0),
        points: vec![Point::ORIGIN; 10],
        loss: None,
    }];
    let sketch = EncodedSketch {
        id: 0,
        category: None,
        raw_len: 0,
        strokes,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut xs = Vec::new();
    for _ in 0..1000 {
        let a = augment_control_points(&sketch, 1.0, &mut rng);
        let s = &a.strokes[0];
        // Absolute coordinates of every control point, minus the clean position.
        for p in &s.points {
            let abs = *p + s.offset - Point::new(3.0, 4.0);
            xs.push(abs.x);
            xs.push(abs.y);
        }
    }
    assert_eq!(xs.len(), 20_000);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (xs.len() - 1) as f64;
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
}
