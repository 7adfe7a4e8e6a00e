//! Synthetic strokes drawn from random Bézier curves, and a generator for small
//! QuickDraw-style fixture sketches.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::bezier::{eval_unchecked, ControlPolygon};
use crate::point::{BBox, Point};
use crate::sketch_io::{PenState, RawSketch};

/// A random, sketch-like control polygon: a walk with bounded turns, starting at
/// the origin and scaled so its bounding box has unit longer side.
pub fn random_polygon(n: usize, rng: &mut impl Rng) -> ControlPolygon {
    let mut heading = rng.gen_range(0.0..2.0 * PI);
    let mut pts = vec![Point::ORIGIN];
    for _ in 0..n {
        heading += rng.gen_range(-PI / 3.0..PI / 3.0);
        let len = rng.gen_range(0.5..1.5);
        let last = pts[pts.len() - 1];
        pts.push(last + Point::new(heading.cos(), heading.sin()) * len);
    }
    let side = BBox::of(&pts)
        .map(|b| b.max_side())
        .unwrap_or(1.0)
        .max(1e-12);
    ControlPolygon::new(pts.into_iter().map(|p| p * (1.0 / side)).collect())
        .expect("finite by construction")
}

/// Parameters for `count` points spread roughly evenly in arc length, with jitter.
pub fn arc_length_params(
    poly: &ControlPolygon,
    count: usize,
    jitter: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    const TABLE: usize = 512;
    let mut cumulative = Vec::with_capacity(TABLE + 1);
    let mut prev = eval_unchecked(poly.points(), 0.0);
    let mut total = 0.0;
    cumulative.push(0.0);
    for k in 1..=TABLE {
        let p = eval_unchecked(poly.points(), k as f64 / TABLE as f64);
        total += p.dist(prev);
        cumulative.push(total);
        prev = p;
    }
    let spacing = 1.0 / (count - 1) as f64;
    let mut ts: Vec<f64> = (0..count)
        .map(|i| {
            if i == 0 || i + 1 == count {
                return i as f64 * spacing;
            }
            let s =
                ((i as f64 + rng.gen_range(-jitter..=jitter)) * spacing).clamp(0.0, 1.0) * total;
            let k = cumulative.partition_point(|&c| c < s).clamp(1, TABLE);
            let (c0, c1) = (cumulative[k - 1], cumulative[k]);
            let frac = if c1 > c0 { (s - c0) / (c1 - c0) } else { 0.0 };
            (k as f64 - 1.0 + frac) / TABLE as f64
        })
        .collect();
    ts.sort_by(f64::total_cmp);
    ts[0] = 0.0;
    ts[count - 1] = 1.0;
    ts
}

/// A stroke sampled from a known curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyntheticStroke {
    pub poly: ControlPolygon,
    pub params: Vec<f64>,
    /// Origin-normalized samples, with noise if requested.
    pub points: Vec<Point>,
}

/// Samples `count` points from a random degree-`n` curve and adds isotropic
/// Gaussian noise of standard deviation `sigma`, then re-anchors at the origin.
pub fn synthetic_stroke(n: usize, count: usize, sigma: f64, rng: &mut impl Rng) -> SyntheticStroke {
    let poly = random_polygon(n, rng);
    let params = arc_length_params(&poly, count, 0.3, rng);
    let mut points: Vec<Point> = params
        .iter()
        .map(|&t| eval_unchecked(poly.points(), t))
        .collect();
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("sigma is finite");
        for p in points.iter_mut() {
            *p += Point::new(noise.sample(rng), noise.sample(rng));
        }
        let first = points[0];
        points.iter_mut().for_each(|p| *p = *p - first);
    }
    SyntheticStroke {
        poly,
        params,
        points,
    }
}

/// Categories the fixture generator knows how to draw.
pub const FIXTURE_CATEGORIES: [&str; 2] = ["face", "snail"];

fn push_stroke(points: &mut Vec<Point>, pen: &mut Vec<PenState>, stroke: Vec<Point>) {
    let mut cleaned: Vec<Point> = Vec::with_capacity(stroke.len());
    for p in stroke {
        let q = Point::new(p.x.round().clamp(0.0, 255.0), p.y.round().clamp(0.0, 255.0));
        if cleaned.last() != Some(&q) {
            cleaned.push(q);
        }
    }
    if cleaned.len() < 2 {
        return;
    }
    let n = cleaned.len();
    for (k, p) in cleaned.into_iter().enumerate() {
        points.push(p);
        pen.push(if k + 1 == n {
            PenState::Up
        } else {
            PenState::Down
        });
    }
}

fn wobble(rng: &mut impl Rng, amount: f64) -> f64 {
    rng.gen_range(-amount..=amount)
}

fn arc(
    center: Point,
    rx: f64,
    ry: f64,
    from: f64,
    to: f64,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Point> {
    (0..count)
        .map(|k| {
            let a = from + (to - from) * k as f64 / (count - 1) as f64;
            Point::new(
                center.x + rx * a.cos() + wobble(rng, 1.0),
                center.y + ry * a.sin() + wobble(rng, 1.0),
            )
        })
        .collect()
}

fn face(rng: &mut impl Rng) -> (Vec<Point>, Vec<PenState>) {
    let (mut pts, mut pen) = (Vec::new(), Vec::new());
    let c = Point::new(128.0 + wobble(rng, 12.0), 128.0 + wobble(rng, 12.0));
    let r = rng.gen_range(80.0..110.0);
    let start = rng.gen_range(-PI..PI);
    let n = rng.gen_range(28..48);
    push_stroke(
        &mut pts,
        &mut pen,
        arc(
            c,
            r,
            r * rng.gen_range(0.85..1.15),
            start,
            start + 2.0 * PI,
            n,
            rng,
        ),
    );
    for side in [-1.0, 1.0] {
        let e = Point::new(c.x + side * r * 0.4, c.y - r * 0.3);
        let er = rng.gen_range(6.0..14.0);
        push_stroke(
            &mut pts,
            &mut pen,
            arc(e, er, er, 0.0, 2.0 * PI, rng.gen_range(10..16), rng),
        );
    }
    let nose_top = Point::new(c.x + wobble(rng, 5.0), c.y - r * 0.1);
    let nose: Vec<Point> = (0..rng.gen_range(6..11))
        .map(|k| Point::new(nose_top.x + wobble(rng, 1.0), nose_top.y + 3.0 * k as f64))
        .collect();
    push_stroke(&mut pts, &mut pen, nose);
    let m = Point::new(c.x, c.y + r * 0.35);
    let smile = rng.gen_range(0.3..0.9);
    push_stroke(
        &mut pts,
        &mut pen,
        arc(
            m,
            r * 0.45,
            r * 0.25 * smile,
            0.15 * PI,
            0.85 * PI,
            rng.gen_range(14..24),
            rng,
        ),
    );
    (pts, pen)
}

fn snail(rng: &mut impl Rng) -> (Vec<Point>, Vec<PenState>) {
    let (mut pts, mut pen) = (Vec::new(), Vec::new());
    let c = Point::new(120.0 + wobble(rng, 10.0), 110.0 + wobble(rng, 10.0));
    let turns = rng.gen_range(2.0..3.0);
    let outer = rng.gen_range(55.0..75.0);
    let count = rng.gen_range(45..70);
    let spiral: Vec<Point> = (0..count)
        .map(|k| {
            let s = k as f64 / (count - 1) as f64;
            let a = s * turns * 2.0 * PI;
            let rad = 4.0 + s * outer;
            Point::new(
                c.x + rad * a.cos() + wobble(rng, 1.0),
                c.y + rad * a.sin() + wobble(rng, 1.0),
            )
        })
        .collect();
    push_stroke(&mut pts, &mut pen, spiral);
    let base_y = c.y + outer + rng.gen_range(2.0..10.0);
    let x0 = c.x - outer - rng.gen_range(10.0..25.0);
    let x1 = c.x + outer + rng.gen_range(25.0..45.0);
    let body_n = rng.gen_range(20..34);
    let body: Vec<Point> = (0..body_n)
        .map(|k| {
            let s = k as f64 / (body_n - 1) as f64;
            let bump = if s > 0.8 {
                -30.0 * ((s - 0.8) / 0.2 * PI).sin()
            } else {
                0.0
            };
            Point::new(
                x0 + (x1 - x0) * s + wobble(rng, 1.0),
                base_y + bump + wobble(rng, 1.5),
            )
        })
        .collect();
    push_stroke(&mut pts, &mut pen, body);
    for lean in [0.2, 0.5] {
        let root = Point::new(x1 - 8.0, base_y - 20.0);
        let len = rng.gen_range(25.0..40.0);
        let a = -PI / 2.0 + lean + wobble(rng, 0.15);
        let antenna: Vec<Point> = (0..rng.gen_range(5..9))
            .map(|k| root + Point::new(a.cos(), a.sin()) * (len * k as f64 / 6.0))
            .collect();
        push_stroke(&mut pts, &mut pen, antenna);
    }
    (pts, pen)
}

/// One hand-drawn-looking sketch of `category` on a 0..255 integer grid.
pub fn fixture_sketch(category: &str, rng: &mut impl Rng) -> Option<RawSketch> {
    let (pts, pen) = match category {
        "face" => face(rng),
        "snail" => snail(rng),
        _ => return None,
    };
    RawSketch::new(pts, pen, Some(category.to_string())).ok()
}

/// Simplified-QuickDraw NDJSON line for a sketch: `{"word":..,"drawing":[[xs,ys],..]}`.
pub fn quickdraw_line(sketch: &RawSketch) -> String {
    let mut drawing: Vec<[Vec<i64>; 2]> = Vec::new();
    let mut cur: [Vec<i64>; 2] = [Vec::new(), Vec::new()];
    for (p, s) in sketch.points().iter().zip(sketch.pen()) {
        cur[0].push(p.x.round() as i64);
        cur[1].push(p.y.round() as i64);
        if *s == PenState::Up {
            drawing.push(std::mem::take(&mut cur));
        }
    }
    if !cur[0].is_empty() {
        drawing.push(cur);
    }
    serde_json::json!({ "word": sketch.category, "drawing": drawing }).to_string()
}
