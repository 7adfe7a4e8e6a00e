//! Bézier curve evaluation, subdivision, decoding and control-point noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::point::Point;

/// Degrees up to this value use the precomputed binomial table.
pub const MAX_TABLE_DEGREE: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BezierError {
    #[error("basis index {index} outside 0..={degree}")]
    IndexOutOfRange { index: usize, degree: usize },
    #[error("curve parameter {0} outside [0, 1]")]
    ParamOutOfRange(f64),
    #[error("a control polygon needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("resolution must be at least 2, got {0}")]
    Resolution(usize),
    #[error("noise has {got} entries for {expected} control points")]
    NoiseDimension { expected: usize, got: usize },
    #[error("negative variance")]
    NegativeVariance,
    #[error("invalid parameter vector: {0}")]
    InvalidParams(&'static str),
    #[error("nothing to render")]
    Empty,
}

const fn binomial_table() -> [[f64; MAX_TABLE_DEGREE + 1]; MAX_TABLE_DEGREE + 1] {
    let mut table = [[0.0; MAX_TABLE_DEGREE + 1]; MAX_TABLE_DEGREE + 1];
    let mut n = 0;
    while n <= MAX_TABLE_DEGREE {
        table[n][0] = 1.0;
        let mut i = 1;
        while i <= n {
            table[n][i] = table[n - 1][i - 1] + if i < n { table[n - 1][i] } else { 0.0 };
            i += 1;
        }
        n += 1;
    }
    table
}

static BINOMIALS: [[f64; MAX_TABLE_DEGREE + 1]; MAX_TABLE_DEGREE + 1] = binomial_table();

pub fn binomial(n: usize, i: usize) -> f64 {
    if i > n {
        return 0.0;
    }
    if n <= MAX_TABLE_DEGREE {
        return BINOMIALS[n][i];
    }
    let i = i.min(n - i);
    (0..i).fold(1.0, |acc, k| acc * (n - k) as f64 / (k + 1) as f64)
}

fn check_t(t: f64) -> Result<(), BezierError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(BezierError::ParamOutOfRange(t))
    }
}

/// `C(n,i)·tⁱ·(1−t)ⁿ⁻ⁱ`.
pub fn bernstein(i: usize, n: usize, t: f64) -> Result<f64, BezierError> {
    if i > n {
        return Err(BezierError::IndexOutOfRange {
            index: i,
            degree: n,
        });
    }
    check_t(t)?;
    Ok(bernstein_unchecked(i, n, t))
}

/// All `n + 1` basis values at `t`, without range checks.
pub fn bernstein_all(n: usize, t: f64) -> Vec<f64> {
    (0..=n).map(|i| bernstein_unchecked(i, n, t)).collect()
}

#[inline]
pub(crate) fn bernstein_unchecked(i: usize, n: usize, t: f64) -> f64 {
    binomial(n, i) * t.powi(i as i32) * (1.0 - t).powi((n - i) as i32)
}

/// Degree-`n` Bézier control points `P_0..P_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct ControlPolygon {
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for ControlPolygon {
    type Error = BezierError;
    fn try_from(points: Vec<Point>) -> Result<Self, Self::Error> {
        ControlPolygon::new(points)
    }
}

impl From<ControlPolygon> for Vec<Point> {
    fn from(p: ControlPolygon) -> Self {
        p.points
    }
}

impl ControlPolygon {
    pub fn new(points: Vec<Point>) -> Result<Self, BezierError> {
        if points.len() < 2 {
            return Err(BezierError::TooFewPoints(points.len()));
        }
        if !points.iter().all(|p| p.is_finite()) {
            return Err(BezierError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn degree(&self) -> usize {
        self.points.len() - 1
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn first(&self) -> Point {
        self.points[0]
    }

    pub fn last(&self) -> Point {
        self.points[self.points.len() - 1]
    }

    /// Flattened `[x_0, y_0, …, x_n, y_n]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self, BezierError> {
        Self::new(
            values
                .chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        )
    }

    pub fn translated(&self, by: Point) -> ControlPolygon {
        ControlPolygon {
            points: self.points.iter().map(|&p| p + by).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<ControlPolygon, BezierError> {
        ControlPolygon::new(self.points.iter().map(|&p| f(p)).collect())
    }

    /// The same curve expressed with one more control point.
    pub fn elevate(&self) -> ControlPolygon {
        let n = self.degree();
        let p = &self.points;
        let mut out = Vec::with_capacity(n + 2);
        out.push(p[0]);
        for i in 1..=n {
            let a = i as f64 / (n + 1) as f64;
            out.push(p[i - 1] * a + p[i] * (1.0 - a));
        }
        out.push(p[n]);
        ControlPolygon { points: out }
    }

    /// Derivative curve (degree `n − 1`) as raw points; a degree-1 input yields one point.
    pub fn derivative_points(&self) -> Vec<Point> {
        let n = self.degree() as f64;
        self.points.windows(2).map(|w| (w[1] - w[0]) * n).collect()
    }
}

/// Curve parameters `t_i`: nondecreasing, starting at 0 and ending at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = BezierError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        ParamVector::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.values
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, BezierError> {
        if values.len() < 2 {
            return Err(BezierError::InvalidParams("needs at least two values"));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 1.0 {
            return Err(BezierError::InvalidParams("must start at 0 and end at 1"));
        }
        if values.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(BezierError::InvalidParams("must be nondecreasing"));
        }
        Ok(Self { values })
    }

    pub fn uniform(count: usize) -> Result<Self, BezierError> {
        if count < 2 {
            return Err(BezierError::InvalidParams("needs at least two values"));
        }
        let last = (count - 1) as f64;
        let mut values: Vec<f64> = (0..count).map(|i| i as f64 / last).collect();
        values[count - 1] = 1.0;
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-control-point diagonal covariance `diag(σ²_x, σ²_y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalNoise {
    variances: Vec<[f64; 2]>,
}

impl DiagonalNoise {
    pub fn new(variances: Vec<[f64; 2]>) -> Result<Self, BezierError> {
        if variances.iter().flatten().any(|v| !(*v >= 0.0)) {
            return Err(BezierError::NegativeVariance);
        }
        Ok(Self { variances })
    }

    /// The same isotropic variance on each of `count` control points.
    pub fn isotropic(count: usize, variance: f64) -> Result<Self, BezierError> {
        Self::new(vec![[variance, variance]; count])
    }

    pub fn variances(&self) -> &[[f64; 2]] {
        &self.variances
    }
}

/// `Σ_i B_{i,n}(t)·P_i`.
pub fn eval_curve(poly: &ControlPolygon, t: f64) -> Result<Point, BezierError> {
    check_t(t)?;
    Ok(eval_unchecked(poly.points(), t))
}

/// Bernstein-form evaluation of raw points; `t` is not range-checked.
pub fn eval_unchecked(points: &[Point], t: f64) -> Point {
    let n = points.len() - 1;
    let mut acc = Point::ORIGIN;
    for (i, &p) in points.iter().enumerate() {
        acc += p * bernstein_unchecked(i, n, t);
    }
    acc
}

/// Evaluates by repeated interpolation and returns the two halves of the curve split at `t`.
pub fn decasteljau(
    poly: &ControlPolygon,
    t: f64,
) -> Result<(Point, ControlPolygon, ControlPolygon), BezierError> {
    check_t(t)?;
    let (point, left, right) = split_points(poly.points(), t);
    Ok((
        point,
        ControlPolygon { points: left },
        ControlPolygon { points: right },
    ))
}

/// De Casteljau on raw points: the curve point at `t` and the two halves.
pub fn split_points(points: &[Point], t: f64) -> (Point, Vec<Point>, Vec<Point>) {
    let n = points.len();
    let mut work = points.to_vec();
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    left.push(work[0]);
    right.push(work[n - 1]);
    for level in 1..n {
        for i in 0..n - level {
            work[i] = work[i].lerp(work[i + 1], t);
        }
        left.push(work[0]);
        right.push(work[n - 1 - level]);
    }
    right.reverse();
    (work[0], left, right)
}

/// Samples the curve at `resolution` uniformly spaced parameters. Endpoints are exact.
pub fn decode_stroke(poly: &ControlPolygon, resolution: usize) -> Result<Vec<Point>, BezierError> {
    if resolution < 2 {
        return Err(BezierError::Resolution(resolution));
    }
    let last = (resolution - 1) as f64;
    let mut out: Vec<Point> = (0..resolution)
        .map(|k| eval_unchecked(poly.points(), k as f64 / last))
        .collect();
    out[0] = poly.first();
    out[resolution - 1] = poly.last();
    Ok(out)
}

/// Displaces each control point by an independent draw from its diagonal Gaussian.
pub fn perturb(
    poly: &ControlPolygon,
    noise: &DiagonalNoise,
    rng: &mut impl Rng,
) -> Result<ControlPolygon, BezierError> {
    if noise.variances.len() != poly.points.len() {
        return Err(BezierError::NoiseDimension {
            expected: poly.points.len(),
            got: noise.variances.len(),
        });
    }
    let points = poly
        .points
        .iter()
        .zip(&noise.variances)
        .map(|(p, [vx, vy])| {
            let ex: f64 = StandardNormal.sample(rng);
            let ey: f64 = StandardNormal.sample(rng);
            Point::new(p.x + vx.sqrt() * ex, p.y + vy.sqrt() * ey)
        })
        .collect();
    ControlPolygon::new(points)
}

/// Diagonal covariance `Σ_i B²_{i,n}(t)·Σ_i` of a curve point under control-point noise.
pub fn curve_noise_cov(noise: &DiagonalNoise, n: usize, t: f64) -> Result<[f64; 2], BezierError> {
    check_t(t)?;
    if noise.variances.len() != n + 1 {
        return Err(BezierError::NoiseDimension {
            expected: n + 1,
            got: noise.variances.len(),
        });
    }
    let mut cov = [0.0; 2];
    for (i, [vx, vy]) in noise.variances.iter().enumerate() {
        let b = bernstein_unchecked(i, n, t);
        cov[0] += b * b * vx;
        cov[1] += b * b * vy;
    }
    Ok(cov)
}

/// Sum of squared residuals between the curve at `params` and `points`.
pub fn squared_residual(poly: &ControlPolygon, params: &[f64], points: &[Point]) -> f64 {
    params
        .iter()
        .zip(points)
        .map(|(&t, &x)| (eval_unchecked(poly.points(), t) - x).norm_sq())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cubic() -> ControlPolygon {
        ControlPolygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn bernstein_examples() {
        assert_eq!(bernstein(0, 5, 0.0).unwrap(), 1.0);
        assert_eq!(bernstein(1, 2, 0.5).unwrap(), 0.5);
        assert!((bernstein(2, 4, 0.3).unwrap() - 6.0 * 0.09 * 0.49).abs() < 1e-15);
        assert!((bernstein(2, 4, 0.3).unwrap() - 0.2646).abs() < 1e-12);
    }

    #[test]
    fn bernstein_errors() {
        assert_eq!(
            bernstein(3, 2, 0.5),
            Err(BezierError::IndexOutOfRange {
                index: 3,
                degree: 2
            })
        );
        assert_eq!(bernstein(0, 2, 1.5), Err(BezierError::ParamOutOfRange(1.5)));
        assert!(bernstein(0, 2, -0.1).is_err());
    }

    #[test]
    fn binomials_beyond_the_table() {
        assert_eq!(binomial(12, 6), 924.0);
        assert_eq!(binomial(14, 7), 3432.0);
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn eval_examples() {
        let line = ControlPolygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)]).unwrap();
        assert_eq!(eval_curve(&line, 0.5).unwrap(), Point::new(0.5, 0.5));
        let c = cubic();
        assert_eq!(eval_curve(&c, 0.0).unwrap(), c.first());
        assert_eq!(eval_curve(&c, 1.0).unwrap(), c.last());
        assert_eq!(eval_curve(&c, 0.5).unwrap(), Point::new(0.5, 0.75));
        assert!(eval_curve(&c, 1.01).is_err());
    }

    #[test]
    fn decasteljau_examples() {
        let line = ControlPolygon::new(vec![Point::new(0.0, 0.0), Point::new(2.0, 4.0)]).unwrap();
        let (p, l, r) = decasteljau(&line, 0.5).unwrap();
        assert_eq!(p, Point::new(1.0, 2.0));
        assert_eq!(l.points(), &[Point::new(0.0, 0.0), Point::new(1.0, 2.0)]);
        assert_eq!(r.points(), &[Point::new(1.0, 2.0), Point::new(2.0, 4.0)]);

        let c = cubic();
        let (p, l, _) = decasteljau(&c, 0.0).unwrap();
        assert_eq!(p, c.first());
        assert!(l.points().iter().all(|&q| q == c.first()));
        let (p, _, _) = decasteljau(&c, 0.5).unwrap();
        assert_eq!(p, Point::new(0.5, 0.75));
    }

    #[test]
    fn decode_examples() {
        let line = ControlPolygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 3.0)]).unwrap();
        assert_eq!(
            decode_stroke(&line, 3).unwrap(),
            vec![
                Point::new(0.0, 0.0),
                Point::new(0.5, 1.5),
                Point::new(1.0, 3.0)
            ]
        );
        let c = cubic();
        assert_eq!(decode_stroke(&c, 2).unwrap(), vec![c.first(), c.last()]);
        let five = decode_stroke(&c, 5).unwrap();
        for (k, p) in five.iter().enumerate() {
            let q = eval_curve(&c, k as f64 / 4.0).unwrap();
            assert!(p.dist(q) < 1e-15);
        }
        assert_eq!(decode_stroke(&c, 1), Err(BezierError::Resolution(1)));
    }

    #[test]
    fn perturb_contracts() {
        let c = cubic();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zero = DiagonalNoise::isotropic(4, 0.0).unwrap();
        assert_eq!(perturb(&c, &zero, &mut rng).unwrap(), c);
        let five = DiagonalNoise::isotropic(4, 5.0).unwrap();
        let a = perturb(&c, &five, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = perturb(&c, &five, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let wrong = DiagonalNoise::isotropic(3, 1.0).unwrap();
        assert!(matches!(
            perturb(&c, &wrong, &mut rng),
            Err(BezierError::NoiseDimension { .. })
        ));
        assert!(DiagonalNoise::isotropic(2, -1.0).is_err());
    }

    #[test]
    fn noise_cov_examples() {
        let noise = DiagonalNoise::new(vec![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(curve_noise_cov(&noise, 1, 0.0).unwrap(), [1.0, 2.0]);
        let s = DiagonalNoise::isotropic(2, 0.8).unwrap();
        let cov = curve_noise_cov(&s, 1, 0.5).unwrap();
        assert!((cov[0] - 0.4).abs() < 1e-15 && (cov[1] - 0.4).abs() < 1e-15);
        // Sum of squared cubic basis values at 1/2, from the binomial expansion.
        let squares: f64 = [1.0, 3.0, 3.0, 1.0]
            .iter()
            .map(|c: &f64| (c / 8.0).powi(2))
            .sum();
        let five = DiagonalNoise::isotropic(4, 5.0).unwrap();
        let cov = curve_noise_cov(&five, 3, 0.5).unwrap();
        assert!((cov[0] - 5.0 * squares).abs() < 1e-14);
        assert!((cov[0] - 1.5625).abs() < 1e-14);
    }

    #[test]
    fn elevation_preserves_curve() {
        let c = cubic();
        let e = c.elevate();
        assert_eq!(e.degree(), 4);
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            assert!(eval_curve(&c, t).unwrap().dist(eval_curve(&e, t).unwrap()) < 1e-14);
        }
    }

    #[test]
    fn param_vector_invariants() {
        assert!(ParamVector::new(vec![0.0, 0.3, 1.0]).is_ok());
        assert!(ParamVector::new(vec![0.1, 1.0]).is_err());
        assert!(ParamVector::new(vec![0.0, 0.6, 0.5, 1.0]).is_err());
        assert!(ParamVector::new(vec![0.0, f64::NAN, 1.0]).is_err());
        assert_eq!(ParamVector::uniform(3).unwrap().values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn polygon_rejects_bad_input() {
        assert_eq!(
            ControlPolygon::new(vec![Point::ORIGIN]),
            Err(BezierError::TooFewPoints(1))
        );
        assert_eq!(
            ControlPolygon::new(vec![Point::ORIGIN, Point::new(f64::INFINITY, 0.0)]),
            Err(BezierError::NonFinite)
        );
    }
}
