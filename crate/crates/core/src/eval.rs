//! Rasterization, image features, population statistics and the Fréchet distance
//! between feature populations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::point::{BBox, Point};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to rasterize")]
    EmptySketch,
    #[error("raster is {got}x{got}, expected {expected}x{expected}")]
    RasterSize { expected: usize, got: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("non-finite value")]
    NonFinite,
    #[error("covariance has eigenvalue {0}, below the PSD clamp threshold")]
    NotPsd(f64),
    #[error("empty bucket around length {0}")]
    EmptyBucket(usize),
    #[error("invalid feature spec: {0}")]
    Spec(&'static str),
}

/// Square grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    size: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size],
        }
    }

    pub fn from_data(size: usize, data: Vec<f64>) -> Result<Self, EvalError> {
        if data.len() != size * size {
            return Err(EvalError::Dimension(size * size, data.len()));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    /// Averages `factor × factor` blocks.
    pub fn downsample(&self, factor: usize) -> Raster {
        let out = self.size / factor;
        let mut r = Raster::zeros(out);
        let norm = 1.0 / (factor * factor) as f64;
        for i in 0..out {
            for j in 0..out {
                let mut acc = 0.0;
                for di in 0..factor {
                    for dj in 0..factor {
                        acc += self.get(i * factor + di, j * factor + dj);
                    }
                }
                r.data[i * out + j] = acc * norm;
            }
        }
        r
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    let s = if len_sq > 0.0 {
        ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(a + ab * s)
}

/// Draws polylines with anti-aliased lines, fitted to the canvas with a 5% margin.
///
/// Line width is one pixel at 64 px and scales with the canvas, so different
/// sizes depict the same drawing.
pub fn rasterize(polylines: &[Vec<Point>], size: usize) -> Result<Raster, EvalError> {
    let all: Vec<Point> = polylines.iter().flatten().copied().collect();
    let bounds = BBox::of(&all).ok_or(EvalError::EmptySketch)?;
    if !all.iter().all(|p| p.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let side = bounds.max_side();
    let inner = 0.9 * size as f64;
    let scale = if side > 0.0 { inner / side } else { 0.0 };
    let center = Point::new(
        0.5 * (bounds.min.x + bounds.max.x),
        0.5 * (bounds.min.y + bounds.max.y),
    );
    let half = 0.5 * size as f64;
    let to_px = |p: Point| {
        Point::new(
            (p.x - center.x) * scale + half,
            (p.y - center.y) * scale + half,
        )
    };
    let width = (size as f64 / 64.0).max(1.0);
    let reach = 0.5 * width + 1.0;

    let mut raster = Raster::zeros(size);
    for line in polylines {
        let px: Vec<Point> = line.iter().map(|&p| to_px(p)).collect();
        let segments: Vec<(Point, Point)> = if px.len() == 1 {
            vec![(px[0], px[0])]
        } else {
            px.windows(2).map(|w| (w[0], w[1])).collect()
        };
        for (a, b) in segments {
            let lo_x = (a.x.min(b.x) - reach).floor().max(0.0) as usize;
            let hi_x = ((a.x.max(b.x) + reach).ceil() as usize).min(size);
            let lo_y = (a.y.min(b.y) - reach).floor().max(0.0) as usize;
            let hi_y = ((a.y.max(b.y) + reach).ceil() as usize).min(size);
            for row in lo_y..hi_y {
                for col in lo_x..hi_x {
                    let c = Point::new(col as f64 + 0.5, row as f64 + 0.5);
                    let d = segment_distance(c, a, b);
                    let v = (0.5 * width + 0.5 - d).clamp(0.0, 1.0);
                    let slot = &mut raster.data[row * size + col];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
    }
    Ok(raster)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Block-averaged raster of `output × output`.
    Downsampled { output: usize },
    /// Orientation histograms over a `cells × cells` grid with `bins` unsigned orientations.
    GradientHistogram { cells: usize, bins: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub raster_size: usize,
    pub kind: FeatureKind,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            raster_size: 64,
            kind: FeatureKind::Downsampled { output: 16 },
        }
    }
}

impl FeatureSpec {
    pub fn dimension(&self) -> usize {
        match self.kind {
            FeatureKind::Downsampled { output } => output * output,
            FeatureKind::GradientHistogram { cells, bins } => cells * cells * bins,
        }
    }

    fn validate(&self) -> Result<(), EvalError> {
        match self.kind {
            FeatureKind::Downsampled { output }
                if output == 0 || self.raster_size % output != 0 =>
            {
                Err(EvalError::Spec("output must divide the raster size"))
            }
            FeatureKind::GradientHistogram { cells, bins } if cells == 0 || bins == 0 => {
                Err(EvalError::Spec("cells and bins must be positive"))
            }
            _ if self.raster_size == 0 => Err(EvalError::Spec("raster size must be positive")),
            _ => Ok(()),
        }
    }
}

pub fn extract_features(raster: &Raster, spec: &FeatureSpec) -> Result<Vec<f64>, EvalError> {
    spec.validate()?;
    if raster.size != spec.raster_size {
        return Err(EvalError::RasterSize {
            expected: spec.raster_size,
            got: raster.size,
        });
    }
    Ok(match spec.kind {
        FeatureKind::Downsampled { output } => raster.downsample(raster.size / output).data,
        FeatureKind::GradientHistogram { cells, bins } => gradient_histogram(raster, cells, bins),
    })
}

/// Soft-binned in orientation and bilinearly in space, so small shifts move mass smoothly.
fn gradient_histogram(raster: &Raster, cells: usize, bins: usize) -> Vec<f64> {
    let n = raster.size;
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= n as isize || c >= n as isize {
            0.0
        } else {
            raster.get(r as usize, c as usize)
        }
    };
    let mut hist = vec![0.0; cells * cells * bins];
    let cell = n as f64 / cells as f64;
    for r in 0..n as isize {
        for c in 0..n as isize {
            let gx = at(r, c + 1) - at(r, c - 1);
            let gy = at(r + 1, c) - at(r - 1, c);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
            let fb = theta / std::f64::consts::PI * bins as f64 - 0.5;
            let b0 = fb.floor();
            let wb = fb - b0;
            let fy = (r as f64 + 0.5) / cell - 0.5;
            let fx = (c as f64 + 0.5) / cell - 0.5;
            let (y0, x0) = (fy.floor(), fx.floor());
            let (wy, wx) = (fy - y0, fx - x0);
            for (dy, wyy) in [(0.0, 1.0 - wy), (1.0, wy)] {
                let cy = y0 + dy;
                if cy < 0.0 || cy >= cells as f64 {
                    continue;
                }
                for (dx, wxx) in [(0.0, 1.0 - wx), (1.0, wx)] {
                    let cx = x0 + dx;
                    if cx < 0.0 || cx >= cells as f64 {
                        continue;
                    }
                    for (db, wbb) in [(0.0, 1.0 - wb), (1.0, wb)] {
                        let bin = (b0 + db).rem_euclid(bins as f64) as usize;
                        let idx = ((cy as usize) * cells + cx as usize) * bins + bin;
                        hist[idx] += mag * wyy * wxx * wbb;
                    }
                }
            }
        }
    }
    let norm = 1.0 / (n * n) as f64;
    hist.iter_mut().for_each(|v| *v *= norm);
    hist
}

/// Convenience: rasterize at the spec's size and extract features.
pub fn sketch_features(
    polylines: &[Vec<Point>],
    spec: &FeatureSpec,
) -> Result<Vec<f64>, EvalError> {
    extract_features(&rasterize(polylines, spec.raster_size)?, spec)
}

/// Empirical mean and unbiased covariance of a feature population.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

/// Eigenvalues above `-PSD_TOLERANCE · max(1, λ_max)` are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

fn clamp_psd(
    m: DMatrix<f64>,
) -> Result<(DMatrix<f64>, SymmetricEigen<f64, nalgebra::Dyn>), EvalError> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_TOLERANCE * top.max(1.0) {
                return Err(EvalError::NotPsd(*v));
            }
            *v = 0.0;
        }
    }
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues) * eig.eigenvectors.transpose();
    Ok((rebuilt, eig))
}

pub fn population_stats(features: &[Vec<f64>]) -> Result<PopulationStats, EvalError> {
    let count = features.len();
    if count < 2 {
        return Err(EvalError::TooFewSamples(count));
    }
    let dim = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(EvalError::Dimension(dim, f.len()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    if count < dim {
        log::warn!("{count} samples for {dim}-dimensional features; covariance is rank deficient");
    }
    let mut mean = DVector::<f64>::zeros(dim);
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean /= count as f64;
    let centered = DMatrix::from_fn(count, dim, |i, j| features[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (count - 1) as f64;
    let (cov, _) = clamp_psd(cov)?;
    Ok(PopulationStats { mean, cov, count })
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn matrix_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let (_, eig) = clamp_psd(m.clone())?;
    let roots = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `Tr (Σ_a Σ_b)^{1/2}` via the symmetric form `Tr (Σ_b^{1/2} Σ_a Σ_b^{1/2})^{1/2}`.
pub fn sqrt_product_trace(
    sigma_a: &DMatrix<f64>,
    sigma_b: &DMatrix<f64>,
) -> Result<f64, EvalError> {
    let root_b = matrix_sqrt_psd(sigma_b)?;
    let inner = &root_b * sigma_a * &root_b;
    Ok(matrix_sqrt_psd(&inner)?.trace())
}

/// `‖μ_r − μ_g‖² + Tr(Σ_r + Σ_g − 2(Σ_r Σ_g)^{1/2})`, clamped at zero.
///
/// The square-root trace is averaged over both symmetric forms, which makes the
/// result exactly symmetric in its arguments.
pub fn fid(real: &PopulationStats, gen: &PopulationStats) -> Result<f64, EvalError> {
    if real.mean.len() != gen.mean.len() {
        return Err(EvalError::Dimension(real.mean.len(), gen.mean.len()));
    }
    let mean_term = (&real.mean - &gen.mean).norm_squared();
    // Equal covariances have (ΣΣ)^{1/2} = Σ exactly; skip the eigen round-off.
    let cross = if real.cov == gen.cov {
        real.cov.trace()
    } else {
        0.5 * (sqrt_product_trace(&real.cov, &gen.cov)? + sqrt_product_trace(&gen.cov, &real.cov)?)
    };
    let value = mean_term + real.cov.trace() + gen.cov.trace() - 2.0 * cross;
    Ok(value.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketFid {
    pub bucket: usize,
    pub half_width: usize,
    /// Real sketches whose raw length falls in the bucket.
    pub count: usize,
    pub fid: f64,
    /// The bucket is smaller than the recommended minimum.
    pub small: bool,
}

pub const MIN_BUCKET: usize = 50;

/// FID between the real sketches with raw length in `center ± half_width` and as
/// many generated feature vectors, produced by `generate(count)`.
pub fn fid_by_length<G>(
    real: &[(usize, Vec<f64>)],
    center: usize,
    half_width: usize,
    mut generate: G,
) -> Result<BucketFid, EvalError>
where
    G: FnMut(usize) -> Result<Vec<Vec<f64>>, EvalError>,
{
    let members: Vec<Vec<f64>> = real
        .iter()
        .filter(|(len, _)| len.abs_diff(center) <= half_width)
        .map(|(_, f)| f.clone())
        .collect();
    if members.is_empty() {
        return Err(EvalError::EmptyBucket(center));
    }
    let small = members.len() < MIN_BUCKET;
    if small {
        log::warn!(
            "bucket {center}±{half_width} has only {} sketches",
            members.len()
        );
    }
    let generated = generate(members.len())?;
    let value = fid(&population_stats(&members)?, &population_stats(&generated)?)?;
    Ok(BucketFid {
        bucket: center,
        half_width,
        count: members.len(),
        fid: value,
        small,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: usize,
    /// `counts[k]` covers lengths `k·bin_width .. (k+1)·bin_width`.
    pub counts: Vec<usize>,
    pub mean: f64,
}

impl Histogram {
    pub fn from_lengths(lengths: &[usize], bin_width: usize) -> Histogram {
        let bin_width = bin_width.max(1);
        let max = lengths.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0; max / bin_width + 1];
        for &l in lengths {
            counts[l / bin_width] += 1;
        }
        let mean = if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
        };
        Histogram {
            bin_width,
            counts,
            mean,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `bin_start,bin_end,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start,bin_end,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{}\n",
                k * self.bin_width,
                (k + 1) * self.bin_width,
                c
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub stroke: Histogram,
    pub sketch: Histogram,
}

/// Histograms of per-stroke lengths and per-sketch totals. Input holds one list of
/// stroke lengths per sketch.
pub fn length_histogram(
    per_sketch: &[Vec<usize>],
    bin_width: usize,
) -> Result<LengthHistogram, EvalError> {
    if per_sketch.is_empty() {
        return Err(EvalError::TooFewSamples(0));
    }
    let strokes: Vec<usize> = per_sketch.iter().flatten().copied().collect();
    let sketches: Vec<usize> = per_sketch.iter().map(|s| s.iter().sum()).collect();
    Ok(LengthHistogram {
        stroke: Histogram::from_lengths(&strokes, bin_width),
        sketch: Histogram::from_lengths(&sketches, bin_width),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> PopulationStats {
        let d = mean.len();
        PopulationStats {
            mean: DVector::from_vec(mean),
            cov: DMatrix::from_row_slice(d, d, &cov),
            count: 10,
        }
    }

    #[test]
    fn empty_sketch_rejected() {
        assert_eq!(rasterize(&[], 64), Err(EvalError::EmptySketch));
        assert_eq!(rasterize(&[vec![]], 64), Err(EvalError::EmptySketch));
    }

    #[test]
    fn horizontal_stroke_stays_in_a_row_band() {
        let r = rasterize(&[vec![Point::new(0.0, 5.0), Point::new(10.0, 5.0)]], 64).unwrap();
        let rows: Vec<usize> = (0..64)
            .filter(|&i| (0..64).any(|j| r.get(i, j) > 0.0))
            .collect();
        assert!(!rows.is_empty());
        assert!(
            rows.last().unwrap() - rows.first().unwrap() <= 2,
            "{rows:?}"
        );
    }

    #[test]
    fn feature_examples() {
        let spec = FeatureSpec::default();
        assert_eq!(
            extract_features(&Raster::zeros(64), &spec).unwrap(),
            vec![0.0; 256]
        );
        let sketch = vec![vec![
            Point::new(0.0, 0.0),
            Point::new(3.0, 7.0),
            Point::new(5.0, 1.0),
        ]];
        assert_eq!(
            sketch_features(&sketch, &spec).unwrap(),
            sketch_features(&sketch.clone(), &spec).unwrap()
        );
        assert!(matches!(
            extract_features(&Raster::zeros(32), &spec),
            Err(EvalError::RasterSize { .. })
        ));
    }

    #[test]
    fn stats_examples() {
        let s = population_stats(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(s.cov, DMatrix::zeros(2, 2));
        let s = population_stats(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 0.0]);
        assert!((s.cov[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(s.cov[(0, 1)].abs() < 1e-12 && s.cov[(1, 1)].abs() < 1e-12);
        assert_eq!(
            population_stats(&[vec![1.0]]).unwrap_err(),
            EvalError::TooFewSamples(1)
        );
    }

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_sqrt_psd(&i).unwrap() - &i).norm() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = matrix_sqrt_psd(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).norm() < 1e-12);
        let mut bad = i.clone();
        bad[(0, 0)] = f64::NAN;
        assert_eq!(matrix_sqrt_psd(&bad), Err(EvalError::NonFinite));
    }

    #[test]
    fn fid_closed_forms() {
        let a = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(fid(&a, &a).unwrap(), 0.0);
        let b = stats(vec![1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(fid(&a, &b).unwrap(), 1.0);
        let r = stats(vec![0.0], vec![1.0]);
        let g = stats(vec![1.0], vec![4.0]);
        assert_eq!(fid(&r, &g).unwrap(), 2.0);
        assert!(fid(&a, &r).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = length_histogram(&[vec![40]], 10).unwrap();
        assert_eq!(h.sketch.counts.iter().filter(|&&c| c > 0).count(), 1);
        let h = length_histogram(&[vec![3, 4], vec![12], vec![30, 1, 1]], 10).unwrap();
        assert_eq!(h.sketch.total(), 3);
        assert_eq!(h.stroke.total(), 6);
        assert!(h
            .sketch
            .to_csv()
            .starts_with("bin_start,bin_end,count\n0,10,1\n"));
    }

    #[test]
    fn bucket_warns_but_computes() {
        let real: Vec<(usize, Vec<f64>)> = (0..10)
            .map(|i| (80 + i, vec![i as f64, (i * i) as f64]))
            .collect();
        let same = real.iter().map(|(_, f)| f.clone()).collect::<Vec<_>>();
        let b = fid_by_length(&real, 80, 20, |n| Ok(same[..n].to_vec())).unwrap();
        assert!(b.small);
        assert_eq!(b.count, 10);
        assert!(b.fid < 1e-8);
        assert_eq!(
            fid_by_length(&real, 300, 20, |_| Ok(vec![])).unwrap_err(),
            EvalError::EmptyBucket(300)
        );
    }
}
