//! Sketch parsing, stroke segmentation, origin normalization and splitting.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bezier::{BezierError, ControlPolygon};
use crate::point::{BBox, Point};

pub const DATASET_VERSION: u32 = 1;
pub const DEFAULT_MAX_STROKE_LEN: usize = 128;
pub const DEFAULT_BEND_THRESHOLD: f64 = 2.0 * PI / 3.0;

#[derive(Debug, thiserror::Error)]
pub enum SketchError {
    #[error("empty input")]
    Empty,
    #[error("non-finite coordinate at row {0}")]
    NonFinite(usize),
    #[error("pen-lift flag at row {0} must be 0 or 1")]
    BadPenFlag(usize),
    #[error("{points} points but {pens} pen states")]
    LengthMismatch { points: usize, pens: usize },
    #[error("stroke has {0} points; at least 2 required")]
    TooShort(usize),
    #[error("curvature index {index} is not interior to a stroke of {len} points")]
    EndpointIndex { index: usize, len: usize },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error(transparent)]
    Bezier(#[from] BezierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PenState {
    Down,
    Up,
}

/// A sketch as one point sequence with a pen state per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSketch {
    points: Vec<Point>,
    pen: Vec<PenState>,
    pub category: Option<String>,
}

impl RawSketch {
    pub fn new(
        points: Vec<Point>,
        pen: Vec<PenState>,
        category: Option<String>,
    ) -> Result<Self, SketchError> {
        if points.len() != pen.len() {
            return Err(SketchError::LengthMismatch {
                points: points.len(),
                pens: pen.len(),
            });
        }
        if points.is_empty() {
            return Err(SketchError::Empty);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(SketchError::NonFinite(i));
        }
        Ok(Self {
            points,
            pen,
            category,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn pen(&self) -> &[PenState] {
        &self.pen
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Outcome of parsing a QuickDraw NDJSON stream.
#[derive(Clone, Debug, Default)]
pub struct ParseReport {
    pub sketches: Vec<RawSketch>,
    /// Lines that were not valid JSON records.
    pub malformed: usize,
    /// Valid JSON records with no usable drawing.
    pub rejected: usize,
}

#[derive(Deserialize)]
struct QuickDrawRecord {
    drawing: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    word: Option<String>,
}

fn quickdraw_record(rec: QuickDrawRecord) -> Option<RawSketch> {
    let mut points = Vec::new();
    let mut pen = Vec::new();
    for stroke in &rec.drawing {
        if stroke.len() < 2 || stroke[0].len() != stroke[1].len() {
            return None;
        }
        let n = stroke[0].len();
        for k in 0..n {
            points.push(Point::new(stroke[0][k], stroke[1][k]));
            pen.push(if k + 1 == n {
                PenState::Up
            } else {
                PenState::Down
            });
        }
    }
    RawSketch::new(points, pen, rec.word).ok()
}

/// Parses simplified QuickDraw NDJSON: one `{"drawing": [[xs, ys], ...]}` record per line.
///
/// Malformed lines and records with empty or invalid drawings are counted and skipped.
pub fn parse_quickdraw_ndjson(reader: impl BufRead) -> Result<ParseReport, SketchError> {
    let mut report = ParseReport::default();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<QuickDrawRecord>(&line) {
            Ok(rec) => match quickdraw_record(rec) {
                Some(s) => report.sketches.push(s),
                None => {
                    log::warn!("line {}: empty or invalid drawing rejected", lineno + 1);
                    report.rejected += 1;
                }
            },
            Err(e) => {
                log::warn!("line {}: malformed record skipped: {e}", lineno + 1);
                report.malformed += 1;
            }
        }
    }
    Ok(report)
}

/// Converts `(Δx, Δy, pen_lift)` rows to absolute coordinates starting from the origin.
pub fn parse_stroke3(rows: &[[f64; 3]]) -> Result<RawSketch, SketchError> {
    if rows.is_empty() {
        return Err(SketchError::Empty);
    }
    let mut cur = Point::ORIGIN;
    let mut points = Vec::with_capacity(rows.len());
    let mut pen = Vec::with_capacity(rows.len());
    for (i, &[dx, dy, lift]) in rows.iter().enumerate() {
        if !(dx.is_finite() && dy.is_finite()) {
            return Err(SketchError::NonFinite(i));
        }
        pen.push(match lift {
            l if l == 0.0 => PenState::Down,
            l if l == 1.0 => PenState::Up,
            _ => return Err(SketchError::BadPenFlag(i)),
        });
        cur += Point::new(dx, dy);
        points.push(cur);
    }
    RawSketch::new(points, pen, None)
}

/// Inverse of [`parse_stroke3`]. Exact on integer-valued coordinates.
pub fn write_stroke3(sketch: &RawSketch) -> Vec<[f64; 3]> {
    let mut prev = Point::ORIGIN;
    sketch
        .points
        .iter()
        .zip(&sketch.pen)
        .map(|(&p, &s)| {
            let d = p - prev;
            prev = p;
            [d.x, d.y, if s == PenState::Up { 1.0 } else { 0.0 }]
        })
        .collect()
}

/// Reads stroke-3 rows separated by commas or whitespace. Lines starting with `#` are skipped.
pub fn parse_stroke3_text(text: &str) -> Result<RawSketch, SketchError> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() != 3 {
            return Err(SketchError::Parse {
                line: lineno + 1,
                message: format!("expected 3 columns, got {}", fields.len()),
            });
        }
        let mut row = [0.0; 3];
        for (slot, f) in row.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|e| SketchError::Parse {
                line: lineno + 1,
                message: format!("{e}"),
            })?;
        }
        rows.push(row);
    }
    parse_stroke3(&rows)
}

/// A pen-down run of points. `origin_offset` is the translation removed by normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub points: Vec<Point>,
    pub origin_offset: Point,
}

impl Stroke {
    pub fn new(points: Vec<Point>) -> Result<Self, SketchError> {
        if points.len() < 2 {
            return Err(SketchError::TooShort(points.len()));
        }
        Ok(Self {
            points,
            origin_offset: Point::ORIGIN,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.points.first() == Some(&Point::ORIGIN)
    }

    /// Points in the original frame.
    pub fn absolute_points(&self) -> Vec<Point> {
        self.points
            .iter()
            .map(|&p| p + self.origin_offset)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeSequence {
    pub strokes: Vec<Stroke>,
    pub category: Option<String>,
}

impl StrokeSequence {
    pub fn total_points(&self) -> usize {
        self.strokes.iter().map(Stroke::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub sequence: StrokeSequence,
    /// Single-point strokes removed.
    pub dropped: usize,
}

/// Splits after every pen-up. Single-point strokes are dropped and counted.
pub fn segment_strokes(sketch: &RawSketch) -> Segmentation {
    let mut strokes = Vec::new();
    let mut dropped = 0;
    let mut current = Vec::new();
    for (i, (&p, &s)) in sketch.points.iter().zip(&sketch.pen).enumerate() {
        current.push(p);
        if s == PenState::Up || i + 1 == sketch.points.len() {
            let pts = std::mem::take(&mut current);
            match Stroke::new(pts) {
                Ok(stroke) => strokes.push(stroke),
                Err(_) => dropped += 1,
            }
        }
    }
    Segmentation {
        sequence: StrokeSequence {
            strokes,
            category: sketch.category.clone(),
        },
        dropped,
    }
}

/// Translates the stroke so it starts at the origin; the translation accumulates in `origin_offset`.
pub fn normalize_stroke(stroke: &Stroke) -> Result<Stroke, SketchError> {
    if stroke.len() < 2 {
        return Err(SketchError::TooShort(stroke.len()));
    }
    let first = stroke.points[0];
    Ok(Stroke {
        points: stroke.points.iter().map(|&p| p - first).collect(),
        origin_offset: stroke.origin_offset + first,
    })
}

pub fn denormalize_stroke(stroke: &Stroke) -> Stroke {
    Stroke {
        points: stroke.absolute_points(),
        origin_offset: Point::ORIGIN,
    }
}

/// Turning angle in `[0, π]` between the chords entering and leaving point `i`.
pub fn discrete_curvature(stroke: &Stroke, i: usize) -> Result<f64, SketchError> {
    if i == 0 || i + 1 >= stroke.len() {
        return Err(SketchError::EndpointIndex {
            index: i,
            len: stroke.len(),
        });
    }
    Ok(turning_angle(
        stroke.points[i - 1],
        stroke.points[i],
        stroke.points[i + 1],
    ))
}

fn turning_angle(a: Point, b: Point, c: Point) -> f64 {
    let u = b - a;
    let v = c - b;
    if u.norm_sq() == 0.0 || v.norm_sq() == 0.0 {
        return 0.0;
    }
    u.cross(v).abs().atan2(u.dot(v))
}

/// Splits at sharp corners so no piece has more than one interior corner, then
/// splits long pieces evenly so none exceeds `max_len` points.
///
/// Split points are duplicated: they end one piece and start the next.
pub fn split_stroke(stroke: &Stroke, max_len: usize, bend_threshold: f64) -> Vec<Stroke> {
    let max_len = max_len.max(2);
    let pts = &stroke.points;
    let n = pts.len();
    let mut cuts = vec![0];
    let mut seen_corner = false;
    for i in 1..n.saturating_sub(1) {
        if turning_angle(pts[i - 1], pts[i], pts[i + 1]) > bend_threshold {
            if seen_corner {
                cuts.push(i);
            }
            seen_corner = true;
        }
    }
    cuts.push(n - 1);

    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = b - a + 1;
        let pieces = (len - 1).div_ceil(max_len - 1);
        for k in 0..pieces {
            let s = a + (len - 1) * k / pieces;
            let e = a + (len - 1) * (k + 1) / pieces;
            out.push(Stroke {
                points: pts[s..=e].to_vec(),
                origin_offset: stroke.origin_offset,
            });
        }
    }
    out
}

/// Preprocessing knobs for turning raw sketches into dataset records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub max_stroke_len: usize,
    pub bend_threshold: f64,
    /// Divide coordinates by the sketch's longer bounding-box side.
    pub unit_scale: bool,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            max_stroke_len: DEFAULT_MAX_STROKE_LEN,
            bend_threshold: DEFAULT_BEND_THRESHOLD,
            unit_scale: true,
        }
    }
}

/// One preprocessed sketch in the internal dataset format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub version: u32,
    pub id: usize,
    pub category: Option<String>,
    /// Raw point count before segmentation.
    pub raw_len: usize,
    /// Coordinates were divided by this factor.
    pub scale: f64,
    pub dropped: usize,
    pub strokes: Vec<Stroke>,
}

impl DatasetRecord {
    pub fn sequence(&self) -> StrokeSequence {
        StrokeSequence {
            strokes: self.strokes.clone(),
            category: self.category.clone(),
        }
    }
}

/// Segments, optionally unit-scales, splits and origin-normalizes a raw sketch.
pub fn prepare_sketch(id: usize, sketch: &RawSketch, config: &PrepConfig) -> DatasetRecord {
    let seg = segment_strokes(sketch);
    let scale = if config.unit_scale {
        let side = BBox::of(sketch.points())
            .map(|b| b.max_side())
            .unwrap_or(0.0);
        if side > 0.0 {
            side
        } else {
            1.0
        }
    } else {
        1.0
    };
    let mut strokes = Vec::new();
    for s in &seg.sequence.strokes {
        let scaled = Stroke {
            points: s.points.iter().map(|&p| p * (1.0 / scale)).collect(),
            origin_offset: Point::ORIGIN,
        };
        for piece in split_stroke(&scaled, config.max_stroke_len, config.bend_threshold) {
            strokes.push(normalize_stroke(&piece).expect("split pieces have at least 2 points"));
        }
    }
    DatasetRecord {
        version: DATASET_VERSION,
        id,
        category: sketch.category.clone(),
        raw_len: sketch.len(),
        scale,
        dropped: seg.dropped,
        strokes,
    }
}

/// Reads NDJSON records of type `T`, one per non-blank line.
pub fn read_ndjson<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
) -> Result<Vec<T>, SketchError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SketchError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_ndjson<T: Serialize>(
    mut writer: impl Write,
    records: &[T],
) -> Result<(), SketchError> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<DatasetRecord>, SketchError> {
    let records: Vec<DatasetRecord> = read_ndjson(reader)?;
    if let Some(r) = records.iter().find(|r| r.version != DATASET_VERSION) {
        return Err(SketchError::Version(r.version));
    }
    Ok(records)
}

/// One stroke as a Bézier embedding: control points relative to `offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedStroke {
    pub degree: usize,
    pub offset: Point,
    pub points: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

impl EncodedStroke {
    pub fn polygon(&self) -> Result<ControlPolygon, BezierError> {
        ControlPolygon::new(self.points.clone())
    }
}

/// A sketch in control-point form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSketch {
    #[serde(default)]
    pub id: usize,
    pub category: Option<String>,
    #[serde(default)]
    pub raw_len: usize,
    pub strokes: Vec<EncodedStroke>,
}

impl EncodedSketch {
    /// Number of control points across all strokes.
    pub fn control_point_count(&self) -> usize {
        self.strokes.iter().map(|s| s.points.len()).sum()
    }
}

/// Adds independent `N(0, std²)` noise to every control point in absolute coordinates.
///
/// Each stroke is re-expressed relative to its perturbed first point.
pub fn augment_control_points(
    sketch: &EncodedSketch,
    std: f64,
    rng: &mut impl Rng,
) -> EncodedSketch {
    let mut out = sketch.clone();
    if std == 0.0 {
        return out;
    }
    for s in &mut out.strokes {
        let noisy: Vec<Point> = s
            .points
            .iter()
            .map(|&p| {
                let ex: f64 = StandardNormal.sample(rng);
                let ey: f64 = StandardNormal.sample(rng);
                p + s.offset + Point::new(std * ex, std * ey)
            })
            .collect();
        let first = noisy[0];
        s.offset = first;
        s.points = noisy.iter().map(|&p| p - first).collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use PenState::{Down as D, Up as U};

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn quickdraw_single_stroke() {
        let r = parse_quickdraw_ndjson(r#"{"drawing":[[[0,10],[0,10]]]}"#.as_bytes()).unwrap();
        assert_eq!(r.sketches.len(), 1);
        assert_eq!(
            r.sketches[0].points(),
            &pts(&[(0.0, 0.0), (10.0, 10.0)])[..]
        );
        assert_eq!(r.sketches[0].pen(), &[D, U]);
    }

    #[test]
    fn quickdraw_pen_up_at_stroke_ends() {
        let text = r#"{"word":"cat","drawing":[[[0,1,2],[0,0,0]],[[5,6],[5,6]]]}"#;
        let r = parse_quickdraw_ndjson(text.as_bytes()).unwrap();
        assert_eq!(r.sketches[0].pen(), &[D, D, U, D, U]);
        assert_eq!(r.sketches[0].category.as_deref(), Some("cat"));
    }

    #[test]
    fn quickdraw_counts_malformed_and_rejected() {
        let text = [
            r#"{"drawing":[[[0,1],[0,1]]]}"#,
            r#"{"drawing":[[[0,1],[0,1]]]}"#,
            r#"{"drawing": [[[0,1"#,
            r#"{"drawing":[[[3],[4]]]}"#,
            "",
            r#"{"drawing":[]}"#,
        ]
        .join("\n");
        let r = parse_quickdraw_ndjson(text.as_bytes()).unwrap();
        assert_eq!(r.sketches.len(), 3);
        assert_eq!(r.malformed, 1);
        assert_eq!(r.rejected, 1);
    }

    #[test]
    fn stroke3_examples() {
        let s = parse_stroke3(&[[1.0, 1.0, 0.0], [1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(s.points(), &pts(&[(1.0, 1.0), (2.0, 2.0)])[..]);
        assert_eq!(s.pen(), &[D, U]);
        assert!(matches!(parse_stroke3(&[]), Err(SketchError::Empty)));
        assert!(matches!(
            parse_stroke3(&[[f64::NAN, 0.0, 0.0]]),
            Err(SketchError::NonFinite(0))
        ));
        assert!(matches!(
            parse_stroke3(&[[0.0, 0.0, 0.5]]),
            Err(SketchError::BadPenFlag(0))
        ));
        let rows = vec![
            [3.0, -2.0, 0.0],
            [4.0, 1.0, 1.0],
            [-7.0, 0.0, 0.0],
            [2.0, 2.0, 1.0],
        ];
        assert_eq!(write_stroke3(&parse_stroke3(&rows).unwrap()), rows);
    }

    #[test]
    fn stroke3_text() {
        let s = parse_stroke3_text("# dx,dy,lift\n1,1,0\n1 1 1\n").unwrap();
        assert_eq!(s.len(), 2);
        assert!(parse_stroke3_text("1,2\n").is_err());
    }

    #[test]
    fn segmentation_examples() {
        let sketch = |pen: Vec<PenState>| {
            let points = (0..pen.len()).map(|i| Point::new(i as f64, 0.0)).collect();
            RawSketch::new(points, pen, None).unwrap()
        };
        let s = segment_strokes(&sketch(vec![D, D, U, D, U]));
        assert_eq!(
            s.sequence
                .strokes
                .iter()
                .map(Stroke::len)
                .collect::<Vec<_>>(),
            vec![3, 2]
        );
        assert_eq!(s.dropped, 0);
        let s = segment_strokes(&sketch(vec![D; 6]));
        assert_eq!(s.sequence.total_points(), 6);
        let s = segment_strokes(&sketch(vec![U, U, U, D, U]));
        assert_eq!(s.sequence.strokes.len(), 1);
        assert_eq!(s.dropped, 3);
        assert_eq!(s.sequence.total_points() + s.dropped, 5);
    }

    #[test]
    fn normalization_examples() {
        let s = Stroke::new(pts(&[(5.0, 5.0), (6.0, 7.0)])).unwrap();
        let n = normalize_stroke(&s).unwrap();
        assert_eq!(n.points, pts(&[(0.0, 0.0), (1.0, 2.0)]));
        assert_eq!(n.origin_offset, Point::new(5.0, 5.0));
        assert_eq!(denormalize_stroke(&n), s);
        assert_eq!(normalize_stroke(&n).unwrap(), n);
        let already = Stroke::new(pts(&[(0.0, 0.0), (1.0, 2.0)])).unwrap();
        assert_eq!(
            normalize_stroke(&already).unwrap().origin_offset,
            Point::ORIGIN
        );
    }

    #[test]
    fn curvature_examples() {
        let s = Stroke::new(pts(&[
            (0.0, 0.0),
            (1.0, 0.0),
            (2.0, 0.0),
            (2.0, 1.0),
            (0.0, 1.0),
            (1.0, 1.0),
        ]))
        .unwrap();
        assert_eq!(discrete_curvature(&s, 1).unwrap(), 0.0);
        assert!((discrete_curvature(&s, 2).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((discrete_curvature(&s, 4).unwrap() - PI).abs() < 1e-15);
        assert!(discrete_curvature(&s, 0).is_err());
        assert!(discrete_curvature(&s, 5).is_err());
    }

    fn straight(n: usize) -> Stroke {
        Stroke::new((0..n).map(|i| Point::new(i as f64, 0.0)).collect()).unwrap()
    }

    #[test]
    fn split_by_length() {
        assert_eq!(
            split_stroke(&straight(100), 128, DEFAULT_BEND_THRESHOLD).len(),
            1
        );
        let pieces = split_stroke(&straight(300), 128, DEFAULT_BEND_THRESHOLD);
        assert_eq!(pieces.len(), 3);
        assert!(pieces.iter().all(|p| p.len() <= 128));
        assert_eq!(pieces.iter().map(|p| p.len() - 1).sum::<usize>(), 299);
    }

    #[test]
    fn split_z_at_a_corner() {
        let mut z = Vec::new();
        for i in 0..10 {
            z.push(Point::new(i as f64, 0.0));
        }
        for i in 1..10 {
            z.push(Point::new(9.0 - i as f64, i as f64));
        }
        for i in 1..10 {
            z.push(Point::new(i as f64, 9.0));
        }
        let stroke = Stroke::new(z.clone()).unwrap();
        let pieces = split_stroke(&stroke, 128, DEFAULT_BEND_THRESHOLD);
        assert!(pieces.len() >= 2);
        assert_eq!(pieces[0].points.last().unwrap(), &pieces[1].points[0]);
        assert_eq!(pieces[1].points[0], Point::new(0.0, 9.0));
    }

    #[test]
    fn prepared_record_is_normalized_and_scaled() {
        let raw = RawSketch::new(
            pts(&[(10.0, 10.0), (30.0, 10.0), (50.0, 50.0), (49.0, 50.0)]),
            vec![D, D, U, U],
            None,
        )
        .unwrap();
        let rec = prepare_sketch(7, &raw, &PrepConfig::default());
        assert_eq!(rec.scale, 40.0);
        assert_eq!(rec.strokes.len(), 1);
        assert_eq!(rec.dropped, 1);
        assert!(rec.strokes.iter().all(Stroke::is_normalized));
        assert_eq!(rec.strokes[0].origin_offset, Point::new(0.25, 0.25));
    }

    #[test]
    fn augment_is_deterministic_and_identity_at_zero() {
        let sketch = EncodedSketch {
            id: 0,
            category: None,
            raw_len: 4,
            strokes: vec![EncodedStroke {
                degree: 1,
                offset: Point::new(1.0, 1.0),
                points: pts(&[(0.0, 0.0), (2.0, 0.0)]),
                loss: None,
            }],
        };
        assert_eq!(
            augment_control_points(&sketch, 0.0, &mut ChaCha8Rng::seed_from_u64(1)),
            sketch
        );
        let a = augment_control_points(&sketch, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        let b = augment_control_points(&sketch, 1.0, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_ne!(a, sketch);
        assert_eq!(a.strokes[0].points[0], Point::ORIGIN);
    }

    #[test]
    fn dataset_round_trip() {
        let raw = RawSketch::new(
            pts(&[(0.0, 0.0), (1.0, 2.0), (2.0, 2.0)]),
            vec![D, D, U],
            Some("x".into()),
        )
        .unwrap();
        let rec = prepare_sketch(0, &raw, &PrepConfig::default());
        let mut buf = Vec::new();
        write_ndjson(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, vec![rec]);
    }
}
