//! SVG 1.1 export of Bézier strokes and the JSON control-point sidecar.
//!
//! Degrees 1 to 3 map directly onto `L`, `Q` and `C` path commands. Higher
//! degrees are split by de Casteljau subdivision until every piece is flat,
//! then each piece becomes one cubic with matching end tangents. A dense
//! polyline is available instead.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bezier::{decode_stroke, split_points, BezierError, ControlPolygon};
use crate::point::{BBox, Point};

pub const SIDECAR_VERSION: u32 = 1;

/// How strokes above degree 3 are written.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HighDegree {
    /// `tolerance` is relative to the stroke's control-polygon bounding-box diagonal.
    Subdivide {
        tolerance: f64,
    },
    Polyline {
        resolution: usize,
    },
}

impl Default for HighDegree {
    fn default() -> Self {
        HighDegree::Subdivide { tolerance: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvgConfig {
    /// Pixel width and height of the document.
    pub size: u32,
    pub high_degree: HighDegree,
    /// Line width in pixels.
    pub stroke_width: f64,
}

impl Default for SvgConfig {
    fn default() -> Self {
        Self {
            size: 256,
            high_degree: HighDegree::default(),
            stroke_width: 1.5,
        }
    }
}

/// A stroke's control polygon relative to its start location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedStroke {
    pub offset: Point,
    pub poly: ControlPolygon,
}

impl PlacedStroke {
    pub fn new(offset: Point, poly: ControlPolygon) -> Self {
        Self { offset, poly }
    }

    /// Control points in absolute canvas coordinates.
    pub fn absolute(&self) -> ControlPolygon {
        self.poly.translated(self.offset)
    }
}

/// One drawable path piece in absolute coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum Segment {
    Line(Point, Point),
    Quad(Point, Point, Point),
    Cubic(Point, Point, Point, Point),
    Polyline(Vec<Point>),
}

impl Segment {
    pub fn start(&self) -> Point {
        match self {
            Segment::Line(a, _) | Segment::Quad(a, _, _) | Segment::Cubic(a, _, _, _) => *a,
            Segment::Polyline(p) => p[0],
        }
    }

    /// Points along the segment, `per_piece` samples per curve piece.
    pub fn sample(&self, per_piece: usize) -> Vec<Point> {
        let control: Vec<Point> = match self {
            Segment::Polyline(p) => return p.clone(),
            Segment::Line(a, b) => vec![*a, *b],
            Segment::Quad(a, b, c) => vec![*a, *b, *c],
            Segment::Cubic(a, b, c, d) => vec![*a, *b, *c, *d],
        };
        let poly = ControlPolygon::new(control).expect("segment points are finite");
        decode_stroke(&poly, per_piece.max(2)).expect("resolution at least 2")
    }
}

fn flatness(points: &[Point]) -> f64 {
    let a = points[0];
    let b = points[points.len() - 1];
    let chord = b - a;
    let len = chord.norm();
    points[1..points.len() - 1]
        .iter()
        .map(|&p| {
            if len > 0.0 {
                (p - a).cross(chord).abs() / len
            } else {
                p.dist(a)
            }
        })
        .fold(0.0, f64::max)
}

fn hermite_cubic(points: &[Point]) -> Segment {
    let n = (points.len() - 1) as f64;
    let q0 = points[0];
    let qn = points[points.len() - 1];
    let p1 = q0 + (points[1] - q0) * (n / 3.0);
    let p2 = qn - (qn - points[points.len() - 2]) * (n / 3.0);
    Segment::Cubic(q0, p1, p2, qn)
}

fn subdivide(points: &[Point], eps: f64, depth: usize, out: &mut Vec<Segment>) {
    if depth == 0 || flatness(points) < eps {
        out.push(hermite_cubic(points));
        return;
    }
    let (_, left, right) = split_points(points, 0.5);
    subdivide(&left, eps, depth - 1, out);
    subdivide(&right, eps, depth - 1, out);
}

const MAX_SUBDIVISION_DEPTH: usize = 16;

/// Path pieces for one stroke in absolute coordinates.
pub fn stroke_segments(
    stroke: &PlacedStroke,
    mode: HighDegree,
) -> Result<Vec<Segment>, BezierError> {
    let abs = stroke.absolute();
    let p = abs.points();
    if !p.iter().all(|q| q.is_finite()) {
        return Err(BezierError::NonFinite);
    }
    Ok(match (abs.degree(), mode) {
        (1, _) => vec![Segment::Line(p[0], p[1])],
        (2, _) => vec![Segment::Quad(p[0], p[1], p[2])],
        (3, _) => vec![Segment::Cubic(p[0], p[1], p[2], p[3])],
        (_, HighDegree::Polyline { resolution }) => {
            vec![Segment::Polyline(decode_stroke(&abs, resolution)?)]
        }
        (_, HighDegree::Subdivide { tolerance }) => {
            let diag = BBox::of(p).map(|b| b.diagonal()).unwrap_or(0.0);
            let mut out = Vec::new();
            subdivide(p, tolerance * diag, MAX_SUBDIVISION_DEPTH, &mut out);
            out
        }
    })
}

/// Formats a coordinate with six decimals and no trailing zeros.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" || s.is_empty() {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn fmt_point(p: Point) -> String {
    format!("{} {}", fmt_num(p.x), fmt_num(p.y))
}

/// The `d` attribute for a sequence of connected segments.
pub fn path_data(segments: &[Segment]) -> String {
    let mut d = String::new();
    if let Some(first) = segments.first() {
        let _ = write!(d, "M {}", fmt_point(first.start()));
    }
    for seg in segments {
        match seg {
            Segment::Line(_, b) => {
                let _ = write!(d, " L {}", fmt_point(*b));
            }
            Segment::Quad(_, b, c) => {
                let _ = write!(d, " Q {} {}", fmt_point(*b), fmt_point(*c));
            }
            Segment::Cubic(_, b, c, e) => {
                let _ = write!(
                    d,
                    " C {} {} {}",
                    fmt_point(*b),
                    fmt_point(*c),
                    fmt_point(*e)
                );
            }
            Segment::Polyline(pts) => {
                for p in &pts[1..] {
                    let _ = write!(d, " L {}", fmt_point(*p));
                }
            }
        }
    }
    d
}

/// Minimal SVG writer with a square viewBox around given content bounds.
#[derive(Debug, Clone)]
pub struct SvgDocument {
    size: u32,
    view_min: Point,
    view_side: f64,
    body: String,
}

impl SvgDocument {
    /// `bounds` is padded by 5% of its longer side on every edge.
    pub fn new(size: u32, bounds: BBox) -> Self {
        let side = bounds.max_side().max(1e-9);
        let margin = 0.05 * side;
        let cx = 0.5 * (bounds.min.x + bounds.max.x);
        let cy = 0.5 * (bounds.min.y + bounds.max.y);
        let view_side = side + 2.0 * margin;
        Self {
            size,
            view_min: Point::new(cx - 0.5 * view_side, cy - 0.5 * view_side),
            view_side,
            body: String::new(),
        }
    }

    /// Converts a width in output pixels into viewBox units.
    pub fn px(&self, pixels: f64) -> f64 {
        pixels * self.view_side / self.size as f64
    }

    pub fn path(&mut self, d: &str, color: &str, width_px: f64) {
        let _ = writeln!(
            self.body,
            r#"  <path d="{d}" fill="none" stroke="{color}" stroke-width="{}" stroke-linecap="round" stroke-linejoin="round"/>"#,
            fmt_num(self.px(width_px))
        );
    }

    pub fn line(&mut self, a: Point, b: Point, color: &str, width_px: f64) {
        let _ = writeln!(
            self.body,
            r#"  <line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="{}"/>"#,
            fmt_num(a.x),
            fmt_num(a.y),
            fmt_num(b.x),
            fmt_num(b.y),
            fmt_num(self.px(width_px))
        );
    }

    pub fn circle(&mut self, c: Point, radius_px: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"  <circle cx="{}" cy="{}" r="{}" fill="{color}"/>"#,
            fmt_num(c.x),
            fmt_num(c.y),
            fmt_num(self.px(radius_px))
        );
    }

    /// Embeds text in `<metadata>`. The caller must not pass `]]>`.
    pub fn metadata(&mut self, text: &str) {
        let _ = writeln!(self.body, "  <metadata><![CDATA[{text}]]></metadata>");
    }

    pub fn finish(self) -> String {
        format!(
            concat!(
                "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
                "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{size}\" height=\"{size}\" viewBox=\"{x} {y} {s} {s}\">\n",
                "{body}</svg>\n"
            ),
            size = self.size,
            x = fmt_num(self.view_min.x),
            y = fmt_num(self.view_min.y),
            s = fmt_num(self.view_side),
            body = self.body
        )
    }
}

/// Bounding box of all control points of all strokes in absolute coordinates.
pub fn strokes_bounds(strokes: &[PlacedStroke]) -> Option<BBox> {
    let abs: Vec<Point> = strokes
        .iter()
        .flat_map(|s| s.absolute().points().to_vec())
        .collect();
    BBox::of(&abs)
}

/// Renders strokes as one `<path>` element each.
pub fn to_svg(strokes: &[PlacedStroke], config: &SvgConfig) -> Result<String, BezierError> {
    if strokes.is_empty() {
        return Err(BezierError::Empty);
    }
    if strokes.iter().any(|s| !s.offset.is_finite()) {
        return Err(BezierError::NonFinite);
    }
    let bounds = strokes_bounds(strokes).ok_or(BezierError::Empty)?;
    let mut doc = SvgDocument::new(config.size, bounds);
    for s in strokes {
        let segments = stroke_segments(s, config.high_degree)?;
        doc.path(&path_data(&segments), "black", config.stroke_width);
    }
    Ok(doc.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarStroke {
    pub degree: usize,
    pub offset: Point,
    pub points: Vec<Point>,
}

/// Versioned JSON record of the control polygons behind an SVG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: u32,
    pub strokes: Vec<SidecarStroke>,
}

impl Sidecar {
    pub fn from_strokes(strokes: &[PlacedStroke]) -> Self {
        Self {
            version: SIDECAR_VERSION,
            strokes: strokes
                .iter()
                .map(|s| SidecarStroke {
                    degree: s.poly.degree(),
                    offset: s.offset,
                    points: s.poly.points().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_strokes(self) -> Result<Vec<PlacedStroke>, BezierError> {
        self.strokes
            .into_iter()
            .map(|s| {
                let poly = ControlPolygon::new(s.points)?;
                if poly.degree() != s.degree {
                    return Err(BezierError::InvalidParams(
                        "sidecar degree does not match point count",
                    ));
                }
                Ok(PlacedStroke::new(s.offset, poly))
            })
            .collect()
    }
}
