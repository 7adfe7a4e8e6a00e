//! Bézier curve mathematics, sketch parsing and preprocessing, classical curve
//! fitting, and population-level evaluation of sketches.

pub mod bezier;
pub mod eval;
pub mod fit_oracle;
pub mod point;
pub mod sketch_io;
pub mod svg;
pub mod synthetic;

pub use bezier::{
    bernstein, curve_noise_cov, decasteljau, decode_stroke, eval_curve, perturb, BezierError,
    ControlPolygon, DiagonalNoise, ParamVector,
};
pub use point::{BBox, Point};
