//! Sequence-to-sequence VAE over Bézier-embedded sketches.
//!
//! Stroke mode emits one whole stroke per step: the `ΔP` increments of a
//! fixed-degree control polygon plus the stroke's start location, modeled jointly
//! by a diagonal Gaussian mixture, with a stop bit. Control-point mode emits one
//! control point per step as `(Δx, Δy)` with a categorical over three pen flags.

use bezsketch_core::sketch_io::{augment_control_points, EncodedSketch, EncodedStroke};
use bezsketch_core::Point;
use bezsketch_diffgraph::{
    clip_grad_norm, rnn_cell, run_bidirectional, sigmoid, BoundCell, BoundLinear, CellKind,
    Checkpoint, Graph, GraphError, Linear, Optimizer, OptimizerConfig, ParamStore, RnnCell, Tensor,
    Var,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_KIND: &str = "sketch-generator";

/// Log-variances are squashed into `[-LOG_VAR_BOUND, LOG_VAR_BOUND]`.
pub const LOG_VAR_BOUND: f64 = 7.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, thiserror::Error)]
pub enum GeneratorError {
    #[error("sketch has {len} steps; allowed 1..={max}")]
    Length { len: usize, max: usize },
    #[error("stroke of degree {found} in a degree-{expected} stroke-mode model")]
    Degree { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid generator config: {0}")]
    Config(&'static str),
    #[error("model has not been trained")]
    Untrained,
    #[error("temperature must be positive")]
    Temperature,
    #[error("training loss became non-finite at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("no usable training sketches")]
    EmptyData,
    #[error("empty sketch")]
    EmptySketch,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    #[default]
    Stroke,
    ControlPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub mode: GeneratorMode,
    pub latent: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub mixtures: usize,
    pub nmax: usize,
    /// Control-polygon degree in stroke mode.
    pub degree: usize,
    pub cell: CellKind,
    pub kl_weight: f64,
    /// Fraction of all training steps over which the KL weight ramps up from 0.
    pub kl_warmup: f64,
    /// Floor, in nats per latent dimension, below which KL is not penalized.
    pub free_bits: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub clip_norm: f64,
    /// Std of control-point noise added each epoch, in source units.
    pub augment_std: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            mode: GeneratorMode::Stroke,
            latent: 128,
            enc_hidden: 256,
            dec_hidden: 512,
            mixtures: 10,
            nmax: 64,
            degree: 9,
            cell: CellKind::Gru,
            kl_weight: 1.0,
            kl_warmup: 0.25,
            free_bits: 0.05,
            batch_size: 32,
            epochs: 50,
            optimizer: OptimizerConfig::adam(1e-3),
            clip_norm: 1.0,
            augment_std: 0.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.latent == 0
            || self.enc_hidden == 0
            || self.dec_hidden == 0
            || self.nmax == 0
            || self.batch_size == 0
        {
            return Err(GeneratorError::Config("dimensions must be positive"));
        }
        if self.mixtures == 0 {
            return Err(GeneratorError::Config("at least one mixture component"));
        }
        if self.mode == GeneratorMode::Stroke && !(1..=12).contains(&self.degree) {
            return Err(GeneratorError::Config("stroke degree must be in 1..=12"));
        }
        Ok(())
    }

    /// Width of the continuous per-step target.
    pub fn value_dim(&self) -> usize {
        match self.mode {
            GeneratorMode::Stroke => 2 * self.degree + 2,
            GeneratorMode::ControlPoint => 2,
        }
    }

    /// Width of one sequence element as fed to the encoder and decoder.
    pub fn step_dim(&self) -> usize {
        match self.mode {
            GeneratorMode::Stroke => self.value_dim(),
            GeneratorMode::ControlPoint => 5,
        }
    }

    fn head_dim(&self) -> usize {
        let m = self.mixtures;
        let gmm = m + 2 * m * self.value_dim();
        match self.mode {
            GeneratorMode::Stroke => gmm + 1,
            GeneratorMode::ControlPoint => gmm + 3,
        }
    }
}

/// Diagonal Gaussian mixture; `variances` are already exponentiated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl GmmParams {
    /// Builds a mixture from raw head outputs laid out as
    /// `[logits (M), means (M·D), log-variances (M·D)]`.
    pub fn from_raw(raw: &[f64], m: usize, d: usize) -> Result<Self, GeneratorError> {
        if raw.len() < m + 2 * m * d {
            return Err(GeneratorError::Dimension(format!(
                "{} raw values for M={m}, D={d}",
                raw.len()
            )));
        }
        let logits = &raw[..m];
        let lse = bezsketch_diffgraph::logsumexp(logits.iter().copied());
        let weights = logits.iter().map(|l| (l - lse).exp()).collect();
        let means = (0..m)
            .map(|k| raw[m + k * d..m + (k + 1) * d].to_vec())
            .collect();
        let variances = (0..m)
            .map(|k| {
                raw[m + m * d + k * d..m + m * d + (k + 1) * d]
                    .iter()
                    .map(|&v| squash_log_var(v).exp())
                    .collect()
            })
            .collect();
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Tempered copy: weights `∝ π^{1/τ}`, variances scaled by `τ`.
    pub fn tempered(&self, tau: f64) -> Self {
        let logs: Vec<f64> = self.weights.iter().map(|w| w.ln() / tau).collect();
        let lse = bezsketch_diffgraph::logsumexp(logs.iter().copied());
        Self {
            weights: logs.iter().map(|l| (l - lse).exp()).collect(),
            means: self.means.clone(),
            variances: self
                .variances
                .iter()
                .map(|v| v.iter().map(|x| x * tau).collect())
                .collect(),
        }
    }

    /// Draws a component by weight, then a point from it; `greedy` takes the
    /// mean of the heaviest component.
    pub fn sample(&self, greedy: bool, rng: &mut impl Rng) -> Vec<f64> {
        if greedy {
            let k = argmax(&self.weights);
            return self.means[k].clone();
        }
        let k = sample_index(&self.weights, rng);
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(&mu, &var)| {
                let e: f64 = StandardNormal.sample(rng);
                mu + var.sqrt() * e
            })
            .collect()
    }
}

fn squash_log_var(v: f64) -> f64 {
    LOG_VAR_BOUND * (v / LOG_VAR_BOUND).tanh()
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

fn sample_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// `log Σ_m π_m N(x; μ_m, diag Σ_m)` via log-sum-exp.
pub fn gmm_log_likelihood(x: &[f64], params: &GmmParams) -> f64 {
    let terms = params
        .weights
        .iter()
        .zip(&params.means)
        .zip(&params.variances)
        .map(|((w, mu), var)| {
            let mut log_n = -0.5 * x.len() as f64 * LN_2PI;
            for ((xi, m), v) in x.iter().zip(mu).zip(var) {
                log_n -= 0.5 * ((xi - m) * (xi - m) / v + v.ln());
            }
            w.ln() + log_n
        });
    bezsketch_diffgraph::logsumexp(terms.collect::<Vec<_>>().into_iter())
}

/// `−(1/2N_z) Σ (1 + log σ² − μ² − σ²)`.
pub fn kl_divergence(mu: &[f64], sigma: &[f64]) -> f64 {
    let nz = mu.len() as f64;
    let s: f64 = mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| 1.0 + (s * s).ln() - m * m - s * s)
        .sum();
    -0.5 * s / nz
}

/// Per-row GMM log-likelihood of `x` (`R × D`) under head outputs `out` (`R × ≥ M(1+2D)`).
pub fn gmm_log_likelihood_graph(
    g: &mut Graph,
    out: Var,
    x: Var,
    m: usize,
    d: usize,
) -> Result<Var, GraphError> {
    let logits = g.slice(out, 1, 0, m)?;
    let log_pi = g.log_softmax(logits, 1)?;
    let mu = g.slice(out, 1, m, m * d)?;
    let raw_lv = g.slice(out, 1, m + m * d, m * d)?;
    let lv = g.scale(raw_lv, 1.0 / LOG_VAR_BOUND);
    let lv = g.tanh(lv);
    let lv = g.scale(lv, LOG_VAR_BOUND);
    let mut tile = vec![0.0; d * m * d];
    for k in 0..m {
        for j in 0..d {
            tile[j * m * d + k * d + j] = 1.0;
        }
    }
    let tile = g.input(Tensor::matrix(d, m * d, tile));
    let mut block = vec![0.0; m * d * m];
    for k in 0..m {
        for j in 0..d {
            block[(k * d + j) * m + k] = 1.0;
        }
    }
    let block = g.input(Tensor::matrix(m * d, m, block));
    let xt = g.matmul(x, tile)?;
    let diff = g.sq_diff(xt, mu)?;
    let neg_lv = g.scale(lv, -1.0);
    let inv = g.exp(neg_lv);
    let q = g.mul(diff, inv)?;
    let q = g.add(q, lv)?;
    let per_comp = g.matmul(q, block)?;
    let log_n = g.scale(per_comp, -0.5);
    let log_n = g.add_scalar(log_n, -0.5 * d as f64 * LN_2PI);
    let comp = g.add(log_pi, log_n)?;
    g.logsumexp(comp, 1)
}

/// `log(1 + e^x)` per element of an `R × 1` column.
fn softplus(g: &mut Graph, x: Var) -> Result<Var, GraphError> {
    let rows = g.value(x).rows();
    let zero = g.input(Tensor::zeros(&[rows, 1]));
    let pair = g.concat(&[zero, x], 1)?;
    g.logsumexp(pair, 1)
}

/// Pen flag of one control-point-mode step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpFlag {
    Continue,
    StrokeEnd,
    SketchEnd,
}

impl CpFlag {
    pub fn index(self) -> usize {
        match self {
            CpFlag::Continue => 0,
            CpFlag::StrokeEnd => 1,
            CpFlag::SketchEnd => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => CpFlag::Continue,
            1 => CpFlag::StrokeEnd,
            _ => CpFlag::SketchEnd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpTuple {
    pub delta: Point,
    pub flag: CpFlag,
}

impl CpTuple {
    /// `(Δx, Δy, q1, q2, q3)`.
    pub fn as_array(&self) -> [f64; 5] {
        let mut q = [0.0; 3];
        q[self.flag.index()] = 1.0;
        [self.delta.x, self.delta.y, q[0], q[1], q[2]]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlPointModeSketch {
    pub tuples: Vec<CpTuple>,
}

/// Flattens absolute control points in stroke order into successive differences.
///
/// The first delta is taken from the origin. The last point of every stroke is
/// flagged stroke-end, except the sketch's final point, which is flagged sketch-end.
pub fn build_cp_sequence(sketch: &EncodedSketch) -> Result<ControlPointModeSketch, GeneratorError> {
    let strokes: Vec<&EncodedStroke> = sketch
        .strokes
        .iter()
        .filter(|s| !s.points.is_empty())
        .collect();
    if strokes.is_empty() {
        return Err(GeneratorError::EmptySketch);
    }
    let mut tuples = Vec::with_capacity(sketch.control_point_count());
    let mut prev = Point::ORIGIN;
    for (j, s) in strokes.iter().enumerate() {
        for (i, &p) in s.points.iter().enumerate() {
            let abs = p + s.offset;
            let flag = if i + 1 < s.points.len() {
                CpFlag::Continue
            } else if j + 1 < strokes.len() {
                CpFlag::StrokeEnd
            } else {
                CpFlag::SketchEnd
            };
            tuples.push(CpTuple {
                delta: abs - prev,
                flag,
            });
            prev = abs;
        }
    }
    Ok(ControlPointModeSketch { tuples })
}

impl ControlPointModeSketch {
    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Inverse of [`build_cp_sequence`]. Strokes with fewer than two control points
    /// cannot form a curve and are dropped.
    pub fn to_encoded(&self) -> EncodedSketch {
        let mut strokes = Vec::new();
        let mut current: Vec<Point> = Vec::new();
        let mut pos = Point::ORIGIN;
        let mut flush = |current: &mut Vec<Point>| {
            if current.len() >= 2 {
                let offset = current[0];
                strokes.push(EncodedStroke {
                    degree: current.len() - 1,
                    offset,
                    points: current.iter().map(|&p| p - offset).collect(),
                    loss: None,
                });
            }
            current.clear();
        };
        for t in &self.tuples {
            pos += t.delta;
            current.push(pos);
            match t.flag {
                CpFlag::Continue => {}
                CpFlag::StrokeEnd => flush(&mut current),
                CpFlag::SketchEnd => {
                    flush(&mut current);
                    break;
                }
            }
        }
        flush(&mut current);
        EncodedSketch {
            id: 0,
            category: None,
            raw_len: 0,
            strokes,
        }
    }
}

/// One stroke-mode step: a degree-`n` polygon with `P0 = 0` and its start location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeStep {
    pub points: Vec<Point>,
    pub start: Point,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrokeModeSketch {
    pub degree: usize,
    pub strokes: Vec<StrokeStep>,
}

impl StrokeModeSketch {
    pub fn from_encoded(sketch: &EncodedSketch, degree: usize) -> Result<Self, GeneratorError> {
        if sketch.strokes.is_empty() {
            return Err(GeneratorError::EmptySketch);
        }
        let mut strokes = Vec::with_capacity(sketch.strokes.len());
        for s in &sketch.strokes {
            if s.points.len() != degree + 1 {
                return Err(GeneratorError::Degree {
                    expected: degree,
                    found: s.points.len().saturating_sub(1),
                });
            }
            let p0 = s.points[0];
            strokes.push(StrokeStep {
                points: s.points.iter().map(|&p| p - p0).collect(),
                start: s.offset + p0,
            });
        }
        Ok(Self { degree, strokes })
    }

    pub fn to_encoded(&self) -> EncodedSketch {
        let strokes = self
            .strokes
            .iter()
            .map(|s| EncodedStroke {
                degree: self.degree,
                offset: s.start,
                points: s.points.clone(),
                loss: None,
            })
            .collect();
        EncodedSketch {
            id: 0,
            category: None,
            raw_len: 0,
            strokes,
        }
    }

    /// `[Δx1, Δy1, …, Δxn, Δyn, vx, vy]` per stroke, in source units.
    fn step_vectors(&self) -> Vec<Vec<f64>> {
        self.strokes
            .iter()
            .map(|s| {
                let mut v = Vec::with_capacity(2 * self.degree + 2);
                for w in s.points.windows(2) {
                    let d = w[1] - w[0];
                    v.push(d.x);
                    v.push(d.y);
                }
                v.push(s.start.x);
                v.push(s.start.y);
                v
            })
            .collect()
    }

    fn from_step_vectors(degree: usize, steps: &[Vec<f64>]) -> Self {
        let strokes = steps
            .iter()
            .map(|v| {
                let mut p = Point::ORIGIN;
                let mut points = vec![p];
                for i in 0..degree {
                    p += Point::new(v[2 * i], v[2 * i + 1]);
                    points.push(p);
                }
                StrokeStep {
                    points,
                    start: Point::new(v[2 * degree], v[2 * degree + 1]),
                }
            })
            .collect();
        Self { degree, strokes }
    }
}

/// Affine standardization of continuous step values, fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Stroke mode shares one scale across all `ΔP` values and one mean/scale across
    /// both start coordinates; control-point mode shares one scale across `Δ`.
    pub fn fit(config: &GeneratorConfig, values: &[Vec<f64>]) -> Self {
        let d = config.value_dim();
        let rms = |it: &mut dyn Iterator<Item = f64>| {
            let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
            let r = if n > 0 { (s / n as f64).sqrt() } else { 1.0 };
            if r > 1e-12 {
                r
            } else {
                1.0
            }
        };
        match config.mode {
            GeneratorMode::ControlPoint => {
                let s = rms(&mut values.iter().flat_map(|v| v.iter().copied()));
                Self {
                    mean: vec![0.0; 2],
                    scale: vec![s; 2],
                }
            }
            GeneratorMode::Stroke => {
                let n = 2 * config.degree;
                let dp = rms(&mut values.iter().flat_map(|v| v[..n].iter().copied()));
                let count = values.len().max(1) as f64;
                let vm: Vec<f64> = (0..2)
                    .map(|k| values.iter().map(|v| v[n + k]).sum::<f64>() / count)
                    .collect();
                let vm_ref = &vm;
                let vs = rms(&mut values
                    .iter()
                    .flat_map(|v| (0..2).map(move |k| v[n + k] - vm_ref[k])));
                let mut mean = vec![0.0; d];
                let mut scale = vec![dp; d];
                mean[n] = vm[0];
                mean[n + 1] = vm[1];
                scale[n] = vs;
                scale[n + 1] = vs;
                Self { mean, scale }
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }
}

/// A sketch as standardized model steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    /// Continuous targets, `value_dim` wide.
    pub values: Vec<Vec<f64>>,
    /// Flag index per step (control-point mode only).
    pub flags: Vec<usize>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Element `j` as fed back into the networks.
    fn element(&self, j: usize, mode: GeneratorMode) -> Vec<f64> {
        match mode {
            GeneratorMode::Stroke => self.values[j].clone(),
            GeneratorMode::ControlPoint => {
                let mut e = self.values[j].clone();
                let mut q = [0.0; 3];
                q[self.flags[j]] = 1.0;
                e.extend_from_slice(&q);
                e
            }
        }
    }
}

fn start_token(mode: GeneratorMode, dim: usize) -> Vec<f64> {
    let mut t = vec![0.0; dim];
    if mode == GeneratorMode::ControlPoint {
        t[2] = 1.0;
    }
    t
}

/// Padding element after a control-point sequence ends.
fn cp_pad() -> Vec<f64> {
    vec![0.0, 0.0, 0.0, 0.0, 1.0]
}

/// Raw continuous values (source units) and flags for a sketch.
fn raw_steps(
    config: &GeneratorConfig,
    sketch: &EncodedSketch,
) -> Result<(Vec<Vec<f64>>, Vec<usize>), GeneratorError> {
    match config.mode {
        GeneratorMode::Stroke => {
            let s = StrokeModeSketch::from_encoded(sketch, config.degree)?;
            Ok((s.step_vectors(), Vec::new()))
        }
        GeneratorMode::ControlPoint => {
            let cp = build_cp_sequence(sketch)?;
            let values = cp
                .tuples
                .iter()
                .map(|t| vec![t.delta.x, t.delta.y])
                .collect();
            let flags = cp.tuples.iter().map(|t| t.flag.index()).collect();
            Ok((values, flags))
        }
    }
}

/// Latent code with its posterior diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Decoder output for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub gmm: GmmParams,
    /// Stroke mode: stop probability.
    pub stop: Option<f64>,
    /// Control-point mode: probabilities of `(continue, stroke-end, sketch-end)`.
    pub flags: Option<[f64; 3]>,
    pub state: Vec<f64>,
    /// Flag logits before normalization (control-point mode).
    flag_logits: Option<[f64; 3]>,
}

/// Parameter layout of the VAE.
#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    enc_fwd: RnnCell,
    enc_bwd: RnnCell,
    to_mu: Linear,
    to_logvar: Linear,
    init: Linear,
    dec: RnnCell,
    head: Linear,
}

struct BoundDecoder {
    init: BoundLinear,
    dec: BoundCell,
    head: BoundLinear,
}

/// Padded teacher-forcing batch.
#[derive(Clone, Debug)]
pub struct GenBatch {
    b: usize,
    steps: usize,
    enc_inputs: Vec<Tensor>,
    enc_masks: Vec<Tensor>,
    dec_prev: Vec<Tensor>,
    /// Step-major `(steps·B) × D`.
    target: Tensor,
    value_mask: Tensor,
    stop_target: Tensor,
    stop_mask: Tensor,
    flag_target: Tensor,
    /// `B × N_z` reparameterization noise.
    eps: Tensor,
}

impl GenBatch {
    pub fn new(
        config: &GeneratorConfig,
        seqs: &[&Sequence],
        eps: Tensor,
    ) -> Result<Self, GeneratorError> {
        if seqs.is_empty() {
            return Err(GeneratorError::EmptyData);
        }
        let b = seqs.len();
        let mode = config.mode;
        let sd = config.step_dim();
        let d = config.value_dim();
        let he = config.enc_hidden;
        for s in seqs {
            if s.is_empty() || s.len() > config.nmax {
                return Err(GeneratorError::Length {
                    len: s.len(),
                    max: config.nmax,
                });
            }
        }
        let enc_steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let steps = match mode {
            GeneratorMode::Stroke => enc_steps,
            GeneratorMode::ControlPoint => config.nmax,
        };
        let mut enc_inputs = vec![vec![0.0; b * sd]; enc_steps];
        let mut enc_masks = vec![vec![0.0; b * he]; enc_steps];
        let mut dec_prev = vec![vec![0.0; b * sd]; steps];
        let rows = steps * b;
        let mut target = vec![0.0; rows * d];
        let mut value_mask = vec![0.0; rows];
        let mut stop_target = vec![0.0; rows];
        let mut stop_mask = vec![0.0; rows];
        let mut flag_target = vec![0.0; rows * 3];
        for (r, s) in seqs.iter().enumerate() {
            let n = s.len();
            for j in 0..enc_steps.min(n) {
                enc_inputs[j][r * sd..(r + 1) * sd].copy_from_slice(&s.element(j, mode));
                enc_masks[j][r * he..(r + 1) * he]
                    .iter_mut()
                    .for_each(|m| *m = 1.0);
            }
            for j in 0..steps {
                let prev = if j == 0 {
                    start_token(mode, sd)
                } else if j - 1 < n {
                    s.element(j - 1, mode)
                } else {
                    cp_pad()
                };
                dec_prev[j][r * sd..(r + 1) * sd].copy_from_slice(&prev);
                let row = j * b + r;
                if j < n {
                    target[row * d..(row + 1) * d].copy_from_slice(&s.values[j]);
                    value_mask[row] = 1.0;
                    stop_mask[row] = 1.0;
                    stop_target[row] = if j + 1 == n { 1.0 } else { 0.0 };
                }
                if mode == GeneratorMode::ControlPoint {
                    let f = if j < n { s.flags[j] } else { 2 };
                    flag_target[row * 3 + f] = 1.0;
                }
            }
        }
        if eps.dims() != (b, config.latent) {
            return Err(GeneratorError::Dimension(format!(
                "noise {:?} for batch {b}",
                eps.dims()
            )));
        }
        Ok(Self {
            b,
            steps,
            enc_inputs: enc_inputs
                .into_iter()
                .map(|v| Tensor::matrix(b, sd, v))
                .collect(),
            enc_masks: enc_masks
                .into_iter()
                .map(|v| Tensor::matrix(b, he, v))
                .collect(),
            dec_prev: dec_prev
                .into_iter()
                .map(|v| Tensor::matrix(b, sd, v))
                .collect(),
            target: Tensor::matrix(rows, d, target),
            value_mask: Tensor::matrix(rows, 1, value_mask),
            stop_target: Tensor::matrix(rows, 1, stop_target),
            stop_mask: Tensor::matrix(rows, 1, stop_mask),
            flag_target: Tensor::matrix(rows, 3, flag_target),
            eps,
        })
    }
}

/// Graph nodes of the training objective. `total = recon + stop + kl_term`.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub recon: Var,
    pub stop: Var,
    /// Raw KL per latent dimension, batch mean.
    pub kl: Var,
    /// Weighted, floored KL actually added to the loss.
    pub kl_term: Var,
}

impl GeneratorNet {
    pub fn new(
        config: GeneratorConfig,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, GeneratorError> {
        config.validate()?;
        let sd = config.step_dim();
        let (he, hd, nz) = (config.enc_hidden, config.dec_hidden, config.latent);
        let enc_fwd = RnnCell::new(store, "gen.enc_fwd", config.cell, sd, he, rng);
        let enc_bwd = RnnCell::new(store, "gen.enc_bwd", config.cell, sd, he, rng);
        let to_mu = Linear::new(store, "gen.mu", 2 * he, nz, rng);
        let to_logvar = Linear::new(store, "gen.logvar", 2 * he, nz, rng);
        let init = Linear::new(store, "gen.init", nz, hd, rng);
        let dec = RnnCell::new(store, "gen.dec", config.cell, sd + nz, hd, rng);
        let head = Linear::new(store, "gen.head", hd, config.head_dim(), rng);
        Ok(Self {
            config,
            enc_fwd,
            enc_bwd,
            to_mu,
            to_logvar,
            init,
            dec,
            head,
        })
    }

    /// Posterior mean and log-variance, each `B × N_z`.
    fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &[Tensor],
        masks: &[Tensor],
    ) -> Result<(Var, Var), GraphError> {
        let fwd = self.enc_fwd.bind(g, store);
        let bwd = self.enc_bwd.bind(g, store);
        let xs: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let ms: Vec<Option<Var>> = masks.iter().map(|t| Some(g.input(t.clone()))).collect();
        let run = run_bidirectional(g, &fwd, &bwd, &xs, &ms, false)?;
        let mu = self.to_mu.bind(g, store).forward(g, run.last)?;
        let logvar = self.to_logvar.bind(g, store).forward(g, run.last)?;
        Ok((mu, logvar))
    }

    fn bind_decoder(&self, g: &mut Graph, store: &ParamStore) -> BoundDecoder {
        BoundDecoder {
            init: self.init.bind(g, store),
            dec: self.dec.bind(g, store),
            head: self.head.bind(g, store),
        }
    }

    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &GenBatch,
        kl_weight: f64,
    ) -> Result<LossNodes, GraphError> {
        let cfg = &self.config;
        let (m, d) = (cfg.mixtures, cfg.value_dim());
        let (mu, logvar) = self.encode(g, store, &batch.enc_inputs, &batch.enc_masks)?;
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let eps = g.input(batch.eps.clone());
        let noise = g.mul(sigma, eps)?;
        let z = g.add(mu, noise)?;

        let dec = self.bind_decoder(g, store);
        let h0 = dec.init.forward(g, z)?;
        let mut state = g.tanh(h0);
        let mut states = Vec::with_capacity(batch.steps);
        for prev in &batch.dec_prev {
            let p = g.input(prev.clone());
            let input = g.concat(&[p, z], 1)?;
            state = rnn_cell(g, input, state, &dec.dec)?;
            states.push(state);
        }
        let stacked = g.concat(&states, 0)?;
        let out = dec.head.forward(g, stacked)?;
        let norm = 1.0 / (cfg.nmax as f64 * batch.b as f64);

        let target = g.input(batch.target.clone());
        let ll = gmm_log_likelihood_graph(g, out, target, m, d)?;
        let vmask = g.input(batch.value_mask.clone());
        let ll = g.mul(ll, vmask)?;
        let ll = g.sum(ll);
        let recon = g.scale(ll, -norm);

        let gmm_width = m + 2 * m * d;
        let stop = match cfg.mode {
            GeneratorMode::Stroke => {
                let logit = g.slice(out, 1, gmm_width, 1)?;
                let neg = g.scale(logit, -1.0);
                let sp_pos = softplus(g, logit)?;
                let sp_neg = softplus(g, neg)?;
                let b = g.input(batch.stop_target.clone());
                let not_b = g.input(batch.stop_target.map(|v| 1.0 - v));
                let a = g.mul(b, sp_neg)?;
                let c = g.mul(not_b, sp_pos)?;
                let bce = g.add(a, c)?;
                let smask = g.input(batch.stop_mask.clone());
                let bce = g.mul(bce, smask)?;
                let s = g.sum(bce);
                g.scale(s, norm)
            }
            GeneratorMode::ControlPoint => {
                let logits = g.slice(out, 1, gmm_width, 3)?;
                let logp = g.log_softmax(logits, 1)?;
                let tgt = g.input(batch.flag_target.clone());
                let picked = g.mul(logp, tgt)?;
                let s = g.sum(picked);
                g.scale(s, -norm)
            }
        };

        let mu_sq = g.square(mu);
        let var = g.exp(logvar);
        let t = g.add_scalar(logvar, 1.0);
        let t = g.sub(t, mu_sq)?;
        let t = g.sub(t, var)?;
        let s = g.sum(t);
        let kl = g.scale(s, -0.5 / (cfg.latent as f64 * batch.b as f64));
        let kl_term = if g.value(kl).item() < cfg.free_bits {
            g.input(Tensor::scalar(kl_weight * cfg.free_bits))
        } else {
            g.scale(kl, kl_weight)
        };
        let rs = g.add(recon, stop)?;
        let total = g.add(rs, kl_term)?;
        Ok(LossNodes {
            total,
            recon,
            stop,
            kl,
            kl_term,
        })
    }
}

/// Per-epoch means of the loss components.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenEpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub total: f64,
    pub recon: f64,
    pub stop: f64,
    pub kl: f64,
    pub kl_weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenHistory {
    pub epochs: Vec<GenEpochStats>,
    /// Sketches left out for exceeding `nmax`.
    pub skipped: usize,
}

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub stop: f64,
    pub kl: f64,
    pub kl_term: f64,
}

/// A generated sketch in its mode's native form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratedSketch {
    Stroke(StrokeModeSketch),
    ControlPoint(ControlPointModeSketch),
}

impl GeneratedSketch {
    pub fn to_encoded(&self) -> EncodedSketch {
        match self {
            GeneratedSketch::Stroke(s) => s.to_encoded(),
            GeneratedSketch::ControlPoint(s) => s.to_encoded(),
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            GeneratedSketch::Stroke(s) => s.strokes.len(),
            GeneratedSketch::ControlPoint(s) => s.tuples.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sketch: GeneratedSketch,
    /// The stop bit (or sketch-end flag) fired before `nmax`.
    pub stopped: bool,
    /// Stop probability at each step (stroke mode).
    pub stop_probs: Vec<f64>,
}

/// Trained VAE with its data normalizer.
#[derive(Clone, Debug)]
pub struct GeneratorModel {
    pub net: GeneratorNet,
    pub store: ParamStore,
    pub normalizer: Normalizer,
    pub trained: bool,
}

/// Incremental decoder that binds parameters once and grows one graph.
struct DecoderSession<'a> {
    model: &'a GeneratorModel,
    g: Graph,
    dec: BoundDecoder,
    z: Var,
    state: Var,
}

impl<'a> DecoderSession<'a> {
    fn new(
        model: &'a GeneratorModel,
        z: &[f64],
        state: Option<&[f64]>,
    ) -> Result<Self, GeneratorError> {
        let cfg = &model.net.config;
        if z.len() != cfg.latent {
            return Err(GeneratorError::Dimension(format!(
                "latent of width {} for N_z={}",
                z.len(),
                cfg.latent
            )));
        }
        let mut g = Graph::new();
        let dec = model.net.bind_decoder(&mut g, &model.store);
        let z = g.input(Tensor::matrix(1, z.len(), z.to_vec()));
        let state = match state {
            Some(s) => {
                if s.len() != cfg.dec_hidden {
                    return Err(GeneratorError::Dimension(format!(
                        "state of width {}",
                        s.len()
                    )));
                }
                g.input(Tensor::matrix(1, s.len(), s.to_vec()))
            }
            None => {
                let h0 = dec.init.forward(&mut g, z)?;
                g.tanh(h0)
            }
        };
        Ok(Self {
            model,
            g,
            dec,
            z,
            state,
        })
    }

    fn step(&mut self, prev: &[f64]) -> Result<DecodeOutput, GeneratorError> {
        let cfg = &self.model.net.config;
        if prev.len() != cfg.step_dim() {
            return Err(GeneratorError::Dimension(format!(
                "step of width {} for {}",
                prev.len(),
                cfg.step_dim()
            )));
        }
        let g = &mut self.g;
        let p = g.input(Tensor::matrix(1, prev.len(), prev.to_vec()));
        let input = g.concat(&[p, self.z], 1)?;
        self.state = rnn_cell(g, input, self.state, &self.dec.dec)?;
        let out = self.dec.head.forward(g, self.state)?;
        let raw = g.value(out).data();
        let (m, d) = (cfg.mixtures, cfg.value_dim());
        let gmm = GmmParams::from_raw(raw, m, d)?;
        let w = m + 2 * m * d;
        let (stop, flags, flag_logits) = match cfg.mode {
            GeneratorMode::Stroke => (Some(sigmoid(raw[w])), None, None),
            GeneratorMode::ControlPoint => {
                let l = [raw[w], raw[w + 1], raw[w + 2]];
                let lse = bezsketch_diffgraph::logsumexp(l.iter().copied());
                (None, Some(l.map(|x| (x - lse).exp())), Some(l))
            }
        };
        Ok(DecodeOutput {
            gmm,
            stop,
            flags,
            state: g.value(self.state).data().to_vec(),
            flag_logits,
        })
    }
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self, GeneratorError> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.value_dim();
        let net = GeneratorNet::new(config, &mut store, &mut rng)?;
        Ok(Self {
            net,
            store,
            normalizer: Normalizer {
                mean: vec![0.0; d],
                scale: vec![1.0; d],
            },
            trained: false,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.net.config
    }

    /// Standardized model steps for a sketch.
    pub fn sequence(&self, sketch: &EncodedSketch) -> Result<Sequence, GeneratorError> {
        let (values, flags) = raw_steps(&self.net.config, sketch)?;
        Ok(Sequence {
            values: values.iter().map(|v| self.normalizer.apply(v)).collect(),
            flags,
        })
    }

    /// Posterior sample `z = μ + σ ⊙ ε`; without an RNG, `ε = 0`.
    pub fn vae_encode(
        &self,
        sketch: &EncodedSketch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LatentCode, GeneratorError> {
        let seq = self.sequence(sketch)?;
        let cfg = &self.net.config;
        if seq.len() > cfg.nmax {
            return Err(GeneratorError::Length {
                len: seq.len(),
                max: cfg.nmax,
            });
        }
        let mode = cfg.mode;
        let inputs: Vec<Tensor> = (0..seq.len())
            .map(|j| Tensor::matrix(1, cfg.step_dim(), seq.element(j, mode)))
            .collect();
        let masks: Vec<Tensor> = (0..seq.len())
            .map(|_| Tensor::full(&[1, cfg.enc_hidden], 1.0))
            .collect();
        let mut g = Graph::new();
        let (mu, logvar) = self.net.encode(&mut g, &self.store, &inputs, &masks)?;
        let mu = g.value(mu).data().to_vec();
        let sigma: Vec<f64> = g
            .value(logvar)
            .data()
            .iter()
            .map(|lv| (0.5 * lv).exp())
            .collect();
        let z = match rng {
            Some(rng) => mu
                .iter()
                .zip(&sigma)
                .map(|(m, s)| {
                    let e: f64 = StandardNormal.sample(rng);
                    m + s * e
                })
                .collect(),
            None => mu.clone(),
        };
        Ok(LatentCode { z, mu, sigma })
    }

    /// Initial decoder state `tanh(W z + b)`.
    pub fn initial_state(&self, z: &[f64]) -> Result<Vec<f64>, GeneratorError> {
        let s = DecoderSession::new(self, z, None)?;
        Ok(s.g.value(s.state).data().to_vec())
    }

    /// One decoder step from a standardized previous element.
    pub fn decode_step(
        &self,
        prev: &[f64],
        z: &[f64],
        state: &[f64],
    ) -> Result<DecodeOutput, GeneratorError> {
        DecoderSession::new(self, z, Some(state))?.step(prev)
    }

    pub fn sample_unconditional(
        &self,
        temperature: f64,
        seed: u64,
    ) -> Result<Sample, GeneratorError> {
        if !self.trained {
            return Err(GeneratorError::Untrained);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..self.net.config.latent)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        self.decode_from(&z, temperature, &mut rng)
    }

    pub fn sample_conditional(
        &self,
        input: &EncodedSketch,
        temperature: f64,
        seed: u64,
    ) -> Result<Sample, GeneratorError> {
        if !self.trained {
            return Err(GeneratorError::Untrained);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let code = self.vae_encode(input, Some(&mut rng))?;
        self.decode_from(&code.z, temperature, &mut rng)
    }

    /// Autoregressive decoding from a latent code. Temperatures below `1e-6`
    /// decode greedily.
    pub fn decode_from(
        &self,
        z: &[f64],
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Sample, GeneratorError> {
        if !(temperature > 0.0) {
            return Err(GeneratorError::Temperature);
        }
        let greedy = temperature < 1e-6;
        let cfg = &self.net.config;
        let mode = cfg.mode;
        let mut session = DecoderSession::new(self, z, None)?;
        let mut prev = start_token(mode, cfg.step_dim());
        let mut values: Vec<Vec<f64>> = Vec::new();
        let mut flags: Vec<CpFlag> = Vec::new();
        let mut stop_probs = Vec::new();
        let mut stopped = false;
        for _ in 0..cfg.nmax {
            let out = session.step(&prev)?;
            let gmm = if greedy {
                out.gmm.clone()
            } else {
                out.gmm.tempered(temperature)
            };
            let v = gmm.sample(greedy, rng);
            values.push(self.normalizer.invert(&v));
            match mode {
                GeneratorMode::Stroke => {
                    let p = out.stop.expect("stroke mode has a stop bit");
                    stop_probs.push(p);
                    prev = v;
                    if p > 0.5 {
                        stopped = true;
                        break;
                    }
                }
                GeneratorMode::ControlPoint => {
                    let logits = out.flag_logits.expect("control-point mode has flags");
                    let f = if greedy {
                        argmax(&logits)
                    } else {
                        let t: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
                        let lse = bezsketch_diffgraph::logsumexp(t.iter().copied());
                        sample_index(&t.iter().map(|x| (x - lse).exp()).collect::<Vec<_>>(), rng)
                    };
                    let flag = CpFlag::from_index(f);
                    flags.push(flag);
                    let mut next = v;
                    next.extend_from_slice(
                        &CpTuple {
                            delta: Point::ORIGIN,
                            flag,
                        }
                        .as_array()[2..],
                    );
                    prev = next;
                    if flag == CpFlag::SketchEnd {
                        stopped = true;
                        break;
                    }
                }
            }
        }
        let sketch = match mode {
            GeneratorMode::Stroke => {
                GeneratedSketch::Stroke(StrokeModeSketch::from_step_vectors(cfg.degree, &values))
            }
            GeneratorMode::ControlPoint => GeneratedSketch::ControlPoint(ControlPointModeSketch {
                tuples: values
                    .iter()
                    .zip(&flags)
                    .map(|(v, &flag)| CpTuple {
                        delta: Point::new(v[0], v[1]),
                        flag,
                    })
                    .collect(),
            }),
        };
        Ok(Sample {
            sketch,
            stopped,
            stop_probs,
        })
    }

    /// Loss breakdown on a batch of sketches with `ε = 0`.
    pub fn evaluate(
        &self,
        sketches: &[EncodedSketch],
        kl_weight: f64,
    ) -> Result<LossBreakdown, GeneratorError> {
        let seqs: Vec<Sequence> = sketches
            .iter()
            .map(|s| self.sequence(s))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&Sequence> = seqs.iter().collect();
        let cfg = &self.net.config;
        let batch = GenBatch::new(cfg, &refs, Tensor::zeros(&[refs.len(), cfg.latent]))?;
        let mut g = Graph::new();
        let nodes = self.net.loss(&mut g, &self.store, &batch, kl_weight)?;
        Ok(breakdown(&g, &nodes))
    }

    pub fn to_checkpoint(
        &self,
        optimizer: Option<&Optimizer>,
        history: &GenHistory,
    ) -> Result<Checkpoint, GeneratorError> {
        let mut ckpt = Checkpoint::new(CHECKPOINT_KIND, &self.net.config, &self.store, optimizer)?;
        ckpt.metadata = serde_json::json!({
            "trained": self.trained,
            "normalizer": self.normalizer,
            "history": history,
        });
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, GeneratorError> {
        ckpt.verify()?;
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let config: GeneratorConfig = ckpt.config_as()?;
        let mut model = Self::new(config, 0)?;
        model.store.load_named(&ckpt.params)?;
        model.trained = ckpt
            .metadata
            .get("trained")
            .and_then(|v| v.as_bool())
            .unwrap_or(false);
        if let Some(n) = ckpt.metadata.get("normalizer") {
            model.normalizer = serde_json::from_value(n.clone()).map_err(GraphError::from)?;
        }
        Ok(model)
    }
}

fn breakdown(g: &Graph, n: &LossNodes) -> LossBreakdown {
    LossBreakdown {
        total: g.value(n.total).item(),
        recon: g.value(n.recon).item(),
        stop: g.value(n.stop).item(),
        kl: g.value(n.kl).item(),
        kl_term: g.value(n.kl_term).item(),
    }
}

/// Mini-batch training state for the generator.
pub struct GeneratorTrainer {
    pub model: GeneratorModel,
    pub optimizer: Optimizer,
    pub history: GenHistory,
    data: Vec<EncodedSketch>,
    total_steps: usize,
    rng: ChaCha8Rng,
}

impl GeneratorTrainer {
    /// Fits the normalizer on `data`; sketches longer than `nmax` are left out.
    pub fn new(
        config: GeneratorConfig,
        data: &[EncodedSketch],
        seed: u64,
    ) -> Result<Self, GeneratorError> {
        let mut model = GeneratorModel::new(config, seed)?;
        let cfg = model.net.config.clone();
        let mut kept = Vec::new();
        let mut raw_values = Vec::new();
        let mut skipped = 0;
        for s in data {
            if s.strokes.is_empty() {
                skipped += 1;
                continue;
            }
            let (values, _) = raw_steps(&cfg, s)?;
            if values.len() > cfg.nmax {
                skipped += 1;
                continue;
            }
            raw_values.extend(values);
            kept.push(s.clone());
        }
        if kept.is_empty() {
            return Err(GeneratorError::EmptyData);
        }
        if skipped > 0 {
            log::warn!("{skipped} sketches left out of generator training");
        }
        model.normalizer = Normalizer::fit(&cfg, &raw_values);
        let optimizer = Optimizer::new(cfg.optimizer.clone(), &model.store);
        let batches = kept.len().div_ceil(cfg.batch_size);
        Ok(Self {
            model,
            optimizer,
            history: GenHistory {
                epochs: Vec::new(),
                skipped,
            },
            total_steps: batches * cfg.epochs,
            data: kept,
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)),
        })
    }

    pub fn data(&self) -> &[EncodedSketch] {
        &self.data
    }

    /// Linear warm-up of the KL weight over the first `kl_warmup` of all steps.
    pub fn kl_weight_at(&self, step: u64) -> f64 {
        let cfg = &self.model.net.config;
        let ramp = cfg.kl_warmup * self.total_steps as f64;
        if ramp <= 0.0 {
            return cfg.kl_weight;
        }
        cfg.kl_weight * (step as f64 / ramp).min(1.0)
    }

    pub fn train_step(
        &mut self,
        sketches: &[EncodedSketch],
    ) -> Result<LossBreakdown, GeneratorError> {
        let cfg = self.model.net.config.clone();
        let seqs: Vec<Sequence> = sketches
            .iter()
            .map(|s| self.model.sequence(s))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&Sequence> = seqs.iter().collect();
        let eps: Vec<f64> = (0..refs.len() * cfg.latent)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        let batch = GenBatch::new(&cfg, &refs, Tensor::matrix(refs.len(), cfg.latent, eps))?;
        let step = self.optimizer.steps_taken();
        let weight = self.kl_weight_at(step);
        let mut g = Graph::new();
        let nodes = self
            .model
            .net
            .loss(&mut g, &self.model.store, &batch, weight)?;
        let b = breakdown(&g, &nodes);
        let epoch = self.history.epochs.len();
        if !b.total.is_finite() {
            return Err(GeneratorError::Diverged {
                epoch,
                step: step as usize,
            });
        }
        let grads = g.backward(nodes.total)?;
        self.model.store.zero_grads();
        g.accumulate_into(&grads, &mut self.model.store);
        clip_grad_norm(&mut self.model.store, cfg.clip_norm);
        self.optimizer
            .step(&mut self.model.store)
            .map_err(|e| match e {
                GraphError::NonFiniteGradient => GeneratorError::Diverged {
                    epoch,
                    step: step as usize,
                },
                other => other.into(),
            })?;
        Ok(b)
    }

    pub fn train_epoch(&mut self) -> Result<GenEpochStats, GeneratorError> {
        let cfg = self.model.net.config.clone();
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = LossBreakdown::default();
        let mut count = 0usize;
        let mut steps = 0;
        let weight_start = self.kl_weight_at(self.optimizer.steps_taken());
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch: Vec<EncodedSketch> =
                chunk.iter().map(|&i| self.data[i].clone()).collect();
            if cfg.augment_std > 0.0 {
                batch = batch
                    .iter()
                    .map(|s| augment_control_points(s, cfg.augment_std, &mut self.rng))
                    .collect();
            }
            let b = self.train_step(&batch)?;
            let w = chunk.len() as f64;
            sums.total += b.total * w;
            sums.recon += b.recon * w;
            sums.stop += b.stop * w;
            sums.kl += b.kl * w;
            count += chunk.len();
            steps += 1;
        }
        let n = count as f64;
        let stats = GenEpochStats {
            epoch: self.history.epochs.len() + 1,
            steps,
            total: sums.total / n,
            recon: sums.recon / n,
            stop: sums.stop / n,
            kl: sums.kl / n,
            kl_weight: weight_start,
        };
        log::info!(
            "generator epoch {} total {:.4} recon {:.4} stop {:.4} kl {:.4}",
            stats.epoch,
            stats.total,
            stats.recon,
            stats.stop,
            stats.kl
        );
        self.history.epochs.push(stats.clone());
        self.model.trained = true;
        Ok(stats)
    }
}

/// Trains a fresh generator for `config.epochs` epochs; `on_epoch` runs after each.
pub fn train_generator(
    data: &[EncodedSketch],
    config: GeneratorConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&GeneratorTrainer) -> Result<(), GeneratorError>,
) -> Result<GeneratorTrainer, GeneratorError> {
    let epochs = config.epochs;
    let mut trainer = GeneratorTrainer::new(config, data, seed)?;
    for _ in 0..epochs {
        trainer.train_epoch()?;
        on_epoch(&trainer)?;
    }
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stroke(degree: usize, offset: Point, seed: f64) -> EncodedStroke {
        let points = (0..=degree)
            .map(|i| Point::new(i as f64 * (1.0 + seed), (i as f64 * seed).sin()))
            .collect();
        EncodedStroke {
            degree,
            offset,
            points,
            loss: None,
        }
    }

    fn sketch(degrees: &[usize]) -> EncodedSketch {
        let strokes = degrees
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                stroke(
                    d,
                    Point::new(10.0 * k as f64, 5.0 - k as f64),
                    0.3 * k as f64,
                )
            })
            .collect();
        EncodedSketch {
            id: 0,
            category: None,
            raw_len: 0,
            strokes,
        }
    }

    fn tiny(mode: GeneratorMode) -> GeneratorConfig {
        GeneratorConfig {
            mode,
            latent: 3,
            enc_hidden: 4,
            dec_hidden: 5,
            mixtures: 2,
            nmax: 12,
            degree: 3,
            batch_size: 4,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn cp_sequence_counts_and_flags() {
        let one = build_cp_sequence(&sketch(&[3])).unwrap();
        assert_eq!(one.len(), 4);
        assert_eq!(one.tuples[3].flag, CpFlag::SketchEnd);
        assert!(one.tuples[..3].iter().all(|t| t.flag == CpFlag::Continue));
        let two = build_cp_sequence(&sketch(&[3, 4])).unwrap();
        assert_eq!(two.len(), 9);
        assert_eq!(two.tuples[3].flag, CpFlag::StrokeEnd);
        assert_eq!(two.tuples[8].flag, CpFlag::SketchEnd);
        for t in &two.tuples {
            assert_eq!(t.as_array()[2..].iter().sum::<f64>(), 1.0);
        }
        assert!(matches!(
            build_cp_sequence(&sketch(&[])),
            Err(GeneratorError::EmptySketch)
        ));
    }

    #[test]
    fn cp_sequence_round_trips() {
        let s = sketch(&[3, 4, 2]);
        let back = build_cp_sequence(&s).unwrap().to_encoded();
        assert_eq!(back.strokes.len(), 3);
        for (a, b) in s.strokes.iter().zip(&back.strokes) {
            assert_eq!(a.degree, b.degree);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((*p + a.offset).dist(*q + b.offset) < 1e-12);
            }
        }
    }

    #[test]
    fn stroke_mode_round_trips() {
        let s = sketch(&[3, 3]);
        let sm = StrokeModeSketch::from_encoded(&s, 3).unwrap();
        let back = StrokeModeSketch::from_step_vectors(3, &sm.step_vectors()).to_encoded();
        for (a, b) in s.strokes.iter().zip(&back.strokes) {
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((*p + a.offset).dist(*q + b.offset) < 1e-12);
            }
        }
        assert!(matches!(
            StrokeModeSketch::from_encoded(&sketch(&[3, 4]), 3),
            Err(GeneratorError::Degree { .. })
        ));
    }

    #[test]
    fn gmm_closed_forms() {
        let x = [0.3, -1.2, 2.0];
        let one = GmmParams {
            weights: vec![1.0],
            means: vec![x.to_vec()],
            variances: vec![vec![1.0; 3]],
        };
        assert!((gmm_log_likelihood(&x, &one) + 1.5 * LN_2PI).abs() < 1e-12);
        let two = GmmParams {
            weights: vec![0.5, 0.5],
            means: vec![vec![0.1, 0.2, 0.3]; 2],
            variances: vec![vec![0.5, 2.0, 1.5]; 2],
        };
        let single = GmmParams {
            weights: vec![1.0],
            means: vec![vec![0.1, 0.2, 0.3]],
            variances: vec![vec![0.5, 2.0, 1.5]],
        };
        assert!((gmm_log_likelihood(&x, &two) - gmm_log_likelihood(&x, &single)).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_divergence(&[0.0; 4], &[1.0; 4]), 0.0);
        assert!((kl_divergence(&[1.0], &[1.0]) - 0.5).abs() < 1e-15);
        assert!(kl_divergence(&[0.3, -2.0], &[0.2, 3.0]) > 0.0);
    }

    #[test]
    fn decoder_outputs_are_normalized() {
        for mode in [GeneratorMode::Stroke, GeneratorMode::ControlPoint] {
            let model = GeneratorModel::new(tiny(mode), 5).unwrap();
            let z = [0.5, -1.0, 2.0];
            let state = model.initial_state(&z).unwrap();
            let prev = vec![0.3; model.config().step_dim()];
            let out = model.decode_step(&prev, &z, &state).unwrap();
            assert!((out.gmm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(out.gmm.variances.iter().flatten().all(|&v| v > 0.0));
            match mode {
                GeneratorMode::Stroke => assert!((0.0..=1.0).contains(&out.stop.unwrap())),
                GeneratorMode::ControlPoint => {
                    assert!((out.flags.unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-9)
                }
            }
            assert!(model.decode_step(&prev[1..], &z, &state).is_err());
        }
    }

    #[test]
    fn eval_mode_encoding_returns_the_mean() {
        let model = GeneratorModel::new(tiny(GeneratorMode::Stroke), 2).unwrap();
        let s = sketch(&[3, 3]);
        let code = model.vae_encode(&s, None).unwrap();
        assert_eq!(code.z, code.mu);
        assert!(code.sigma.iter().all(|&s| s > 0.0));
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(
            model.vae_encode(&s, Some(&mut a)).unwrap(),
            model.vae_encode(&s, Some(&mut b)).unwrap()
        );
        let long = sketch(&[3; 13]);
        assert!(matches!(
            model.vae_encode(&long, None),
            Err(GeneratorError::Length { len: 13, max: 12 })
        ));
    }

    #[test]
    fn loss_components_sum_to_total() {
        for mode in [GeneratorMode::Stroke, GeneratorMode::ControlPoint] {
            let model = GeneratorModel::new(tiny(mode), 1).unwrap();
            let data = [sketch(&[3, 3]), sketch(&[3])];
            let b = model.evaluate(&data, 0.7).unwrap();
            assert!((b.total - (b.recon + b.stop + b.kl_term)).abs() < 1e-12);
            let zero = model.evaluate(&data, 0.0).unwrap();
            assert!((zero.total - (zero.recon + zero.stop)).abs() < 1e-12);
        }
    }

    #[test]
    fn untrained_model_refuses_to_sample() {
        let model = GeneratorModel::new(tiny(GeneratorMode::Stroke), 1).unwrap();
        assert!(matches!(
            model.sample_unconditional(0.65, 0),
            Err(GeneratorError::Untrained)
        ));
    }

    #[test]
    fn sampling_honors_the_step_cap() {
        let mut model = GeneratorModel::new(tiny(GeneratorMode::Stroke), 1).unwrap();
        model.trained = true;
        // A large negative stop bias keeps the stop bit from ever firing.
        let bias = model.store.id("gen.head.b").unwrap();
        let w = model.config().head_dim() - 1;
        model.store.value_mut(bias).data_mut()[w] = -100.0;
        let s = model.sample_unconditional(0.65, 3).unwrap();
        assert!(!s.stopped);
        assert_eq!(s.sketch.steps(), 12);
        let again = model.sample_unconditional(0.65, 3).unwrap();
        assert_eq!(s, again);
    }
}
