//! Bidirectional recurrent encoder that predicts control points and curve
//! parameters for a whole range of degrees in one forward pass.
//!
//! Strokes are scaled to a unit box internally. Control points are produced as
//! increments `ΔP` from a pinned `P0 = 0`; parameters come from a softmax over
//! per-step scores, accumulated so that `t1 = 0` and `tN = 1`.

use bezsketch_core::bezier::squared_residual;
use bezsketch_core::sketch_io::{DatasetRecord, EncodedSketch, EncodedStroke};
use bezsketch_core::{BBox, BezierError, ControlPolygon, ParamVector, Point};
use bezsketch_diffgraph::{
    clip_grad_norm, run_bidirectional, CellKind, Checkpoint, Graph, GraphError, Linear, Optimizer,
    OptimizerConfig, ParamId, ParamStore, RnnCell, Tensor, Var,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_KIND: &str = "stroke-encoder";

/// Additive logit for padded steps; its softmax weight underflows to zero.
const PAD_LOGIT: f64 = -1e9;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("stroke must start at the origin")]
    NotNormalized,
    #[error("stroke has {len} points; the encoder accepts 2..={max}")]
    Length { len: usize, max: usize },
    #[error("stroke contains non-finite coordinates")]
    NonFinite,
    #[error("invalid degree range {min}..={max}")]
    DegreeRange { min: usize, max: usize },
    #[error("degree {0} is outside the model's range")]
    Degree(usize),
    #[error("model has not been trained")]
    Untrained,
    #[error("training loss became non-finite at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("no training strokes")]
    EmptyData,
    #[error("{0} parameters for {1} points")]
    Mismatch(usize, usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Bezier(#[from] BezierError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub cell: CellKind,
    pub min_degree: usize,
    pub max_degree: usize,
    /// Weight of the control-polygon smoothness penalty.
    pub beta: f64,
    /// Per-point loss below which a degree is good enough.
    pub tolerance: f64,
    pub max_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Multiplier applied to the learning rate after each epoch.
    pub lr_decay: f64,
    pub clip_norm: f64,
    /// Feed the scaled step `X_i − X_{i−1}` alongside each point.
    pub velocity_input: bool,
    /// Feed the cumulative chord-length fraction alongside each point.
    pub chord_input: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            cell: CellKind::Gru,
            min_degree: 3,
            max_degree: 9,
            beta: 1e-3,
            tolerance: 1e-3,
            max_len: 128,
            batch_size: 32,
            epochs: 20,
            optimizer: OptimizerConfig::adam(1e-3),
            lr_decay: 1.0,
            clip_norm: 1.0,
            velocity_input: true,
            chord_input: true,
        }
    }
}

impl EncoderConfig {
    /// Input channels per step.
    pub fn input_dim(&self) -> usize {
        2 + 2 * self.velocity_input as usize + self.chord_input as usize
    }

    pub fn degrees(&self) -> std::ops::RangeInclusive<usize> {
        self.min_degree..=self.max_degree
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.min_degree < 1 || self.min_degree > self.max_degree || self.max_degree > 12 {
            return Err(EncoderError::DegreeRange {
                min: self.min_degree,
                max: self.max_degree,
            });
        }
        if self.hidden == 0 || self.batch_size == 0 || self.max_len < 2 {
            return Err(EncoderError::Graph(GraphError::Shape(
                "encoder sizes must be positive".into(),
            )));
        }
        Ok(())
    }
}

/// Fit of one stroke at one degree. Control points are in the stroke's own units;
/// `loss` and `smoothness` are measured after scaling the stroke to a unit box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeFit {
    pub degree: usize,
    pub poly: ControlPolygon,
    pub params: ParamVector,
    pub loss: f64,
    pub smoothness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeFit {
    pub num_points: usize,
    /// Longer bounding-box side used for unit scaling.
    pub scale: f64,
    pub fits: Vec<DegreeFit>,
}

impl StrokeFit {
    pub fn fit(&self, degree: usize) -> Option<&DegreeFit> {
        self.fits.iter().find(|f| f.degree == degree)
    }

    /// `(degree, loss / N)` pairs.
    pub fn per_point_losses(&self) -> Vec<(usize, f64)> {
        self.fits
            .iter()
            .map(|f| (f.degree, f.loss / self.num_points as f64))
            .collect()
    }

    /// Reconstruction loss at `degree` in the stroke's own units.
    pub fn loss_in_stroke_units(&self, degree: usize) -> Option<f64> {
        self.fit(degree).map(|f| f.loss * self.scale * self.scale)
    }

    pub fn selected(&self, tolerance: f64) -> Option<&DegreeFit> {
        select_degree(&self.per_point_losses(), tolerance).and_then(|d| self.fit(d))
    }
}

/// `Σ ‖C(t_i) − X_i‖²`.
pub fn reconstruction_loss(
    poly: &ControlPolygon,
    params: &[f64],
    points: &[Point],
) -> Result<f64, EncoderError> {
    if params.len() != points.len() {
        return Err(EncoderError::Mismatch(params.len(), points.len()));
    }
    Ok(squared_residual(poly, params, points))
}

/// `Σ ‖P_{i+1} − P_i‖²`.
pub fn smoothness_penalty(poly: &ControlPolygon) -> f64 {
    poly.points()
        .windows(2)
        .map(|w| (w[1] - w[0]).norm_sq())
        .sum()
}

/// `Σ_n (L_n + β R_n)` over every degree in the fit.
pub fn total_loss(fit: &StrokeFit, beta: f64) -> f64 {
    fit.fits.iter().map(|f| f.loss + beta * f.smoothness).sum()
}

/// Smallest degree whose per-point loss is within `tolerance`, else the largest.
pub fn select_degree(per_point: &[(usize, f64)], tolerance: f64) -> Option<usize> {
    let mut sorted = per_point.to_vec();
    sorted.sort_by_key(|&(d, _)| d);
    sorted
        .iter()
        .find(|&&(_, l)| l <= tolerance)
        .or(sorted.last())
        .map(|&(d, _)| d)
}

fn check_stroke(points: &[Point], max_len: usize) -> Result<(), EncoderError> {
    if points.len() < 2 || points.len() > max_len {
        return Err(EncoderError::Length {
            len: points.len(),
            max: max_len,
        });
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(EncoderError::NonFinite);
    }
    if points[0] != Point::ORIGIN {
        return Err(EncoderError::NotNormalized);
    }
    Ok(())
}

fn unit_scale(points: &[Point]) -> f64 {
    let side = BBox::of(points).map(|b| b.max_side()).unwrap_or(0.0);
    if side > 1e-12 {
        side
    } else {
        1.0
    }
}

/// Cumulative chord length over total length; uniform when the stroke has no length.
fn chord_fractions(points: &[Point]) -> Vec<f64> {
    let mut acc = vec![0.0; points.len()];
    for i in 1..points.len() {
        acc[i] = acc[i - 1] + points[i].dist(points[i - 1]);
    }
    let total = acc[points.len() - 1];
    let last = (points.len() - 1) as f64;
    acc.iter()
        .enumerate()
        .map(|(i, &a)| {
            if total > 0.0 {
                a / total
            } else {
                i as f64 / last
            }
        })
        .collect()
}

/// Padded, unit-scaled batch of normalized strokes.
#[derive(Clone, Debug)]
pub struct StrokeBatch {
    pub lengths: Vec<usize>,
    pub scales: Vec<f64>,
    steps: usize,
    inputs: Vec<Tensor>,
    masks: Vec<Tensor>,
    target: Tensor,
    point_mask: Tensor,
    logit_mask: Tensor,
}

impl StrokeBatch {
    pub fn new(strokes: &[&[Point]], config: &EncoderConfig) -> Result<Self, EncoderError> {
        if strokes.is_empty() {
            return Err(EncoderError::EmptyData);
        }
        for s in strokes {
            check_stroke(s, config.max_len)?;
        }
        let hidden = config.hidden;
        let dim = config.input_dim();
        let b = strokes.len();
        let steps = strokes.iter().map(|s| s.len()).max().unwrap_or(0);
        let scales: Vec<f64> = strokes.iter().map(|s| unit_scale(s)).collect();
        let mut inputs = vec![vec![0.0; b * dim]; steps];
        let mut masks = vec![vec![0.0; b * hidden]; steps];
        let mut target = vec![0.0; b * 2 * steps];
        let mut point_mask = vec![0.0; b * 2 * steps];
        let mut logit_mask = vec![PAD_LOGIT; b * (steps - 1)];
        for (row, (s, &scale)) in strokes.iter().zip(&scales).enumerate() {
            let n = s.len();
            let speed = (n - 1) as f64;
            let chord = chord_fractions(s);
            for (i, &p) in s.iter().enumerate() {
                let p = p * (1.0 / scale);
                let prev = if i == 0 { p } else { s[i - 1] * (1.0 / scale) };
                let v = (p - prev) * speed;
                let mut feats = vec![p.x, p.y];
                if config.velocity_input {
                    feats.extend_from_slice(&[v.x, v.y]);
                }
                if config.chord_input {
                    feats.push(chord[i]);
                }
                inputs[i][row * dim..(row + 1) * dim].copy_from_slice(&feats);
                masks[i][row * hidden..(row + 1) * hidden]
                    .iter_mut()
                    .for_each(|m| *m = 1.0);
                target[row * 2 * steps + i] = p.x;
                target[row * 2 * steps + steps + i] = p.y;
                point_mask[row * 2 * steps + i] = 1.0;
                point_mask[row * 2 * steps + steps + i] = 1.0;
                if i > 0 {
                    logit_mask[row * (steps - 1) + i - 1] = 0.0;
                }
            }
        }
        Ok(Self {
            lengths: strokes.iter().map(|s| s.len()).collect(),
            scales,
            steps,
            inputs: inputs
                .into_iter()
                .map(|d| Tensor::matrix(b, dim, d))
                .collect(),
            masks: masks
                .into_iter()
                .map(|d| Tensor::matrix(b, hidden, d))
                .collect(),
            target: Tensor::matrix(b, 2 * steps, target),
            point_mask: Tensor::matrix(b, 2 * steps, point_mask),
            logit_mask: Tensor::matrix(b, steps - 1, logit_mask),
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }
}

/// Graph nodes for one degree head.
#[derive(Clone, Copy, Debug)]
pub struct DegreeNodes {
    pub degree: usize,
    /// `B × T` parameters (padded steps hold values near 1).
    pub t: Var,
    /// `B × 2(n+1)` control points, x coordinates then y.
    pub ctrl: Var,
    /// `B × 1` reconstruction loss per stroke.
    pub recon: Var,
    /// `B × 1` smoothness penalty per stroke.
    pub smooth: Var,
}

/// Parameter layout of the encoder, without the values.
#[derive(Clone, Debug)]
pub struct EncoderNet {
    pub config: EncoderConfig,
    fwd: RnnCell,
    bwd: RnnCell,
    t_head: ParamId,
    p_heads: Vec<Linear>,
}

impl EncoderNet {
    pub fn new(
        config: EncoderConfig,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        let h = config.hidden;
        let fwd = RnnCell::new(store, "enc.fwd", config.cell, config.input_dim(), h, rng);
        let bwd = RnnCell::new(store, "enc.bwd", config.cell, config.input_dim(), h, rng);
        let degrees = config.max_degree - config.min_degree + 1;
        let t_head = store.add_uniform(
            "enc.t_head",
            &[2 * h, degrees],
            1.0 / ((2 * h) as f64).sqrt(),
            rng,
        );
        let p_heads = config
            .degrees()
            .map(|n| Linear::new(store, &format!("enc.p{n}"), 2 * h, 2 * n, rng))
            .collect();
        Ok(Self {
            config,
            fwd,
            bwd,
            t_head,
            p_heads,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &StrokeBatch,
    ) -> Result<Vec<DegreeNodes>, EncoderError> {
        let b = batch.len();
        let steps = batch.steps;
        let fwd = self.fwd.bind(g, store);
        let bwd = self.bwd.bind(g, store);
        let inputs: Vec<Var> = batch.inputs.iter().map(|x| g.input(x.clone())).collect();
        let masks: Vec<Option<Var>> = batch
            .masks
            .iter()
            .map(|m| Some(g.input(m.clone())))
            .collect();
        let run = run_bidirectional(g, &fwd, &bwd, &inputs, &masks, true)?;
        // Step-major stack: row s·B + b holds step s of stroke b.
        let stacked = g.concat(&run.steps, 0)?;
        let w_t = g.param(store, self.t_head);
        let scores = g.matmul(stacked, w_t)?;
        let target = g.input(batch.target.clone());
        let point_mask = g.input(batch.point_mask.clone());
        let logit_mask = g.input(batch.logit_mask.clone());
        let zero_col = g.input(Tensor::zeros(&[b, 1]));
        let mut out = Vec::new();
        for (k, n) in self.config.degrees().enumerate() {
            let col = g.slice(scores, 1, k, 1)?;
            let col = g.reshape(col, steps, b)?;
            let per_stroke = g.transpose(col);
            let inc = g.slice(per_stroke, 1, 1, steps - 1)?;
            let inc = g.add(inc, logit_mask)?;
            let weights = g.softmax(inc, 1)?;
            let acc = g.cumsum(weights, 1)?;
            let t = g.concat(&[zero_col, acc], 1)?;

            let head = self.p_heads[k].bind(g, store);
            let dp = head.forward(g, run.last)?;
            let dx = g.slice(dp, 1, 0, n)?;
            let dy = g.slice(dp, 1, n, n)?;
            let px = g.cumsum(dx, 1)?;
            let py = g.cumsum(dy, 1)?;
            let ctrl = g.concat(&[zero_col, px, zero_col, py], 1)?;

            let curve = g.bezier(t, ctrl)?;
            let sq = g.sq_diff(curve, target)?;
            let sq = g.mul(sq, point_mask)?;
            let recon = g.sum_axis(sq, 1)?;
            let dp_sq = g.square(dp);
            let smooth = g.sum_axis(dp_sq, 1)?;
            out.push(DegreeNodes {
                degree: n,
                t,
                ctrl,
                recon,
                smooth,
            });
        }
        Ok(out)
    }

    /// Batch mean of `Σ_n (L_n + β R_n)`.
    pub fn loss(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &StrokeBatch,
    ) -> Result<Var, EncoderError> {
        let nodes = self.forward(g, store, batch)?;
        let mut total: Option<Var> = None;
        for d in &nodes {
            let r = g.scale(d.smooth, self.config.beta);
            let term = g.add(d.recon, r)?;
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let total = total.expect("at least one degree");
        let sum = g.sum(total);
        Ok(g.scale(sum, 1.0 / batch.len() as f64))
    }
}

/// Encoder weights together with their layout.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub net: EncoderNet,
    pub store: ParamStore,
    pub trained: bool,
}

impl EncoderModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = EncoderNet::new(config, &mut store, &mut rng)?;
        Ok(Self {
            net,
            store,
            trained: false,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.net.config
    }

    pub fn encode_stroke(&self, points: &[Point]) -> Result<StrokeFit, EncoderError> {
        Ok(self.encode_batch(&[points])?.remove(0))
    }

    pub fn encode_batch(&self, strokes: &[&[Point]]) -> Result<Vec<StrokeFit>, EncoderError> {
        let batch = StrokeBatch::new(strokes, &self.net.config)?;
        let mut g = Graph::new();
        let nodes = self.net.forward(&mut g, &self.store, &batch)?;
        let steps = batch.steps;
        let mut out = Vec::with_capacity(strokes.len());
        for (row, &len) in batch.lengths.iter().enumerate() {
            let scale = batch.scales[row];
            let mut fits = Vec::with_capacity(nodes.len());
            for d in &nodes {
                let n1 = d.degree + 1;
                let c = g.value(d.ctrl).data();
                let c = &c[row * 2 * n1..(row + 1) * 2 * n1];
                let poly = ControlPolygon::new(
                    (0..n1)
                        .map(|i| Point::new(c[i] * scale, c[n1 + i] * scale))
                        .collect(),
                )?;
                let t = &g.value(d.t).data()[row * steps..row * steps + len];
                fits.push(DegreeFit {
                    degree: d.degree,
                    poly,
                    params: clean_params(t)?,
                    loss: g.value(d.recon).data()[row],
                    smoothness: g.value(d.smooth).data()[row],
                });
            }
            out.push(StrokeFit {
                num_points: len,
                scale,
                fits,
            });
        }
        Ok(out)
    }

    /// Encodes every stroke of a preprocessed sketch, in the sketch's source units.
    pub fn embed_sketch(
        &self,
        record: &DatasetRecord,
        mode: EmbedMode,
    ) -> Result<EncodedSketch, EncoderError> {
        Ok(self
            .embed_records(std::slice::from_ref(record), mode)?
            .remove(0))
    }

    /// Batched [`EncoderModel::embed_sketch`] over many records.
    pub fn embed_records(
        &self,
        records: &[DatasetRecord],
        mode: EmbedMode,
    ) -> Result<Vec<EncodedSketch>, EncoderError> {
        if !self.trained {
            return Err(EncoderError::Untrained);
        }
        if let EmbedMode::Fixed(n) = mode {
            if !self.net.config.degrees().contains(&n) {
                return Err(EncoderError::Degree(n));
            }
        }
        let refs: Vec<(usize, &[Point])> = records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.strokes.iter().map(move |s| (i, s.points.as_slice())))
            .collect();
        let mut fits = Vec::with_capacity(refs.len());
        for chunk in refs.chunks(self.net.config.batch_size.max(1)) {
            let pts: Vec<&[Point]> = chunk.iter().map(|&(_, p)| p).collect();
            fits.extend(self.encode_batch(&pts)?);
        }
        let mut fits = fits.into_iter();
        let mut out = Vec::with_capacity(records.len());
        for r in records {
            let mut strokes = Vec::with_capacity(r.strokes.len());
            for s in &r.strokes {
                let fit = fits.next().expect("one fit per stroke");
                let chosen = match mode {
                    EmbedMode::Fixed(n) => fit.fit(n),
                    EmbedMode::Selected => fit.selected(self.net.config.tolerance),
                }
                .expect("degree checked above");
                strokes.push(EncodedStroke {
                    degree: chosen.degree,
                    offset: s.origin_offset * r.scale,
                    points: chosen.poly.points().iter().map(|&p| p * r.scale).collect(),
                    loss: Some(chosen.loss / fit.num_points as f64),
                });
            }
            out.push(EncodedSketch {
                id: r.id,
                category: r.category.clone(),
                raw_len: r.raw_len,
                strokes,
            });
        }
        Ok(out)
    }

    pub fn to_checkpoint(
        &self,
        optimizer: Option<&Optimizer>,
        history: &TrainHistory,
    ) -> Result<Checkpoint, EncoderError> {
        let mut ckpt = Checkpoint::new(CHECKPOINT_KIND, &self.net.config, &self.store, optimizer)?;
        ckpt.metadata = serde_json::json!({ "trained": self.trained, "history": history });
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, EncoderError> {
        ckpt.verify()?;
        ckpt.expect_kind(CHECKPOINT_KIND)?;
        let config: EncoderConfig = ckpt.config_as()?;
        let mut model = Self::new(config, 0)?;
        model.store.load_named(&ckpt.params)?;
        model.trained = ckpt
            .metadata
            .get("trained")
            .and_then(|v| v.as_bool())
            .unwrap_or(false);
        Ok(model)
    }
}

/// Makes accumulated softmax weights an exact parameter vector.
fn clean_params(t: &[f64]) -> Result<ParamVector, BezierError> {
    let mut v: Vec<f64> = t.iter().map(|x| x.clamp(0.0, 1.0)).collect();
    let last = v.len() - 1;
    v[0] = 0.0;
    v[last] = 1.0;
    for i in 1..v.len() {
        if v[i] < v[i - 1] {
            v[i] = v[i - 1];
        }
    }
    ParamVector::new(v)
}

/// Which degree to keep per stroke when embedding a sketch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    Fixed(usize),
    /// Smallest degree within the configured tolerance.
    Selected,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Mean of `Σ_n (L_n + β R_n)` per stroke.
    pub mean_loss: f64,
    /// Mean per-point reconstruction loss for each degree.
    pub point_loss: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub step_losses: Vec<f64>,
}

/// Mini-batch training state for the encoder.
pub struct EncoderTrainer {
    pub model: EncoderModel,
    pub optimizer: Optimizer,
    pub history: TrainHistory,
    rng: ChaCha8Rng,
}

impl EncoderTrainer {
    pub fn new(model: EncoderModel, seed: u64) -> Self {
        let optimizer = Optimizer::new(model.net.config.optimizer.clone(), &model.store);
        Self {
            model,
            optimizer,
            history: TrainHistory::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One optimizer step; returns the batch loss before the update.
    pub fn train_step(&mut self, strokes: &[&[Point]]) -> Result<f64, EncoderError> {
        let (loss, _) = self.step_with_stats(strokes)?;
        Ok(loss)
    }

    fn step_with_stats(
        &mut self,
        strokes: &[&[Point]],
    ) -> Result<(f64, Vec<(usize, f64)>), EncoderError> {
        let cfg = &self.model.net.config;
        let batch = StrokeBatch::new(strokes, cfg)?;
        let mut g = Graph::new();
        let nodes = self.model.net.forward(&mut g, &self.model.store, &batch)?;
        let mut total: Option<Var> = None;
        let mut per_point = Vec::new();
        for d in &nodes {
            let rv = g.value(d.recon).data();
            let pp = rv
                .iter()
                .zip(&batch.lengths)
                .map(|(l, &n)| l / n as f64)
                .sum::<f64>();
            per_point.push((d.degree, pp));
            let r = g.scale(d.smooth, cfg.beta);
            let term = g.add(d.recon, r)?;
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let sum = g.sum(total.expect("at least one degree"));
        let loss_var = g.scale(sum, 1.0 / batch.len() as f64);
        let loss = g.value(loss_var).item();
        let epoch = self.history.epochs.len();
        if !loss.is_finite() {
            return Err(EncoderError::Diverged {
                epoch,
                step: self.history.step_losses.len(),
            });
        }
        let grads = g.backward(loss_var)?;
        self.model.store.zero_grads();
        g.accumulate_into(&grads, &mut self.model.store);
        clip_grad_norm(&mut self.model.store, cfg.clip_norm);
        self.optimizer
            .step(&mut self.model.store)
            .map_err(|e| match e {
                GraphError::NonFiniteGradient => EncoderError::Diverged {
                    epoch,
                    step: self.history.step_losses.len(),
                },
                other => other.into(),
            })?;
        self.history.step_losses.push(loss);
        Ok((loss, per_point))
    }

    /// One pass over `data` in shuffled, length-grouped batches.
    pub fn train_epoch(&mut self, data: &[Vec<Point>]) -> Result<EpochStats, EncoderError> {
        if data.is_empty() {
            return Err(EncoderError::EmptyData);
        }
        let bs = self.model.net.config.batch_size;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        // Sorting inside windows of several batches keeps padding low without
        // making batch composition deterministic across epochs.
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for window in order.chunks(bs * 8) {
            let mut w = window.to_vec();
            w.sort_by_key(|&i| data[i].len());
            batches.extend(w.chunks(bs).map(|c| c.to_vec()));
        }
        batches.shuffle(&mut self.rng);
        let lr = self.optimizer.config().lr();
        let mut loss_sum = 0.0;
        let mut point_sum: Vec<(usize, f64)> =
            self.model.net.config.degrees().map(|d| (d, 0.0)).collect();
        for idx in &batches {
            let strokes: Vec<&[Point]> = idx.iter().map(|&i| data[i].as_slice()).collect();
            let (loss, pp) = self.step_with_stats(&strokes)?;
            loss_sum += loss * idx.len() as f64;
            for (acc, (_, v)) in point_sum.iter_mut().zip(pp) {
                acc.1 += v;
            }
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch: self.history.epochs.len() + 1,
            steps: batches.len(),
            lr,
            mean_loss: loss_sum / n,
            point_loss: point_sum.into_iter().map(|(d, v)| (d, v / n)).collect(),
        };
        log::info!("encoder epoch {} loss {:.6}", stats.epoch, stats.mean_loss);
        self.history.epochs.push(stats.clone());
        self.model.trained = true;
        let decay = self.model.net.config.lr_decay;
        self.optimizer.set_lr(lr * decay);
        Ok(stats)
    }
}

/// Trains a fresh encoder for `config.epochs` epochs; `on_epoch` runs after each.
pub fn train_encoder(
    data: &[Vec<Point>],
    config: EncoderConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EncoderTrainer) -> Result<(), EncoderError>,
) -> Result<EncoderTrainer, EncoderError> {
    let epochs = config.epochs;
    let model = EncoderModel::new(config, seed)?;
    let mut trainer = EncoderTrainer::new(model, seed.wrapping_add(1));
    for _ in 0..epochs {
        trainer.train_epoch(data)?;
        on_epoch(&trainer)?;
    }
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            hidden: 6,
            min_degree: 2,
            max_degree: 4,
            batch_size: 4,
            ..EncoderConfig::default()
        }
    }

    fn line(n: usize, end: Point) -> Vec<Point> {
        (0..n).map(|i| end * (i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn outputs_have_pinned_start_and_exact_parameter_ends() {
        let model = EncoderModel::new(small_config(), 3).unwrap();
        let pts = vec![
            Point::ORIGIN,
            Point::new(1.0, 0.5),
            Point::new(2.0, 0.0),
            Point::new(3.0, 1.0),
            Point::new(1.0, 2.0),
        ];
        let fit = model.encode_stroke(&pts).unwrap();
        assert_eq!(fit.fits.len(), 3);
        for (f, n) in fit.fits.iter().zip(2..) {
            assert_eq!(f.degree, n);
            assert_eq!(f.poly.degree(), n);
            assert_eq!(f.poly.first(), Point::ORIGIN);
            assert_eq!(f.params.len(), 5);
            assert_eq!(f.params.values()[0], 0.0);
            assert_eq!(f.params.values()[4], 1.0);
            let unit: Vec<Point> = pts.iter().map(|&p| p * (1.0 / fit.scale)).collect();
            let unit_poly = f.poly.map(|p| p * (1.0 / fit.scale)).unwrap();
            let direct = reconstruction_loss(&unit_poly, f.params.values(), &unit).unwrap();
            assert!((direct - f.loss).abs() < 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn batching_does_not_change_results() {
        let model = EncoderModel::new(small_config(), 4).unwrap();
        let a = line(7, Point::new(2.0, 1.0));
        let b = vec![Point::ORIGIN, Point::new(0.0, 1.0), Point::new(1.0, 1.0)];
        let both = model.encode_batch(&[&a, &b]).unwrap();
        let single = model.encode_stroke(&b).unwrap();
        for (x, y) in both[1].fits.iter().zip(&single.fits) {
            assert!((x.loss - y.loss).abs() < 1e-12);
            for (p, q) in x.poly.points().iter().zip(y.poly.points()) {
                assert!(p.dist(*q) < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_strokes_are_rejected() {
        let model = EncoderModel::new(small_config(), 0).unwrap();
        assert!(matches!(
            model.encode_stroke(&[Point::ORIGIN]),
            Err(EncoderError::Length { .. })
        ));
        assert!(matches!(
            model.encode_stroke(&[Point::new(1.0, 0.0), Point::new(2.0, 0.0)]),
            Err(EncoderError::NotNormalized)
        ));
        let long = line(129, Point::new(1.0, 1.0));
        assert!(matches!(
            model.encode_stroke(&long),
            Err(EncoderError::Length { len: 129, .. })
        ));
        assert!(matches!(
            model.encode_stroke(&[Point::ORIGIN, Point::new(f64::NAN, 0.0)]),
            Err(EncoderError::NonFinite)
        ));
    }

    #[test]
    fn degree_selection_follows_tolerance() {
        let losses = [(3, 1e-4), (4, 5e-5), (5, 1e-5)];
        assert_eq!(select_degree(&losses, 1e-3), Some(3));
        let losses = [(3, 1e-2), (4, 5e-3), (5, 4e-3)];
        assert_eq!(select_degree(&losses, 1e-3), Some(5));
        assert_eq!(select_degree(&[], 1e-3), None);
    }

    #[test]
    fn penalties_match_hand_values() {
        let poly = ControlPolygon::new(vec![
            Point::ORIGIN,
            Point::new(3.0, 4.0),
            Point::new(3.0, 5.0),
        ])
        .unwrap();
        assert_eq!(smoothness_penalty(&poly), 26.0);
        let pts = [Point::ORIGIN, Point::new(3.0, 5.0)];
        assert_eq!(reconstruction_loss(&poly, &[0.0, 1.0], &pts).unwrap(), 0.0);
        assert!(matches!(
            reconstruction_loss(&poly, &[0.0], &pts),
            Err(EncoderError::Mismatch(1, 2))
        ));
    }

    #[test]
    fn untrained_model_refuses_to_embed() {
        let model = EncoderModel::new(small_config(), 0).unwrap();
        let record = DatasetRecord {
            version: 1,
            id: 0,
            category: None,
            raw_len: 3,
            scale: 1.0,
            dropped: 0,
            strokes: vec![
                bezsketch_core::sketch_io::Stroke::new(line(3, Point::new(1.0, 0.0))).unwrap(),
            ],
        };
        assert!(matches!(
            model.embed_sketch(&record, EmbedMode::Selected),
            Err(EncoderError::Untrained)
        ));
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let mut model = EncoderModel::new(small_config(), 9).unwrap();
        model.trained = true;
        let ckpt = model.to_checkpoint(None, &TrainHistory::default()).unwrap();
        let back = EncoderModel::from_checkpoint(
            &Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap(),
        )
        .unwrap();
        assert!(back.trained);
        let pts = line(5, Point::new(1.0, 2.0));
        assert_eq!(
            model.encode_stroke(&pts).unwrap(),
            back.encode_stroke(&pts).unwrap()
        );
    }

    #[test]
    fn training_reduces_loss_on_a_tiny_set() {
        let data: Vec<Vec<Point>> = (0..8)
            .map(|k| {
                let a = k as f64 * 0.3;
                (0..10)
                    .map(|i| {
                        let s = i as f64 / 9.0;
                        Point::new(s * a.cos(), s * s * a.sin())
                    })
                    .collect()
            })
            .collect();
        let cfg = EncoderConfig {
            epochs: 30,
            optimizer: OptimizerConfig::adam(1e-2),
            ..small_config()
        };
        let trainer = train_encoder(&data, cfg, 1, |_| Ok(())).unwrap();
        let first = trainer.history.epochs[0].mean_loss;
        let last = trainer.history.epochs.last().unwrap().mean_loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }
}
