//! Encoder stages: training, embedding, per-stroke fitting and fit snapshots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bezsketch_core::fit_oracle::{alternate_fit, FitError, OracleConfig};
use bezsketch_core::sketch_io::{DatasetRecord, EncodedSketch};
use bezsketch_core::svg::{
    path_data, stroke_segments, HighDegree, PlacedStroke, SvgConfig, SvgDocument,
};
use bezsketch_core::synthetic::synthetic_stroke;
use bezsketch_core::{eval_curve, BBox, ControlPolygon, Point};
use bezsketch_diffgraph::{Checkpoint, OptimizerConfig};
use bezsketch_models::stroke_encoder::{
    train_encoder, EmbedMode, EncoderConfig, EncoderModel, EncoderTrainer, StrokeFit,
};
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Overrides;
use crate::error::{CliError, CliResult};
use crate::stage::{Context, Stage};
use crate::util::{
    create_dir, create_parent, manifest_beside, par_map, read_dataset_file, require, write_json,
    write_records, write_text,
};

/// Parses `3..9`, `3..=9` or a single degree.
pub fn parse_degrees(s: &str) -> Result<(usize, usize), String> {
    let parse = |x: &str| {
        x.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad degree {x:?}: {e}"))
    };
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let d = parse(s)?;
            (d, d)
        }
    };
    if lo == 0 || lo > hi {
        return Err(format!("empty degree range {s:?}"));
    }
    Ok((lo, hi))
}

pub fn load_encoder(path: &Path) -> CliResult<EncoderModel> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::from(e).at(path))?;
    EncoderModel::from_checkpoint(&ckpt).map_err(|e| CliError::from(e).at(path))
}

/// Synthetic strokes mixed into encoder training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticData {
    pub count: usize,
    /// Noise standard deviation relative to the unit box.
    pub sigma: f64,
    pub min_points: usize,
    pub max_points: usize,
}

impl Default for SyntheticData {
    fn default() -> Self {
        Self {
            count: 0,
            sigma: 0.01,
            min_points: 16,
            max_points: 64,
        }
    }
}

/// `count` noisy strokes with degrees drawn uniformly from `degrees`.
pub fn synthetic_strokes(
    spec: &SyntheticData,
    degrees: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Point>> {
    (0..spec.count)
        .map(|_| {
            let n = rng.gen_range(degrees.0..=degrees.1);
            let len = rng.gen_range(spec.min_points.max(n + 1)..=spec.max_points.max(n + 1));
            synthetic_stroke(n, len, spec.sigma, rng).points
        })
        .collect()
}

/// Origin-normalized strokes of the records, skipping those above `max_len`.
pub fn training_strokes(records: &[DatasetRecord], max_len: usize) -> Vec<Vec<Point>> {
    let mut skipped = 0;
    let mut out = Vec::new();
    for s in records.iter().flat_map(|r| &r.strokes) {
        if s.len() > max_len {
            skipped += 1;
        } else {
            out.push(s.points.clone());
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} strokes longer than {max_len} points left out of training");
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainEncoderStage {
    /// Dataset files; all their strokes are used.
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    /// Loss history JSON; defaults next to the checkpoint.
    pub history: Option<PathBuf>,
    pub category: Option<String>,
    pub synthetic: SyntheticData,
    pub model: EncoderConfig,
}

#[derive(Args, Debug, Clone)]
pub struct TrainEncoderArgs {
    /// Dataset file; repeat for several.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub category: Option<String>,
    /// Degree range such as `3..9`.
    #[arg(long, value_parser = parse_degrees)]
    pub degrees: Option<(usize, usize)>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Extra synthetic strokes to train on.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub synthetic_sigma: Option<f64>,
}

impl TrainEncoderArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set(
            "inputs",
            (!self.inputs.is_empty()).then(|| self.inputs.clone()),
        )
        .set("output", self.output.clone())
        .set("history", self.history.clone())
        .set("category", self.category.clone())
        .set("model.min_degree", self.degrees.map(|d| d.0))
        .set("model.max_degree", self.degrees.map(|d| d.1))
        .set("model.beta", self.beta)
        .set("model.tolerance", self.tolerance)
        .set("model.hidden", self.hidden)
        .set("model.epochs", self.epochs)
        .set("model.batch_size", self.batch_size)
        .set("model.optimizer.lr", self.lr)
        .set("model.lr_decay", self.lr_decay)
        .set("synthetic.count", self.synthetic)
        .set("synthetic.sigma", self.synthetic_sigma);
    }
}

impl TrainEncoderStage {
    fn history_path(&self) -> PathBuf {
        self.history
            .clone()
            .unwrap_or_else(|| self.output.with_extension("history.json"))
    }

    /// Training strokes from the datasets plus synthetic ones.
    pub fn load_data(&self, seed: u64) -> CliResult<Vec<Vec<Point>>> {
        let mut records = Vec::new();
        for p in &self.inputs {
            records.extend(read_dataset_file(p)?);
        }
        if let Some(cat) = &self.category {
            records.retain(|r| r.category.as_deref() == Some(cat.as_str()));
        }
        let mut data = training_strokes(&records, self.model.max_len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_57A0);
        let degrees = (self.model.min_degree, self.model.max_degree);
        data.extend(synthetic_strokes(&self.synthetic, degrees, &mut rng));
        Ok(data)
    }
}

impl Stage for TrainEncoderStage {
    const COMMAND: &'static str = "train-encoder";

    fn validate(&self) -> CliResult<()> {
        require(&self.output, "output")?;
        if self.inputs.is_empty() && self.synthetic.count == 0 {
            return Err(CliError::config(
                "no training data: give --input or --synthetic",
            ));
        }
        if self.synthetic.count > 0 && self.synthetic.max_points > self.model.max_len {
            return Err(CliError::config("synthetic strokes would exceed max_len"));
        }
        self.model.validate()?;
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.inputs.clone()
    }

    fn default_manifest(&self) -> PathBuf {
        manifest_beside(&self.output)
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        if ctx.workers > 1 {
            log::info!("encoder training runs on one thread");
        }
        let data = self.load_data(ctx.seed)?;
        log::info!("training encoder on {} strokes", data.len());
        let trainer = train_encoder(&data, self.model.clone(), ctx.seed, |t| {
            if let Some(e) = t.history.epochs.last() {
                let per: Vec<String> = e
                    .point_loss
                    .iter()
                    .map(|(d, l)| format!("{d}:{l:.2e}"))
                    .collect();
                log::info!(
                    "encoder epoch {} loss {:.6} lr {:.2e} per-point {}",
                    e.epoch,
                    e.mean_loss,
                    e.lr,
                    per.join(" ")
                );
            }
            Ok(())
        })?;
        let ckpt = trainer
            .model
            .to_checkpoint(Some(&trainer.optimizer), &trainer.history)?;
        create_parent(&self.output)?;
        ckpt.save(&self.output)
            .map_err(|e| CliError::from(e).at(&self.output))?;
        let history = self.history_path();
        write_json(&history, &trainer.history)?;
        Ok(vec![self.output.clone(), history])
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeStage {
    pub input: PathBuf,
    pub model: PathBuf,
    pub output: PathBuf,
    /// Fixed degree; `None` keeps the smallest degree within tolerance.
    pub degree: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct EncodeArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub degree: Option<usize>,
}

impl EncodeArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("input", self.input.clone())
            .set("model", self.model.clone())
            .set("output", self.output.clone())
            .set("degree", self.degree);
    }
}

/// Records per parallel work unit; fixed so batching never depends on `workers`.
const ENCODE_CHUNK: usize = 64;

pub fn encode_records(
    model: &EncoderModel,
    records: &[DatasetRecord],
    mode: EmbedMode,
    workers: usize,
) -> CliResult<Vec<EncodedSketch>> {
    let chunks: Vec<&[DatasetRecord]> = records.chunks(ENCODE_CHUNK).collect();
    let parts = par_map(workers, &chunks, |c| model.embed_records(c, mode));
    let mut out = Vec::with_capacity(records.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

impl Stage for EncodeStage {
    const COMMAND: &'static str = "encode";

    fn validate(&self) -> CliResult<()> {
        require(&self.input, "input")?;
        require(&self.model, "model")?;
        require(&self.output, "output")
    }

    fn inputs(&self) -> Vec<PathBuf> {
        vec![self.input.clone(), self.model.clone()]
    }

    fn default_manifest(&self) -> PathBuf {
        manifest_beside(&self.output)
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let model = load_encoder(&self.model)?;
        let records = read_dataset_file(&self.input)?;
        let mode = self
            .degree
            .map(EmbedMode::Fixed)
            .unwrap_or(EmbedMode::Selected);
        let encoded = encode_records(&model, &records, mode, ctx.workers)?;
        let cps: usize = encoded.iter().map(|s| s.control_point_count()).sum();
        log::info!(
            "encoded {} sketches into {cps} control points",
            encoded.len()
        );
        write_records(&self.output, &encoded)?;
        Ok(vec![self.output.clone()])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Alternating least squares with foot-point projection.
    #[default]
    Oracle,
    /// A trained encoder checkpoint.
    Encoder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitStage {
    pub input: PathBuf,
    /// Per-stroke loss CSV.
    pub output: PathBuf,
    pub degree: usize,
    pub method: FitMethod,
    /// Encoder checkpoint for `method = encoder`.
    pub model: Option<PathBuf>,
    pub oracle: OracleConfig,
    /// One SVG per sketch with the fitted curves.
    pub svg_dir: Option<PathBuf>,
    pub svg: SvgConfig,
    pub limit: Option<usize>,
}

impl Default for FitStage {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::new(),
            degree: 3,
            method: FitMethod::Oracle,
            model: None,
            oracle: OracleConfig::default(),
            svg_dir: None,
            svg: SvgConfig::default(),
            limit: None,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<FitMethod>,
    /// Encoder checkpoint; implies `--method encoder`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory for per-sketch SVGs.
    #[arg(long = "svg")]
    pub svg_dir: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
}

impl FitArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        let method = self
            .method
            .or(self.model.as_ref().map(|_| FitMethod::Encoder));
        o.set("input", self.input.clone())
            .set("output", self.output.clone())
            .set("degree", self.degree)
            .set("method", method)
            .set("model", self.model.clone())
            .set("svg_dir", self.svg_dir.clone())
            .set("limit", self.limit);
    }
}

/// One fitted stroke in dataset units.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeFitRow {
    pub sketch: usize,
    pub stroke: usize,
    pub points: usize,
    pub poly: ControlPolygon,
    pub offset: Point,
    pub loss: f64,
}

/// Oracle fit of one origin-normalized stroke. Short strokes get the highest
/// degree their point count supports; a stroke with no extent fits exactly.
pub fn oracle_fit_stroke(
    points: &[Point],
    degree: usize,
    config: &OracleConfig,
) -> CliResult<(ControlPolygon, f64)> {
    let n = degree.min(points.len() - 1).max(1);
    match alternate_fit(points, n, config) {
        Ok(fit) => Ok((fit.poly, fit.loss)),
        Err(FitError::ZeroLength) => Ok((ControlPolygon::new(vec![points[0]; n + 1])?, 0.0)),
        Err(e) => Err(e.into()),
    }
}

fn fit_rows_oracle(
    record: &DatasetRecord,
    degree: usize,
    config: &OracleConfig,
) -> CliResult<Vec<StrokeFitRow>> {
    record
        .strokes
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let (poly, loss) = oracle_fit_stroke(&s.points, degree, config)?;
            Ok(StrokeFitRow {
                sketch: record.id,
                stroke: j,
                points: s.len(),
                poly,
                offset: s.origin_offset,
                loss,
            })
        })
        .collect()
}

fn fit_rows_encoder(
    record: &DatasetRecord,
    degree: usize,
    model: &EncoderModel,
) -> CliResult<Vec<StrokeFitRow>> {
    let pts: Vec<&[Point]> = record.strokes.iter().map(|s| s.points.as_slice()).collect();
    let fits: Vec<StrokeFit> = model.encode_batch(&pts)?;
    record
        .strokes
        .iter()
        .zip(fits)
        .enumerate()
        .map(|(j, (s, fit))| {
            let f = fit
                .fit(degree)
                .ok_or(CliError::config(format!("encoder has no degree {degree}")))?;
            let loss = fit.loss_in_stroke_units(degree).expect("degree present");
            Ok(StrokeFitRow {
                sketch: record.id,
                stroke: j,
                points: s.len(),
                poly: f.poly.clone(),
                offset: s.origin_offset,
                loss,
            })
        })
        .collect()
}

pub fn fit_csv(rows: &[StrokeFitRow]) -> String {
    let mut s = String::from("sketch,stroke,points,degree,loss,loss_per_point\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:e},{:e}",
            r.sketch,
            r.stroke,
            r.points,
            r.poly.degree(),
            r.loss,
            r.loss / r.points as f64
        );
    }
    s
}

impl Stage for FitStage {
    const COMMAND: &'static str = "fit";

    fn validate(&self) -> CliResult<()> {
        require(&self.input, "input")?;
        require(&self.output, "output")?;
        if self.degree == 0 {
            return Err(CliError::config("degree must be positive"));
        }
        if self.method == FitMethod::Encoder && self.model.is_none() {
            return Err(CliError::config("encoder fitting needs --model"));
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.input.clone()];
        if self.method == FitMethod::Encoder {
            v.extend(self.model.clone());
        }
        v
    }

    fn default_manifest(&self) -> PathBuf {
        manifest_beside(&self.output)
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let mut records = read_dataset_file(&self.input)?;
        if let Some(l) = self.limit {
            records.truncate(l);
        }
        let per_sketch: Vec<CliResult<Vec<StrokeFitRow>>> = match self.method {
            FitMethod::Oracle => par_map(ctx.workers, &records, |r| {
                fit_rows_oracle(r, self.degree, &self.oracle)
            }),
            FitMethod::Encoder => {
                let model = load_encoder(self.model.as_ref().expect("validated"))?;
                if !model.config().degrees().contains(&self.degree) {
                    return Err(CliError::config(format!(
                        "encoder covers degrees {:?}",
                        model.config().degrees()
                    )));
                }
                par_map(ctx.workers, &records, |r| {
                    fit_rows_encoder(r, self.degree, &model)
                })
            }
        };
        let per_sketch = per_sketch.into_iter().collect::<CliResult<Vec<_>>>()?;
        let rows: Vec<StrokeFitRow> = per_sketch.iter().flatten().cloned().collect();
        write_text(&self.output, &fit_csv(&rows))?;
        let mut out = vec![self.output.clone()];
        if let Some(dir) = &self.svg_dir {
            create_dir(dir)?;
            for (record, rows) in records.iter().zip(&per_sketch) {
                let placed: Vec<PlacedStroke> = rows
                    .iter()
                    .map(|r| PlacedStroke::new(r.offset, r.poly.clone()))
                    .collect();
                let path = dir.join(format!("sketch_{:05}.svg", record.id));
                write_text(&path, &bezsketch_core::svg::to_svg(&placed, &self.svg)?)?;
                out.push(path);
            }
        }
        let mut losses: Vec<f64> = rows.iter().map(|r| r.loss / r.points as f64).collect();
        losses.sort_by(f64::total_cmp);
        if let Some(m) = losses.get(losses.len() / 2) {
            log::info!(
                "fitted {} strokes; median per-point loss {m:.3e}",
                rows.len()
            );
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnapshotFitStage {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    /// Index of the sketch within the dataset file.
    pub sketch: usize,
    pub stroke: usize,
    pub degree: usize,
    pub steps: usize,
    /// Write a frame every this many optimizer steps.
    pub every: usize,
    pub hidden: usize,
    pub lr: f64,
    pub size: u32,
}

impl Default for SnapshotFitStage {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output_dir: PathBuf::new(),
            sketch: 0,
            stroke: 0,
            degree: 3,
            steps: 300,
            every: 10,
            hidden: 32,
            lr: 1e-3,
            size: 256,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SnapshotFitArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub sketch: Option<usize>,
    #[arg(long)]
    pub stroke: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub every: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

impl SnapshotFitArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("input", self.input.clone())
            .set("output_dir", self.output_dir.clone())
            .set("sketch", self.sketch)
            .set("stroke", self.stroke)
            .set("degree", self.degree)
            .set("steps", self.steps)
            .set("every", self.every)
            .set("hidden", self.hidden)
            .set("lr", self.lr);
    }
}

/// Metadata embedded in every snapshot frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub step: usize,
    /// Mean squared residual per point, with the stroke scaled to a unit box.
    pub loss: f64,
    pub degree: usize,
}

/// Curve, control polygon, data points and point-to-curve correspondences.
pub fn snapshot_svg(
    points: &[Point],
    poly: &ControlPolygon,
    params: &[f64],
    info: &FrameInfo,
    size: u32,
) -> CliResult<String> {
    let all: Vec<Point> = points.iter().chain(poly.points()).copied().collect();
    let bounds = BBox::of(&all).ok_or_else(|| CliError::numeric("nothing to draw"))?;
    let mut doc = SvgDocument::new(size, bounds);
    doc.metadata(&serde_json::to_string(info)?);
    for (&x, &t) in points.iter().zip(params) {
        doc.line(x, eval_curve(poly, t)?, "#3b7dd8", 0.75);
    }
    for w in poly.points().windows(2) {
        doc.line(w[0], w[1], "#d83b3b", 0.75);
    }
    let segments = stroke_segments(
        &PlacedStroke::new(Point::ORIGIN, poly.clone()),
        HighDegree::default(),
    )?;
    doc.path(&path_data(&segments), "black", 1.5);
    for &x in points {
        doc.circle(x, 1.5, "#888888");
    }
    for &c in poly.points() {
        doc.circle(c, 3.0, "#d83b3b");
    }
    Ok(doc.finish())
}

impl Stage for SnapshotFitStage {
    const COMMAND: &'static str = "snapshot-fit";

    fn validate(&self) -> CliResult<()> {
        require(&self.input, "input")?;
        require(&self.output_dir, "output_dir")?;
        if self.every == 0 || self.degree == 0 || self.hidden == 0 || !(self.lr > 0.0) {
            return Err(CliError::config(
                "every, degree, hidden and lr must be positive",
            ));
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        vec![self.input.clone()]
    }

    fn default_manifest(&self) -> PathBuf {
        self.output_dir.join("snapshot.manifest.json")
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let records = read_dataset_file(&self.input)?;
        let stroke = records
            .get(self.sketch)
            .and_then(|r| r.strokes.get(self.stroke))
            .ok_or_else(|| {
                CliError::config(format!(
                    "no stroke {} in sketch {}",
                    self.stroke, self.sketch
                ))
            })?;
        let points = stroke.points.clone();
        let config = EncoderConfig {
            hidden: self.hidden,
            min_degree: self.degree,
            max_degree: self.degree,
            max_len: points.len().max(2),
            batch_size: 1,
            optimizer: OptimizerConfig::adam(self.lr),
            ..EncoderConfig::default()
        };
        let model = EncoderModel::new(config, ctx.seed)?;
        let mut trainer = EncoderTrainer::new(model, ctx.seed.wrapping_add(1));
        create_dir(&self.output_dir)?;
        let mut out = Vec::new();
        let mut csv = String::from("frame,step,loss\n");
        let mut frame = 0;
        for step in 0..=self.steps {
            if step % self.every == 0 || step == self.steps {
                let fit = trainer.model.encode_stroke(&points)?;
                let f = &fit.fits[0];
                let info = FrameInfo {
                    step,
                    loss: f.loss / fit.num_points as f64,
                    degree: self.degree,
                };
                let path = self.output_dir.join(format!("frame_{frame:04}.svg"));
                write_text(
                    &path,
                    &snapshot_svg(&points, &f.poly, f.params.values(), &info, self.size)?,
                )?;
                let _ = writeln!(csv, "{frame},{step},{:e}", info.loss);
                out.push(path);
                frame += 1;
            }
            if step < self.steps {
                trainer.train_step(&[points.as_slice()])?;
            }
        }
        let csv_path = self.output_dir.join("losses.csv");
        write_text(&csv_path, &csv)?;
        out.push(csv_path);
        Ok(out)
    }
}
