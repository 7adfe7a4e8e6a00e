//! Generator stages: training, sampling, SVG rendering and length-bucketed FID.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bezsketch_core::eval::{fid_by_length, sketch_features, BucketFid, FeatureSpec, Histogram};
use bezsketch_core::sketch_io::{DatasetRecord, EncodedSketch, EncodedStroke};
use bezsketch_core::svg::{to_svg, Sidecar, SvgConfig};
use bezsketch_diffgraph::Checkpoint;
use bezsketch_models::sketch_generator::{
    build_cp_sequence, train_generator, GeneratorConfig, GeneratorMode, GeneratorModel,
};
use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Overrides;
use crate::error::{CliError, CliResult};
use crate::stage::{Context, Stage};
use crate::util::{
    create_dir, create_parent, elevate_to, encoded_polylines, manifest_beside, par_map,
    placed_strokes, read_dataset_file, read_encoded_file, record_polylines, require, write_json,
    write_records, write_text,
};

pub fn load_generator(path: &Path) -> CliResult<GeneratorModel> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::from(e).at(path))?;
    GeneratorModel::from_checkpoint(&ckpt).map_err(|e| CliError::from(e).at(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Stroke,
    Cp,
}

impl From<ModeArg> for GeneratorMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Stroke => GeneratorMode::Stroke,
            ModeArg::Cp => GeneratorMode::ControlPoint,
        }
    }
}

/// Elevates every stroke to `degree` so a stroke-mode model can consume it.
pub fn to_uniform_degree(sketch: &EncodedSketch, degree: usize) -> CliResult<EncodedSketch> {
    let mut out = sketch.clone();
    for s in &mut out.strokes {
        let poly = elevate_to(&s.polygon()?, degree).ok_or_else(|| {
            CliError::model(format!(
                "sketch {} has a degree-{} stroke; model degree is {degree}",
                sketch.id, s.degree
            ))
        })?;
        *s = EncodedStroke {
            degree,
            offset: s.offset,
            points: poly.points().to_vec(),
            loss: s.loss,
        };
    }
    Ok(out)
}

/// Training sketches in the form the configured mode expects.
pub fn generator_data(
    sketches: &[EncodedSketch],
    config: &GeneratorConfig,
) -> CliResult<Vec<EncodedSketch>> {
    match config.mode {
        GeneratorMode::Stroke => sketches
            .iter()
            .map(|s| to_uniform_degree(s, config.degree))
            .collect(),
        GeneratorMode::ControlPoint => Ok(sketches.to_vec()),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainGeneratorStage {
    /// Encoded sketches.
    pub input: PathBuf,
    pub output: PathBuf,
    pub history: Option<PathBuf>,
    pub category: Option<String>,
    pub model: GeneratorConfig,
}

#[derive(Args, Debug, Clone)]
pub struct TrainGeneratorArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long)]
    pub enc_hidden: Option<usize>,
    #[arg(long)]
    pub dec_hidden: Option<usize>,
    #[arg(long)]
    pub mixtures: Option<usize>,
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Stroke-mode polygon degree.
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
    #[arg(long)]
    pub free_bits: Option<f64>,
    #[arg(long)]
    pub augment_std: Option<f64>,
}

impl TrainGeneratorArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("input", self.input.clone())
            .set("output", self.output.clone())
            .set("history", self.history.clone())
            .set("category", self.category.clone())
            .set("model.mode", self.mode.map(GeneratorMode::from))
            .set("model.latent", self.latent)
            .set("model.enc_hidden", self.enc_hidden)
            .set("model.dec_hidden", self.dec_hidden)
            .set("model.mixtures", self.mixtures)
            .set("model.nmax", self.nmax)
            .set("model.degree", self.degree)
            .set("model.epochs", self.epochs)
            .set("model.batch_size", self.batch_size)
            .set("model.optimizer.lr", self.lr)
            .set("model.kl_weight", self.kl_weight)
            .set("model.free_bits", self.free_bits)
            .set("model.augment_std", self.augment_std);
    }
}

impl Stage for TrainGeneratorStage {
    const COMMAND: &'static str = "train-generator";

    fn validate(&self) -> CliResult<()> {
        require(&self.input, "input")?;
        require(&self.output, "output")?;
        self.model.validate()?;
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        vec![self.input.clone()]
    }

    fn default_manifest(&self) -> PathBuf {
        manifest_beside(&self.output)
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        if ctx.workers > 1 {
            log::info!("generator training runs on one thread");
        }
        let mut sketches = read_encoded_file(&self.input)?;
        if let Some(cat) = &self.category {
            sketches.retain(|s| s.category.as_deref() == Some(cat.as_str()));
        }
        let data = generator_data(&sketches, &self.model)?;
        let trainer = train_generator(&data, self.model.clone(), ctx.seed, |_| Ok(()))?;
        let history = trainer.history.clone();
        let ckpt = trainer
            .model
            .to_checkpoint(Some(&trainer.optimizer), &history)?;
        create_parent(&self.output)?;
        ckpt.save(&self.output)
            .map_err(|e| CliError::from(e).at(&self.output))?;
        let history_path = self
            .history
            .clone()
            .unwrap_or_else(|| self.output.with_extension("history.json"));
        write_json(&history_path, &history)?;
        Ok(vec![self.output.clone(), history_path])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleStage {
    pub model: PathBuf,
    /// NDJSON of sample records.
    pub output: PathBuf,
    pub count: usize,
    pub temperature: f64,
    /// Encoded sketches to condition on, used round-robin; unconditional when absent.
    pub condition: Option<PathBuf>,
    pub svg_dir: Option<PathBuf>,
    pub svg: SvgConfig,
}

impl Default for SampleStage {
    fn default() -> Self {
        Self {
            model: PathBuf::new(),
            output: PathBuf::new(),
            count: 10,
            temperature: 0.65,
            condition: None,
            svg_dir: None,
            svg: SvgConfig::default(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub condition: Option<PathBuf>,
    #[arg(long)]
    pub svg_dir: Option<PathBuf>,
}

impl SampleArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("model", self.model.clone())
            .set("output", self.output.clone())
            .set("count", self.count)
            .set("temperature", self.temperature)
            .set("condition", self.condition.clone())
            .set("svg_dir", self.svg_dir.clone());
    }
}

/// One generated sketch as written by `sample`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub seed: u64,
    /// Id of the conditioning sketch, if any.
    pub condition: Option<usize>,
    pub stopped: bool,
    pub steps: usize,
    pub sketch: EncodedSketch,
}

/// Independent per-sample seeds derived from the run seed.
pub fn sample_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

pub fn generate_samples(
    model: &GeneratorModel,
    count: usize,
    temperature: f64,
    condition: Option<&[EncodedSketch]>,
    seed: u64,
    workers: usize,
) -> CliResult<Vec<SampleRecord>> {
    let seeds: Vec<(usize, u64)> = sample_seeds(seed, count).into_iter().enumerate().collect();
    let results = par_map(workers, &seeds, |&(i, s)| -> CliResult<SampleRecord> {
        let (sample, cond) = match condition {
            Some(c) if !c.is_empty() => {
                let input = &c[i % c.len()];
                (
                    model.sample_conditional(input, temperature, s)?,
                    Some(input.id),
                )
            }
            _ => (model.sample_unconditional(temperature, s)?, None),
        };
        let mut sketch = sample.sketch.to_encoded();
        sketch.id = i;
        Ok(SampleRecord {
            index: i,
            seed: s,
            condition: cond,
            stopped: sample.stopped,
            steps: sample.sketch.steps(),
            sketch,
        })
    });
    results.into_iter().collect()
}

/// Writes `sketch_NNNNN.svg` plus a control-point sidecar per non-empty sketch.
pub fn render_dir(
    sketches: &[EncodedSketch],
    dir: &Path,
    config: &SvgConfig,
    sidecar: bool,
) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut out = Vec::new();
    let mut empty = 0;
    for (i, s) in sketches.iter().enumerate() {
        let placed = placed_strokes(s)?;
        if placed.is_empty() {
            empty += 1;
            continue;
        }
        let svg_path = dir.join(format!("sketch_{i:05}.svg"));
        write_text(&svg_path, &to_svg(&placed, config)?)?;
        out.push(svg_path);
        if sidecar {
            let json_path = dir.join(format!("sketch_{i:05}.json"));
            write_json(&json_path, &Sidecar::from_strokes(&placed))?;
            out.push(json_path);
        }
    }
    if empty > 0 {
        log::warn!("{empty} empty sketches not rendered");
    }
    Ok(out)
}

impl Stage for SampleStage {
    const COMMAND: &'static str = "sample";

    fn validate(&self) -> CliResult<()> {
        require(&self.model, "model")?;
        require(&self.output, "output")?;
        if !(self.temperature >= 0.0) {
            return Err(CliError::config("temperature must be nonnegative"));
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.model.clone()];
        v.extend(self.condition.clone());
        v
    }

    fn default_manifest(&self) -> PathBuf {
        manifest_beside(&self.output)
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let model = load_generator(&self.model)?;
        let condition = match &self.condition {
            Some(p) => Some(generator_data(&read_encoded_file(p)?, model.config())?),
            None => None,
        };
        let records = generate_samples(
            &model,
            self.count,
            self.temperature,
            condition.as_deref(),
            ctx.seed,
            ctx.workers,
        )?;
        let stopped = records.iter().filter(|r| r.stopped).count();
        log::info!(
            "{} samples, {stopped} stopped before the step limit",
            records.len()
        );
        write_records(&self.output, &records)?;
        let mut out = vec![self.output.clone()];
        if let Some(dir) = &self.svg_dir {
            let sketches: Vec<EncodedSketch> = records.into_iter().map(|r| r.sketch).collect();
            out.extend(render_dir(&sketches, dir, &self.svg, true)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSvgStage {
    /// Encoded sketches or sample records.
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub svg: SvgConfig,
    pub sidecar: bool,
}

impl Default for RenderSvgStage {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output_dir: PathBuf::new(),
            svg: SvgConfig::default(),
            sidecar: true,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct RenderSvgArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Document width and height in pixels.
    #[arg(long)]
    pub size: Option<u32>,
    /// Write high-degree strokes as polylines with this many points.
    #[arg(long)]
    pub polyline: Option<usize>,
    #[arg(long)]
    pub no_sidecar: bool,
}

impl RenderSvgArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        let high = self
            .polyline
            .map(|r| bezsketch_core::svg::HighDegree::Polyline { resolution: r });
        o.set("input", self.input.clone())
            .set("output_dir", self.output_dir.clone())
            .set("svg.size", self.size)
            .set("svg.high_degree", high)
            .set("sidecar", self.no_sidecar.then_some(false));
    }
}

impl Stage for RenderSvgStage {
    const COMMAND: &'static str = "render-svg";

    fn validate(&self) -> CliResult<()> {
        require(&self.input, "input")?;
        require(&self.output_dir, "output_dir")
    }

    fn inputs(&self) -> Vec<PathBuf> {
        vec![self.input.clone()]
    }

    fn default_manifest(&self) -> PathBuf {
        self.output_dir.join("render.manifest.json")
    }

    fn run(&self, _ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let sketches = read_encoded_file(&self.input)?;
        render_dir(&sketches, &self.output_dir, &self.svg, self.sidecar)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalFidStage {
    /// Preprocessed real sketches.
    pub real: PathBuf,
    pub model: PathBuf,
    /// Encoded versions of the real sketches (matched by id) for conditional sampling.
    pub condition: Option<PathBuf>,
    /// Bucket centers in raw points.
    pub buckets: Vec<usize>,
    pub halfwidth: usize,
    /// At most this many real sketches per bucket, and as many samples.
    pub count: usize,
    pub temperature: f64,
    pub features: FeatureSpec,
    /// Points per decoded stroke when rasterizing samples.
    pub resolution: usize,
    /// CSV of `bucket,halfwidth,count,fid,small`.
    pub output: PathBuf,
    pub histogram_dir: Option<PathBuf>,
    pub bin_width: usize,
}

impl Default for EvalFidStage {
    fn default() -> Self {
        Self {
            real: PathBuf::new(),
            model: PathBuf::new(),
            condition: None,
            buckets: vec![80],
            halfwidth: 20,
            count: 500,
            temperature: 0.65,
            features: FeatureSpec::default(),
            resolution: 32,
            output: PathBuf::new(),
            histogram_dir: None,
            bin_width: 10,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct EvalFidArgs {
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub condition: Option<PathBuf>,
    /// Bucket center; repeat for several.
    #[arg(long = "bucket")]
    pub buckets: Vec<usize>,
    #[arg(long)]
    pub halfwidth: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub histogram_dir: Option<PathBuf>,
    #[arg(long)]
    pub bin_width: Option<usize>,
}

impl EvalFidArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("real", self.real.clone())
            .set("model", self.model.clone())
            .set("condition", self.condition.clone())
            .set(
                "buckets",
                (!self.buckets.is_empty()).then(|| self.buckets.clone()),
            )
            .set("halfwidth", self.halfwidth)
            .set("count", self.count)
            .set("temperature", self.temperature)
            .set("output", self.output.clone())
            .set("histogram_dir", self.histogram_dir.clone())
            .set("bin_width", self.bin_width);
    }
}

/// Seeded subset of at most `count` sketches whose raw length is within the bucket.
pub fn bucket_members(
    records: &[DatasetRecord],
    center: usize,
    halfwidth: usize,
    count: usize,
    seed: u64,
) -> Vec<&DatasetRecord> {
    let mut members: Vec<&DatasetRecord> = records
        .iter()
        .filter(|r| r.raw_len.abs_diff(center) <= halfwidth)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ center as u64);
    members.shuffle(&mut rng);
    members.truncate(count);
    members
}

pub fn fid_csv(rows: &[BucketFid]) -> String {
    let mut s = String::from("bucket,halfwidth,count,fid,small\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{}",
            r.bucket, r.half_width, r.count, r.fid, r.small
        );
    }
    s
}

impl EvalFidStage {
    fn sample_features(
        &self,
        model: &GeneratorModel,
        members: &[&DatasetRecord],
        condition: &BTreeMap<usize, EncodedSketch>,
        seed: u64,
        workers: usize,
    ) -> CliResult<(Vec<Vec<f64>>, Vec<EncodedSketch>)> {
        let seeds = sample_seeds(seed, members.len());
        let jobs: Vec<(&DatasetRecord, u64)> = members.iter().copied().zip(seeds).collect();
        let results = par_map(
            workers,
            &jobs,
            |&(r, s)| -> CliResult<(Vec<f64>, EncodedSketch)> {
                let cond = condition.get(&r.id);
                // A sample can come out empty; retry with derived seeds.
                for attempt in 0..16u64 {
                    let s = s.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let sample = match cond {
                        Some(c) => model.sample_conditional(c, self.temperature, s)?,
                        None => model.sample_unconditional(self.temperature, s)?,
                    };
                    let sketch = sample.sketch.to_encoded();
                    let lines = encoded_polylines(&sketch, self.resolution)?;
                    if lines.iter().any(|l| !l.is_empty()) {
                        return Ok((sketch_features(&lines, &self.features)?, sketch));
                    }
                }
                Err(CliError::model("generator keeps producing empty sketches"))
            },
        );
        let mut feats = Vec::with_capacity(results.len());
        let mut sketches = Vec::with_capacity(results.len());
        for r in results {
            let (f, s) = r?;
            feats.push(f);
            sketches.push(s);
        }
        Ok((feats, sketches))
    }
}

impl Stage for EvalFidStage {
    const COMMAND: &'static str = "eval-fid";

    fn validate(&self) -> CliResult<()> {
        require(&self.real, "real")?;
        require(&self.model, "model")?;
        require(&self.output, "output")?;
        if self.buckets.is_empty() || self.count < 2 || self.resolution < 2 || self.bin_width == 0 {
            return Err(CliError::config(
                "need at least one bucket, count >= 2, resolution >= 2, bin_width > 0",
            ));
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.real.clone(), self.model.clone()];
        v.extend(self.condition.clone());
        v
    }

    fn default_manifest(&self) -> PathBuf {
        manifest_beside(&self.output)
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let model = load_generator(&self.model)?;
        let records = read_dataset_file(&self.real)?;
        let condition: BTreeMap<usize, EncodedSketch> = match &self.condition {
            Some(p) => generator_data(&read_encoded_file(p)?, model.config())?
                .into_iter()
                .map(|s| (s.id, s))
                .collect(),
            None => BTreeMap::new(),
        };
        let mut rows = Vec::new();
        let mut generated = Vec::new();
        for &center in &self.buckets {
            let members = bucket_members(&records, center, self.halfwidth, self.count, ctx.seed);
            if members.len() < 2 {
                log::warn!(
                    "bucket {center}±{} has {} sketches; skipped",
                    self.halfwidth,
                    members.len()
                );
                continue;
            }
            let real: Vec<CliResult<(usize, Vec<f64>)>> = par_map(ctx.workers, &members, |r| {
                Ok((
                    r.raw_len,
                    sketch_features(&record_polylines(r), &self.features)?,
                ))
            });
            let real = real.into_iter().collect::<CliResult<Vec<_>>>()?;
            let (feats, sketches) = self.sample_features(
                &model,
                &members,
                &condition,
                ctx.seed.wrapping_add(center as u64),
                ctx.workers,
            )?;
            let row = fid_by_length(&real, center, self.halfwidth, |_| Ok(feats.clone()))?;
            log::info!(
                "bucket {center}: {} sketches, FID {:.4}",
                row.count,
                row.fid
            );
            rows.push(row);
            generated.extend(sketches);
        }
        if rows.is_empty() {
            return Err(CliError::config("every bucket is empty"));
        }
        write_text(&self.output, &fid_csv(&rows))?;
        let mut out = vec![self.output.clone()];
        if let Some(dir) = &self.histogram_dir {
            let real_sketch: Vec<usize> = records.iter().map(|r| r.raw_len).collect();
            let real_stroke: Vec<usize> = records
                .iter()
                .flat_map(|r| r.strokes.iter().map(|s| s.len()))
                .collect();
            let gen_sketch: Vec<usize> = generated
                .iter()
                .map(|s| build_cp_sequence(s).map(|c| c.len()).unwrap_or(0))
                .collect();
            let gen_stroke: Vec<usize> = generated
                .iter()
                .flat_map(|s| s.strokes.iter().map(|st| st.points.len()))
                .collect();
            for (name, lengths) in [
                ("real_sketch_lengths.csv", &real_sketch),
                ("real_stroke_lengths.csv", &real_stroke),
                ("generated_sketch_lengths.csv", &gen_sketch),
                ("generated_stroke_lengths.csv", &gen_stroke),
            ] {
                let path = dir.join(name);
                write_text(
                    &path,
                    &Histogram::from_lengths(lengths, self.bin_width).to_csv(),
                )?;
                out.push(path);
            }
        }
        Ok(out)
    }
}
