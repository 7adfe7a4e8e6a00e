//! Dataset stages: fixture generation, ingestion, splitting and length histograms.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::PathBuf;

use bezsketch_core::eval::length_histogram;
use bezsketch_core::sketch_io::{
    parse_quickdraw_ndjson, prepare_sketch, DatasetRecord, PrepConfig, DEFAULT_BEND_THRESHOLD,
    DEFAULT_MAX_STROKE_LEN,
};
use bezsketch_core::synthetic::{fixture_sketch, quickdraw_line, FIXTURE_CATEGORIES};
use bezsketch_models::sketch_generator::build_cp_sequence;
use clap::{Args, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Overrides;
use crate::error::{CliError, CliResult};
use crate::stage::{Context, Stage};
use crate::util::{
    manifest_beside, read_dataset_file, read_encoded_file, require, write_json, write_records,
    write_text,
};

/// QuickDraw-style NDJSON of `count` fixture sketches, alternating categories.
pub fn fixture_ndjson(count: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..count {
        let cat = FIXTURE_CATEGORIES[i % FIXTURE_CATEGORIES.len()];
        let sketch = fixture_sketch(cat, &mut rng).expect("known fixture category");
        out.push_str(&quickdraw_line(&sketch));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureStage {
    pub output: PathBuf,
    pub count: usize,
}

impl Default for FixtureStage {
    fn default() -> Self {
        Self {
            output: PathBuf::new(),
            count: 200,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct FixtureArgs {
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
}

impl FixtureArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("output", self.output.clone())
            .set("count", self.count);
    }
}

impl Stage for FixtureStage {
    const COMMAND: &'static str = "fixture";

    fn validate(&self) -> CliResult<()> {
        require(&self.output, "output")
    }

    fn inputs(&self) -> Vec<PathBuf> {
        Vec::new()
    }

    fn default_manifest(&self) -> PathBuf {
        manifest_beside(&self.output)
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        write_text(&self.output, &fixture_ndjson(self.count, ctx.seed))?;
        Ok(vec![self.output.clone()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestStage {
    /// Simplified QuickDraw NDJSON.
    pub input: PathBuf,
    pub output: PathBuf,
    pub prep: PrepConfig,
    /// Keep only sketches of this category.
    pub category: Option<String>,
    pub limit: Option<usize>,
}

impl Default for IngestStage {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output: PathBuf::new(),
            prep: PrepConfig::default(),
            category: None,
            limit: None,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, help = format!("split strokes longer than this [default: {DEFAULT_MAX_STROKE_LEN}]"))]
    pub max_stroke_len: Option<usize>,
    #[arg(long, help = format!("turning angle in radians that counts as a corner [default: {DEFAULT_BEND_THRESHOLD:.4}]"))]
    pub bend_threshold: Option<f64>,
    /// Keep source coordinates instead of dividing by the bounding-box side.
    #[arg(long)]
    pub no_unit_scale: bool,
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long)]
    pub limit: Option<usize>,
}

impl IngestArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("input", self.input.clone())
            .set("output", self.output.clone())
            .set("prep.max_stroke_len", self.max_stroke_len)
            .set("prep.bend_threshold", self.bend_threshold)
            .set("prep.unit_scale", self.no_unit_scale.then_some(false))
            .set("category", self.category.clone())
            .set("limit", self.limit);
    }
}

impl Stage for IngestStage {
    const COMMAND: &'static str = "ingest";

    fn validate(&self) -> CliResult<()> {
        require(&self.input, "input")?;
        require(&self.output, "output")?;
        if self.prep.max_stroke_len < 2 {
            return Err(CliError::config("max_stroke_len must be at least 2"));
        }
        if !(self.prep.bend_threshold.is_finite() && self.prep.bend_threshold > 0.0) {
            return Err(CliError::config("bend_threshold must be positive"));
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        vec![self.input.clone()]
    }

    fn default_manifest(&self) -> PathBuf {
        manifest_beside(&self.output)
    }

    fn run(&self, _ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let file =
            fs::File::open(&self.input).map_err(|e| CliError::io(e.to_string()).at(&self.input))?;
        let report = parse_quickdraw_ndjson(BufReader::new(file))
            .map_err(|e| CliError::from(e).at(&self.input))?;
        if report.malformed + report.rejected > 0 {
            log::warn!(
                "skipped {} malformed and {} unusable records",
                report.malformed,
                report.rejected
            );
        }
        let mut records = Vec::new();
        let mut dropped = 0;
        for sketch in &report.sketches {
            if let Some(cat) = &self.category {
                if sketch.category.as_deref() != Some(cat.as_str()) {
                    continue;
                }
            }
            if self.limit.is_some_and(|l| records.len() >= l) {
                break;
            }
            let rec = prepare_sketch(records.len(), sketch, &self.prep);
            dropped += rec.dropped;
            if rec.strokes.is_empty() {
                log::warn!("sketch {} has no drawable strokes; skipped", rec.id);
                continue;
            }
            records.push(rec);
        }
        if records.is_empty() {
            return Err(CliError::io("no usable sketches").at(&self.input));
        }
        for (i, r) in records.iter_mut().enumerate() {
            r.id = i;
        }
        let strokes: usize = records.iter().map(|r| r.strokes.len()).sum();
        log::info!(
            "ingested {} sketches, {strokes} strokes, {dropped} single-point strokes dropped",
            records.len()
        );
        write_records(&self.output, &records)?;
        Ok(vec![self.output.clone()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitStage {
    pub input: PathBuf,
    /// Receives `train.ndjson`, `valid.ndjson` and `test.ndjson`.
    pub output_dir: PathBuf,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitStage {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output_dir: PathBuf::new(),
            valid_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub valid_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

impl SplitArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("input", self.input.clone())
            .set("output_dir", self.output_dir.clone())
            .set("valid_fraction", self.valid_fraction)
            .set("test_fraction", self.test_fraction);
    }
}

/// Per-category seeded shuffle, then the first sketches of each category go to
/// test, the next to validation, the rest to training. Each part is sorted by id.
pub fn split_records(
    records: &[DatasetRecord],
    valid_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> [Vec<DatasetRecord>; 3] {
    let mut by_cat: BTreeMap<Option<String>, Vec<&DatasetRecord>> = BTreeMap::new();
    for r in records {
        by_cat.entry(r.category.clone()).or_default().push(r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<DatasetRecord>; 3] = Default::default();
    for group in by_cat.values_mut() {
        group.shuffle(&mut rng);
        let n = group.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        let n_valid = ((n as f64 * valid_fraction).round() as usize).min(n - n_test.min(n));
        for (i, r) in group.iter().enumerate() {
            let k = if i < n_test {
                2
            } else if i < n_test + n_valid {
                1
            } else {
                0
            };
            parts[k].push((*r).clone());
        }
    }
    for p in parts.iter_mut() {
        p.sort_by_key(|r| r.id);
    }
    parts
}

impl Stage for SplitStage {
    const COMMAND: &'static str = "split";

    fn validate(&self) -> CliResult<()> {
        require(&self.input, "input")?;
        require(&self.output_dir, "output_dir")?;
        let ok = |f: f64| (0.0..1.0).contains(&f);
        if !ok(self.valid_fraction)
            || !ok(self.test_fraction)
            || self.valid_fraction + self.test_fraction >= 1.0
        {
            return Err(CliError::config(
                "fractions must be in [0, 1) and leave room for training data",
            ));
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        vec![self.input.clone()]
    }

    fn default_manifest(&self) -> PathBuf {
        self.output_dir.join("split.manifest.json")
    }

    fn run(&self, ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let records = read_dataset_file(&self.input)?;
        let parts = split_records(&records, self.valid_fraction, self.test_fraction, ctx.seed);
        let mut out = Vec::new();
        for (name, part) in ["train", "valid", "test"].iter().zip(&parts) {
            let path = self.output_dir.join(format!("{name}.ndjson"));
            write_records(&path, part)?;
            log::info!("{name}: {} sketches", part.len());
            out.push(path);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Preprocessed point sequences (dataset records).
    #[default]
    Raw,
    /// Control points (encoded sketches or samples).
    Encoded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramStage {
    pub input: PathBuf,
    pub representation: Representation,
    pub bin_width: usize,
    pub output_dir: PathBuf,
}

impl Default for HistogramStage {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            representation: Representation::Raw,
            bin_width: 10,
            output_dir: PathBuf::new(),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct HistogramArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub representation: Option<Representation>,
    #[arg(long)]
    pub bin_width: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl HistogramArgs {
    pub fn overrides(&self, o: &mut Overrides) {
        o.set("input", self.input.clone())
            .set("representation", self.representation)
            .set("bin_width", self.bin_width)
            .set("output_dir", self.output_dir.clone());
    }
}

/// Headline numbers written next to the histogram CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub representation: Representation,
    pub sketches: usize,
    pub strokes: usize,
    pub mean_stroke_len: f64,
    /// Mean per-sketch sequence length: summed stroke points for raw data,
    /// control-point tuples for encoded data.
    pub mean_sketch_len: f64,
    /// Mean raw point count before segmentation, when known.
    pub mean_source_len: Option<f64>,
}

/// Per-sketch stroke lengths in the chosen representation.
pub fn stroke_lengths_raw(records: &[DatasetRecord]) -> Vec<Vec<usize>> {
    records
        .iter()
        .map(|r| r.strokes.iter().map(|s| s.len()).collect())
        .collect()
}

impl Stage for HistogramStage {
    const COMMAND: &'static str = "histogram";

    fn validate(&self) -> CliResult<()> {
        require(&self.input, "input")?;
        require(&self.output_dir, "output_dir")?;
        if self.bin_width == 0 {
            return Err(CliError::config("bin_width must be positive"));
        }
        Ok(())
    }

    fn inputs(&self) -> Vec<PathBuf> {
        vec![self.input.clone()]
    }

    fn default_manifest(&self) -> PathBuf {
        self.output_dir.join("histogram.manifest.json")
    }

    fn run(&self, _ctx: &Context) -> CliResult<Vec<PathBuf>> {
        let (per_sketch, sketch_lens, source): (Vec<Vec<usize>>, Vec<usize>, Option<f64>) =
            match self.representation {
                Representation::Raw => {
                    let records = read_dataset_file(&self.input)?;
                    let per = stroke_lengths_raw(&records);
                    let totals = per.iter().map(|s| s.iter().sum()).collect();
                    let src = records.iter().map(|r| r.raw_len as f64).sum::<f64>()
                        / records.len().max(1) as f64;
                    (per, totals, Some(src))
                }
                Representation::Encoded => {
                    let sketches = read_encoded_file(&self.input)?;
                    let per = sketches
                        .iter()
                        .map(|s| s.strokes.iter().map(|st| st.points.len()).collect())
                        .collect();
                    let totals = sketches
                        .iter()
                        .map(|s| build_cp_sequence(s).map(|c| c.len()).unwrap_or(0))
                        .collect();
                    let known: Vec<f64> = sketches
                        .iter()
                        .filter(|s| s.raw_len > 0)
                        .map(|s| s.raw_len as f64)
                        .collect();
                    let src =
                        (!known.is_empty()).then(|| known.iter().sum::<f64>() / known.len() as f64);
                    (per, totals, src)
                }
            };
        let hist = length_histogram(&per_sketch, self.bin_width)?;
        let strokes: usize = per_sketch.iter().map(|s| s.len()).sum();
        let summary = LengthSummary {
            representation: self.representation,
            sketches: per_sketch.len(),
            strokes,
            mean_stroke_len: hist.stroke.mean,
            mean_sketch_len: sketch_lens.iter().sum::<usize>() as f64
                / sketch_lens.len().max(1) as f64,
            mean_source_len: source,
        };
        let stroke_csv = self.output_dir.join("stroke_lengths.csv");
        let sketch_csv = self.output_dir.join("sketch_lengths.csv");
        let summary_path = self.output_dir.join("summary.json");
        write_text(&stroke_csv, &hist.stroke.to_csv())?;
        let sketch_hist =
            bezsketch_core::eval::Histogram::from_lengths(&sketch_lens, self.bin_width);
        write_text(&sketch_csv, &sketch_hist.to_csv())?;
        write_json(&summary_path, &summary)?;
        log::info!(
            "{} sketches, mean stroke length {:.2}, mean sketch length {:.2}",
            summary.sketches,
            summary.mean_stroke_len,
            summary.mean_sketch_len
        );
        Ok(vec![stroke_csv, sketch_csv, summary_path])
    }
}
