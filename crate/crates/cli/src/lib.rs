//! The `bezsketch` command line: reproducible stages from raw sketches to
//! trained models, samples, SVGs and FID scores.
//!
//! Every stage resolves its config from defaults, flags and an optional JSON
//! file (the file wins), logs it with its hash, and writes a manifest that is
//! enough to re-run it with `bezsketch replay`.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stage;
pub mod stages;
pub mod util;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::config::{read_config_file, resolve, Overrides};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::stage::{execute, Stage};
use crate::stages::data::{
    FixtureArgs, FixtureStage, HistogramArgs, HistogramStage, IngestArgs, IngestStage, SplitArgs,
    SplitStage,
};
use crate::stages::encoder::{
    EncodeArgs, EncodeStage, FitArgs, FitStage, SnapshotFitArgs, SnapshotFitStage,
    TrainEncoderArgs, TrainEncoderStage,
};
use crate::stages::generator::{
    EvalFidArgs, EvalFidStage, RenderSvgArgs, RenderSvgStage, SampleArgs, SampleStage,
    TrainGeneratorArgs, TrainGeneratorStage,
};

#[derive(Parser, Debug)]
#[command(
    name = "bezsketch",
    version,
    about = "Bézier sketch encoding, generation and evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// JSON config file; its values override flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threads for per-item work [default: 1].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Manifest path; defaults next to the stage's main output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the bundled synthetic QuickDraw-style fixture.
    Fixture(FixtureArgs),
    /// Parse QuickDraw NDJSON into a preprocessed dataset.
    Ingest(IngestArgs),
    /// Partition a dataset into train, valid and test files.
    Split(SplitArgs),
    /// Train the stroke encoder.
    TrainEncoder(TrainEncoderArgs),
    /// Embed a dataset's strokes as control polygons.
    Encode(EncodeArgs),
    /// Fit one degree per stroke and report per-stroke losses.
    Fit(FitArgs),
    /// Train the sketch generator on encoded sketches.
    TrainGenerator(TrainGeneratorArgs),
    /// Draw sketches from a trained generator.
    Sample(SampleArgs),
    /// Render encoded sketches or samples to SVG.
    RenderSvg(RenderSvgArgs),
    /// FID between real sketches and samples, per length bucket.
    EvalFid(EvalFidArgs),
    /// Stroke and sketch length histograms.
    Histogram(HistogramArgs),
    /// SVG frames of an encoder fitting one stroke during training.
    SnapshotFit(SnapshotFitArgs),
    /// Re-run a stage from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    #[arg(long = "from")]
    pub from: PathBuf,
    /// Fail unless every output hash matches the recorded one.
    #[arg(long)]
    pub verify: bool,
}

fn global_overrides(g: &GlobalArgs) -> Overrides {
    let mut o = Overrides::new();
    o.set("seed", g.seed).set("workers", g.workers);
    o
}

fn run_stage<S: Stage>(
    global: &GlobalArgs,
    fill: impl FnOnce(&mut Overrides),
) -> CliResult<Option<Manifest>> {
    let mut o = global_overrides(global);
    fill(&mut o);
    let file = global.config.as_deref().map(read_config_file).transpose()?;
    let config = resolve::<S>(S::COMMAND, o.into_value(), file)?;
    if global.print_config {
        println!("{}", serde_json::to_string_pretty(&config)?);
        return Ok(None);
    }
    execute(&config, global.manifest.as_deref()).map(Some)
}

/// Re-runs the stage recorded in `manifest` with its exact config.
pub fn replay(path: &Path, verify: bool) -> CliResult<Manifest> {
    let recorded = Manifest::load(path)?;
    let changed = recorded.changed_inputs()?;
    if !changed.is_empty() {
        let list: Vec<String> = changed.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::io(format!(
            "inputs changed since the recorded run: {}",
            list.join(", ")
        )));
    }
    fn again<S: Stage>(config: &Value, manifest: &Path) -> CliResult<Manifest> {
        let c = resolve::<S>(
            S::COMMAND,
            Value::Object(Default::default()),
            Some(config.clone()),
        )?;
        execute(&c, Some(manifest))
    }
    let fresh = match recorded.command.as_str() {
        FixtureStage::COMMAND => again::<FixtureStage>(&recorded.config, path),
        IngestStage::COMMAND => again::<IngestStage>(&recorded.config, path),
        SplitStage::COMMAND => again::<SplitStage>(&recorded.config, path),
        TrainEncoderStage::COMMAND => again::<TrainEncoderStage>(&recorded.config, path),
        EncodeStage::COMMAND => again::<EncodeStage>(&recorded.config, path),
        FitStage::COMMAND => again::<FitStage>(&recorded.config, path),
        TrainGeneratorStage::COMMAND => again::<TrainGeneratorStage>(&recorded.config, path),
        SampleStage::COMMAND => again::<SampleStage>(&recorded.config, path),
        RenderSvgStage::COMMAND => again::<RenderSvgStage>(&recorded.config, path),
        EvalFidStage::COMMAND => again::<EvalFidStage>(&recorded.config, path),
        HistogramStage::COMMAND => again::<HistogramStage>(&recorded.config, path),
        SnapshotFitStage::COMMAND => again::<SnapshotFitStage>(&recorded.config, path),
        other => Err(CliError::config(format!(
            "unknown command {other:?} in manifest"
        ))),
    }?;
    if verify && fresh.outputs != recorded.outputs {
        return Err(CliError::numeric(
            "replayed outputs differ from the recorded ones",
        ));
    }
    Ok(fresh)
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<Option<Manifest>> {
    let g = &cli.global;
    match &cli.command {
        Command::Fixture(a) => run_stage::<FixtureStage>(g, |o| a.overrides(o)),
        Command::Ingest(a) => run_stage::<IngestStage>(g, |o| a.overrides(o)),
        Command::Split(a) => run_stage::<SplitStage>(g, |o| a.overrides(o)),
        Command::TrainEncoder(a) => run_stage::<TrainEncoderStage>(g, |o| a.overrides(o)),
        Command::Encode(a) => run_stage::<EncodeStage>(g, |o| a.overrides(o)),
        Command::Fit(a) => run_stage::<FitStage>(g, |o| a.overrides(o)),
        Command::TrainGenerator(a) => run_stage::<TrainGeneratorStage>(g, |o| a.overrides(o)),
        Command::Sample(a) => run_stage::<SampleStage>(g, |o| a.overrides(o)),
        Command::RenderSvg(a) => run_stage::<RenderSvgStage>(g, |o| a.overrides(o)),
        Command::EvalFid(a) => run_stage::<EvalFidStage>(g, |o| a.overrides(o)),
        Command::Histogram(a) => run_stage::<HistogramStage>(g, |o| a.overrides(o)),
        Command::SnapshotFit(a) => run_stage::<SnapshotFitStage>(g, |o| a.overrides(o)),
        Command::Replay(a) => replay(&a.from, a.verify).map(Some),
    }
}

/// Parses `args` (including the program name) and runs them.
pub fn run_args<I, T>(args: I) -> CliResult<Option<Manifest>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config(e.to_string()))?;
    run(cli)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_reach_the_resolved_config() {
        let cli = Cli::try_parse_from([
            "bezsketch",
            "train-encoder",
            "--input",
            "a.ndjson",
            "--output",
            "e.json",
            "--degrees",
            "2..4",
            "--beta",
            "0.01",
            "--lr",
            "0.002",
            "--seed",
            "7",
        ])
        .unwrap();
        let Command::TrainEncoder(a) = &cli.command else {
            panic!()
        };
        let mut o = global_overrides(&cli.global);
        a.overrides(&mut o);
        let c = resolve::<TrainEncoderStage>("train-encoder", o.into_value(), None).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!((c.stage.model.min_degree, c.stage.model.max_degree), (2, 4));
        assert_eq!(c.stage.model.beta, 0.01);
        assert_eq!(c.stage.model.optimizer.lr(), 0.002);
        assert_eq!(c.stage.model.hidden, 256);
        assert_eq!(c.stage.inputs, vec![PathBuf::from("a.ndjson")]);
    }

    #[test]
    fn mode_flag_maps_to_control_point() {
        let cli = Cli::try_parse_from([
            "bezsketch",
            "train-generator",
            "--mode",
            "cp",
            "--input",
            "x",
            "--output",
            "y",
        ])
        .unwrap();
        let Command::TrainGenerator(a) = &cli.command else {
            panic!()
        };
        let mut o = Overrides::new();
        a.overrides(&mut o);
        let c = resolve::<TrainGeneratorStage>("train-generator", o.into_value(), None).unwrap();
        assert_eq!(
            c.stage.model.mode,
            bezsketch_models::sketch_generator::GeneratorMode::ControlPoint
        );
    }
}
