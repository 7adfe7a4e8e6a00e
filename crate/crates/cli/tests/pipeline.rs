mod common;

use std::fs;

use bezsketch_cli::manifest::Manifest;
use bezsketch_cli::replay;
use bezsketch_cli::stages::data::fixture_ndjson;
use common::{
    check_svg, fixture_path, frame_losses, manifests_under, path_str, run, smoothed_nonincreasing,
    toy_pipeline, tree,
};

#[test]
fn committed_fixture_regenerates_byte_for_byte() {
    let committed = fs::read_to_string(fixture_path()).unwrap();
    assert_eq!(fixture_ndjson(200, 0), committed);
    assert_eq!(committed.lines().count(), 200);
}

#[test]
fn toy_pipeline_completes_and_renders() {
    let dir = tempfile::tempdir().unwrap();
    let manifests = toy_pipeline(dir.path(), 3, 1);
    assert_eq!(manifests.len(), 7);
    for m in &manifests {
        assert_eq!(m.seed, 3);
        assert_eq!(m.config_hash.len(), 64);
        assert!(!m.outputs.is_empty(), "{} wrote nothing", m.command);
    }
    let svgs: Vec<_> = fs::read_dir(dir.path().join("svg"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "svg"))
        .collect();
    assert!(!svgs.is_empty());
    for svg in svgs {
        check_svg(&fs::read_to_string(&svg).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", svg.display()));
    }
    for name in ["train", "valid", "test"] {
        assert!(dir.path().join(format!("split/{name}.ndjson")).exists());
    }
}

#[test]
fn same_seed_gives_identical_files_in_any_directory() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    toy_pipeline(a.path(), 11, 1);
    toy_pipeline(b.path(), 11, 1);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (name, bytes) in &ta {
        assert!(bytes == &tb[name], "{name} differs");
    }
}

#[test]
fn worker_count_does_not_change_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    toy_pipeline(a.path(), 5, 1);
    toy_pipeline(b.path(), 5, 4);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    for (name, bytes) in &ta {
        if name.ends_with(".manifest.json") {
            // The resolved config records the worker count.
            continue;
        }
        assert!(bytes == &tb[name], "{name} differs between 1 and 4 workers");
    }
}

#[test]
fn every_manifest_replays_to_the_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifests = toy_pipeline(dir.path(), 2, 1);
    let paths = manifests_under(dir.path());
    assert_eq!(paths.len(), manifests.len());
    for path in paths {
        let before = Manifest::load(&path).unwrap();
        let after = replay(&path, true)
            .unwrap_or_else(|e| panic!("{}: {}", path.display(), e.to_json_line()));
        assert_eq!(before, after);
    }
}

#[test]
fn replay_refuses_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ndjson");
    fs::copy(fixture_path(), &input).unwrap();
    let out = path_str(dir.path(), "data.ndjson");
    run(&[
        "ingest",
        "--input",
        input.to_str().unwrap(),
        "--output",
        &out,
        "--limit",
        "10",
    ]);
    let manifest = dir.path().join("data.ndjson.manifest.json");
    replay(&manifest, true).unwrap();
    let mut text = fs::read_to_string(&input).unwrap();
    text.truncate(text.len() / 2);
    text.truncate(text.rfind('\n').unwrap() + 1);
    fs::write(&input, text).unwrap();
    let err = replay(&manifest, false).unwrap_err();
    assert_eq!(err.category.as_str(), "io");
}

#[test]
fn replay_detects_tampered_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path(), "data.ndjson");
    run(&[
        "ingest",
        "--input",
        fixture_path().to_str().unwrap(),
        "--output",
        &out,
        "--limit",
        "5",
    ]);
    let manifest = dir.path().join("data.ndjson.manifest.json");
    let mut m = Manifest::load(&manifest).unwrap();
    m.outputs[0].sha256 = "0".repeat(64);
    m.save(&manifest).unwrap();
    let err = replay(&manifest, true).unwrap_err();
    assert_eq!(err.category.as_str(), "numeric");
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    let out = path_str(dir.path(), "data.ndjson");
    fs::write(&config, r#"{"command": "ingest", "limit": 4, "seed": 9}"#).unwrap();
    let m = run(&[
        "ingest",
        "--input",
        fixture_path().to_str().unwrap(),
        "--output",
        &out,
        "--limit",
        "50",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(m.seed, 9);
    assert_eq!(m.config["limit"], 4);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 4);
}

#[test]
fn snapshot_frames_show_decreasing_loss() {
    let dir = tempfile::tempdir().unwrap();
    let data = path_str(dir.path(), "data.ndjson");
    run(&[
        "ingest",
        "--input",
        fixture_path().to_str().unwrap(),
        "--output",
        &data,
        "--limit",
        "4",
    ]);
    for sketch in ["0", "1", "2"] {
        let out = dir.path().join(format!("snap{sketch}"));
        run(&[
            "snapshot-fit",
            "--input",
            &data,
            "--output-dir",
            out.to_str().unwrap(),
            "--sketch",
            sketch,
        ]);
        let frames = frame_losses(&out);
        assert_eq!(frames.len(), 31);
        assert!(
            frames.windows(2).all(|w| w[0].0 < w[1].0),
            "frames out of order"
        );
        let losses: Vec<f64> = frames.iter().map(|f| f.1).collect();
        let means = smoothed_nonincreasing(&losses, 4, 0.1)
            .unwrap_or_else(|m| panic!("sketch {sketch}: {m:?}"));
        assert!(means[3] < 0.5 * means[0], "sketch {sketch}: {means:?}");
        let csv = fs::read_to_string(out.join("losses.csv")).unwrap();
        assert_eq!(csv.lines().count(), frames.len() + 1);
    }
}

#[test]
fn fit_and_histogram_stages_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = path_str(dir.path(), "data.ndjson");
    run(&[
        "ingest",
        "--input",
        fixture_path().to_str().unwrap(),
        "--output",
        &data,
        "--limit",
        "20",
    ]);
    let fit = path_str(dir.path(), "fit.csv");
    run(&[
        "fit",
        "--input",
        &data,
        "--output",
        &fit,
        "--degree",
        "3",
        "--svg",
        &path_str(dir.path(), "fitsvg"),
    ]);
    let csv = fs::read_to_string(&fit).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("sketch,stroke,points,degree,loss,loss_per_point")
    );
    for line in lines {
        let loss: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
    }
    for entry in fs::read_dir(dir.path().join("fitsvg")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "svg") {
            check_svg(&fs::read_to_string(&path).unwrap()).unwrap();
        }
    }
    let hist = dir.path().join("hist");
    run(&[
        "histogram",
        "--input",
        &data,
        "--output-dir",
        hist.to_str().unwrap(),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(hist.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["sketches"], 20);
}
