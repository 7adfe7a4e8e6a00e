#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use bezsketch_cli::manifest::Manifest;
use bezsketch_cli::run_args;

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sketches.ndjson")
}

/// Runs one command line in-process and returns its manifest.
pub fn run(args: &[&str]) -> Manifest {
    let mut full = vec!["bezsketch"];
    full.extend_from_slice(args);
    match run_args(full) {
        Ok(Some(m)) => m,
        Ok(None) => panic!("{args:?} produced no manifest"),
        Err(e) => panic!("{args:?} failed: {}", e.to_json_line()),
    }
}

/// All manifests under `dir`, sorted.
pub fn manifests_under(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = tree(dir)
        .into_keys()
        .filter(|k| k.ends_with(".manifest.json"))
        .map(|k| dir.join(k))
        .collect();
    out.sort();
    out
}

pub fn path_str(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// The toy pipeline from raw fixture sketches to rendered samples, with model sizes
/// small enough to run in a few seconds.
pub fn toy_pipeline(dir: &Path, seed: u64, workers: usize) -> Vec<Manifest> {
    let p = |name: &str| path_str(dir, name);
    let seed = seed.to_string();
    let workers = workers.to_string();
    let fixture = fixture_path();
    let g = ["--seed", seed.as_str(), "--workers", workers.as_str()];
    let with = |args: &[&str]| {
        let mut v: Vec<&str> = args.to_vec();
        v.extend_from_slice(&g);
        run(&v)
    };
    vec![
        with(&[
            "ingest",
            "--input",
            fixture.to_str().unwrap(),
            "--output",
            &p("data.ndjson"),
        ]),
        with(&[
            "split",
            "--input",
            &p("data.ndjson"),
            "--output-dir",
            &p("split"),
        ]),
        with(&[
            "train-encoder",
            "--input",
            &p("split/train.ndjson"),
            "--output",
            &p("enc.json"),
            "--hidden",
            "16",
            "--epochs",
            "2",
            "--degrees",
            "3..5",
            "--synthetic",
            "50",
        ]),
        with(&[
            "encode",
            "--input",
            &p("data.ndjson"),
            "--model",
            &p("enc.json"),
            "--output",
            &p("enc.ndjson"),
            "--degree",
            "5",
        ]),
        with(&[
            "train-generator",
            "--input",
            &p("enc.ndjson"),
            "--output",
            &p("gen.json"),
            "--degree",
            "5",
            "--latent",
            "8",
            "--enc-hidden",
            "16",
            "--dec-hidden",
            "32",
            "--mixtures",
            "3",
            "--nmax",
            "16",
            "--epochs",
            "2",
        ]),
        with(&[
            "sample",
            "--model",
            &p("gen.json"),
            "--output",
            &p("samples.ndjson"),
            "--count",
            "6",
        ]),
        with(&[
            "render-svg",
            "--input",
            &p("samples.ndjson"),
            "--output-dir",
            &p("svg"),
        ]),
    ]
}

/// Every file under `dir` by relative path. In manifests, occurrences of `dir` and
/// the config hash (which covers those paths) are masked so runs in different
/// directories compare equal.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, at: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(at)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
                continue;
            }
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_str()
                .unwrap()
                .to_string();
            let mut bytes = fs::read(&path).unwrap();
            if rel.ends_with(".manifest.json") {
                let text = String::from_utf8(bytes).unwrap();
                let masked: Vec<String> = text
                    .replace(root.to_str().unwrap(), "<dir>")
                    .lines()
                    .map(|l| {
                        if l.trim_start().starts_with("\"config_hash\"") {
                            "<hash>".to_string()
                        } else {
                            l.to_string()
                        }
                    })
                    .collect();
                bytes = masked.join("\n").into_bytes();
            }
            out.insert(rel, bytes);
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Structural SVG check: XML prolog, one balanced `svg` root, finite numeric
/// attributes and path data made only of known commands and finite numbers.
pub fn check_svg(text: &str) -> Result<(), String> {
    let body = text
        .strip_prefix("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n")
        .ok_or("missing prolog")?;
    let mut stack: Vec<String> = Vec::new();
    let mut rest = body;
    let mut roots = 0;
    while let Some(open) = rest.find('<') {
        let close = rest[open..].find('>').ok_or("unterminated tag")? + open;
        let tag = &rest[open + 1..close];
        rest = &rest[close + 1..];
        if tag.starts_with("![CDATA[") {
            // Metadata payloads end with `]]`; skip them.
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            if stack.pop().as_deref() != Some(name) {
                return Err(format!("unbalanced </{name}>"));
            }
            continue;
        }
        let self_closing = tag.ends_with('/');
        let tag = tag.trim_end_matches('/');
        let name = tag.split_whitespace().next().ok_or("empty tag")?;
        if stack.is_empty() {
            roots += 1;
            if name != "svg" {
                return Err(format!("root element {name}"));
            }
        }
        check_attributes(name, tag)?;
        if !self_closing {
            stack.push(name.to_string());
        }
    }
    if !stack.is_empty() || roots != 1 {
        return Err(format!("unclosed {stack:?} or {roots} roots"));
    }
    if !rest.trim().is_empty() {
        return Err("trailing text".into());
    }
    Ok(())
}

fn check_attributes(name: &str, tag: &str) -> Result<(), String> {
    let keys: Vec<String> = tag
        .split('"')
        .step_by(2)
        .map(|k| {
            k.trim()
                .trim_end_matches('=')
                .rsplit(' ')
                .next()
                .unwrap_or("")
                .to_string()
        })
        .collect();
    let values: Vec<&str> = tag.split('"').skip(1).step_by(2).collect();
    for (key, value) in keys.iter().zip(&values) {
        match key.as_str() {
            "d" => check_path_data(value)?,
            "x1" | "y1" | "x2" | "y2" | "cx" | "cy" | "r" | "width" | "height" | "stroke-width" => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| format!("{name}.{key} = {value:?}"))?;
                if !v.is_finite() {
                    return Err(format!("{name}.{key} not finite"));
                }
            }
            "viewBox" => {
                let nums: Result<Vec<f64>, _> =
                    value.split_whitespace().map(str::parse::<f64>).collect();
                let nums = nums.map_err(|_| format!("viewBox {value:?}"))?;
                if nums.len() != 4
                    || nums.iter().any(|v| !v.is_finite())
                    || nums[2] <= 0.0
                    || nums[3] <= 0.0
                {
                    return Err(format!("viewBox {value:?}"));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn check_path_data(d: &str) -> Result<(), String> {
    let mut count = 0;
    for token in d
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
    {
        let (cmd, num) = match token.chars().next() {
            Some(c) if c.is_ascii_alphabetic() => (Some(c), &token[c.len_utf8()..]),
            _ => (None, token),
        };
        if let Some(c) = cmd {
            if !"MLCQZmlcqz".contains(c) {
                return Err(format!("path command {c}"));
            }
            if count == 0 && c != 'M' {
                return Err("path must start with M".into());
            }
            count += 1;
        }
        if !num.is_empty() {
            let v: f64 = num.parse().map_err(|_| format!("path token {token:?}"))?;
            if !v.is_finite() {
                return Err("non-finite path coordinate".into());
            }
        }
    }
    if count == 0 {
        return Err("empty path".into());
    }
    Ok(())
}

/// Frame losses embedded in snapshot SVGs, in frame order.
pub fn frame_losses(dir: &Path) -> Vec<(usize, f64)> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name()
                .unwrap()
                .to_str()
                .unwrap()
                .starts_with("frame_")
        })
        .collect();
    frames.sort();
    frames
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).unwrap();
            let start = text.find("<![CDATA[").expect("frame metadata") + 9;
            let end = text[start..].find("]]>").unwrap() + start;
            let meta: serde_json::Value = serde_json::from_str(&text[start..end]).unwrap();
            (
                meta["step"].as_u64().unwrap() as usize,
                meta["loss"].as_f64().unwrap(),
            )
        })
        .collect()
}

/// Means over `blocks` consecutive windows must not rise by more than `slack`
/// relative to the previous window.
pub fn smoothed_nonincreasing(
    values: &[f64],
    blocks: usize,
    slack: f64,
) -> Result<Vec<f64>, Vec<f64>> {
    let size = values.len() / blocks;
    let means: Vec<f64> = (0..blocks)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    if means.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack)) {
        Ok(means)
    } else {
        Err(means)
    }
}
