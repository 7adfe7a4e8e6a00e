use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use bezsketch_core::sketch_io::{
    read_dataset, read_ndjson, write_ndjson, DatasetRecord, EncodedSketch,
};
use bezsketch_core::svg::PlacedStroke;
use bezsketch_core::{BezierError, ControlPolygon, Point};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(e.to_string()).at(path))
}

pub fn read_dataset_file(path: &Path) -> CliResult<Vec<DatasetRecord>> {
    read_dataset(open(path)?).map_err(|e| CliError::from(e).at(path))
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    read_ndjson(open(path)?).map_err(|e| CliError::from(e).at(path))
}

/// Reads encoded sketches, also accepting sample records that wrap one in `sketch`.
pub fn read_encoded_file(path: &Path) -> CliResult<Vec<EncodedSketch>> {
    let values: Vec<serde_json::Value> = read_records(path)?;
    values
        .into_iter()
        .map(|v| {
            let inner = match v.get("sketch") {
                Some(s) if s.is_object() => s.clone(),
                _ => v,
            };
            serde_json::from_value(inner).map_err(|e| CliError::io(e.to_string()).at(path))
        })
        .collect()
}

pub fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(e.to_string()).at(parent))?;
        }
    }
    Ok(())
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(e.to_string()).at(path))
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| CliError::io(e.to_string()).at(path))?;
    let mut w = BufWriter::new(file);
    write_ndjson(&mut w, records).map_err(|e| CliError::from(e).at(path))?;
    w.flush().map_err(|e| CliError::io(e.to_string()).at(path))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(e.to_string()).at(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Default manifest location: the output's full file name plus `.manifest.json`.
pub fn manifest_beside(path: &Path) -> std::path::PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.as_os_str().is_empty() {
        return Err(CliError::config(format!("missing {what}")));
    }
    Ok(())
}

/// Maps `f` over `items` on up to `workers` threads. Results keep input order, so
/// output never depends on the worker count.
pub fn par_map<T, R, F>(workers: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Raises a control polygon to `degree` by repeated exact elevation.
pub fn elevate_to(poly: &ControlPolygon, degree: usize) -> Option<ControlPolygon> {
    if poly.degree() > degree {
        return None;
    }
    let mut p = poly.clone();
    while p.degree() < degree {
        p = p.elevate();
    }
    Some(p)
}

pub fn placed_strokes(sketch: &EncodedSketch) -> Result<Vec<PlacedStroke>, BezierError> {
    sketch
        .strokes
        .iter()
        .map(|s| Ok(PlacedStroke::new(s.offset, s.polygon()?)))
        .collect()
}

/// Dense absolute polylines of every stroke, for rasterizing.
pub fn encoded_polylines(
    sketch: &EncodedSketch,
    resolution: usize,
) -> Result<Vec<Vec<Point>>, BezierError> {
    sketch
        .strokes
        .iter()
        .map(|s| {
            let pts = bezsketch_core::decode_stroke(&s.polygon()?, resolution)?;
            Ok(pts.into_iter().map(|p| p + s.offset).collect())
        })
        .collect()
}

/// Absolute polylines of a preprocessed sketch.
pub fn record_polylines(record: &DatasetRecord) -> Vec<Vec<Point>> {
    record.strokes.iter().map(|s| s.absolute_points()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order_for_any_worker_count() {
        let items: Vec<u64> = (0..37).collect();
        let serial: Vec<u64> = items.iter().map(|x| x * x + 1).collect();
        for w in [1, 2, 3, 8, 64] {
            assert_eq!(par_map(w, &items, |x| x * x + 1), serial);
        }
        assert!(par_map(4, &Vec::<u64>::new(), |x| *x).is_empty());
    }

    #[test]
    fn elevation_reaches_target_degree() {
        let poly = ControlPolygon::new(vec![Point::ORIGIN, Point::new(1.0, 2.0)]).unwrap();
        let e = elevate_to(&poly, 5).unwrap();
        assert_eq!(e.degree(), 5);
        assert_eq!(e.first(), poly.first());
        assert_eq!(e.last(), poly.last());
        assert!(elevate_to(&e, 3).is_none());
    }

    #[test]
    fn manifests_of_same_stem_outputs_differ() {
        assert_eq!(
            manifest_beside(Path::new("a/enc.json")),
            Path::new("a/enc.json.manifest.json")
        );
        assert_ne!(
            manifest_beside(Path::new("enc.json")),
            manifest_beside(Path::new("enc.ndjson"))
        );
    }
}
