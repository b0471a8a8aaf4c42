//! On-disk formats: event CSV windows with a manifest, decomposition JSON,
//! feature matrices, selection reports, and model/evaluation JSON. All
//! writers emit deterministic byte-for-byte output for identical inputs.

use crate::core::{
    ChannelKind, Dataset, EventRecord, FeatureVector, Label, ModalDecomposition,
};
use crate::error::{Error, Result};
use crate::learn::{Confusion, EvalReport, TrainedModel};
use crate::select::SelectionOutcome;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One manifest row: where an event window lives and how it is labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub event_id: String,
    pub file: String,
    pub label: Label,
    pub sample_rate_hz: f64,
}

/// Writes one event window as CSV: first column `n`, then one
/// `<channel>.<stream>` column per stream in canonical channel order.
/// Floats round-trip exactly through the shortest-representation format.
pub fn save_event_csv(event: &EventRecord, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.display().to_string(),
            source,
        },
        other => Error::invalid(format!("csv open: {other:?}")),
    })?;
    let n = event
        .n_samples()
        .ok_or_else(|| Error::invalid("event has no samples"))?;
    let mut header = vec!["n".to_string()];
    for (kind, streams) in &event.channels {
        for s in 0..streams.len() {
            header.push(format!("{kind}.{s}"));
        }
    }
    writer.write_record(&header)?;
    for t in 0..n {
        let mut row = vec![t.to_string()];
        for streams in event.channels.values() {
            for stream in streams {
                row.push(format!("{}", stream[t]));
            }
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads an event window written by [`save_event_csv`]. Label and sample
/// rate come from the manifest, not the window file.
pub fn load_event_csv(
    path: &Path,
    event_id: &str,
    label: Label,
    sample_rate_hz: f64,
) -> Result<EventRecord> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.display().to_string(),
            source,
        },
        other => Error::Schema(format!("csv open: {other:?}")),
    })?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("n") {
        return Err(Error::Schema(format!(
            "{}: first column must be 'n', got {:?}",
            path.display(),
            header.get(0)
        )));
    }
    // column index -> (channel, stream)
    let mut layout = Vec::new();
    for (idx, name) in header.iter().enumerate().skip(1) {
        let (kind_str, stream_str) = name.split_once('.').ok_or_else(|| {
            Error::Schema(format!(
                "{}: column {name:?} is not <channel>.<stream>",
                path.display()
            ))
        })?;
        let kind: ChannelKind = kind_str.parse()?;
        let stream: usize = stream_str
            .parse()
            .map_err(|_| Error::Schema(format!("bad stream index in column {name:?}")))?;
        layout.push((idx, kind, stream));
    }
    let mut channels: BTreeMap<ChannelKind, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        for &(idx, kind, stream) in &layout {
            let raw = record.get(idx).ok_or_else(|| {
                Error::Schema(format!("{}: short row", path.display()))
            })?;
            let value: f64 = raw
                .parse()
                .map_err(|_| Error::Schema(format!("bad float {raw:?}")))?;
            channels
                .entry(kind)
                .or_default()
                .entry(stream)
                .or_default()
                .push(value);
        }
    }
    let channels: BTreeMap<ChannelKind, Vec<Vec<f64>>> = channels
        .into_iter()
        .map(|(kind, streams)| {
            // Stream indices must be dense 0..m.
            for (expect, (&got, _)) in streams.iter().enumerate() {
                if got != expect {
                    return Err(Error::Schema(format!(
                        "channel {kind}: stream indices not contiguous (missing {expect})"
                    )));
                }
            }
            Ok((kind, streams.into_values().collect()))
        })
        .collect::<Result<_>>()?;
    Ok(EventRecord {
        event_id: event_id.to_string(),
        label,
        sample_rate_hz,
        channels,
    })
}

/// Saves a corpus: one `<event_id>.csv` per event plus `manifest.csv` with
/// columns event_id,file,label,sample_rate_hz, sorted by event id.
pub fn save_corpus(events: &[EventRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut sorted: Vec<&EventRecord> = events.iter().collect();
    sorted.sort_by(|a, b| a.event_id.cmp(&b.event_id));
    let manifest_path = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest_path)?;
    for event in &sorted {
        let file = format!("{}.csv", event.event_id);
        save_event_csv(event, &dir.join(&file))?;
        writer.serialize(ManifestRow {
            event_id: event.event_id.clone(),
            file,
            label: event.label,
            sample_rate_hz: event.sample_rate_hz,
        })?;
    }
    writer.flush().map_err(io_err(&manifest_path))?;
    Ok(())
}

/// Loads a corpus directory written by [`save_corpus`], sorted by event id.
pub fn load_corpus(dir: &Path) -> Result<Vec<EventRecord>> {
    let manifest_path = dir.join("manifest.csv");
    let mut reader = csv::Reader::from_path(&manifest_path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: manifest_path.display().to_string(),
            source,
        },
        other => Error::Schema(format!("manifest open: {other:?}")),
    })?;
    let mut rows: Vec<ManifestRow> = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    rows.sort_by(|a, b| a.event_id.cmp(&b.event_id));
    let mut events = Vec::with_capacity(rows.len());
    for row in rows {
        events.push(load_event_csv(
            &dir.join(&row.file),
            &row.event_id,
            row.label,
            row.sample_rate_hz,
        )?);
    }
    Ok(events)
}

/// Versioned JSON envelope for anything persisted as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format_version: u32,
    pub payload: T,
}

pub const FORMAT_VERSION: u32 = 1;

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(
        &mut writer,
        &Envelope {
            format_version: FORMAT_VERSION,
            payload: value,
        },
    )?;
    writer.write_all(b"\n").map_err(io_err(path))?;
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let envelope: Envelope<T> = serde_json::from_str(&text)?;
    if envelope.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "{}: format version {} (expected {FORMAT_VERSION})",
            path.display(),
            envelope.format_version
        )));
    }
    Ok(envelope.payload)
}

/// Per-event decompositions keyed by event id, then channel.
pub type DecompositionStore = BTreeMap<String, BTreeMap<ChannelKind, ModalDecomposition>>;

pub fn save_decompositions(store: &DecompositionStore, path: &Path) -> Result<()> {
    save_json(store, path)
}

pub fn load_decompositions(path: &Path) -> Result<DecompositionStore> {
    load_json(path)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    save_json(model, path)
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    load_json(path)
}

pub fn save_eval_report(report: &EvalReport, path: &Path) -> Result<()> {
    save_json(report, path)
}

pub fn load_eval_report(path: &Path) -> Result<EvalReport> {
    load_json(path)
}

/// Feature matrix CSV: event_id, every feature column, then label.
pub fn save_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["event_id".to_string()];
    header.extend(dataset.feature_names.iter().cloned());
    header.push("label".to_string());
    writer.write_record(&header)?;
    for row in &dataset.rows {
        let mut record = vec![row.event_id.clone()];
        record.extend(row.values.iter().map(|v| format!("{v}")));
        record.push(row.label.to_string());
        writer.write_record(&record)?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.display().to_string(),
            source,
        },
        other => Error::Schema(format!("csv open: {other:?}")),
    })?;
    let header = reader.headers()?.clone();
    let cols = header.len();
    if cols < 3 || header.get(0) != Some("event_id") || header.get(cols - 1) != Some("label") {
        return Err(Error::Schema(format!(
            "{}: expected event_id,<features...>,label header",
            path.display()
        )));
    }
    let names: Vec<String> = header.iter().skip(1).take(cols - 2).map(String::from).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let event_id = record
            .get(0)
            .ok_or_else(|| Error::Schema("empty row".into()))?
            .to_string();
        let label: Label = record
            .get(cols - 1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Schema(format!("bad label for event {event_id}")))?;
        let mut values = Vec::with_capacity(cols - 2);
        for idx in 1..cols - 1 {
            let raw = record
                .get(idx)
                .ok_or_else(|| Error::Schema(format!("short row for event {event_id}")))?;
            values.push(
                raw.parse()
                    .map_err(|_| Error::Schema(format!("bad float {raw:?}")))?,
            );
        }
        rows.push(FeatureVector {
            event_id,
            label,
            values,
            names: names.clone(),
            flags: vec![],
        });
    }
    Dataset::from_rows(rows)
}

/// Selection report CSV: one row per feature with its bootstrap statistics
/// and whether it was kept, ordered by feature index.
pub fn save_selection_csv(
    outcome: &SelectionOutcome,
    feature_names: &[String],
    path: &Path,
) -> Result<()> {
    if feature_names.len() != outcome.percentiles.len() {
        return Err(Error::invalid("selection report: name count mismatch"));
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["feature", "mean_score", "score_percentile", "selected"])?;
    for (j, name) in feature_names.iter().enumerate() {
        writer.write_record([
            name.as_str(),
            &format!("{}", outcome.mean_scores[j]),
            &format!("{}", outcome.percentiles[j]),
            if outcome.selected_indices.contains(&j) {
                "1"
            } else {
                "0"
            },
        ])?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Selected feature indices, persisted separately so later stages can
/// project the full feature matrix without recomputing selection.
pub fn save_selected_indices(outcome: &SelectionOutcome, path: &Path) -> Result<()> {
    save_json(&outcome.selected_indices, path)
}

pub fn load_selected_indices(path: &Path) -> Result<Vec<usize>> {
    load_json(path)
}

/// Confusion matrix CSV with counts and row percentages.
pub fn save_confusion_csv(confusion: &Confusion, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["actual", "pred_0", "pred_1", "pct_pred_0", "pct_pred_1"])?;
    for r in 0..2 {
        writer.write_record([
            r.to_string(),
            confusion.counts[r][0].to_string(),
            confusion.counts[r][1].to_string(),
            format!("{}", confusion.row_percent[r][0]),
            format!("{}", confusion.row_percent[r][1]),
        ])?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Resolves a path inside an output directory, creating the directory.
pub fn prepare_out_path(dir: &Path, file: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir.join(file))
}
