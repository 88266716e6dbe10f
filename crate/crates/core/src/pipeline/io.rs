//! CSV interchange: MOT-style detections, ground truth, tracks and intent scores.
//! Every writer uses `.` decimals and LF line endings.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::geometry::BBox;
use crate::tracking::TrackOutput;

use super::evaluate::{AgentTruth, GroundTruth};
use super::predict::IntentScore;
use super::scenario::{Detection, Intent};
use super::PipelineError;

fn parse_error(line: u64, message: impl Into<String>) -> PipelineError {
    PipelineError::Parse { line, message: message.into() }
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T, PipelineError> {
    let raw = record
        .get(i)
        .ok_or_else(|| parse_error(line, format!("missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_error(line, format!("invalid {name} {raw:?}")))
}

/// Yields `(line number, record)`, skipping blank lines and a leading header whose first
/// cell is `frame`.
fn records<R: Read>(reader: R, columns: usize) -> Result<Vec<(u64, csv::StringRecord)>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        if out.is_empty() && i == 0 && rec.get(0) == Some("frame") {
            continue;
        }
        if rec.len() < columns {
            return Err(parse_error(line, format!("expected {columns} columns, found {}", rec.len())));
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn ltwh(record: &csv::StringRecord, start: usize, line: u64) -> Result<BBox, PipelineError> {
    let l: f64 = field(record, start, "bb_left", line)?;
    let t: f64 = field(record, start + 1, "bb_top", line)?;
    let w: f64 = field(record, start + 2, "bb_width", line)?;
    let h: f64 = field(record, start + 3, "bb_height", line)?;
    BBox::from_ltwh(l, t, w, h).map_err(|e| parse_error(line, e.to_string()))
}

/// Reads `frame,id,bb_left,bb_top,bb_width,bb_height,confidence` rows. Extra MOT
/// columns are ignored.
pub fn read_detections<R: Read>(reader: R) -> Result<Vec<Detection>, PipelineError> {
    let mut out = Vec::new();
    let mut last = None;
    for (line, rec) in records(reader, 7)? {
        let frame: i64 = field(&rec, 0, "frame", line)?;
        if let Some(prev) = last {
            if frame < prev {
                return Err(parse_error(line, format!("frame {frame} follows frame {prev}")));
            }
        }
        last = Some(frame);
        let _: i64 = field(&rec, 1, "id", line)?;
        let bbox = ltwh(&rec, 2, line)?;
        let confidence: f64 = field(&rec, 6, "confidence", line)?;
        out.push(Detection { frame, bbox, confidence });
    }
    Ok(out)
}

pub fn write_detections<W: Write>(mut w: W, detections: &[Detection]) -> Result<(), PipelineError> {
    for d in detections {
        let [l, t, bw, bh] = d.bbox.to_ltwh();
        writeln!(w, "{},-1,{l},{t},{bw},{bh},{}", d.frame, d.confidence)?;
    }
    Ok(())
}

/// Boxes per frame for every frame in `first..=last`, empty where nothing was detected.
pub fn detections_by_frame(detections: &[Detection], first: i64, last: i64) -> Vec<(i64, Vec<BBox>)> {
    let mut grouped: BTreeMap<i64, Vec<BBox>> = (first..=last).map(|f| (f, Vec::new())).collect();
    for d in detections {
        if let Some(v) = grouped.get_mut(&d.frame) {
            v.push(d.bbox);
        }
    }
    grouped.into_iter().collect()
}

pub fn write_ground_truth<W: Write>(mut w: W, truth: &GroundTruth) -> Result<(), PipelineError> {
    writeln!(w, "frame,agent_id,bb_left,bb_top,bb_width,bb_height,label,onset_frame")?;
    for (frame, agents) in truth.per_frame() {
        for (id, bbox) in agents {
            let a = truth.agent(id).expect("agent listed in its own frames");
            let [l, t, bw, bh] = bbox.to_ltwh();
            writeln!(w, "{frame},{id},{l},{t},{bw},{bh},{},{}", a.intent.as_str(), a.onset)?;
        }
    }
    Ok(())
}

pub fn read_ground_truth<R: Read>(reader: R) -> Result<GroundTruth, PipelineError> {
    let mut agents: BTreeMap<u64, AgentTruth> = BTreeMap::new();
    for (line, rec) in records(reader, 8)? {
        let frame: i64 = field(&rec, 0, "frame", line)?;
        let id: u64 = field(&rec, 1, "agent_id", line)?;
        let bbox = ltwh(&rec, 2, line)?;
        let label = rec.get(6).unwrap_or_default();
        let intent = Intent::parse(label).ok_or_else(|| parse_error(line, format!("invalid label {label:?}")))?;
        let onset: i64 = field(&rec, 7, "onset_frame", line)?;
        let agent = agents.entry(id).or_insert_with(|| AgentTruth {
            id,
            intent,
            onset,
            boxes: BTreeMap::new(),
        });
        if agent.intent != intent || agent.onset != onset {
            return Err(parse_error(line, format!("agent {id} changes label or onset")));
        }
        if agent.boxes.insert(frame, bbox).is_some() {
            return Err(parse_error(line, format!("agent {id} appears twice in frame {frame}")));
        }
    }
    Ok(GroundTruth { agents: agents.into_values().collect() })
}

pub fn write_tracks<W: Write>(mut w: W, frame: i64, tracks: &[TrackOutput]) -> Result<(), PipelineError> {
    for t in tracks {
        let [l, top, bw, bh] = t.bbox.to_ltwh();
        writeln!(w, "{frame},{},{l:.3},{top:.3},{bw:.3},{bh:.3}", t.id)?;
    }
    Ok(())
}

pub fn write_intents<W: Write>(mut w: W, scores: &[IntentScore]) -> Result<(), PipelineError> {
    for s in scores {
        writeln!(w, "{},{},{:.6}", s.frame_index, s.track_id, s.p_cross)?;
    }
    Ok(())
}
