//! MOTChallenge-style CSV files and `seqinfo.txt` sequence metadata.
//!
//! Every line is `frame,id,x,y,w,h,score,class[,visibility[,-1]]` with the
//! box as left, top, width, height in image pixels and frames counted from 1.
//! Detections carry `id = -1`; ground truth carries ids from 1 and a
//! visibility column; results carry track ids and end in `,-1,-1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::association::{Detection, TrackOutput};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Gt,
    Det,
    Result,
}

/// One CSV line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub frame: u32,
    /// `-1` for detections.
    pub id: i64,
    pub bbox: BBox,
    pub score: f32,
    pub class_id: u32,
    /// `-1` when the file has no visibility column.
    pub visibility: f32,
}

impl MotRecord {
    pub fn detection(&self) -> Detection {
        Detection::new(self.frame, self.bbox, self.score, self.class_id)
    }
}

impl From<&TrackOutput> for MotRecord {
    fn from(t: &TrackOutput) -> Self {
        MotRecord { frame: t.frame, id: t.id as i64, bbox: t.bbox, score: t.score, class_id: t.class_id, visibility: -1.0 }
    }
}

impl From<&Detection> for MotRecord {
    fn from(d: &Detection) -> Self {
        MotRecord { frame: d.frame, id: -1, bbox: d.bbox, score: d.score, class_id: d.class_id, visibility: -1.0 }
    }
}

fn sort_records(records: &mut [MotRecord]) {
    records.sort_by_key(|r| (r.frame, r.id));
}

fn parse_line(line: &str, kind: RecordKind) -> std::result::Result<MotRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if !(8..=10).contains(&fields.len()) {
        return Err(format!("expected 8 to 10 comma-separated fields, got {}", fields.len()));
    }
    let float = |i: usize, name: &str| -> std::result::Result<f32, String> {
        let v: f32 = fields[i].parse().map_err(|_| format!("{name}: not a number: {:?}", fields[i]))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{name}: not finite"))
        }
    };
    let frame: u32 = fields[0].parse().map_err(|_| format!("frame: not a positive integer: {:?}", fields[0]))?;
    if frame == 0 {
        return Err("frame numbers start at 1".into());
    }
    let id: i64 = fields[1].parse().map_err(|_| format!("id: not an integer: {:?}", fields[1]))?;
    match kind {
        RecordKind::Det if id != -1 => return Err(format!("detection id must be -1, got {id}")),
        RecordKind::Gt | RecordKind::Result if id < 1 => return Err(format!("track id must be at least 1, got {id}")),
        _ => {}
    }
    let bbox = BBox::new(float(2, "x")?, float(3, "y")?, float(4, "w")?, float(5, "h")?);
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(format!("box width and height must be positive, got {} x {}", bbox.w, bbox.h));
    }
    let score = float(6, "score")?;
    let class_id: u32 = fields[7].parse().map_err(|_| format!("class: not a non-negative integer: {:?}", fields[7]))?;
    let visibility = if fields.len() >= 9 { float(8, "visibility")? } else { -1.0 };
    Ok(MotRecord { frame, id, bbox, score, class_id, visibility })
}

/// Parses file contents; records come back sorted by `(frame, id)`.
pub fn parse_mot_csv(text: &str, kind: RecordKind) -> Result<Vec<MotRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(line, kind).map_err(|message| Error::Parse { line: i + 1, message })?);
    }
    sort_records(&mut out);
    Ok(out)
}

pub fn read_mot_csv(path: &Path, kind: RecordKind) -> Result<Vec<MotRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_mot_csv(&text, kind).map_err(|e| match e {
        Error::Parse { line, message } => Error::Format(format!("{}:{line}: {message}", path.display())),
        other => other,
    })
}

/// Serializes sorted by `(frame, id)` with two decimals for every float.
pub fn format_mot_csv(records: &[MotRecord], kind: RecordKind) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut s = String::new();
    for r in &sorted {
        let b = r.bbox;
        let id = if kind == RecordKind::Det { -1 } else { r.id };
        let _ = write!(s, "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{}", r.frame, id, b.x, b.y, b.w, b.h, r.score, r.class_id);
        let _ = match kind {
            RecordKind::Gt => writeln!(s, ",{:.2}", r.visibility),
            RecordKind::Det | RecordKind::Result => writeln!(s, ",-1,-1"),
        };
    }
    s
}

pub fn write_mot_csv(records: &[MotRecord], path: &Path, kind: RecordKind) -> Result<()> {
    std::fs::write(path, format_mot_csv(records, kind))?;
    Ok(())
}

/// Records grouped per frame, `frames` entries long (frame `f` at `f - 1`).
/// Records past `frames` are dropped.
pub fn group_by_frame(records: &[MotRecord], frames: u32) -> Vec<Vec<MotRecord>> {
    let mut out = vec![Vec::new(); frames as usize];
    for r in records {
        if let Some(slot) = out.get_mut(r.frame as usize - 1) {
            slot.push(*r);
        }
    }
    out
}

/// Records of each id, ordered by frame.
pub fn group_by_id(records: &[MotRecord]) -> BTreeMap<i64, Vec<MotRecord>> {
    let mut out: BTreeMap<i64, Vec<MotRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.id).or_default().push(*r);
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.frame);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqMeta {
    pub name: String,
    pub frame_count: u32,
    pub img_width: u32,
    pub img_height: u32,
    pub flow_width: u32,
    pub flow_height: u32,
    pub fps: f32,
}

impl SeqMeta {
    pub fn img_size(&self) -> (u32, u32) {
        (self.img_width, self.img_height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::invalid("frames must be at least 1"));
        }
        if self.img_width == 0 || self.img_height == 0 || self.flow_width == 0 || self.flow_height == 0 {
            return Err(Error::invalid("image and flow sizes must be positive"));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "name={}\nframes={}\nimg_w={}\nimg_h={}\nflow_w={}\nflow_h={}\nfps={}\n",
            self.name, self.frame_count, self.img_width, self.img_height, self.flow_width, self.flow_height, self.fps
        )
    }
}

pub fn parse_seqinfo(text: &str) -> Result<SeqMeta> {
    let mut kv = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected key=value, got {line:?}") })?;
        kv.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
    }
    let get = |key: &str| kv.get(key).ok_or_else(|| Error::MissingKey(key.to_string()));
    fn num<T: std::str::FromStr>(key: &str, (line, v): &(usize, String)) -> Result<T> {
        v.parse().map_err(|_| Error::Parse { line: *line, message: format!("{key}: bad value {v:?}") })
    }
    let meta = SeqMeta {
        name: get("name")?.1.clone(),
        frame_count: num("frames", get("frames")?)?,
        img_width: num("img_w", get("img_w")?)?,
        img_height: num("img_h", get("img_h")?)?,
        flow_width: num("flow_w", get("flow_w")?)?,
        flow_height: num("flow_h", get("flow_h")?)?,
        fps: num("fps", get("fps")?)?,
    };
    meta.validate()?;
    Ok(meta)
}

pub fn read_seqinfo(path: &Path) -> Result<SeqMeta> {
    parse_seqinfo(&std::fs::read_to_string(path)?)
}

pub fn write_seqinfo(meta: &SeqMeta, path: &Path) -> Result<()> {
    std::fs::write(path, meta.to_text())?;
    Ok(())
}
