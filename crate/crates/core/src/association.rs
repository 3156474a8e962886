//! Two-stage spatial association and the per-frame tracking loop.

use crate::error::{Error, Result};
use crate::fgmp::{mean_of_flow, FoldedMpn, MotionPredictionNet};
use crate::flow::FlowMap;
use crate::geometry::{iou, BBox};
use crate::kalman::{kf_init, kf_predict, kf_update, KalmanState};

/// Cost given to pairs that may not be matched. Large enough that the solver
/// always prefers one more admissible pair over any saving in IoU cost.
const FORBIDDEN: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BBox,
    pub score: f32,
    pub class_id: u32,
}

impl Detection {
    pub fn new(frame: u32, bbox: BBox, score: f32, class_id: u32) -> Self {
        Detection { frame, bbox, score, class_id }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionMode {
    Kf,
    Fgmp,
    MeanOfFlow,
    /// Boxes stay where they were last seen.
    Identity,
}

impl std::str::FromStr for MotionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kf" => Ok(MotionMode::Kf),
            "fgmp" => Ok(MotionMode::Fgmp),
            "meanflow" | "mean_of_flow" => Ok(MotionMode::MeanOfFlow),
            "identity" => Ok(MotionMode::Identity),
            other => Err(Error::invalid(format!(
                "unknown motion mode {other:?} (expected kf, fgmp, meanflow or identity)"
            ))),
        }
    }
}

impl std::fmt::Display for MotionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MotionMode::Kf => "kf",
            MotionMode::Fgmp => "fgmp",
            MotionMode::MeanOfFlow => "meanflow",
            MotionMode::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub score_high: f32,
    pub score_low: f32,
    pub iou_min_stage1: f32,
    pub iou_min_stage2: f32,
    pub max_lost_frames: u32,
    pub min_hits_to_activate: u32,
    pub motion_mode: MotionMode,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            score_high: 0.6,
            score_low: 0.1,
            iou_min_stage1: 0.3,
            iou_min_stage2: 0.5,
            max_lost_frames: 30,
            min_hits_to_activate: 2,
            motion_mode: MotionMode::Kf,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.score_low && self.score_low < self.score_high && self.score_high <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 <= score_low < score_high <= 1, got {} and {}",
                self.score_low, self.score_high
            )));
        }
        for (name, v) in [("iou_min_stage1", self.iou_min_stage1), ("iou_min_stage2", self.iou_min_stage2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.min_hits_to_activate == 0 {
            return Err(Error::invalid("min_hits_to_activate must be at least 1"));
        }
        Ok(())
    }

    /// Applies `key=value` lines over the current values. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_key_values(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let float = || value.parse::<f32>().map_err(|e| parse_err(format!("{key}: {e}")));
            let int = || value.parse::<u32>().map_err(|e| parse_err(format!("{key}: {e}")));
            match key {
                "score_high" => self.score_high = float()?,
                "score_low" => self.score_low = float()?,
                "iou_min_stage1" => self.iou_min_stage1 = float()?,
                "iou_min_stage2" => self.iou_min_stage2 = float()?,
                "max_lost_frames" => self.max_lost_frames = int()?,
                "min_hits_to_activate" => self.min_hits_to_activate = int()?,
                "motion_mode" => self.motion_mode = value.parse()?,
                _ => return Err(parse_err(format!("unknown key {key:?}"))),
            }
        }
        self.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Tentative,
    Active,
    Lost,
    Removed,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u32,
    pub state: TrackState,
    /// Last matched (or, in kf mode, filtered) box.
    pub bbox: BBox,
    /// Where the motion model expects the object in the current frame.
    pub predicted: BBox,
    pub class_id: u32,
    pub score: f32,
    pub kalman: Option<KalmanState>,
    pub age_since_update: u32,
    pub hits: u32,
    pub history: Vec<(u32, BBox)>,
}

/// Optimal assignment for a dense cost matrix given as rows.
///
/// Returns `(row, col)` pairs sorted by row, `min(n, m)` of them. Uses the
/// shortest augmenting path method with row and column potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == m), "cost matrix rows must have equal length");
    if m == 0 {
        return Vec::new();
    }
    if n > m {
        let transposed: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = hungarian(&transposed).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return pairs;
    }

    // 1-based arrays with a virtual column 0; rows <= columns.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| row_of[j] != 0).map(|j| (row_of[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

/// Hungarian matching on `1 - IoU`, keeping pairs with the same class and
/// IoU at least `min_iou`.
pub fn match_iou(boxes: &[(BBox, u32)], dets: &[(BBox, u32)], min_iou: f32) -> Vec<(usize, usize)> {
    if boxes.is_empty() || dets.is_empty() {
        return Vec::new();
    }
    let ious: Vec<Vec<f32>> = boxes
        .iter()
        .map(|(b, c)| dets.iter().map(|(d, dc)| if c == dc { iou(b, d) } else { 0.0 }).collect())
        .collect();
    let admissible = |i: usize, j: usize| boxes[i].1 == dets[j].1 && ious[i][j] >= min_iou && ious[i][j] > 0.0;
    let cost: Vec<Vec<f64>> = (0..boxes.len())
        .map(|i| {
            (0..dets.len())
                .map(|j| if admissible(i, j) { 1.0 - ious[i][j] as f64 } else { FORBIDDEN })
                .collect()
        })
        .collect();
    hungarian(&cost).into_iter().filter(|&(i, j)| admissible(i, j)).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TwoStageMatch {
    /// `(track index, detection index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    /// High-score detections left over; candidates for new tracks.
    pub unmatched_high: Vec<usize>,
}

/// High-score detections against every live track, then low-score detections
/// against the tracks that were active before this frame and are still free.
pub fn match_two_stage(tracks: &[Track], dets: &[Detection], cfg: &TrackerConfig) -> TwoStageMatch {
    let live: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].state != TrackState::Removed).collect();
    let high: Vec<usize> = (0..dets.len()).filter(|&j| dets[j].score >= cfg.score_high).collect();
    let low: Vec<usize> =
        (0..dets.len()).filter(|&j| dets[j].score >= cfg.score_low && dets[j].score < cfg.score_high).collect();

    let boxes = |idx: &[usize]| idx.iter().map(|&i| (tracks[i].predicted, tracks[i].class_id)).collect::<Vec<_>>();
    let det_boxes = |idx: &[usize]| idx.iter().map(|&j| (dets[j].bbox, dets[j].class_id)).collect::<Vec<_>>();

    let mut matches = Vec::new();
    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; dets.len()];
    for (a, b) in match_iou(&boxes(&live), &det_boxes(&high), cfg.iou_min_stage1) {
        matches.push((live[a], high[b]));
        track_used[live[a]] = true;
        det_used[high[b]] = true;
    }

    let second: Vec<usize> =
        live.iter().copied().filter(|&i| !track_used[i] && tracks[i].state == TrackState::Active).collect();
    for (a, b) in match_iou(&boxes(&second), &det_boxes(&low), cfg.iou_min_stage2) {
        matches.push((second[a], low[b]));
        track_used[second[a]] = true;
        det_used[low[b]] = true;
    }

    matches.sort_unstable();
    TwoStageMatch {
        matches,
        unmatched_tracks: live.into_iter().filter(|&i| !track_used[i]).collect(),
        unmatched_high: high.into_iter().filter(|&j| !det_used[j]).collect(),
    }
}

/// One confirmed track in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub frame: u32,
    pub id: u32,
    pub bbox: BBox,
    pub score: f32,
    pub class_id: u32,
}

/// State of one tracking run over one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    img_size: (u32, u32),
    mpn: Option<FoldedMpn>,
    tracks: Vec<Track>,
    next_id: u32,
    last_frame: Option<u32>,
}

impl Tracker {
    /// `img_size` is the detection image size, needed to map boxes onto the
    /// flow grid. Fgmp mode requires a motion prediction net.
    pub fn new(config: TrackerConfig, img_size: (u32, u32), mpn: Option<MotionPredictionNet<f32>>) -> Result<Self> {
        config.validate()?;
        if img_size.0 == 0 || img_size.1 == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if config.motion_mode == MotionMode::Fgmp && mpn.is_none() {
            return Err(Error::invalid("fgmp motion needs motion prediction weights"));
        }
        Ok(Tracker { config, img_size, mpn: mpn.as_ref().map(FoldedMpn::new), tracks: Vec::new(), next_id: 1, last_frame: None })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live tracks (every state but removed).
    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.state != TrackState::Removed)
    }

    /// Advances to `frame` and returns the boxes of the tracks that are active
    /// in it. `flow` is the field from the previous frame to this one; when it
    /// is absent the flow-driven modes leave boxes in place.
    pub fn step(&mut self, frame: u32, detections: &[Detection], flow: Option<&FlowMap>) -> Result<Vec<TrackOutput>> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::FrameOrder { frame, last });
            }
        }
        let first_frame = self.last_frame.is_none();
        self.last_frame = Some(frame);

        self.predict(flow)?;

        let dets: Vec<Detection> = detections.iter().copied().filter(|d| d.score >= self.config.score_low).collect();
        for d in &dets {
            if !d.bbox.is_valid() {
                return Err(Error::invalid(format!("frame {frame}: detection box must have positive extent")));
            }
        }
        let result = match_two_stage(&self.tracks, &dets, &self.config);

        for &(ti, di) in &result.matches {
            let d = dets[di];
            let min_hits = self.config.min_hits_to_activate;
            let t = &mut self.tracks[ti];
            t.bbox = match &t.kalman {
                Some(k) => {
                    let updated = kf_update(k, &d.bbox)?;
                    let b = updated.to_bbox();
                    t.kalman = Some(updated);
                    b
                }
                None => d.bbox,
            };
            t.predicted = t.bbox;
            t.score = d.score;
            t.hits += 1;
            t.age_since_update = 0;
            t.history.push((frame, t.bbox));
            t.state = match t.state {
                TrackState::Tentative if t.hits >= min_hits => TrackState::Active,
                TrackState::Tentative => TrackState::Tentative,
                _ => TrackState::Active,
            };
        }

        for &ti in &result.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.age_since_update += 1;
            t.state = match t.state {
                TrackState::Tentative => TrackState::Removed,
                _ if t.age_since_update > self.config.max_lost_frames => TrackState::Removed,
                _ => TrackState::Lost,
            };
        }

        for &di in &result.unmatched_high {
            let d = dets[di];
            let kalman = match self.config.motion_mode {
                MotionMode::Kf => Some(kf_init(&d.bbox)?),
                _ => None,
            };
            let state = if first_frame || self.config.min_hits_to_activate <= 1 {
                TrackState::Active
            } else {
                TrackState::Tentative
            };
            self.tracks.push(Track {
                id: self.next_id,
                state,
                bbox: d.bbox,
                predicted: d.bbox,
                class_id: d.class_id,
                score: d.score,
                kalman,
                age_since_update: 0,
                hits: 1,
                history: vec![(frame, d.bbox)],
            });
            self.next_id += 1;
        }

        self.tracks.retain(|t| t.state != TrackState::Removed);

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.state == TrackState::Active && t.age_since_update == 0)
            .map(|t| TrackOutput { frame, id: t.id, bbox: t.bbox, score: t.score, class_id: t.class_id })
            .collect())
    }

    /// Moves every live track's `predicted` box to the current frame. Lost
    /// tracks keep advancing from their previous prediction.
    fn predict(&mut self, flow: Option<&FlowMap>) -> Result<()> {
        match (self.config.motion_mode, flow) {
            (MotionMode::Kf, _) => {
                for t in &mut self.tracks {
                    if let Some(k) = &t.kalman {
                        let p = kf_predict(k);
                        t.predicted = p.to_bbox();
                        t.kalman = Some(p);
                    }
                }
            }
            (MotionMode::Fgmp, Some(flow)) => {
                let net = self.mpn.as_ref().expect("checked in Tracker::new");
                let centers: Vec<(f32, f32)> = self.tracks.iter().map(|t| t.predicted.center()).collect();
                let moved = net.predict_positions(&centers, flow, self.img_size)?;
                for (t, (cx, cy)) in self.tracks.iter_mut().zip(moved) {
                    t.predicted = BBox::from_center(cx, cy, t.predicted.w, t.predicted.h);
                }
            }
            (MotionMode::MeanOfFlow, Some(flow)) => {
                for t in &mut self.tracks {
                    let m = mean_of_flow(&t.predicted, flow, self.img_size)?;
                    t.predicted = t.predicted.translate(m.dx, m.dy);
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Runs a tracker over frames `1..=frame_count`. `dets_by_frame[f]` and
/// `flow_by_frame[f]` hold frame `f + 1`.
pub fn run_sequence(
    tracker: &mut Tracker,
    dets_by_frame: &[Vec<Detection>],
    flow_by_frame: &[Option<FlowMap>],
) -> Result<Vec<TrackOutput>> {
    let mut out = Vec::new();
    for (i, dets) in dets_by_frame.iter().enumerate() {
        let flow = flow_by_frame.get(i).and_then(|f| f.as_ref());
        out.extend(tracker.step(i as u32 + 1, dets, flow)?);
    }
    Ok(out)
}
