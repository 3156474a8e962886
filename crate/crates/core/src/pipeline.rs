//! In-memory tracking runs over whole sequences, with loop timing.

use std::time::{Duration, Instant};

use crate::association::{Detection, TrackOutput, Tracker, TrackerConfig};
use crate::error::{Error, Result};
use crate::fgmp::MotionPredictionNet;
use crate::flow::FlowMap;
use crate::metrics::{evaluate, EvalReport, DEFAULT_EVAL_IOU};
use crate::mot_io::{group_by_frame, MotRecord, SeqMeta};
use crate::synthetic::Scene;

#[derive(Debug, Clone)]
pub struct TrackRun {
    pub outputs: Vec<TrackOutput>,
    pub frames: u32,
    /// Time spent inside `Tracker::step`, summed over frames. File decoding
    /// and result formatting are not included.
    pub loop_time: Duration,
}

impl TrackRun {
    pub fn fps(&self) -> f64 {
        let s = self.loop_time.as_secs_f64();
        if s > 0.0 {
            self.frames as f64 / s
        } else {
            f64::INFINITY
        }
    }

    pub fn records(&self) -> Vec<MotRecord> {
        self.outputs.iter().map(MotRecord::from).collect()
    }
}

/// Tracks a decoded sequence. `flows[f - 1]` is the flow into frame `f`;
/// flow-guided modes fall back to identity motion where it is `None`.
pub fn track_sequence(
    meta: &SeqMeta,
    dets: &[MotRecord],
    flows: &[Option<FlowMap>],
    config: TrackerConfig,
    mpn: Option<MotionPredictionNet<f32>>,
) -> Result<TrackRun> {
    meta.validate()?;
    if let Some(r) = dets.iter().find(|r| r.frame > meta.frame_count) {
        return Err(Error::invalid(format!(
            "detection in frame {} but the sequence has {} frames",
            r.frame, meta.frame_count
        )));
    }
    let by_frame: Vec<Vec<Detection>> = group_by_frame(dets, meta.frame_count)
        .iter()
        .map(|recs| recs.iter().map(MotRecord::detection).collect())
        .collect();
    let mut tracker = Tracker::new(config, meta.img_size(), mpn)?;
    let mut outputs = Vec::new();
    let mut loop_time = Duration::ZERO;
    for (i, frame_dets) in by_frame.iter().enumerate() {
        let flow = flows.get(i).and_then(Option::as_ref);
        let start = Instant::now();
        let out = tracker.step(i as u32 + 1, frame_dets, flow)?;
        loop_time += start.elapsed();
        outputs.extend(out);
    }
    Ok(TrackRun { outputs, frames: meta.frame_count, loop_time })
}

pub fn track_scene(scene: &Scene, config: TrackerConfig, mpn: Option<MotionPredictionNet<f32>>) -> Result<TrackRun> {
    track_sequence(&scene.meta, &scene.dets, &scene.flows, config, mpn)
}

/// Tracks a scene and scores the result against its ground truth at the
/// default IoU threshold.
pub fn evaluate_scene(
    scene: &Scene,
    config: TrackerConfig,
    mpn: Option<MotionPredictionNet<f32>>,
) -> Result<(EvalReport, TrackRun)> {
    let run = track_scene(scene, config, mpn)?;
    let report = evaluate(&scene.gt, &run.records(), DEFAULT_EVAL_IOU)?;
    Ok((report, run))
}
