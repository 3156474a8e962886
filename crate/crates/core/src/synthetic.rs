//! Synthetic scenes with known ground truth: moving boxes, exact dense flow,
//! noisy scored detections, motion-predictor training crops and Gaussian-blob
//! feature maps.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::fgmp::{flow_pixels_in_box, MpnSample};
use crate::flow::{crop3x3, read_flo, write_flo, FlowMap};
use crate::geometry::BBox;
use crate::metrics::{sequence_mra, MraMode};
use crate::mot_io::{read_mot_csv, read_seqinfo, write_mot_csv, write_seqinfo, MotRecord, RecordKind, SeqMeta};
use crate::tensor::{write_ftns, Tensor};

/// Displacement of an object (or the camera) relative to frame 1, in image
/// pixels.
#[derive(Debug, Clone, PartialEq)]
pub enum MotionProgram {
    Constant {
        vx: f32,
        vy: f32,
    },
    /// Drift plus a sine of the given amplitude and period (frames).
    Sinusoidal {
        vx: f32,
        vy: f32,
        amp_x: f32,
        amp_y: f32,
        period: f32,
        phase: f32,
    },
    /// Velocity held for `segment` frames at a time, cycling through
    /// `velocities`. `segment = 1` gives a new velocity every frame.
    PiecewiseJerk { segment: u32, velocities: Vec<(f32, f32)> },
}

impl Default for MotionProgram {
    fn default() -> Self {
        MotionProgram::Constant { vx: 0.0, vy: 0.0 }
    }
}

impl MotionProgram {
    pub fn still() -> Self {
        Self::default()
    }

    pub fn offset(&self, frame: u32) -> (f32, f32) {
        let k = frame.saturating_sub(1) as f32;
        match self {
            MotionProgram::Constant { vx, vy } => (vx * k, vy * k),
            MotionProgram::Sinusoidal { vx, vy, amp_x, amp_y, period, phase } => {
                let w = std::f32::consts::TAU / period;
                let s = (w * k + phase).sin() - phase.sin();
                (vx * k + amp_x * s, vy * k + amp_y * s)
            }
            MotionProgram::PiecewiseJerk { segment, velocities } => {
                if velocities.is_empty() {
                    return (0.0, 0.0);
                }
                let seg = (*segment).max(1);
                let (mut x, mut y) = (0.0, 0.0);
                for step in 0..frame.saturating_sub(1) {
                    let (vx, vy) = velocities[(step / seg) as usize % velocities.len()];
                    x += vx;
                    y += vy;
                }
                (x, y)
            }
        }
    }

    /// Displacement from `frame - 1` to `frame`.
    pub fn step(&self, frame: u32) -> (f32, f32) {
        let (x1, y1) = self.offset(frame);
        let (x0, y0) = self.offset(frame.saturating_sub(1).max(1));
        (x1 - x0, y1 - y0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    /// Box in frame 1, before camera motion.
    pub initial: BBox,
    pub motion: MotionProgram,
    pub class_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionNoise {
    /// Standard deviation of the center jitter, image pixels.
    pub center_std: f32,
    /// Standard deviation of the width and height jitter, image pixels.
    pub size_std: f32,
    /// Score range of true detections.
    pub score_range: (f32, f32),
    pub miss_prob: f32,
    /// Expected false positives per frame.
    pub fp_rate: f32,
    pub fp_score_range: (f32, f32),
}

impl DetectionNoise {
    pub fn none() -> Self {
        DetectionNoise {
            center_std: 0.0,
            size_std: 0.0,
            score_range: (1.0, 1.0),
            miss_prob: 0.0,
            fp_rate: 0.0,
            fp_score_range: (0.1, 0.6),
        }
    }
}

impl Default for DetectionNoise {
    fn default() -> Self {
        DetectionNoise {
            center_std: 1.0,
            size_std: 1.0,
            score_range: (0.5, 1.0),
            miss_prob: 0.05,
            fp_rate: 0.5,
            fp_score_range: (0.1, 0.6),
        }
    }
}

/// Imperfections applied to the rendered flow so it resembles an estimated
/// field: a box blur that bleeds motion across object boundaries, then
/// per-pixel Gaussian noise. Both in flow pixels; the default leaves the
/// flow exact.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowDegradation {
    pub blur_radius: usize,
    pub noise_std: f32,
}

impl FlowDegradation {
    pub fn is_exact(&self) -> bool {
        self.blur_radius == 0 && self.noise_std == 0.0
    }
}

/// Separable box blur with clamp-to-edge borders.
fn box_blur(flow: &FlowMap, radius: usize) -> FlowMap {
    let (w, h) = (flow.width(), flow.height());
    let r = radius as isize;
    let n = (2 * radius + 1) as f32;
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for d in -r..=r {
                    let (sx, sy) = if horizontal {
                        ((x as isize + d).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + d).clamp(0, h as isize - 1) as usize)
                    };
                    acc += src[sy * w + sx];
                }
                out[y * w + x] = acc / n;
            }
        }
        out
    };
    let u = pass(&pass(flow.u(), true), false);
    let v = pass(&pass(flow.v(), true), false);
    FlowMap::new(w, h, u, v).expect("same size as the input")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub seed: u64,
    pub frame_count: u32,
    pub img_size: (u32, u32),
    pub flow_size: (u32, u32),
    pub objects: Vec<ObjectSpec>,
    pub noise: DetectionNoise,
    pub camera: MotionProgram,
    pub flow_degradation: FlowDegradation,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::invalid("scene needs at least one frame"));
        }
        let (w, h) = self.img_size;
        let (fw, fh) = self.flow_size;
        if w == 0 || h == 0 || fw == 0 || fh == 0 {
            return Err(Error::invalid("image and flow sizes must be positive"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.initial.is_valid() {
                return Err(Error::invalid(format!("object {i} has a degenerate box {:?}", o.initial)));
            }
        }
        let n = &self.noise;
        if !(self.flow_degradation.noise_std >= 0.0) {
            return Err(Error::invalid("flow noise must be non-negative"));
        }
        if !(0.0..=1.0).contains(&n.miss_prob) || n.fp_rate < 0.0 || n.center_std < 0.0 || n.size_std < 0.0 {
            return Err(Error::invalid("detection noise parameters out of range"));
        }
        Ok(())
    }

    fn meta(&self) -> SeqMeta {
        SeqMeta {
            name: self.name.clone(),
            frame_count: self.frame_count,
            img_width: self.img_size.0,
            img_height: self.img_size.1,
            flow_width: self.flow_size.0,
            flow_height: self.flow_size.1,
            fps: 30.0,
        }
    }

    /// Box of object `i` at `frame`, camera motion included.
    pub fn object_box(&self, i: usize, frame: u32) -> BBox {
        let o = &self.objects[i];
        let (ox, oy) = o.motion.offset(frame);
        let (cx, cy) = self.camera.offset(frame);
        o.initial.translate(ox + cx, oy + cy)
    }

    fn inside(&self, b: &BBox) -> bool {
        b.x >= 0.0 && b.y >= 0.0 && b.right() <= self.img_size.0 as f32 && b.bottom() <= self.img_size.1 as f32
    }
}

/// A generated sequence. `flows[f - 1]` holds the flow into frame `f`;
/// frame 1 has none.
#[derive(Debug, Clone)]
pub struct Scene {
    pub meta: SeqMeta,
    pub gt: Vec<MotRecord>,
    pub dets: Vec<MotRecord>,
    pub flows: Vec<Option<FlowMap>>,
}

/// Frames in which each object is on screen: from frame 1 until its box
/// first leaves the canvas.
fn visibility(spec: &SceneSpec) -> Vec<u32> {
    spec.objects
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let mut last = 0;
            for f in 1..=spec.frame_count {
                if !spec.inside(&spec.object_box(i, f)) {
                    break;
                }
                last = f;
            }
            last
        })
        .collect()
}

/// Exact flow into `frame` on the flow grid: the camera step everywhere,
/// overwritten inside each object's previous-frame box by that object's step
/// (later objects on top).
fn render_flow(spec: &SceneSpec, frame: u32, visible_until: &[u32]) -> FlowMap {
    let (fw, fh) = (spec.flow_size.0 as usize, spec.flow_size.1 as usize);
    let sx = spec.flow_size.0 as f32 / spec.img_size.0 as f32;
    let sy = spec.flow_size.1 as f32 / spec.img_size.1 as f32;
    let (cam_x, cam_y) = spec.camera.step(frame);
    let mut flow = FlowMap::uniform(fw, fh, cam_x * sx, cam_y * sy);
    for (i, &until) in visible_until.iter().enumerate() {
        if frame - 1 > until {
            continue;
        }
        let prev = spec.object_box(i, frame - 1);
        let cur = spec.object_box(i, frame);
        let (u, v) = ((cur.x - prev.x) * sx, (cur.y - prev.y) * sy);
        let (xs, ys) = flow_pixels_in_box(&prev, &flow, spec.img_size);
        for y in ys {
            for x in xs.clone() {
                flow.set(x, y, u, v);
            }
        }
    }
    flow
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = &spec.noise;
    let center = Normal::new(0.0f32, n.center_std).map_err(|e| Error::invalid(e.to_string()))?;
    let size = Normal::new(0.0f32, n.size_std).map_err(|e| Error::invalid(e.to_string()))?;
    let fp_count = if n.fp_rate > 0.0 {
        Some(Poisson::new(n.fp_rate as f64).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let flow_noise = Normal::new(0.0f32, spec.flow_degradation.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let visible_until = visibility(spec);
    let (img_w, img_h) = (spec.img_size.0 as f32, spec.img_size.1 as f32);
    let (min_w, max_w, min_h, max_h) = spec.objects.iter().fold((f32::MAX, 0f32, f32::MAX, 0f32), |a, o| {
        (a.0.min(o.initial.w), a.1.max(o.initial.w), a.2.min(o.initial.h), a.3.max(o.initial.h))
    });

    let mut gt = Vec::new();
    let mut dets = Vec::new();
    let mut flows = Vec::with_capacity(spec.frame_count as usize);
    for f in 1..=spec.frame_count {
        flows.push(if f == 1 {
            None
        } else {
            let exact = render_flow(spec, f, &visible_until);
            let d = spec.flow_degradation;
            let mut flow = if d.blur_radius > 0 { box_blur(&exact, d.blur_radius) } else { exact };
            if d.noise_std > 0.0 {
                flow.perturb(|| flow_noise.sample(&mut rng));
            }
            Some(flow)
        });
        for (i, o) in spec.objects.iter().enumerate() {
            if f > visible_until[i] {
                continue;
            }
            let b = spec.object_box(i, f);
            gt.push(MotRecord { frame: f, id: i as i64 + 1, bbox: b, score: 1.0, class_id: o.class_id, visibility: 1.0 });
            if rng.random::<f32>() < n.miss_prob {
                continue;
            }
            let (cx, cy) = b.center();
            let w = (b.w + size.sample(&mut rng)).max(2.0);
            let h = (b.h + size.sample(&mut rng)).max(2.0);
            let db = BBox::from_center(cx + center.sample(&mut rng), cy + center.sample(&mut rng), w, h);
            let score = uniform(&mut rng, n.score_range);
            dets.push(MotRecord { frame: f, id: -1, bbox: db, score, class_id: o.class_id, visibility: -1.0 });
        }
        if let (Some(p), false) = (&fp_count, spec.objects.is_empty()) {
            let k = p.sample(&mut rng) as usize;
            for _ in 0..k {
                let w = uniform(&mut rng, (min_w, max_w));
                let h = uniform(&mut rng, (min_h, max_h));
                let x = rng.random::<f32>() * (img_w - w).max(0.0);
                let y = rng.random::<f32>() * (img_h - h).max(0.0);
                let class_id = spec.objects[rng.random_range(0..spec.objects.len())].class_id;
                let score = uniform(&mut rng, n.fp_score_range);
                dets.push(MotRecord { frame: f, id: -1, bbox: BBox::new(x, y, w, h), score, class_id, visibility: -1.0 });
            }
        }
    }
    Ok(Scene { meta: spec.meta(), gt, dets, flows })
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Absolute-mode MRA of the ground truth (0 when no object has three
/// consecutive frames).
pub fn scene_mra_level(scene: &Scene) -> f64 {
    sequence_mra(&scene.gt, MraMode::Absolute).1.unwrap_or(0.0)
}

/// Exact flow crops at every object center paired with the true center
/// offset in flow pixels, subsampled to at most `samples`. Gaussian noise of
/// `flow_noise_std` flow pixels is added to the crops only.
pub fn generate_mpn_dataset(scene: &Scene, samples: usize, flow_noise_std: f32, seed: u64) -> Result<Vec<MpnSample>> {
    let meta = &scene.meta;
    let sx = meta.flow_width as f32 / meta.img_width as f32;
    let sy = meta.flow_height as f32 / meta.img_height as f32;
    let by_id = crate::mot_io::group_by_id(&scene.gt);
    let mut out = Vec::new();
    for recs in by_id.values() {
        for w in recs.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                continue;
            }
            let Some(Some(flow)) = scene.flows.get(w[1].frame as usize - 1) else { continue };
            let (px, py) = w[0].bbox.center();
            let (cx, cy) = w[1].bbox.center();
            out.push(MpnSample { crop: crop3x3(flow, px * sx, py * sy), gx: (cx - px) * sx, gy: (cy - py) * sy });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if out.len() > samples {
        use rand::seq::SliceRandom;
        out.shuffle(&mut rng);
        out.truncate(samples);
    }
    if flow_noise_std > 0.0 {
        let normal = Normal::new(0.0f32, flow_noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        for s in &mut out {
            for x in s.crop.data_mut() {
                *x += normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Downsampling factors of the three feature stages.
pub const STAGE_STRIDES: [u32; 3] = [8, 16, 32];

/// Two consecutive frames rendered as feature maps at every stage, and the
/// flow between them.
#[derive(Debug, Clone)]
pub struct FeatureFixture {
    pub prev: Vec<Tensor<f32>>,
    pub cur: Vec<Tensor<f32>>,
    pub flow: FlowMap,
    /// Object centers in image pixels in the previous and current frame.
    pub centers: Vec<((f32, f32), (f32, f32))>,
}

fn render_blobs(boxes: &[(BBox, u32)], channels: usize, stride: u32, img_size: (u32, u32)) -> Tensor<f32> {
    let w = (img_size.0 / stride).max(1) as usize;
    let h = (img_size.1 / stride).max(1) as usize;
    let s = stride as f32;
    let mut t = Tensor::zeros(&[channels, h, w]);
    for (b, class_id) in boxes {
        let (cx, cy) = b.center();
        let (cx, cy) = (cx / s, cy / s);
        let sigma = (b.w.min(b.h) / s / 4.0).max(0.5);
        for c in 0..channels {
            let gain = 1.0 + ((c as u32 + class_id) % channels as u32) as f32 / channels as f32;
            for y in 0..h {
                for x in 0..w {
                    let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                    t.data_mut()[(c * h + y) * w + x] += gain * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    t
}

/// Features for frames `frame - 1` and `frame` (`frame >= 2`). Each object
/// is a Gaussian bump whose width follows its box, sampled on the grid of
/// each stage.
pub fn generate_feature_fixture(spec: &SceneSpec, frame: u32, channels: usize) -> Result<FeatureFixture> {
    spec.validate()?;
    if frame < 2 || frame > spec.frame_count {
        return Err(Error::invalid(format!("fixture frame must be in 2..={}", spec.frame_count)));
    }
    if channels == 0 {
        return Err(Error::invalid("fixture needs at least one channel"));
    }
    let visible_until = visibility(spec);
    let live: Vec<usize> = (0..spec.objects.len()).filter(|&i| visible_until[i] >= frame).collect();
    let boxes_at = |f: u32| -> Vec<(BBox, u32)> {
        live.iter().map(|&i| (spec.object_box(i, f), spec.objects[i].class_id)).collect()
    };
    let (prev_boxes, cur_boxes) = (boxes_at(frame - 1), boxes_at(frame));
    Ok(FeatureFixture {
        prev: STAGE_STRIDES.iter().map(|&s| render_blobs(&prev_boxes, channels, s, spec.img_size)).collect(),
        cur: STAGE_STRIDES.iter().map(|&s| render_blobs(&cur_boxes, channels, s, spec.img_size)).collect(),
        flow: render_flow(spec, frame, &visible_until),
        centers: prev_boxes.iter().zip(&cur_boxes).map(|((a, _), (b, _))| (a.center(), b.center())).collect(),
    })
}

/// Writes `gt.txt`, `det.txt`, `seqinfo.txt` and `flow/{frame:06}.flo`.
pub fn write_scene_dir(scene: &Scene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("flow"))?;
    write_mot_csv(&scene.gt, &dir.join("gt.txt"), RecordKind::Gt)?;
    write_mot_csv(&scene.dets, &dir.join("det.txt"), RecordKind::Det)?;
    write_seqinfo(&scene.meta, &dir.join("seqinfo.txt"))?;
    for (i, flow) in scene.flows.iter().enumerate() {
        if let Some(f) = flow {
            std::fs::write(flow_path(&dir.join("flow"), i as u32 + 1), write_flo(f))?;
        }
    }
    Ok(())
}

/// Writes a feature fixture as `features/{prev,cur}_s{1,2,3}.ftns`.
pub fn write_feature_fixture(fixture: &FeatureFixture, dir: &Path) -> Result<()> {
    let dir = dir.join("features");
    std::fs::create_dir_all(&dir)?;
    for (k, (p, c)) in fixture.prev.iter().zip(&fixture.cur).enumerate() {
        write_ftns(p, std::fs::File::create(dir.join(format!("prev_s{}.ftns", k + 1)))?)?;
        write_ftns(c, std::fs::File::create(dir.join(format!("cur_s{}.ftns", k + 1)))?)?;
    }
    Ok(())
}

pub fn flow_path(flow_dir: &Path, frame: u32) -> std::path::PathBuf {
    flow_dir.join(format!("{frame:06}.flo"))
}

/// Reads the flow files of frames `2..=frames`; frame 1 has none. Missing
/// files are an error naming the frame.
pub fn read_flow_dir(flow_dir: &Path, frames: u32) -> Result<Vec<Option<FlowMap>>> {
    let mut out = vec![None];
    for f in 2..=frames {
        let p = flow_path(flow_dir, f);
        let bytes = std::fs::read(&p)
            .map_err(|e| Error::Format(format!("flow for frame {f} ({}): {e}", p.display())))?;
        out.push(Some(read_flo(&bytes).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?));
    }
    out.truncate(frames as usize);
    Ok(out)
}

/// Reads a scene directory written by [`write_scene_dir`].
pub fn read_scene_dir(dir: &Path) -> Result<Scene> {
    let meta = read_seqinfo(&dir.join("seqinfo.txt"))?;
    let gt_path = dir.join("gt.txt");
    let gt = if gt_path.exists() { read_mot_csv(&gt_path, RecordKind::Gt)? } else { Vec::new() };
    let dets = read_mot_csv(&dir.join("det.txt"), RecordKind::Det)?;
    let flows = read_flow_dir(&dir.join("flow"), meta.frame_count)?;
    Ok(Scene { meta, gt, dets, flows })
}

/// How hard a generated benchmark scene is to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MraLevel {
    /// Smooth, slow motion; absolute MRA at most 0.05.
    Low,
    /// Oscillating objects on a shaking camera; absolute MRA at least 0.2.
    High,
}

impl std::str::FromStr for MraLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(MraLevel::Low),
            "high" => Ok(MraLevel::High),
            other => Err(Error::invalid(format!("unknown MRA level {other:?} (expected low or high)"))),
        }
    }
}

/// Size and population of a benchmark scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkShape {
    pub frame_count: u32,
    pub objects: usize,
    pub img_size: (u32, u32),
    pub flow_size: (u32, u32),
    pub noise: DetectionNoise,
    pub flow_degradation: FlowDegradation,
    /// Range of object widths and heights, image pixels.
    pub object_size: (f32, f32),
}

impl Default for BenchmarkShape {
    fn default() -> Self {
        BenchmarkShape {
            frame_count: 100,
            objects: 12,
            img_size: (640, 384),
            flow_size: (320, 192),
            noise: DetectionNoise::default(),
            flow_degradation: FlowDegradation::default(),
            object_size: (8.0, 16.0),
        }
    }
}

/// High-MRA scenes start with this camera jitter (px) and raise it by
/// `JITTER_GROWTH` until the scene reaches the target MRA. Low-MRA scenes
/// scale their swings down by `LOW_DECAY` instead.
const HIGH_JITTER: f32 = 3.0;
const JITTER_GROWTH: f32 = 1.15;
const LOW_DECAY: f32 = 0.7;
const SEARCH_TRIES: usize = 16;
/// Swing amplitude (px) and period (frames) of objects, per bucket.
const HIGH_SWING: ((f32, f32), (f32, f32)) = ((10.0, 30.0), (16.0, 40.0));
const LOW_SWING: ((f32, f32), (f32, f32)) = ((2.0, 6.0), (40.0, 80.0));

/// Scene layout for one benchmark seed. `intensity` is the camera jitter in
/// px for high-MRA scenes and a multiplier on the object swings for low-MRA
/// ones.
pub fn benchmark_spec(seed: u64, level: MraLevel, shape: &BenchmarkShape, intensity: f32) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (shape.img_size.0 as f32, shape.img_size.1 as f32);
    let frames = shape.frame_count as f32;
    let (jitter, (amps, periods), amp_scale) = match level {
        MraLevel::High => (intensity, HIGH_SWING, 1.0),
        MraLevel::Low => (0.0, LOW_SWING, intensity),
    };
    let mut objects = Vec::with_capacity(shape.objects);
    for _ in 0..shape.objects {
        let bw = rng.random_range(shape.object_size.0..shape.object_size.1);
        let bh = rng.random_range(shape.object_size.0..shape.object_size.1);
        let speed = rng.random_range(0.0..0.5f32);
        let heading = rng.random_range(0.0..std::f32::consts::TAU);
        let (vx, vy) = (speed * heading.cos(), speed * heading.sin());
        let amp = rng.random_range(amps.0..amps.1) * amp_scale;
        let angle = rng.random_range(0.0..std::f32::consts::TAU);
        let motion = MotionProgram::Sinusoidal {
            vx,
            vy,
            amp_x: amp * angle.cos(),
            amp_y: amp * angle.sin(),
            period: rng.random_range(periods.0..periods.1),
            phase: rng.random_range(0.0..std::f32::consts::TAU),
        };
        let swing = 2.0 * amp + jitter;
        // start far enough from the border that the whole path stays inside
        let (px, py) = (vx.abs() * frames + swing + 2.0, vy.abs() * frames + swing + 2.0);
        let (x0, y0) = (if vx < 0.0 { px } else { swing + 2.0 }, if vy < 0.0 { py } else { swing + 2.0 });
        let (x1, y1) = (w - bw - (px + swing + 2.0 - x0), h - bh - (py + swing + 2.0 - y0));
        let x = if x1 > x0 { rng.random_range(x0..x1) } else { x0 };
        let y = if y1 > y0 { rng.random_range(y0..y1) } else { y0 };
        objects.push(ObjectSpec { initial: BBox::new(x, y, bw, bh), motion, class_id: rng.random_range(1..=2) });
    }
    let camera = match level {
        MraLevel::Low => MotionProgram::still(),
        MraLevel::High => {
            // the view jitters around its start: a fresh random position each
            // frame, within +-jitter
            let mut velocities = Vec::new();
            let mut last = (0.0, 0.0);
            for _ in 1..shape.frame_count {
                let p = (rng.random_range(-jitter..jitter), rng.random_range(-jitter..jitter));
                velocities.push((p.0 - last.0, p.1 - last.1));
                last = p;
            }
            MotionProgram::PiecewiseJerk { segment: 1, velocities }
        }
    };
    SceneSpec {
        name: format!("synth-{}-{seed}", if level == MraLevel::High { "high" } else { "low" }),
        seed,
        frame_count: shape.frame_count,
        img_size: shape.img_size,
        flow_size: shape.flow_size,
        objects,
        noise: shape.noise,
        camera,
        flow_degradation: shape.flow_degradation,
    }
}

/// A random benchmark scene whose ground truth lands in the requested MRA
/// bucket: absolute MRA of at least 0.2 for high, at most 0.05 for low.
pub fn generate_benchmark_scene(seed: u64, level: MraLevel, shape: &BenchmarkShape) -> Result<(SceneSpec, Scene)> {
    let mut intensity = match level {
        MraLevel::High => HIGH_JITTER,
        MraLevel::Low => 1.0,
    };
    for _ in 0..SEARCH_TRIES {
        let spec = benchmark_spec(seed, level, shape, intensity);
        let scene = generate_scene(&spec)?;
        let mra = scene_mra_level(&scene);
        match level {
            MraLevel::Low if mra <= 0.05 => return Ok((spec, scene)),
            MraLevel::Low => intensity *= LOW_DECAY,
            MraLevel::High if mra >= 0.2 => return Ok((spec, scene)),
            MraLevel::High => intensity *= JITTER_GROWTH,
        }
    }
    Err(Error::invalid(format!("could not reach the {level:?} MRA bucket for seed {seed}")))
}
