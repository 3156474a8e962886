//! CLEAR-MOT counts, MOTA, IDF1 and mean relative acceleration.
//!
//! Ground truth and predictions only ever match within the same class.
//! Counts are pooled over classes; per-class reports are kept alongside.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::association::hungarian;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::mot_io::MotRecord;

pub const DEFAULT_EVAL_IOU: f32 = 0.5;

/// CLEAR-MOT counts for one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClearCounts {
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub matches: usize,
    /// Sum of IoU over matched pairs.
    pub iou_sum: f64,
    pub gt_count: usize,
    pub pred_count: usize,
}

impl ClearCounts {
    pub fn motp(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.iou_sum / self.matches as f64
        }
    }

    fn add(&mut self, o: &ClearCounts) {
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.id_switches += o.id_switches;
        self.matches += o.matches;
        self.iou_sum += o.iou_sum;
        self.gt_count += o.gt_count;
        self.pred_count += o.pred_count;
    }
}

/// Matched `(gt id, pred id)` pairs of one frame.
pub type FramePairs = Vec<(i64, i64)>;

fn by_frame(records: &[MotRecord]) -> BTreeMap<u32, Vec<&MotRecord>> {
    let mut m: BTreeMap<u32, Vec<&MotRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.frame).or_default().push(r);
    }
    m
}

fn same_class_iou(a: &MotRecord, b: &MotRecord) -> f32 {
    if a.class_id == b.class_id {
        iou(&a.bbox, &b.bbox)
    } else {
        0.0
    }
}

/// Frame-by-frame CLEAR-MOT matching.
///
/// A ground-truth object keeps its previous partner when that prediction is
/// still present at IoU `>= iou_threshold`; the rest are matched by Hungarian
/// on `1 - IoU`. A ground-truth object whose partner id differs from the last
/// one it had counts one identity switch.
pub fn clear_match(gt: &[MotRecord], pred: &[MotRecord], iou_threshold: f32) -> (ClearCounts, BTreeMap<u32, FramePairs>) {
    let gt_frames = by_frame(gt);
    let pred_frames = by_frame(pred);
    let frames: BTreeSet<u32> = gt_frames.keys().chain(pred_frames.keys()).copied().collect();
    let empty = Vec::new();
    let mut last_partner: HashMap<i64, i64> = HashMap::new();
    let mut counts = ClearCounts { gt_count: gt.len(), pred_count: pred.len(), ..Default::default() };
    let mut per_frame = BTreeMap::new();

    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let p = pred_frames.get(&f).unwrap_or(&empty);
        let mut g_used = vec![false; g.len()];
        let mut p_used = vec![false; p.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        for (i, gr) in g.iter().enumerate() {
            let Some(&partner) = last_partner.get(&gr.id) else { continue };
            if let Some(j) = p.iter().position(|pr| pr.id == partner) {
                if !p_used[j] && same_class_iou(gr, p[j]) >= iou_threshold {
                    g_used[i] = true;
                    p_used[j] = true;
                    pairs.push((i, j));
                }
            }
        }

        let free_g: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let free_p: Vec<usize> = (0..p.len()).filter(|&j| !p_used[j]).collect();
        if !free_g.is_empty() && !free_p.is_empty() {
            let ok = |i: usize, j: usize| {
                let v = same_class_iou(g[i], p[j]);
                v >= iou_threshold && v > 0.0
            };
            let cost: Vec<Vec<f64>> = free_g
                .iter()
                .map(|&i| free_p.iter().map(|&j| if ok(i, j) { 1.0 - same_class_iou(g[i], p[j]) as f64 } else { 1e6 }).collect())
                .collect();
            for (a, b) in hungarian(&cost) {
                let (i, j) = (free_g[a], free_p[b]);
                if ok(i, j) {
                    pairs.push((i, j));
                }
            }
        }

        let mut ids = Vec::with_capacity(pairs.len());
        for &(i, j) in &pairs {
            let (gid, pid) = (g[i].id, p[j].id);
            if let Some(prev) = last_partner.insert(gid, pid) {
                if prev != pid {
                    counts.id_switches += 1;
                }
            }
            counts.iou_sum += same_class_iou(g[i], p[j]) as f64;
            ids.push((gid, pid));
        }
        ids.sort_unstable();
        counts.matches += pairs.len();
        counts.fp += p.len() - pairs.len();
        counts.fn_ += g.len() - pairs.len();
        per_frame.insert(f, ids);
    }
    (counts, per_frame)
}

/// `1 - (fp + fn + ids) / gt`.
pub fn mota(fp: usize, fn_: usize, id_switches: usize, gt_count: usize) -> Result<f64> {
    if gt_count == 0 {
        return Err(Error::invalid("MOTA is undefined without ground truth"));
    }
    Ok(1.0 - (fp + fn_ + id_switches) as f64 / gt_count as f64)
}

/// `2·idtp / (2·idtp + idfp + idfn)`, 0 when every term is 0.
pub fn idf1_score(idtp: usize, idfp: usize, idfn: usize) -> f64 {
    let denom = 2 * idtp + idfp + idfn;
    if denom == 0 {
        0.0
    } else {
        2.0 * idtp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdCounts {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl IdCounts {
    pub fn idf1(&self) -> f64 {
        idf1_score(self.idtp, self.idfp, self.idfn)
    }
}

/// Identity counts under the single best global mapping between ground-truth
/// and predicted ids, where a pair is worth the number of frames in which
/// they overlap at IoU `>= iou_threshold`.
pub fn idf1(gt: &[MotRecord], pred: &[MotRecord], iou_threshold: f32) -> IdCounts {
    let gt_ids: Vec<i64> = gt.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let pred_ids: Vec<i64> = pred.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let gi: HashMap<i64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let pi: HashMap<i64, usize> = pred_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut overlap = vec![vec![0usize; pred_ids.len()]; gt_ids.len()];
    let pred_frames = by_frame(pred);
    for g in gt {
        for p in pred_frames.get(&g.frame).into_iter().flatten() {
            let v = same_class_iou(g, p);
            if v >= iou_threshold && v > 0.0 {
                overlap[gi[&g.id]][pi[&p.id]] += 1;
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap.iter().map(|row| row.iter().map(|&w| -(w as f64)).collect()).collect();
    let idtp: usize = hungarian(&cost).into_iter().map(|(i, j)| overlap[i][j]).sum();
    IdCounts { idtp, idfp: pred.len() - idtp, idfn: gt.len() - idtp }
}

/// Evaluation of one result set against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mota: f64,
    pub idf1: f64,
    pub motp: f64,
    pub clear: ClearCounts,
    pub ids: IdCounts,
    pub per_class: BTreeMap<u32, (ClearCounts, IdCounts)>,
}

impl EvalReport {
    fn from_parts(clear: ClearCounts, ids: IdCounts, per_class: BTreeMap<u32, (ClearCounts, IdCounts)>) -> Result<Self> {
        Ok(EvalReport {
            mota: mota(clear.fp, clear.fn_, clear.id_switches, clear.gt_count)?,
            idf1: ids.idf1(),
            motp: clear.motp(),
            clear,
            ids,
            per_class,
        })
    }

    /// Pools several sequences by summing counts and recomputing the ratios.
    pub fn merge(reports: &[EvalReport]) -> Result<Self> {
        let mut clear = ClearCounts::default();
        let mut ids = IdCounts::default();
        let mut per_class: BTreeMap<u32, (ClearCounts, IdCounts)> = BTreeMap::new();
        for r in reports {
            clear.add(&r.clear);
            ids.idtp += r.ids.idtp;
            ids.idfp += r.ids.idfp;
            ids.idfn += r.ids.idfn;
            for (c, (cc, ic)) in &r.per_class {
                let e = per_class.entry(*c).or_default();
                e.0.add(cc);
                e.1.idtp += ic.idtp;
                e.1.idfp += ic.idfp;
                e.1.idfn += ic.idfn;
            }
        }
        Self::from_parts(clear, ids, per_class)
    }

    /// `KEY=value` lines with keys MOTA, IDF1, MOTP, FP, FN, IDs, GT, IDTP,
    /// IDFP, IDFN.
    pub fn to_key_values(&self) -> String {
        format!(
            "MOTA={}\nIDF1={}\nMOTP={}\nFP={}\nFN={}\nIDs={}\nGT={}\nIDTP={}\nIDFP={}\nIDFN={}\n",
            self.mota,
            self.idf1,
            self.motp,
            self.clear.fp,
            self.clear.fn_,
            self.clear.id_switches,
            self.clear.gt_count,
            self.ids.idtp,
            self.ids.idfp,
            self.ids.idfn
        )
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>5} {:>7}",
            "class", "MOTA", "IDF1", "MOTP", "FP", "FN", "IDs", "GT"
        );
        let mut row = |name: &str, c: &ClearCounts, i: &IdCounts| {
            let m = mota(c.fp, c.fn_, c.id_switches, c.gt_count).map(|v| format!("{:.3}", v)).unwrap_or("-".into());
            let _ = writeln!(
                s,
                "{:<8} {:>7} {:>7.3} {:>7.3} {:>7} {:>7} {:>5} {:>7}",
                name,
                m,
                i.idf1(),
                c.motp(),
                c.fp,
                c.fn_,
                c.id_switches,
                c.gt_count
            );
        };
        if self.per_class.len() > 1 {
            for (c, (cc, ic)) in &self.per_class {
                row(&c.to_string(), cc, ic);
            }
        }
        row("all", &self.clear, &self.ids);
        s
    }
}

/// Full evaluation with class-exact matching.
pub fn evaluate(gt: &[MotRecord], pred: &[MotRecord], iou_threshold: f32) -> Result<EvalReport> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::invalid(format!("IoU threshold must be in (0, 1], got {iou_threshold}")));
    }
    let classes: BTreeSet<u32> = gt.iter().chain(pred).map(|r| r.class_id).collect();
    let mut per_class = BTreeMap::new();
    let mut clear = ClearCounts::default();
    let mut ids = IdCounts::default();
    for c in classes {
        let g: Vec<MotRecord> = gt.iter().filter(|r| r.class_id == c).copied().collect();
        let p: Vec<MotRecord> = pred.iter().filter(|r| r.class_id == c).copied().collect();
        let (cc, _) = clear_match(&g, &p, iou_threshold);
        let ic = idf1(&g, &p, iou_threshold);
        clear.add(&cc);
        ids.idtp += ic.idtp;
        ids.idfp += ic.idfp;
        ids.idfn += ic.idfn;
        per_class.insert(c, (cc, ic));
    }
    EvalReport::from_parts(clear, ids, per_class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MraMode {
    /// `(1/n) Σ (V(t_{i+1}) - V(t_i))`, as printed; telescopes.
    Literal,
    /// Mean of `|V(t_{i+1}) - V(t_i)|` over the available differences.
    Absolute,
}

impl std::str::FromStr for MraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(MraMode::Literal),
            "absolute" => Ok(MraMode::Absolute),
            other => Err(Error::invalid(format!("unknown MRA mode {other:?} (expected literal or absolute)"))),
        }
    }
}

/// Center displacement from frame `t - 1` to `t` over the box diagonal at `t`.
/// `history` is `(frame, box)` in increasing frame order.
pub fn relative_velocity(history: &[(u32, BBox)], t: u32) -> Result<f64> {
    let find = |f: u32| history.iter().find(|(fr, _)| *fr == f).map(|(_, b)| *b);
    let cur = find(t).ok_or_else(|| Error::invalid(format!("history has no frame {t}")))?;
    let prev = t
        .checked_sub(1)
        .and_then(find)
        .ok_or_else(|| Error::invalid(format!("history has no frame {} before {t}", t.wrapping_sub(1))))?;
    let (cx, cy) = cur.center();
    let (px, py) = prev.center();
    let d = ((cx - px) as f64).hypot((cy - py) as f64);
    Ok(d / cur.diagonal())
}

/// Mean relative acceleration of one object. Velocities exist only at frames
/// whose previous frame is in the history; differences are taken between
/// consecutive frames that both have one.
pub fn mra(history: &[(u32, BBox)], mode: MraMode) -> Result<f64> {
    let n = history.len();
    if n < 3 {
        return Err(Error::invalid(format!("MRA needs at least 3 frames, got {n}")));
    }
    if history.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::invalid("history frames must strictly increase"));
    }
    let mut v: Vec<(u32, f64)> = Vec::with_capacity(n);
    for w in history.windows(2) {
        if w[1].0 == w[0].0 + 1 {
            v.push((w[1].0, relative_velocity(w, w[1].0)?));
        }
    }
    let diffs: Vec<f64> = v.windows(2).filter(|w| w[1].0 == w[0].0 + 1).map(|w| w[1].1 - w[0].1).collect();
    if diffs.is_empty() {
        return Err(Error::invalid("MRA needs three consecutive frames"));
    }
    Ok(match mode {
        MraMode::Literal => diffs.iter().sum::<f64>() / n as f64,
        MraMode::Absolute => diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64,
    })
}

/// Per-object MRA for every id with enough consecutive frames, and their mean
/// (`None` when no object qualifies).
pub fn sequence_mra(records: &[MotRecord], mode: MraMode) -> (BTreeMap<i64, f64>, Option<f64>) {
    let mut per_object = BTreeMap::new();
    for (id, recs) in crate::mot_io::group_by_id(records) {
        let hist: Vec<(u32, BBox)> = recs.iter().map(|r| (r.frame, r.bbox)).collect();
        if let Ok(m) = mra(&hist, mode) {
            per_object.insert(id, m);
        }
    }
    let mean = if per_object.is_empty() {
        None
    } else {
        Some(per_object.values().sum::<f64>() / per_object.len() as f64)
    };
    (per_object, mean)
}
