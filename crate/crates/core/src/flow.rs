//! Dense optical-flow maps: Middlebury `.flo` codec, rescaling resampler
//! and the 3×3 crop fed to the motion predictor.
//!
//! Coordinates follow one convention everywhere: `x` is the column (width
//! axis), `y` the row (height axis), and `u`/`v` are the x/y offsets in
//! flow-map pixels. A flow map of width `W_f` over an image of width `W`
//! places flow pixel `i` at image column `i · W / W_f`.

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `PIEH` read as a little-endian f32.
pub const FLO_MAGIC: f32 = 202021.25;
const FLO_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl FlowMap {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("flow dims must be positive, got {width}x{height}")));
        }
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::shape(format!(
                "{width}x{height} flow needs {n} values per channel, got u={} v={}",
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::invalid("flow values must be finite"));
        }
        Ok(FlowMap { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, u: f32, v: f32) -> Self {
        assert!(width > 0 && height > 0);
        let n = width * height;
        FlowMap { width, height, u: vec![u; n], v: vec![v; n] }
    }

    /// Build from a per-pixel function of `(column, row)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut map = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                map.u[y * width + x] = u;
                map.v[y * width + x] = v;
            }
        }
        map
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    /// `(u, v)` at column `x`, row `y`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// `(u, v)` at a signed position, zero outside the map.
    #[inline]
    pub fn at_or_zero(&self, x: isize, y: isize) -> (f32, f32) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            (0.0, 0.0)
        } else {
            self.at(x as usize, y as usize)
        }
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.u[i] = u;
        self.v[i] = v;
    }

    /// Adds independent noise drawn by `noise` to every component.
    pub fn perturb(&mut self, mut noise: impl FnMut() -> f32) {
        for x in self.u.iter_mut().chain(self.v.iter_mut()) {
            *x += noise();
        }
    }

    /// The map as a `[2,H,W]` tensor, channel 0 = u.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let mut data = self.u.clone();
        data.extend_from_slice(&self.v);
        Tensor::new(&[2, self.height, self.width], data).expect("flow dims are valid")
    }
}

/// Decodes a Middlebury `.flo` stream.
pub fn read_flo(bytes: &[u8]) -> Result<FlowMap> {
    if bytes.len() < 4 || LittleEndian::read_f32(&bytes[..4]) != FLO_MAGIC {
        return Err(Error::Format("not a flo file".into()));
    }
    if bytes.len() < FLO_HEADER_LEN {
        return Err(Error::Format("unexpected end of flow data".into()));
    }
    let w = LittleEndian::read_i32(&bytes[4..8]);
    let h = LittleEndian::read_i32(&bytes[8..12]);
    if w <= 0 || h <= 0 {
        return Err(Error::Format(format!("invalid flow dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::Format(format!("invalid flow dimensions {w}x{h}")))?;
    let payload = &bytes[FLO_HEADER_LEN..];
    if payload.len() / 8 < n {
        return Err(Error::Format("unexpected end of flow data".into()));
    }
    if payload.len() != n * 8 {
        return Err(Error::Format("trailing bytes after flow data".into()));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for pair in payload.chunks_exact(8) {
        u.push(LittleEndian::read_f32(&pair[..4]));
        v.push(LittleEndian::read_f32(&pair[4..]));
    }
    FlowMap::new(w, h, u, v).map_err(|e| Error::Format(format!("bad flow file: {e}")))
}

/// Encodes a flow map as Middlebury `.flo`; exact inverse of [`read_flo`].
pub fn write_flo(flow: &FlowMap) -> Vec<u8> {
    let n = flow.width * flow.height;
    let mut out = vec![0u8; FLO_HEADER_LEN + n * 8];
    LittleEndian::write_f32(&mut out[..4], FLO_MAGIC);
    LittleEndian::write_i32(&mut out[4..8], flow.width as i32);
    LittleEndian::write_i32(&mut out[8..12], flow.height as i32);
    for (i, pair) in out[FLO_HEADER_LEN..].chunks_exact_mut(8).enumerate() {
        LittleEndian::write_f32(&mut pair[..4], flow.u[i]);
        LittleEndian::write_f32(&mut pair[4..], flow.v[i]);
    }
    out
}

/// Clamped bilinear lookup of one channel at fractional `(x, y)`.
fn sample_clamped(data: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p = |xx: usize, yy: usize| data[yy * w + xx] as f64;
    (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1))
}

/// Resamples onto a `new_w × new_h` grid and rescales the values so that
/// displacements stay geometrically consistent: `u` is multiplied by
/// `new_w / width` and `v` by `new_h / height`.
///
/// Target pixel `X` reads source column `X · width / new_w`; lookups past
/// the last pixel clamp to the border.
pub fn resample_rescale(flow: &FlowMap, new_w: usize, new_h: usize) -> Result<FlowMap> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::invalid(format!("target size must be positive, got {new_w}x{new_h}")));
    }
    if new_w == flow.width && new_h == flow.height {
        return Ok(flow.clone());
    }
    let sx = new_w as f64 / flow.width as f64;
    let sy = new_h as f64 / flow.height as f64;
    let mut out = FlowMap::zeros(new_w, new_h);
    for y in 0..new_h {
        let src_y = y as f64 / sy;
        for x in 0..new_w {
            let src_x = x as f64 / sx;
            let u = sample_clamped(&flow.u, flow.width, flow.height, src_x, src_y);
            let v = sample_clamped(&flow.v, flow.width, flow.height, src_x, src_y);
            out.set(x, y, (u * sx) as f32, (v * sy) as f32);
        }
    }
    Ok(out)
}

/// Rounds to the nearest integer, ties toward +∞.
#[inline]
pub fn round_half_up(v: f32) -> isize {
    (v + 0.5).floor() as isize
}

/// The 3×3 neighbourhood of `(u, v)` around the pixel nearest `(cx, cy)` as
/// a `[2,3,3]` tensor. Cells outside the map are zero.
pub fn crop3x3(flow: &FlowMap, cx: f32, cy: f32) -> Tensor<f32> {
    let mut data = vec![0f32; 18];
    if cx.is_finite() && cy.is_finite() {
        let (px, py) = (round_half_up(cx), round_half_up(cy));
        for dy in 0..3 {
            for dx in 0..3 {
                let (u, v) = flow.at_or_zero(px + dx as isize - 1, py + dy as isize - 1);
                data[dy * 3 + dx] = u;
                data[9 + dy * 3 + dx] = v;
            }
        }
    }
    Tensor::new(&[2, 3, 3], data).expect("static shape")
}
