use super::{Real, Tensor};

/// One of the four interpolation taps around a sampling point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap<T: Real = f32> {
    pub row: isize,
    pub col: isize,
    pub weight: T,
    /// d(weight)/dx and d(weight)/dy
    pub dweight: (T, T),
}

impl<T: Real> Tap<T> {
    pub fn inside(&self, h: usize, w: usize) -> bool {
        self.row >= 0 && self.col >= 0 && (self.row as usize) < h && (self.col as usize) < w
    }
}

/// Taps for sampling at column `x`, row `y`. Weights sum to one; the
/// caller drops taps outside the map (zero padding).
#[inline]
pub fn bilinear_taps<T: Real>(x: T, y: T) -> [Tap<T>; 4] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (c0, r0) = (x0.to_isize().unwrap_or(isize::MIN / 2), y0.to_isize().unwrap_or(isize::MIN / 2));
    let one = T::one();
    [
        Tap { row: r0, col: c0, weight: (one - fx) * (one - fy), dweight: (-(one - fy), -(one - fx)) },
        Tap { row: r0, col: c0 + 1, weight: fx * (one - fy), dweight: (one - fy, -fx) },
        Tap { row: r0 + 1, col: c0, weight: (one - fx) * fy, dweight: (-fy, one - fx) },
        Tap { row: r0 + 1, col: c0 + 1, weight: fx * fy, dweight: (fy, fx) },
    ]
}

/// Samples every channel of a `[C,H,W]` map at column `x`, row `y`.
/// Taps outside `[0,H)×[0,W)` contribute zero.
pub fn bilinear_sample<T: Real>(feature: &Tensor<T>, x: T, y: T) -> Vec<T> {
    let [c, h, w] = feature.dims3("bilinear feature").expect("feature must be [C,H,W]");
    let mut out = vec![T::zero(); c];
    if !(x.is_finite() && y.is_finite()) {
        return out;
    }
    for tap in bilinear_taps(x, y) {
        if !tap.inside(h, w) || tap.weight == T::zero() {
            continue;
        }
        let (r, col) = (tap.row as usize, tap.col as usize);
        for (ch, o) in out.iter_mut().enumerate() {
            *o += tap.weight * feature.data()[(ch * h + r) * w + col];
        }
    }
    out
}

/// Backward of [`bilinear_sample`]: accumulates `grad_out` (length C) into
/// `grad_feature` and returns the gradient with respect to `(x, y)`.
pub fn bilinear_sample_backward<T: Real>(
    feature: &Tensor<T>,
    x: T,
    y: T,
    grad_out: &[T],
    grad_feature: &mut Tensor<T>,
) -> (T, T) {
    let [c, h, w] = feature.dims3("bilinear feature").expect("feature must be [C,H,W]");
    debug_assert_eq!(grad_out.len(), c);
    let (mut gx, mut gy) = (T::zero(), T::zero());
    if !(x.is_finite() && y.is_finite()) {
        return (gx, gy);
    }
    for tap in bilinear_taps(x, y) {
        if !tap.inside(h, w) {
            continue;
        }
        let (r, col) = (tap.row as usize, tap.col as usize);
        for (ch, &g) in grad_out.iter().enumerate() {
            let i = (ch * h + r) * w + col;
            let f = feature.data()[i];
            grad_feature.data_mut()[i] += tap.weight * g;
            gx += g * f * tap.dweight.0;
            gy += g * f * tap.dweight.1;
        }
    }
    (gx, gy)
}
