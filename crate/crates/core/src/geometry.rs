/// Axis-aligned box in image pixels: left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BBox {
    pub const fn new(x: f32, y: f32, w: f32, h: f32) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(cx: f32, cy: f32, w: f32, h: f32) -> Self {
        BBox { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    pub fn center(&self) -> (f32, f32) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f32 {
        self.y + self.h
    }

    pub fn area(&self) -> f32 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    pub fn translate(&self, dx: f32, dy: f32) -> Self {
        BBox { x: self.x + dx, y: self.y + dy, ..*self }
    }

    pub fn diagonal(&self) -> f64 {
        (self.w as f64).hypot(self.h as f64)
    }

    /// Whether `(px, py)` lies in the half-open box `[x, x+w) × [y, y+h)`.
    pub fn contains(&self, px: f32, py: f32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f32 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0) as f64;
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0) as f64;
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() as f64 + b.area() as f64 - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0) as f32
}
