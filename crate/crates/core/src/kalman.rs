//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)` and their
//! velocities, with noise scaled by box height as in SORT-family trackers.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::BBox;

type Vec8 = SVector<f64, 8>;
type Mat8 = SMatrix<f64, 8, 8>;
type Mat4 = SMatrix<f64, 4, 4>;
type Mat48 = SMatrix<f64, 4, 8>;

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vec8,
    pub covariance: Mat8,
}

fn transition() -> Mat8 {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> Mat48 {
    let mut h = Mat48::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn measurement(b: &BBox) -> SVector<f64, 4> {
    let (cx, cy) = b.center();
    SVector::<f64, 4>::new(cx as f64, cy as f64, b.w as f64 / b.h as f64, b.h as f64)
}

fn check_box(b: &BBox) -> Result<()> {
    if !b.is_valid() {
        return Err(Error::invalid(format!("box must have positive width and height: {b:?}")));
    }
    Ok(())
}

impl KalmanState {
    pub fn center(&self) -> (f32, f32) {
        (self.mean[0] as f32, self.mean[1] as f32)
    }

    pub fn velocity(&self) -> (f32, f32) {
        (self.mean[4] as f32, self.mean[5] as f32)
    }

    pub fn to_bbox(&self) -> BBox {
        let h = self.mean[3];
        let w = self.mean[2] * h;
        BBox::from_center(self.mean[0] as f32, self.mean[1] as f32, w as f32, h as f32)
    }
}

/// New track state at the box, velocities zero.
pub fn kf_init(b: &BBox) -> Result<KalmanState> {
    check_box(b)?;
    let z = measurement(b);
    let mut mean = Vec8::zeros();
    mean.fixed_rows_mut::<4>(0).copy_from(&z);
    let h = z[3];
    let sp = STD_WEIGHT_POSITION;
    let sv = STD_WEIGHT_VELOCITY;
    let std = [2.0 * sp * h, 2.0 * sp * h, 1e-2, 2.0 * sp * h, 10.0 * sv * h, 10.0 * sv * h, 1e-5, 10.0 * sv * h];
    let covariance = Mat8::from_diagonal(&Vec8::from_iterator(std.iter().map(|s| s * s)));
    Ok(KalmanState { mean, covariance })
}

/// Advances one frame under constant velocity and adds process noise.
pub fn kf_predict(state: &KalmanState) -> KalmanState {
    let h = state.mean[3];
    let sp = STD_WEIGHT_POSITION * h;
    let sv = STD_WEIGHT_VELOCITY * h;
    let std = [sp, sp, 1e-2, sp, sv, sv, 1e-5, sv];
    let q = Mat8::from_diagonal(&Vec8::from_iterator(std.iter().map(|s| s * s)));
    let f = transition();
    let mean = f * state.mean;
    let covariance = f * state.covariance * f.transpose() + q;
    KalmanState { mean, covariance: symmetrize(covariance) }
}

/// Standard Kalman correction with a measured box.
pub fn kf_update(state: &KalmanState, b: &BBox) -> Result<KalmanState> {
    check_box(b)?;
    let h = state.mean[3];
    let sp = STD_WEIGHT_POSITION * h;
    let r = Mat4::from_diagonal(&SVector::<f64, 4>::new(sp * sp, sp * sp, 1e-1 * 1e-1, sp * sp));
    let hm = observation();
    let projected_cov = hm * state.covariance * hm.transpose() + r;
    let s_inv = projected_cov
        .try_inverse()
        .ok_or_else(|| Error::Singular("innovation covariance".into()))?;
    let gain = state.covariance * hm.transpose() * s_inv;
    let innovation = measurement(b) - hm * state.mean;
    let mean = state.mean + gain * innovation;
    let covariance = symmetrize(state.covariance - gain * projected_cov * gain.transpose());
    if !(mean[3] > 0.0) || !mean.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular(format!("update produced an invalid state {mean:?}")));
    }
    Ok(KalmanState { mean, covariance })
}

fn symmetrize(m: Mat8) -> Mat8 {
    (m + m.transpose()) * 0.5
}
