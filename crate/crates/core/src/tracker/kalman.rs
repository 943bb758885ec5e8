//! Constant-velocity Kalman filter over the state
//! `(x, y, z, yaw, length, width, height, vx, vy, vz)`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::geom3d::{wrap_angle, Box3D};

pub type StateVector = SVector<f64, 10>;
pub type StateMatrix = SMatrix<f64, 10, 10>;
type Measurement = SVector<f64, 7>;
type MeasMatrix = SMatrix<f64, 7, 10>;

const MIN_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Initial covariance `p0 * I`.
    pub p0: f64,
    /// Process noise `q * I`.
    pub q: f64,
    /// Measurement noise `r * I`.
    pub r: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { p0: 10.0, q: 2.0, r: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
}

fn transition() -> StateMatrix {
    let mut f = StateMatrix::identity();
    for k in 0..3 {
        f[(k, 7 + k)] = 1.0;
    }
    f
}

fn observation() -> MeasMatrix {
    MeasMatrix::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

fn measurement(b: &Box3D) -> Measurement {
    let c = b.center();
    let s = b.size();
    Measurement::from_column_slice(&[c.x, c.y, c.z, b.yaw(), s.x, s.y, s.z])
}

impl KalmanState {
    /// State at birth: the detection with zero velocity and covariance `p0 * I`.
    pub fn from_box(b: &Box3D, noise: &NoiseModel) -> Self {
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<7>(0).copy_from(&measurement(b));
        Self {
            mean,
            covariance: StateMatrix::identity() * noise.p0,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(7).into_owned()
    }

    pub fn yaw(&self) -> f64 {
        self.mean[3]
    }

    pub fn size(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(4).into_owned()
    }

    /// The box described by the static part of the state.
    pub fn to_box(&self, confidence: f64) -> Result<Box3D> {
        Box3D::new(self.position(), self.size(), self.yaw(), confidence)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.covariance - self.covariance.transpose()).amax() < tol
    }

    /// One constant-velocity step: `x' = F x`, `P' = F P F^T + Q`.
    pub fn predict(&self, noise: &NoiseModel) -> Self {
        let f = transition();
        let mut covariance = f * self.covariance * f.transpose() + StateMatrix::identity() * noise.q;
        symmetrize(&mut covariance);
        Self {
            mean: f * self.mean,
            covariance,
        }
    }

    /// Standard Kalman update with a wrapped yaw innovation. A measured yaw
    /// more than a quarter turn away from the state is treated as flipped.
    pub fn update(&self, z: &Box3D, noise: &NoiseModel) -> Result<Self> {
        let h = observation();
        let mut innovation = measurement(z) - h * self.mean;
        let mut dyaw = wrap_angle(innovation[3]);
        if dyaw.abs() > FRAC_PI_2 {
            dyaw = wrap_angle(dyaw + PI);
        }
        innovation[3] = dyaw;

        let r = SMatrix::<f64, 7, 7>::identity() * noise.r;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
        let gain = self.covariance * h.transpose() * s_inv;

        let mut mean = self.mean + gain * innovation;
        mean[3] = wrap_angle(mean[3]);
        for k in 4..7 {
            mean[k] = mean[k].max(MIN_SIZE);
        }
        let ikh = StateMatrix::identity() - gain * h;
        let mut covariance = ikh * self.covariance * ikh.transpose() + gain * r * gain.transpose();
        symmetrize(&mut covariance);
        Ok(Self { mean, covariance })
    }

    /// First-match re-initialization: covariance follows the usual update,
    /// the static components become the measurement, and the velocity is the
    /// displacement from `birth` averaged over `elapsed_frames`.
    pub fn reinit_velocity(
        &self,
        z: &Box3D,
        birth: &Vector3<f64>,
        elapsed_frames: u32,
        noise: &NoiseModel,
    ) -> Result<Self> {
        if elapsed_frames == 0 {
            return Err(Error::invalid("velocity re-initialization needs at least one elapsed frame"));
        }
        let mut next = self.update(z, noise)?;
        next.mean.fixed_rows_mut::<7>(0).copy_from(&measurement(z));
        let velocity = (z.center() - birth) / elapsed_frames as f64;
        next.mean.fixed_rows_mut::<3>(7).copy_from(&velocity);
        Ok(next)
    }
}

fn symmetrize(p: &mut StateMatrix) {
    *p = (*p + p.transpose()) * 0.5;
}
