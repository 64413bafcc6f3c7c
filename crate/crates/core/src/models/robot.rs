use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::NonlinearModel;
use crate::error::{Error, Result};

/// One sensor group: the landmarks it ranges/bearings to and its noise gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSensor {
    pub landmarks: Vec<usize>,
    /// Row-major `2·landmarks.len() × n_v` noise gain.
    pub noise_gain: Vec<Vec<f64>>,
}

impl LandmarkSensor {
    fn gain(&self) -> DMatrix<f64> {
        let rows = self.noise_gain.len();
        let cols = self.noise_gain.first().map_or(0, Vec::len);
        DMatrix::from_fn(rows, cols, |r, c| self.noise_gain[r][c])
    }
}

/// Unicycle robot with commanded velocities `(u_p, u_r)` and range/bearing
/// measurements to fixed landmarks. State is `(s_x, s_y, θ)`.
///
/// The raw process noise `(w_p, w_r, w_θ)` perturbs the commanded velocities
/// and the heading; [`NonlinearModel::process_noise`] converts it into the
/// additive `w` of `x⁺ = f(x) + Γw` with `Γ = diag(1, 1, T0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub t0: f64,
    pub u_p: f64,
    pub u_r: f64,
    pub landmarks: Vec<[f64; 2]>,
    pub sensors: Vec<LandmarkSensor>,
}

impl Default for RobotModel {
    fn default() -> Self {
        let d1 = [0.5, 0.3];
        let d2 = [0.3, 0.5];
        let d3 = [0.2, 0.6];
        let d4 = [0.5, 0.7];
        let first = vec![
            vec![d1[0], 0.0, 0.0, 0.0],
            vec![0.0, d1[1], 0.0, 0.0],
            vec![0.0, 0.0, d2[0], 0.0],
            vec![0.0, 0.0, 0.0, d2[1]],
        ];
        let second = vec![
            vec![d3[0], 0.0],
            vec![0.0, d3[1]],
            vec![d4[0], 0.0],
            vec![0.0, d4[1]],
        ];
        Self {
            t0: 1.0,
            u_p: 0.075,
            u_r: 0.025,
            landmarks: vec![[5.0, 10.0], [10.0, 10.0], [10.0, 5.0], [5.0, 5.0]],
            sensors: vec![
                LandmarkSensor {
                    landmarks: vec![0, 1],
                    noise_gain: first,
                },
                LandmarkSensor {
                    landmarks: vec![2, 3],
                    noise_gain: second,
                },
            ],
        }
    }
}

/// `sin(x)/x`, accurate near zero.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

impl RobotModel {
    /// Planar displacement over one period at speed `v` and turn rate `omega`:
    /// `(v/ω)(sin(θ+ωT0) − sin θ, cos θ − cos(θ+ωT0))`, written so that
    /// `ω → 0` is well defined.
    pub fn arc(&self, theta: f64, v: f64, omega: f64) -> (f64, f64) {
        let half = 0.5 * omega * self.t0;
        let chord = v * self.t0 * sinc(half);
        let mid = theta + half;
        (chord * mid.cos(), chord * mid.sin())
    }

    /// Next state under the physical kinematics with raw noise `(w_p, w_r, w_θ)`.
    pub fn propagate_raw(&self, x: &DVector<f64>, raw: &DVector<f64>) -> DVector<f64> {
        let up = self.u_p + raw[0];
        let ur = self.u_r + raw[1];
        let (dx, dy) = self.arc(x[2], up, ur);
        DVector::from_vec(vec![
            x[0] + dx,
            x[1] + dy,
            x[2] + self.t0 * ur + self.t0 * raw[2],
        ])
    }

    fn gamma(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, self.t0]))
    }

    /// Range and bearing to landmark `k`.
    pub fn landmark_measurement(&self, k: usize, x: &DVector<f64>) -> (f64, f64) {
        let [lx, ly] = self.landmarks[k];
        let (sx, sy) = (lx - x[0], ly - x[1]);
        (sx.hypot(sy), x[2] - (sy / sx).atan())
    }

    /// Rows of the range/bearing Jacobian for landmark `k`.
    pub fn landmark_jacobian(&self, k: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let [lx, ly] = self.landmarks[k];
        let (sx, sy) = (lx - x[0], ly - x[1]);
        let d2 = sx * sx + sy * sy;
        if !(d2 > 1e-24) || !d2.is_finite() {
            return Err(Error::Numerical(format!(
                "robot at ({:.6}, {:.6}) coincides with landmark {} at ({lx}, {ly})",
                x[0],
                x[1],
                k + 1
            )));
        }
        let d = d2.sqrt();
        Ok(DMatrix::from_row_slice(
            2,
            3,
            &[-sx / d, -sy / d, 0.0, -sy / d2, sx / d2, 1.0],
        ))
    }
}

impl NonlinearModel for RobotModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        let (dx, dy) = self.arc(x[2], self.u_p, self.u_r);
        DVector::from_vec(vec![x[0] + dx, x[1] + dy, x[2] + self.t0 * self.u_r])
    }

    fn g(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let ks = &self.sensors[i].landmarks;
        let mut y = DVector::zeros(2 * ks.len());
        for (slot, &k) in ks.iter().enumerate() {
            let (d, phi) = self.landmark_measurement(k, x);
            y[2 * slot] = d;
            y[2 * slot + 1] = phi;
        }
        y
    }

    fn b(&self, _t: usize) -> DMatrix<f64> {
        self.gamma()
    }

    fn b_sensor(&self, i: usize, _t: usize) -> DMatrix<f64> {
        self.sensors[i].gain()
    }

    fn f_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        // d/dθ of the arc is the arc rotated by +90°
        let (dx, dy) = self.arc(x[2], self.u_p, self.u_r);
        Ok(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, -dy, 0.0, 1.0, dx, 0.0, 0.0, 1.0],
        ))
    }

    fn g_jacobian(&self, i: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let ks = &self.sensors[i].landmarks;
        let mut jac = DMatrix::zeros(2 * ks.len(), 3);
        for (slot, &k) in ks.iter().enumerate() {
            jac.view_mut((2 * slot, 0), (2, 3))
                .copy_from(&self.landmark_jacobian(k, x)?);
        }
        Ok(jac)
    }

    fn process_noise(&self, x: &DVector<f64>, raw: &DVector<f64>) -> DVector<f64> {
        let truth = self.propagate_raw(x, raw);
        let nominal = self.f(x);
        let mut w = truth - nominal;
        w[2] = raw[1] + raw[2];
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{finite_difference_jacobian, step_truth};

    #[test]
    fn nominal_step_from_origin() {
        let m = RobotModel::default();
        let x = step_truth(&m, &DVector::zeros(3), 0, &DVector::zeros(3)).unwrap();
        let ratio = 0.075 / 0.025;
        assert!((x[0] - ratio * 0.025f64.sin()).abs() < 1e-15);
        assert!((x[1] - ratio * (1.0 - 0.025f64.cos())).abs() < 1e-15);
        assert!((x[0] - 0.074_992_2).abs() < 1e-7);
        assert!((x[1] - 9.374_51e-4).abs() < 1e-9);
        assert_eq!(x[2], 0.025);
    }

    #[test]
    fn range_and_bearing_to_first_landmark() {
        let m = RobotModel::default();
        let (d, phi) = m.landmark_measurement(0, &DVector::zeros(3));
        assert!((d - 125f64.sqrt()).abs() < 1e-12);
        assert!((d - 11.180_34).abs() < 1e-5);
        assert!((phi + 2f64.atan()).abs() < 1e-12);
        assert!((phi + 1.107_15).abs() < 1e-5);
    }

    #[test]
    fn heading_column_at_zero() {
        let m = RobotModel::default();
        let j = m.f_jacobian(&DVector::zeros(3)).unwrap();
        let ratio = 3.0;
        assert!((j[(0, 2)] - ratio * (0.025f64.cos() - 1.0)).abs() < 1e-15);
        assert!((j[(1, 2)] - ratio * 0.025f64.sin()).abs() < 1e-15);
        assert!((j[(0, 2)] + 9.374_51e-4).abs() < 1e-9);
        assert!((j[(1, 2)] - 0.074_992_2).abs() < 1e-7);
        let fd = finite_difference_jacobian(|z| m.f(z), &DVector::zeros(3)).unwrap();
        assert!((fd - j).amax() < 1e-8);
    }

    #[test]
    fn landmark_jacobian_rows() {
        let m = RobotModel::default();
        let j = m.landmark_jacobian(0, &DVector::zeros(3)).unwrap();
        let expected = [-0.447_21, -0.894_43, 0.0, -0.08, 0.04, 1.0];
        for (k, e) in expected.iter().enumerate() {
            assert!((j[(k / 3, k % 3)] - e).abs() < 1e-5);
        }
    }

    #[test]
    fn landmark_coincidence_is_an_error() {
        let m = RobotModel::default();
        let x = DVector::from_vec(vec![5.0, 10.0, 0.0]);
        assert!(m.g_jacobian(0, &x).is_err());
    }

    #[test]
    fn process_noise_reproduces_kinematics() {
        let m = RobotModel::default();
        let x = DVector::from_vec(vec![0.4, -0.2, 1.3]);
        let raw = DVector::from_vec(vec![0.05, -0.07, 0.02]);
        let w = m.process_noise(&x, &raw);
        let via_model = m.f(&x) + m.b(0) * &w;
        assert!((via_model - m.propagate_raw(&x, &raw)).amax() < 1e-14);
    }

    #[test]
    fn zero_turn_rate_is_straight_line() {
        let m = RobotModel::default();
        let x = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let raw = DVector::from_vec(vec![0.0, -0.025, 0.0]);
        let next = m.propagate_raw(&x, &raw);
        assert!((next[0] - 0.075).abs() < 1e-15);
        assert_eq!(next[1], 0.0);
    }
}
