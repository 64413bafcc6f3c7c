use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::LinearTimeVaryingModel;

/// Sampling period `f_s(t)` of the tracking model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingSchedule {
    Constant(f64),
    /// `base + amplitude·sin(t)`.
    Sinusoidal { base: f64, amplitude: f64 },
}

impl SamplingSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Self::Constant(fs) => fs,
            Self::Sinusoidal { base, amplitude } => base + amplitude * (t as f64).sin(),
        }
    }

    pub fn varying() -> Self {
        Self::Sinusoidal {
            base: 0.5,
            amplitude: 0.2,
        }
    }
}

/// Position/velocity target observed by two scalar sensors:
/// `C_1 = [0.5 1]`, `B_1 = 1.2 cos f_s` and `C_2 = [1 0]`, `B_2 = 2 sin f_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingModel {
    pub schedule: SamplingSchedule,
}

impl TrackingModel {
    pub fn new(schedule: SamplingSchedule) -> Self {
        Self { schedule }
    }
}

impl LinearTimeVaryingModel for TrackingModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn sensor_count(&self) -> usize {
        2
    }

    fn a(&self, t: usize) -> DMatrix<f64> {
        let fs = self.schedule.at(t);
        DMatrix::from_row_slice(2, 2, &[1.0, fs, 0.0, 1.0])
    }

    fn b(&self, t: usize) -> DMatrix<f64> {
        let fs = self.schedule.at(t);
        DMatrix::from_column_slice(2, 1, &[0.5 * fs * fs, fs])
    }

    fn c(&self, i: usize, _t: usize) -> DMatrix<f64> {
        match i {
            0 => DMatrix::from_row_slice(1, 2, &[0.5, 1.0]),
            1 => DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            _ => panic!("tracking model has two sensors, got index {i}"),
        }
    }

    fn b_sensor(&self, i: usize, t: usize) -> DMatrix<f64> {
        let fs = self.schedule.at(t);
        match i {
            0 => DMatrix::from_element(1, 1, 1.2 * fs.cos()),
            1 => DMatrix::from_element(1, 1, 2.0 * fs.sin()),
            _ => panic!("tracking model has two sensors, got index {i}"),
        }
    }
}
