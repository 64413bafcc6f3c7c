//! Plant and measurement models, noise regimes, and the two concrete systems
//! (a two-sensor target tracker and a landmark-based unicycle robot).
//!
//! Sensor indices are zero-based throughout the crate. Time `t` is the
//! integer step; `x(t) = A(t−1)x(t−1) + B(t−1)w(t−1)` and
//! `y_i(t) = C_i(t)x(t) + B_i(t)v_i(t)`.

mod noise;
mod robot;
mod tracking;

pub use noise::{NoiseKind, NoiseSample, NoiseSource, StandardNoise};
pub use robot::RobotModel;
pub use tracking::{SamplingSchedule, TrackingModel};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `x(t+1) = A(t)x(t) + B(t)w(t)`, `y_i(t) = C_i(t)x(t) + B_i(t)v_i(t)`.
pub trait LinearTimeVaryingModel: Sync {
    fn state_dim(&self) -> usize;
    fn sensor_count(&self) -> usize;
    fn a(&self, t: usize) -> DMatrix<f64>;
    fn b(&self, t: usize) -> DMatrix<f64>;
    fn c(&self, i: usize, t: usize) -> DMatrix<f64>;
    fn b_sensor(&self, i: usize, t: usize) -> DMatrix<f64>;

    fn process_noise_dim(&self) -> usize {
        self.b(0).ncols()
    }

    fn measurement_noise_dim(&self, i: usize) -> usize {
        self.b_sensor(i, 0).ncols()
    }
}

/// `x(t+1) = f(x(t)) + B(t)w(t)`, `y_i(t) = g_i(x(t)) + B_i(t)v_i(t)`.
///
/// Jacobians default to central finite differences.
pub trait NonlinearModel: Sync {
    fn state_dim(&self) -> usize;
    fn sensor_count(&self) -> usize;
    fn f(&self, x: &DVector<f64>) -> DVector<f64>;
    fn g(&self, i: usize, x: &DVector<f64>) -> DVector<f64>;
    fn b(&self, t: usize) -> DMatrix<f64>;
    fn b_sensor(&self, i: usize, t: usize) -> DMatrix<f64>;

    fn f_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        finite_difference_jacobian(|z| self.f(z), x)
    }

    fn g_jacobian(&self, i: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        finite_difference_jacobian(|z| self.g(i, z), x)
    }

    /// Maps raw noise channels to the additive `w` of the model at state `x`.
    /// Identity unless the physical noise enters non-additively.
    fn process_noise(&self, _x: &DVector<f64>, raw: &DVector<f64>) -> DVector<f64> {
        raw.clone()
    }

    fn process_noise_dim(&self) -> usize {
        self.b(0).ncols()
    }

    fn measurement_noise_dim(&self, i: usize) -> usize {
        self.b_sensor(i, 0).ncols()
    }

    /// `∂/∂raw [B(t)·process_noise(x, raw)]` at `raw = 0`.
    fn noise_jacobian(&self, x: &DVector<f64>, t: usize) -> Result<DMatrix<f64>> {
        let zero = DVector::zeros(self.process_noise_dim());
        Ok(self.b(t) * finite_difference_jacobian(|r| self.process_noise(x, r), &zero)?)
    }
}

/// Exposes a linear time-varying model through the nonlinear interface.
/// Only valid for time-invariant models, since `f` carries no time argument.
pub struct LinearAsNonlinear<'a, M: LinearTimeVaryingModel>(pub &'a M);

impl<M: LinearTimeVaryingModel> NonlinearModel for LinearAsNonlinear<'_, M> {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn sensor_count(&self) -> usize {
        self.0.sensor_count()
    }
    fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        self.0.a(0) * x
    }
    fn g(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        self.0.c(i, 0) * x
    }
    fn b(&self, t: usize) -> DMatrix<f64> {
        self.0.b(t)
    }
    fn b_sensor(&self, i: usize, t: usize) -> DMatrix<f64> {
        self.0.b_sensor(i, t)
    }
    fn f_jacobian(&self, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.0.a(0))
    }
    fn g_jacobian(&self, i: usize, _x: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.0.c(i, 0))
    }
    fn noise_jacobian(&self, _x: &DVector<f64>, t: usize) -> Result<DMatrix<f64>> {
        Ok(self.0.b(t))
    }
}

fn ensure_finite(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// `A(t)x + B(t)w`.
pub fn step_truth_linear<M: LinearTimeVaryingModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    t: usize,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let next = model.a(t) * x + model.b(t) * w;
    ensure_finite(&next, "state after linear step")?;
    Ok(next)
}

/// `f(x) + B(t)w`.
pub fn step_truth<M: NonlinearModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    t: usize,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let next = model.f(x) + model.b(t) * w;
    ensure_finite(&next, "state after nonlinear step")?;
    Ok(next)
}

/// `C_i(t)x + B_i(t)v`.
pub fn measure_linear<M: LinearTimeVaryingModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    t: usize,
    i: usize,
    v: &DVector<f64>,
) -> DVector<f64> {
    model.c(i, t) * x + model.b_sensor(i, t) * v
}

/// `g_i(x) + B_i(t)v`.
pub fn measure<M: NonlinearModel + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    t: usize,
    i: usize,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let y = model.g(i, x) + model.b_sensor(i, t) * v;
    ensure_finite(&y, "measurement")?;
    Ok(y)
}

/// Central differences with step `h_j = max(1e-6, 1e-6·|x_j|)`.
pub fn finite_difference_jacobian<F>(map: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let base = map(x);
    ensure_finite(&base, "map value")?;
    let mut jac = DMatrix::zeros(base.len(), x.len());
    for j in 0..x.len() {
        let h = (1e-6 * x[j].abs()).max(1e-6);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (map(&xp) - map(&xm)) / (2.0 * h);
        ensure_finite(&col, "finite-difference column")?;
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// A simulated truth trajectory together with the noises that produced it.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRecord {
    /// `x(0), …, x(T)`.
    pub states: Vec<DVector<f64>>,
    /// `measurements[t − 1][i] = y_i(t)` for `t = 1…T`.
    pub measurements: Vec<Vec<DVector<f64>>>,
    /// Additive process noise `w(t)` for `t = 0…T−1`, as it enters `B(t)w`.
    pub process_noise: Vec<DVector<f64>>,
    /// `measurement_noise[t − 1][i] = v_i(t)`.
    pub measurement_noise: Vec<Vec<DVector<f64>>>,
}

impl TrajectoryRecord {
    pub fn horizon(&self) -> usize {
        self.measurements.len()
    }
}

/// Simulates `horizon` steps of a linear model. Noise for the transition
/// into step `t` is drawn at `t − 1`; measurement noise at `t`.
pub fn simulate_linear<M, N>(
    model: &M,
    noise: &N,
    x0: &DVector<f64>,
    horizon: usize,
    run: u64,
) -> Result<TrajectoryRecord>
where
    M: LinearTimeVaryingModel + ?Sized,
    N: NoiseSource + ?Sized,
{
    let mut rec = TrajectoryRecord {
        states: vec![x0.clone()],
        ..Default::default()
    };
    for t in 1..=horizon {
        let w = noise.sample(t - 1, run).w;
        let x = step_truth_linear(model, &rec.states[t - 1], t - 1, &w)?;
        let v = noise.sample(t, run).v;
        let ys = (0..model.sensor_count())
            .map(|i| measure_linear(model, &x, t, i, &v[i]))
            .collect();
        rec.process_noise.push(w);
        rec.measurement_noise.push(v);
        rec.measurements.push(ys);
        rec.states.push(x);
    }
    Ok(rec)
}

/// Nonlinear counterpart of [`simulate_linear`]; raw process noise is mapped
/// through [`NonlinearModel::process_noise`] before it is recorded.
pub fn simulate_nonlinear<M, N>(
    model: &M,
    noise: &N,
    x0: &DVector<f64>,
    horizon: usize,
    run: u64,
) -> Result<TrajectoryRecord>
where
    M: NonlinearModel + ?Sized,
    N: NoiseSource + ?Sized,
{
    let mut rec = TrajectoryRecord {
        states: vec![x0.clone()],
        ..Default::default()
    };
    for t in 1..=horizon {
        let prev = &rec.states[t - 1];
        let w = model.process_noise(prev, &noise.sample(t - 1, run).w);
        let x = step_truth(model, prev, t - 1, &w)?;
        let v = noise.sample(t, run).v;
        let ys = (0..model.sensor_count())
            .map(|i| measure(model, &x, t, i, &v[i]))
            .collect::<Result<Vec<_>>>()?;
        rec.process_noise.push(w);
        rec.measurement_noise.push(v);
        rec.measurements.push(ys);
        rec.states.push(x);
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map_jacobian() {
        let x = DVector::from_vec(vec![0.3, -2.0, 7.5]);
        let j = finite_difference_jacobian(|z| z.clone(), &x).unwrap();
        assert!((j - DMatrix::<f64>::identity(3, 3)).amax() < 1e-9);
    }

    #[test]
    fn non_finite_map_is_rejected() {
        let x = DVector::from_vec(vec![0.0]);
        let r = finite_difference_jacobian(|z| z.map(|v| 1.0 / v), &x);
        assert!(r.is_err());
    }

    #[test]
    fn zero_state_zero_noise_stays_zero() {
        let m = TrackingModel::new(SamplingSchedule::Constant(0.5));
        let x = DVector::zeros(2);
        let next = step_truth_linear(&m, &x, 3, &DVector::zeros(1)).unwrap();
        assert_eq!(next, DVector::zeros(2));
    }
}
