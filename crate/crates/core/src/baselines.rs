//! Reference filters: time-varying Kalman filter, extended Kalman filter and
//! an augmented-state unscented Kalman filter.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{LinearTimeVaryingModel, NonlinearModel};

/// Estimate, covariance and the assumed noise covariances.
///
/// `q` is the covariance of the raw process noise and `r` that of the
/// sensor's noise vector; they enter as `B Q Bᵀ` and `B_i R B_iᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Innovation `y − ŷ` of the latest update.
    pub innovation: DVector<f64>,
    /// Its predicted covariance.
    pub innovation_cov: DMatrix<f64>,
}

impl KalmanState {
    pub fn new(x: DVector<f64>, p: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        Self {
            x,
            p,
            q,
            r,
            innovation: DVector::zeros(0),
            innovation_cov: DMatrix::zeros(0, 0),
        }
    }
}

/// Variance of a uniform distribution on `[lo, hi]`.
pub fn uniform_variance(lo: f64, hi: f64) -> f64 {
    (hi - lo).powi(2) / 12.0
}

/// Symmetric part; adds `1e−12·I` once if the result is not positive definite.
fn repair(p: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (&p + p.transpose()) * 0.5;
    if Cholesky::new(sym.clone()).is_some() {
        return Ok(sym);
    }
    let n = sym.nrows();
    let jittered = sym + DMatrix::identity(n, n) * 1e-12;
    if Cholesky::new(jittered.clone()).is_some() {
        Ok(jittered)
    } else {
        Err(Error::Numerical("covariance lost positive definiteness".into()))
    }
}

/// Measurement update in Joseph form.
fn update(
    x_pred: DVector<f64>,
    p_pred: DMatrix<f64>,
    h: &DMatrix<f64>,
    innovation: DVector<f64>,
    r_eff: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let s = h * &p_pred * h.transpose() + r_eff;
    let s = (&s + s.transpose()) * 0.5;
    let s_inv = Cholesky::new(s.clone())
        .ok_or_else(|| Error::Numerical("innovation covariance is singular".into()))?
        .inverse();
    let gain = &p_pred * h.transpose() * s_inv;
    let x = x_pred + &gain * &innovation;
    let n = p_pred.nrows();
    let ikh = DMatrix::identity(n, n) - &gain * h;
    let p = &ikh * &p_pred * ikh.transpose() + &gain * r_eff * gain.transpose();
    Ok((x, repair(p)?, s))
}

/// One predict/update cycle from `t − 1` to `t` for sensor `i`.
pub fn kf_step<M: LinearTimeVaryingModel + ?Sized>(
    state: &KalmanState,
    model: &M,
    i: usize,
    t: usize,
    y: &DVector<f64>,
) -> Result<KalmanState> {
    let a = model.a(t - 1);
    let b = model.b(t - 1);
    let x_pred = &a * &state.x;
    let p_pred = &a * &state.p * a.transpose() + &b * &state.q * b.transpose();
    let c = model.c(i, t);
    let bi = model.b_sensor(i, t);
    let r_eff = &bi * &state.r * bi.transpose();
    let innovation = y - &c * &x_pred;
    let (x, p, s) = update(x_pred, p_pred, &c, innovation.clone(), &r_eff)?;
    Ok(KalmanState {
        x,
        p,
        q: state.q.clone(),
        r: state.r.clone(),
        innovation,
        innovation_cov: s,
    })
}

/// Extended Kalman filter step: propagate through `f`, linearize at the
/// filter's own estimates.
pub fn ekf_step<M: NonlinearModel + ?Sized>(
    state: &KalmanState,
    model: &M,
    i: usize,
    t: usize,
    y: &DVector<f64>,
) -> Result<KalmanState> {
    let f_jac = model.f_jacobian(&state.x)?;
    let l = model.noise_jacobian(&state.x, t - 1)?;
    let x_pred = model.f(&state.x);
    let p_pred = &f_jac * &state.p * f_jac.transpose() + &l * &state.q * l.transpose();
    let h = model.g_jacobian(i, &x_pred)?;
    let bi = model.b_sensor(i, t);
    let r_eff = &bi * &state.r * bi.transpose();
    let innovation = y - model.g(i, &x_pred);
    let (x, p, s) = update(x_pred, p_pred, &h, innovation.clone(), &r_eff)?;
    Ok(KalmanState {
        x,
        p,
        q: state.q.clone(),
        r: state.r.clone(),
        innovation,
        innovation_cov: s,
    })
}

/// Sigma-point spread parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UkfParams {
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }

    /// Mean and covariance weights for `2n + 1` points.
    pub fn weights(&self, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let lambda = self.lambda(n);
        let denom = n as f64 + lambda;
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Config("UKF parameters give n + λ = 0".into()));
        }
        let mut wm = vec![0.5 / denom; 2 * n + 1];
        let mut wc = wm.clone();
        wm[0] = lambda / denom;
        wc[0] = lambda / denom + 1.0 - self.alpha * self.alpha + self.beta;
        Ok((wm, wc))
    }
}

fn factor_with_retry(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok(c.l());
    }
    let n = sym.nrows();
    Cholesky::new(sym + DMatrix::identity(n, n) * 1e-12)
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical("sigma-point factorization failed".into()))
}

/// Unscented step over the augmented state `[x; w; v_i]`.
pub fn ukf_step<M: NonlinearModel + ?Sized>(
    state: &KalmanState,
    model: &M,
    i: usize,
    t: usize,
    y: &DVector<f64>,
    params: &UkfParams,
) -> Result<KalmanState> {
    let n = state.x.len();
    let n_w = state.q.nrows();
    let n_v = state.r.nrows();
    let n_a = n + n_w + n_v;

    let mut p_a = DMatrix::zeros(n_a, n_a);
    p_a.view_mut((0, 0), (n, n)).copy_from(&state.p);
    p_a.view_mut((n, n), (n_w, n_w)).copy_from(&state.q);
    p_a.view_mut((n + n_w, n + n_w), (n_v, n_v)).copy_from(&state.r);
    let (wm, wc) = params.weights(n_a)?;
    let scale = (n_a as f64 + params.lambda(n_a)).sqrt();
    let root = factor_with_retry(&p_a)? * scale;

    let mut mean_a = DVector::zeros(n_a);
    mean_a.rows_mut(0, n).copy_from(&state.x);
    let mut points = Vec::with_capacity(2 * n_a + 1);
    points.push(mean_a.clone());
    for j in 0..n_a {
        points.push(&mean_a + root.column(j));
    }
    for j in 0..n_a {
        points.push(&mean_a - root.column(j));
    }

    let b = model.b(t - 1);
    let bi = model.b_sensor(i, t);
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for pt in &points {
        let x = pt.rows(0, n).into_owned();
        let w = pt.rows(n, n_w).into_owned();
        let v = pt.rows(n + n_w, n_v).into_owned();
        let next = model.f(&x) + &b * model.process_noise(&x, &w);
        ys.push(model.g(i, &next) + &bi * v);
        xs.push(next);
    }

    let weighted_mean = |vs: &[DVector<f64>]| {
        vs.iter()
            .zip(&wm)
            .fold(DVector::zeros(vs[0].len()), |acc, (v, w)| acc + v * *w)
    };
    let x_pred = weighted_mean(&xs);
    let y_pred = weighted_mean(&ys);
    let q = y.len();
    let mut p_xx = DMatrix::zeros(n, n);
    let mut p_yy = DMatrix::zeros(q, q);
    let mut p_xy = DMatrix::zeros(n, q);
    for ((xk, yk), w) in xs.iter().zip(&ys).zip(&wc) {
        let dx = xk - &x_pred;
        let dy = yk - &y_pred;
        p_xx += &dx * dx.transpose() * *w;
        p_yy += &dy * dy.transpose() * *w;
        p_xy += &dx * dy.transpose() * *w;
    }
    let p_yy = (&p_yy + p_yy.transpose()) * 0.5;
    let s_inv = Cholesky::new(p_yy.clone())
        .ok_or_else(|| Error::Numerical("UKF innovation covariance is singular".into()))?
        .inverse();
    let gain = &p_xy * s_inv;
    let innovation = y - &y_pred;
    let x = &x_pred + &gain * &innovation;
    let p = repair(p_xx - &gain * &p_yy * gain.transpose())?;
    Ok(KalmanState {
        x,
        p,
        q: state.q.clone(),
        r: state.r.clone(),
        innovation,
        innovation_cov: p_yy,
    })
}
