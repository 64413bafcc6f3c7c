//! Local estimators for nonlinear models: Jacobian linearization, gain design
//! over a four-block bordered LMI, and the recursion
//! `x̂(t) = f(x̂(t−1)) + K[y(t) − g(f(x̂(t−1)))]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lmi::{
    self, AffineExpr, BlockLmi, Domain, MatrixVar, SdpProblem, SolveStatus, Structure,
};
use crate::models::NonlinearModel;

/// Jacobians and noise gains entering one nonlinear gain design.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    /// `∂f/∂x` at `x̂(t−1)`.
    pub a_j: DMatrix<f64>,
    /// `∂g_i/∂x` at `f(x̂(t−1))`.
    pub c_j: DMatrix<f64>,
    /// `B(t−1)`.
    pub b: DMatrix<f64>,
    /// `B_i(t)`.
    pub b_sensor: DMatrix<f64>,
}

impl LinearizedSystem {
    pub fn state_dim(&self) -> usize {
        self.a_j.nrows()
    }

    /// `I − K C_J`.
    pub fn g(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.state_dim(), self.state_dim()) - k * &self.c_j
    }

    /// `J_d = ‖G A_J‖₂`.
    pub fn contraction(&self, k: &DMatrix<f64>) -> f64 {
        lmi::spectral_norm(&(self.g(k) * &self.a_j))
    }

    fn check(&self) -> Result<()> {
        let n = self.a_j.nrows();
        let q = self.c_j.nrows();
        let ok = self.a_j.ncols() == n
            && self.c_j.ncols() == n
            && self.b.nrows() == n
            && self.b_sensor.nrows() == q;
        let finite = [&self.a_j, &self.c_j, &self.b, &self.b_sensor]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("linearized system".into()));
        }
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "A_J {:?}, C_J {:?}, B {:?}, B_i {:?}",
                self.a_j.shape(),
                self.c_j.shape(),
                self.b.shape(),
                self.b_sensor.shape()
            )))
        }
    }
}

/// `(A_J, C_J)`: the state Jacobian at `x̂_prev` and the measurement Jacobian
/// at the prediction `f(x̂_prev)`.
pub fn linearize<M: NonlinearModel + ?Sized>(
    model: &M,
    x_prev: &DVector<f64>,
    i: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a_j = model.f_jacobian(x_prev)?;
    let c_j = model.g_jacobian(i, &model.f(x_prev))?;
    Ok((a_j, c_j))
}

/// Linearizes and collects the noise gains for sensor `i` at step `t`.
pub fn linearized_system<M: NonlinearModel + ?Sized>(
    model: &M,
    x_prev: &DVector<f64>,
    i: usize,
    t: usize,
) -> Result<LinearizedSystem> {
    let (a_j, c_j) = linearize(model, x_prev, i)?;
    Ok(LinearizedSystem {
        a_j,
        c_j,
        b: model.b(t - 1),
        b_sensor: model.b_sensor(i, t),
    })
}

/// Solved nonlinear gain with its certificate.
#[derive(Debug, Clone)]
pub struct NonlinearGainResult {
    pub k: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub eta: f64,
    /// `Tr Υ + Tr M`.
    pub objective: f64,
    pub status: SolveStatus,
    pub certified: bool,
}

impl NonlinearGainResult {
    /// `[[−I, GA_J, X2, X3], [∗, −Π, 0, 0], [∗, ∗, −Υ, −Ψ], [∗, ∗, ∗, −M]]`.
    pub fn bordered(&self, sys: &LinearizedSystem) -> DMatrix<f64> {
        let n = sys.state_dim();
        let n_w = sys.b.ncols();
        let n_v = sys.b_sensor.ncols();
        let g = sys.g(&self.k);
        let x2 = &g * &sys.b;
        let x3 = -(&self.k * &sys.b_sensor);
        let dim = 2 * n + n_w + n_v;
        let mut out = DMatrix::zeros(dim, dim);
        let mut put = |r: usize, c: usize, m: &DMatrix<f64>| {
            out.view_mut((r, c), m.shape()).copy_from(m);
            if r != c {
                out.view_mut((c, r), (m.ncols(), m.nrows())).copy_from(&m.transpose());
            }
        };
        put(0, 0, &-DMatrix::<f64>::identity(n, n));
        put(0, n, &(&g * &sys.a_j));
        put(0, 2 * n, &x2);
        put(0, 2 * n + n_w, &x3);
        put(n, n, &-&self.pi);
        put(2 * n, 2 * n, &-&self.upsilon);
        put(2 * n, 2 * n + n_w, &-&self.psi);
        put(2 * n + n_w, 2 * n + n_w, &-&self.m);
        out
    }
}

/// `min Tr{Υ + M}` subject to the bordered LMI, `Π ≺ ηI`, `η ≤ 1`.
pub fn design_nonlinear_gain(sys: &LinearizedSystem) -> Result<NonlinearGainResult> {
    sys.check()?;
    let n = sys.state_dim();
    let q = sys.c_j.nrows();
    let n_w = sys.b.ncols();
    let n_v = sys.b_sensor.ncols();

    let mut problem = SdpProblem::new();
    let k = problem.add_var("K", n, q, Structure::Rectangular, Domain::Free);
    let pi = problem.add_var("Pi", n, n, Structure::Symmetric, Domain::PositiveDefinite);
    let upsilon = problem.add_var("Upsilon", n_w, n_w, Structure::Symmetric, Domain::PositiveDefinite);
    let m = problem.add_var("M", n_v, n_v, Structure::Symmetric, Domain::PositiveDefinite);
    let psi = problem.add_var("Psi", n_w, n_v, Structure::Rectangular, Domain::Free);
    let eta = problem.add_var("eta", 1, 1, Structure::Scalar, Domain::Free);

    let eye = DMatrix::<f64>::identity(n, n);
    let mut bordered = BlockLmi::strict(&[n, n, n_w, n_v]);
    bordered
        .set(0, 0, AffineExpr::constant(-eye.clone()))
        .set(
            0,
            1,
            AffineExpr::constant(sys.a_j.clone()).plus(-eye.clone(), &k, &sys.c_j * &sys.a_j),
        )
        .set(
            0,
            2,
            AffineExpr::constant(sys.b.clone()).plus(-eye.clone(), &k, &sys.c_j * &sys.b),
        )
        .set(
            0,
            3,
            AffineExpr::zeros(n, n_v).plus(-eye, &k, sys.b_sensor.clone()),
        )
        .set(1, 1, AffineExpr::var(&pi, -1.0))
        .set(2, 2, AffineExpr::var(&upsilon, -1.0))
        .set(2, 3, AffineExpr::var(&psi, -1.0))
        .set(3, 3, AffineExpr::var(&m, -1.0));
    problem.add_lmi(bordered)?;

    let mut bound = BlockLmi::strict(&[n]);
    bound.set(0, 0, AffineExpr::var(&pi, 1.0).plus_scalar_identity(&eta, -1.0));
    problem.add_lmi(bound)?;

    let mut cap = BlockLmi::nonstrict(&[1]);
    cap.set(
        0,
        0,
        AffineExpr::var(&eta, 1.0).add_constant(&DMatrix::from_element(1, 1, -1.0)),
    );
    problem.add_lmi(cap)?;

    problem.minimize_trace(&upsilon, 1.0);
    problem.minimize_trace(&m, 1.0);

    let sol = problem.solve();
    let certified = sol.is_optimal() && problem.verify_default(&sol).passed;
    let get = |v: &MatrixVar| sol.value(v).clone();
    Ok(NonlinearGainResult {
        k: get(&k),
        pi: get(&pi),
        upsilon: get(&upsilon),
        m: get(&m),
        psi: get(&psi),
        eta: sol.scalar(&eta),
        objective: sol.objective_value,
        status: sol.status,
        certified,
    })
}

/// Per-sensor nonlinear estimator state.
#[derive(Debug, Clone)]
pub struct NonlinearLocalEstimator {
    pub sensor: usize,
    pub estimate: DVector<f64>,
    pub prediction: DVector<f64>,
}

impl NonlinearLocalEstimator {
    pub fn new(sensor: usize, initial: DVector<f64>) -> Self {
        Self {
            sensor,
            prediction: initial.clone(),
            estimate: initial,
        }
    }
}

/// `x̂^p = f(x̂)`, then `x̂^p + K (y − g_i(x̂^p))`.
pub fn nlse_update<M: NonlinearModel + ?Sized>(
    est: &mut NonlinearLocalEstimator,
    model: &M,
    y: &DVector<f64>,
    k: &DMatrix<f64>,
) -> Result<()> {
    let prediction = model.f(&est.estimate);
    let expected = model.g(est.sensor, &prediction);
    if expected.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "measurement map of sensor {} at the prediction",
            est.sensor + 1
        )));
    }
    est.estimate = &prediction + k * (y - expected);
    est.prediction = prediction;
    Ok(())
}

/// Error after one step written through the Taylor remainders:
/// `e = G A_J e_prev + G (Δ_f + B w) − K (Δ_g + B_i v)` with
/// `Δ_f = f(x_prev) − f(x̂_prev) − A_J e_prev` and
/// `Δ_g = g(x) − g(x̂^p) − C_J (x − x̂^p)`.
#[allow(clippy::too_many_arguments)]
pub fn taylor_error_form<M: NonlinearModel + ?Sized>(
    model: &M,
    sensor: usize,
    t: usize,
    x_prev: &DVector<f64>,
    x_hat_prev: &DVector<f64>,
    x: &DVector<f64>,
    sys: &LinearizedSystem,
    k: &DMatrix<f64>,
    w: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let e_prev = x_prev - x_hat_prev;
    let prediction = model.f(x_hat_prev);
    let delta_f = model.f(x_prev) - &prediction - &sys.a_j * &e_prev;
    let delta_g = model.g(sensor, x) - model.g(sensor, &prediction) - &sys.c_j * (x - &prediction);
    let g = sys.g(k);
    &g * &sys.a_j * &e_prev + &g * (delta_f + model.b(t - 1) * w) - k * (delta_g + model.b_sensor(sensor, t) * v)
}
