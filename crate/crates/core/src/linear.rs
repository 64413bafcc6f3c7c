//! Local estimators for linear time-varying models: per-step gain design by
//! trace minimization over a bordered LMI, and the predict/correct recursion
//! `x̂(t) = A x̂(t−1) + K[y(t) − C A x̂(t−1)]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lmi::{
    self, AffineExpr, BlockLmi, Domain, SdpProblem, SdpSolution, SolveStatus, Structure, VarId,
};
use crate::models::LinearTimeVaryingModel;

/// Upper bound imposed on `ϑ` in place of the open constraint `ϑ < 1`.
pub const VARTHETA_MAX: f64 = 1.0 - 1e-6;

/// Matrices entering one local gain design.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSystem {
    /// `A(t−1)`.
    pub a: DMatrix<f64>,
    /// `B(t−1)`.
    pub b: DMatrix<f64>,
    /// `C_i(t)`.
    pub c: DMatrix<f64>,
    /// `B_i(t)`.
    pub b_sensor: DMatrix<f64>,
}

impl LocalSystem {
    pub fn from_model<M: LinearTimeVaryingModel + ?Sized>(model: &M, i: usize, t: usize) -> Self {
        assert!(t >= 1, "gain design starts at t = 1");
        Self {
            a: model.a(t - 1),
            b: model.b(t - 1),
            c: model.c(i, t),
            b_sensor: model.b_sensor(i, t),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `n_w + n_v`.
    pub fn noise_dim(&self) -> usize {
        self.b.ncols() + self.b_sensor.ncols()
    }

    fn check(&self) -> Result<()> {
        let n = self.a.nrows();
        let q = self.c.nrows();
        let ok = self.a.ncols() == n
            && self.b.nrows() == n
            && self.c.ncols() == n
            && self.b_sensor.nrows() == q;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "A {:?}, B {:?}, C {:?}, B_i {:?}",
                self.a.shape(),
                self.b.shape(),
                self.c.shape(),
                self.b_sensor.shape()
            )))
        }
    }

    /// `I − K C`.
    pub fn g(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.state_dim(), self.state_dim()) - k * &self.c
    }

    /// `[G B, −K B_i]`.
    pub fn b_f(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        lmi::hstack(&[&(self.g(k) * &self.b), &(-(k * &self.b_sensor))])
    }

    /// `‖G A‖₂`.
    pub fn contraction(&self, k: &DMatrix<f64>) -> f64 {
        lmi::spectral_norm(&(self.g(k) * &self.a))
    }
}

/// Solved gain with its certificate.
#[derive(Debug, Clone)]
pub struct LocalGainResult {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub vartheta: f64,
    /// `Tr Θ`.
    pub objective: f64,
    pub status: SolveStatus,
    /// Status is optimal and the constraints re-verify by eigendecomposition.
    pub certified: bool,
}

impl LocalGainResult {
    /// The bordered matrix `[[−I, GA, B_f], [∗, −P, 0], [∗, ∗, −Θ]]` at this solution.
    pub fn bordered(&self, sys: &LocalSystem) -> DMatrix<f64> {
        local_bordered(sys, &self.k, &self.p, &self.theta)
    }
}

/// Evaluates the local bordered matrix at arbitrary `(K, P, Θ)`.
pub fn local_bordered(
    sys: &LocalSystem,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    theta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = sys.state_dim();
    let m = sys.noise_dim();
    let ga = sys.g(k) * &sys.a;
    let bf = sys.b_f(k);
    let mut out = DMatrix::zeros(2 * n + m, 2 * n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&(-DMatrix::<f64>::identity(n, n)));
    out.view_mut((0, n), (n, n)).copy_from(&ga);
    out.view_mut((n, 0), (n, n)).copy_from(&ga.transpose());
    out.view_mut((0, 2 * n), (n, m)).copy_from(&bf);
    out.view_mut((2 * n, 0), (m, n)).copy_from(&bf.transpose());
    out.view_mut((n, n), (n, n)).copy_from(&(-p));
    out.view_mut((2 * n, 2 * n), (m, m)).copy_from(&(-theta));
    out
}

/// The gain-design SDP and its variable handles.
pub struct LocalGainProblem {
    pub problem: SdpProblem,
    pub k: VarId,
    pub p: VarId,
    pub theta: VarId,
    pub vartheta: VarId,
}

/// `min Tr Θ` subject to the bordered LMI, `P ≺ ϑI` and `ϑ ≤ 1 − 1e−6`.
pub fn local_gain_problem(sys: &LocalSystem) -> Result<LocalGainProblem> {
    sys.check()?;
    let n = sys.state_dim();
    let q = sys.c.nrows();
    let m = sys.noise_dim();
    let n_w = sys.b.ncols();

    let mut problem = SdpProblem::new();
    let k = problem.add_var("K", n, q, Structure::Rectangular, Domain::Free);
    let p = problem.add_var("P", n, n, Structure::Symmetric, Domain::PositiveDefinite);
    let theta = problem.add_var("Theta", m, m, Structure::Symmetric, Domain::PositiveDefinite);
    let vartheta = problem.add_var("vartheta", 1, 1, Structure::Scalar, Domain::Free);

    let eye = DMatrix::<f64>::identity(n, n);
    let mut b_pad = DMatrix::zeros(n, m);
    b_pad.view_mut((0, 0), (n, n_w)).copy_from(&sys.b);
    let ca = &sys.c * &sys.a;
    let noise_map = lmi::hstack(&[&(&sys.c * &sys.b), &sys.b_sensor]);

    let mut bordered = BlockLmi::strict(&[n, n, m]);
    bordered
        .set(0, 0, AffineExpr::constant(-eye.clone()))
        .set(0, 1, AffineExpr::constant(sys.a.clone()).plus(-eye.clone(), &k, ca))
        .set(0, 2, AffineExpr::constant(b_pad).plus(-eye.clone(), &k, noise_map))
        .set(1, 1, AffineExpr::var(&p, -1.0))
        .set(2, 2, AffineExpr::var(&theta, -1.0));
    problem.add_lmi(bordered)?;

    let mut bound = BlockLmi::strict(&[n]);
    bound.set(0, 0, AffineExpr::var(&p, 1.0).plus_scalar_identity(&vartheta, -1.0));
    problem.add_lmi(bound)?;

    let mut cap = BlockLmi::nonstrict(&[1]);
    cap.set(
        0,
        0,
        AffineExpr::var(&vartheta, 1.0).add_constant(&DMatrix::from_element(1, 1, -VARTHETA_MAX)),
    );
    problem.add_lmi(cap)?;

    problem.minimize_trace(&theta, 1.0);
    Ok(LocalGainProblem {
        k: k.id,
        p: p.id,
        theta: theta.id,
        vartheta: vartheta.id,
        problem,
    })
}

fn unpack(lp: &LocalGainProblem, sol: &SdpSolution) -> LocalGainResult {
    let certified = sol.is_optimal() && lp.problem.verify_default(sol).passed;
    LocalGainResult {
        k: sol.values[lp.k.index()].clone(),
        p: sol.values[lp.p.index()].clone(),
        theta: sol.values[lp.theta.index()].clone(),
        vartheta: sol.values[lp.vartheta.index()][(0, 0)],
        objective: sol.objective_value,
        status: sol.status,
        certified,
    }
}

/// Designs the local gain for explicit system matrices.
pub fn design_local_gain(sys: &LocalSystem) -> Result<LocalGainResult> {
    let lp = local_gain_problem(sys)?;
    let sol = lp.problem.solve();
    Ok(unpack(&lp, &sol))
}

/// Designs `K_i(t)` from `A(t−1), B(t−1), C_i(t), B_i(t)`.
pub fn solve_local_gain<M: LinearTimeVaryingModel + ?Sized>(
    model: &M,
    i: usize,
    t: usize,
) -> Result<LocalGainResult> {
    design_local_gain(&LocalSystem::from_model(model, i, t))
}

/// The gain used when a design is not certified: the previous gain, or zero.
pub fn fallback_gain(previous: Option<&DMatrix<f64>>, n: usize, q: usize) -> DMatrix<f64> {
    previous.cloned().unwrap_or_else(|| DMatrix::zeros(n, q))
}

/// Per-sensor estimator state with its design history.
#[derive(Debug, Clone)]
pub struct LinearLocalEstimator {
    pub sensor: usize,
    pub estimate: DVector<f64>,
    pub gains: Vec<DMatrix<f64>>,
    pub objectives: Vec<f64>,
}

impl LinearLocalEstimator {
    pub fn new(sensor: usize, initial: DVector<f64>) -> Self {
        Self {
            sensor,
            estimate: initial,
            gains: Vec::new(),
            objectives: Vec::new(),
        }
    }
}

/// `A x̂ + K (y − C A x̂)`.
pub fn lse_predict_correct(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    x_prev: &DVector<f64>,
    y: &DVector<f64>,
    k: &DMatrix<f64>,
) -> DVector<f64> {
    let prediction = a * x_prev;
    let innovation = y - c * &prediction;
    prediction + k * innovation
}

/// Advances the estimator to step `t` with measurement `y_i(t)` and gain `K`.
pub fn lse_update<M: LinearTimeVaryingModel + ?Sized>(
    est: &mut LinearLocalEstimator,
    model: &M,
    t: usize,
    y: &DVector<f64>,
    k: &DMatrix<f64>,
) {
    est.estimate = lse_predict_correct(&model.a(t - 1), &model.c(est.sensor, t), &est.estimate, y, k);
    est.gains.push(k.clone());
}

/// `G_K A e_prev + B_f ξ` with `ξ = col{w(t−1), v_i(t)}`.
pub fn error_recursion_oracle(
    e_prev: &DVector<f64>,
    sys: &LocalSystem,
    k: &DMatrix<f64>,
    xi: &DVector<f64>,
) -> DVector<f64> {
    sys.g(k) * &sys.a * e_prev + sys.b_f(k) * xi
}

/// `eᵀe − e_prevᵀ P e_prev − ξᵀ Θ ξ`; negative whenever the certificate holds.
pub fn performance_index(
    e: &DVector<f64>,
    e_prev: &DVector<f64>,
    xi: &DVector<f64>,
    gain: &LocalGainResult,
) -> f64 {
    e.dot(e) - (e_prev.transpose() * &gain.p * e_prev)[0] - (xi.transpose() * &gain.theta * xi)[0]
}
