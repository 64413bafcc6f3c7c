//! Fusion of local estimates: the stacked local-error system, the weight
//! design SDP, and the weighted combination `x̂ = Σ Ω_i x̂_i` with `Σ Ω_i = I`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{self, AffineExpr, BlockLmi, Domain, MatrixVar, SdpProblem, SolveStatus, Structure};

/// How process noise enters the stacked system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLayout {
    /// `ξ = col{w, v_1, …, v_L}`: one shared `w` channel.
    LinearShared,
    /// `ξ = col{w, v_1, w, v_2, …}`: block-diagonal, `w` repeated per sensor.
    NonlinearPerSensor,
}

/// One sensor's contribution: `G_i A_i` and the two noise maps.
#[derive(Debug, Clone)]
pub struct LocalErrorMap {
    /// `G_i A` (or `G_i A_J`).
    pub ga: DMatrix<f64>,
    /// `G_i B`.
    pub gb: DMatrix<f64>,
    /// `−K_i B_i`.
    pub kb: DMatrix<f64>,
}

impl LocalErrorMap {
    /// Builds the map from a gain and the matrices it was designed for.
    pub fn new(
        k: &DMatrix<f64>,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        b_sensor: &DMatrix<f64>,
    ) -> Self {
        let g = DMatrix::identity(a.nrows(), a.nrows()) - k * c;
        Self {
            ga: &g * a,
            gb: &g * b,
            kb: -(k * b_sensor),
        }
    }
}

/// `e_F(t) = A_F e_F(t−1) + B_F ξ(t−1)` for the stacked local errors.
#[derive(Debug, Clone)]
pub struct StackedErrorSystem {
    pub a_f: DMatrix<f64>,
    pub b_f: DMatrix<f64>,
    pub layout: NoiseLayout,
    pub state_dim: usize,
    pub sensors: usize,
}

impl StackedErrorSystem {
    pub fn noise_dim(&self) -> usize {
        self.b_f.ncols()
    }

    /// Stacked noise vector for the given process and per-sensor noises.
    pub fn stack_noise(&self, w: &DVector<f64>, v: &[DVector<f64>]) -> DVector<f64> {
        let mut parts: Vec<f64> = Vec::with_capacity(self.noise_dim());
        match self.layout {
            NoiseLayout::LinearShared => {
                parts.extend(w.iter());
                for vi in v {
                    parts.extend(vi.iter());
                }
            }
            NoiseLayout::NonlinearPerSensor => {
                for vi in v {
                    parts.extend(w.iter());
                    parts.extend(vi.iter());
                }
            }
        }
        DVector::from_vec(parts)
    }

    /// `Ω` as the row block `[Ω_1, …, Ω_L]`.
    pub fn omega_row(&self, omegas: &[DMatrix<f64>]) -> DMatrix<f64> {
        let refs: Vec<&DMatrix<f64>> = omegas.iter().collect();
        lmi::hstack(&refs)
    }
}

/// Assembles the stacked system from per-sensor maps.
pub fn build_stacked(maps: &[LocalErrorMap], layout: NoiseLayout) -> Result<StackedErrorSystem> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Shape("fusion needs at least one sensor".into()))?;
    let n = first.ga.nrows();
    let n_w = first.gb.ncols();
    if maps.iter().any(|m| m.ga.shape() != (n, n) || m.gb.shape() != (n, n_w) || m.kb.nrows() != n) {
        return Err(Error::Shape("inconsistent local error maps".into()));
    }
    let l = maps.len();
    let gas: Vec<DMatrix<f64>> = maps.iter().map(|m| m.ga.clone()).collect();
    let a_f = lmi::block_diag(&gas);
    let b_f = match layout {
        NoiseLayout::LinearShared => {
            let n_v: usize = maps.iter().map(|m| m.kb.ncols()).sum();
            let mut out = DMatrix::zeros(n * l, n_w + n_v);
            let mut col = n_w;
            for (i, m) in maps.iter().enumerate() {
                out.view_mut((i * n, 0), (n, n_w)).copy_from(&m.gb);
                out.view_mut((i * n, col), (n, m.kb.ncols())).copy_from(&m.kb);
                col += m.kb.ncols();
            }
            out
        }
        NoiseLayout::NonlinearPerSensor => {
            let blocks: Vec<DMatrix<f64>> = maps.iter().map(|m| lmi::hstack(&[&m.gb, &m.kb])).collect();
            lmi::block_diag(&blocks)
        }
    };
    Ok(StackedErrorSystem {
        a_f,
        b_f,
        layout,
        state_dim: n,
        sensors: l,
    })
}

/// Solved fusion weights with the certificate `(P, Θ, Υ)`.
///
/// Under the nonlinear layout these play the roles of `(Π, M, Ψ)`.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    /// `Ω_1 … Ω_L`; the last is `I − Σ_{i<L} Ω_i`.
    pub omegas: Vec<DMatrix<f64>>,
    pub p: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    /// `Tr P + Tr Θ`.
    pub objective: f64,
    pub status: SolveStatus,
    pub certified: bool,
}

impl FusionWeights {
    /// Equal weights `I/L`, used when the design fails.
    pub fn equal(n: usize, l: usize) -> Self {
        let w = DMatrix::identity(n, n) / l as f64;
        let mut omegas = vec![w; l];
        complete_last(&mut omegas, n);
        Self {
            omegas,
            p: DMatrix::zeros(n * l, n * l),
            theta: DMatrix::zeros(0, 0),
            upsilon: DMatrix::zeros(n * l, 0),
            objective: f64::NAN,
            status: SolveStatus::NumericalFailure,
            certified: false,
        }
    }

    /// `[[−I, ΩA_F, ΩB_F], [∗, −P, −Υ], [∗, ∗, −Θ]]` at this solution.
    pub fn bordered(&self, sys: &StackedErrorSystem) -> DMatrix<f64> {
        fusion_bordered(sys, &self.omegas, &self.p, &self.upsilon, &self.theta)
    }
}

fn complete_last(omegas: &mut [DMatrix<f64>], n: usize) {
    let l = omegas.len();
    let mut last = DMatrix::identity(n, n);
    for o in &omegas[..l - 1] {
        last -= o;
    }
    omegas[l - 1] = last;
}

/// Evaluates the fusion bordered matrix at arbitrary values.
pub fn fusion_bordered(
    sys: &StackedErrorSystem,
    omegas: &[DMatrix<f64>],
    p: &DMatrix<f64>,
    upsilon: &DMatrix<f64>,
    theta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = sys.state_dim;
    let nl = sys.a_f.nrows();
    let m = sys.noise_dim();
    let omega = sys.omega_row(omegas);
    let top = lmi::hstack(&[
        &-DMatrix::<f64>::identity(n, n),
        &(&omega * &sys.a_f),
        &(&omega * &sys.b_f),
    ]);
    let mid = lmi::hstack(&[&DMatrix::zeros(nl, n), &-p, &-upsilon]);
    let bottom = lmi::hstack(&[&DMatrix::zeros(m, n), &-upsilon.transpose(), &-theta]);
    let mut out = lmi::vstack(&[&top, &mid, &bottom]);
    // mirror the upper triangle
    for r in 0..out.nrows() {
        for c in 0..r {
            out[(r, c)] = out[(c, r)];
        }
    }
    out
}

struct FusionProblem {
    problem: SdpProblem,
    omegas: Vec<MatrixVar>,
    p: MatrixVar,
    theta: MatrixVar,
    upsilon: MatrixVar,
}

/// `E_iᵀ X`: rows of block `i` of an `nL`-row matrix.
fn block_rows(x: &DMatrix<f64>, i: usize, n: usize) -> DMatrix<f64> {
    x.rows(i * n, n).into_owned()
}

/// Builds the weight SDP. With `fixed = Some(Ω)` the weights are constants
/// and only the certificate is optimized.
fn fusion_problem(sys: &StackedErrorSystem, fixed: Option<&[DMatrix<f64>]>) -> Result<FusionProblem> {
    let n = sys.state_dim;
    let l = sys.sensors;
    let nl = n * l;
    let m = sys.noise_dim();
    if sys.a_f.shape() != (nl, nl) || sys.b_f.nrows() != nl {
        return Err(Error::Shape("stacked system dimensions".into()));
    }
    let mut problem = SdpProblem::new();
    let omegas: Vec<MatrixVar> = if fixed.is_some() {
        Vec::new()
    } else {
        (0..l - 1)
            .map(|i| problem.add_var(&format!("Omega{}", i + 1), n, n, Structure::Rectangular, Domain::Free))
            .collect()
    };
    let p = problem.add_var("P", nl, nl, Structure::Symmetric, Domain::PositiveDefinite);
    let theta = problem.add_var("Theta", m, m, Structure::Symmetric, Domain::PositiveDefinite);
    let upsilon = problem.add_var("Upsilon", nl, m, Structure::Rectangular, Domain::Free);

    let eye = DMatrix::<f64>::identity(n, n);
    let (mut oa, mut ob) = match fixed {
        Some(w) => {
            let row = sys.omega_row(w);
            (
                AffineExpr::constant(&row * &sys.a_f),
                AffineExpr::constant(&row * &sys.b_f),
            )
        }
        None => (
            AffineExpr::constant(block_rows(&sys.a_f, l - 1, n)),
            AffineExpr::constant(block_rows(&sys.b_f, l - 1, n)),
        ),
    };
    for (i, om) in omegas.iter().enumerate() {
        let da = block_rows(&sys.a_f, i, n) - block_rows(&sys.a_f, l - 1, n);
        let db = block_rows(&sys.b_f, i, n) - block_rows(&sys.b_f, l - 1, n);
        oa = oa.plus(eye.clone(), om, da);
        ob = ob.plus(eye.clone(), om, db);
    }

    let mut bordered = BlockLmi::strict(&[n, nl, m]);
    bordered
        .set(0, 0, AffineExpr::constant(-eye))
        .set(0, 1, oa)
        .set(0, 2, ob)
        .set(1, 1, AffineExpr::var(&p, -1.0))
        .set(1, 2, AffineExpr::var(&upsilon, -1.0))
        .set(2, 2, AffineExpr::var(&theta, -1.0));
    problem.add_lmi(bordered)?;
    problem.minimize_trace(&p, 1.0);
    problem.minimize_trace(&theta, 1.0);
    Ok(FusionProblem {
        problem,
        omegas,
        p,
        theta,
        upsilon,
    })
}

fn solve_problem(sys: &StackedErrorSystem, fixed: Option<&[DMatrix<f64>]>) -> Result<FusionWeights> {
    let fp = fusion_problem(sys, fixed)?;
    let sol = fp.problem.solve();
    let certified = sol.is_optimal() && fp.problem.verify_default(&sol).passed;
    let n = sys.state_dim;
    let omegas = match fixed {
        Some(w) => w.to_vec(),
        None => {
            let mut o: Vec<DMatrix<f64>> = fp.omegas.iter().map(|v| sol.value(v).clone()).collect();
            o.push(DMatrix::zeros(n, n));
            complete_last(&mut o, n);
            o
        }
    };
    Ok(FusionWeights {
        omegas,
        p: sol.value(&fp.p).clone(),
        theta: sol.value(&fp.theta).clone(),
        upsilon: sol.value(&fp.upsilon).clone(),
        objective: sol.objective_value,
        status: sol.status,
        certified,
    })
}

/// `min Tr P + Tr Θ` over `Ω` (with `Ω_L` eliminated), `P ≻ 0`, `Θ ≻ 0`, `Υ`.
pub fn solve_fusion_weights(sys: &StackedErrorSystem) -> Result<FusionWeights> {
    solve_problem(sys, None)
}

/// Same SDP with the weights frozen; used as a dominance oracle.
pub fn solve_fixed_weights(sys: &StackedErrorSystem, omegas: &[DMatrix<f64>]) -> Result<FusionWeights> {
    if omegas.len() != sys.sensors {
        return Err(Error::Shape(format!(
            "{} weights for {} sensors",
            omegas.len(),
            sys.sensors
        )));
    }
    solve_problem(sys, Some(omegas))
}

/// Weights selecting sensor `i` alone.
pub fn selection(n: usize, l: usize, i: usize) -> Vec<DMatrix<f64>> {
    (0..l)
        .map(|j| {
            if j == i {
                DMatrix::identity(n, n)
            } else {
                DMatrix::zeros(n, n)
            }
        })
        .collect()
}

/// `Σ Ω_i x̂_i`.
pub fn fuse(omegas: &[DMatrix<f64>], estimates: &[DVector<f64>]) -> Result<DVector<f64>> {
    if omegas.len() != estimates.len() || omegas.is_empty() {
        return Err(Error::Shape(format!(
            "{} weights for {} estimates",
            omegas.len(),
            estimates.len()
        )));
    }
    let mut out = DVector::zeros(estimates[0].len());
    for (o, x) in omegas.iter().zip(estimates) {
        out += o * x;
    }
    Ok(out)
}

/// One step of the stacked error recursion and the fused error `Ω e_F`.
pub fn fusion_error_oracle(
    e_f_prev: &DVector<f64>,
    sys: &StackedErrorSystem,
    omegas: &[DMatrix<f64>],
    xi: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let e_f = &sys.a_f * e_f_prev + &sys.b_f * xi;
    let e0 = sys.omega_row(omegas) * &e_f;
    (e_f, e0)
}

/// `ξ̄ᵀ [[P, Υ], [Υᵀ, Θ]] ξ̄` with `ξ̄ = col{e_F(t−1), ξ(t−1)}`.
pub fn fused_bound(weights: &FusionWeights, e_f_prev: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    let pe = (e_f_prev.transpose() * &weights.p * e_f_prev)[0];
    let cross = (e_f_prev.transpose() * &weights.upsilon * xi)[0];
    let tq = (xi.transpose() * &weights.theta * xi)[0];
    pe + 2.0 * cross + tq
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn scalar_map(ga: f64, gb: f64, kb: f64) -> LocalErrorMap {
        LocalErrorMap {
            ga: scalar(ga),
            gb: scalar(gb),
            kb: scalar(kb),
        }
    }

    #[test]
    fn linear_layout_padding() {
        let sys = build_stacked(
            &[scalar_map(0.5, 0.1, -0.2), scalar_map(0.4, 0.3, -0.6)],
            NoiseLayout::LinearShared,
        )
        .unwrap();
        let expected = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.0, 0.3, 0.0, -0.6]);
        assert_eq!(sys.b_f, expected);
        assert_eq!(sys.a_f, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.4]));
    }

    #[test]
    fn nonlinear_layout_is_block_diagonal() {
        let sys = build_stacked(
            &[scalar_map(0.5, 0.1, -0.2), scalar_map(0.4, 0.3, -0.6)],
            NoiseLayout::NonlinearPerSensor,
        )
        .unwrap();
        assert_eq!(sys.noise_dim(), 4);
        let expected = DMatrix::from_row_slice(2, 4, &[0.1, -0.2, 0.0, 0.0, 0.0, 0.0, 0.3, -0.6]);
        assert_eq!(sys.b_f, expected);
    }

    #[test]
    fn single_sensor_reduces_to_identity_weight() {
        let sys = build_stacked(&[scalar_map(0.5, 0.1, -0.2)], NoiseLayout::LinearShared).unwrap();
        assert_eq!(sys.b_f, DMatrix::from_row_slice(1, 2, &[0.1, -0.2]));
        let w = solve_fusion_weights(&sys).unwrap();
        assert!(w.certified);
        assert_eq!(w.omegas, vec![scalar(1.0)]);
    }

    #[test]
    fn weights_sum_to_identity_and_beat_selection() {
        let sys = build_stacked(
            &[scalar_map(0.5, 0.1, -0.2), scalar_map(0.4, 0.3, -0.6)],
            NoiseLayout::LinearShared,
        )
        .unwrap();
        let w = solve_fusion_weights(&sys).unwrap();
        assert!(w.certified);
        assert_eq!(&w.omegas[0] + &w.omegas[1], scalar(1.0));
        for i in 0..2 {
            let sel = solve_fixed_weights(&sys, &selection(1, 2, i)).unwrap();
            assert!(sel.certified);
            assert!(w.objective <= sel.objective * (1.0 + 1e-6));
        }
    }

    #[test]
    fn hand_fused_value() {
        let x = fuse(
            &[scalar(0.3), scalar(0.7)],
            &[DVector::from_element(1, 2.0), DVector::from_element(1, 4.0)],
        )
        .unwrap();
        assert!((x[0] - 3.4).abs() < 1e-15);
    }

    #[test]
    fn selection_oracle_returns_that_error() {
        let sys = build_stacked(
            &[scalar_map(0.5, 0.1, -0.2), scalar_map(0.4, 0.3, -0.6)],
            NoiseLayout::LinearShared,
        )
        .unwrap();
        let (e_f, e0) = fusion_error_oracle(
            &DVector::from_vec(vec![1.0, -1.0]),
            &sys,
            &selection(1, 2, 0),
            &DVector::from_vec(vec![0.2, 0.3, 0.4]),
        );
        assert_eq!(e0[0], e_f[0]);
    }
}
