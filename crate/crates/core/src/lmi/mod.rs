//! Small semidefinite programs built from bordered linear matrix inequalities.
//!
//! [`SdpProblem`] is a thin modeling layer: matrix-valued decision variables,
//! a trace objective, and block LMIs whose entries are affine in the
//! variables. Problems are compiled to a sparse dual-form SDP and solved with
//! the primal-dual interior-point method in [`ipm`].
//!
//! The free functions here ([`check_negative_definite`], [`schur_expand`])
//! are the eigenvalue-level oracles the estimators and the tests use to
//! re-verify certificates.

mod ipm;
mod problem;

pub use problem::{
    AffineExpr, BlockLmi, Domain, MatrixVar, SdpProblem, SdpSolution, SolveStatus, SolverOptions,
    Structure, VarId, Verification,
};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry allowed before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Absolute eigenvalue slack used when re-verifying solver output.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// `‖M − Mᵀ‖_F / ‖M‖_F` (zero for the zero matrix).
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetric_part(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sorted_eigenvalues(m)
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sorted_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    max_eigenvalue(&gram).max(0.0).sqrt()
}

/// True iff `λ_max(m) ≤ −margin`.
pub fn check_negative_definite(m: &DMatrix<f64>, margin: f64) -> Result<bool> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entry".into()));
    }
    let asym = relative_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(max_eigenvalue(m) <= -margin)
}

/// Condenses a bordered matrix `[[−I, B], [Bᵀ, D]]` into `D + BᵀB`.
///
/// `lead` is the size of the leading `−I` block. The bordered matrix is
/// negative definite iff the condensed one is.
pub fn schur_expand(bordered: &DMatrix<f64>, lead: usize) -> Result<DMatrix<f64>> {
    let n = bordered.nrows();
    if bordered.ncols() != n || lead > n {
        return Err(Error::Shape(format!(
            "bordered matrix {}x{} with lead block {lead}",
            n,
            bordered.ncols()
        )));
    }
    let head = bordered.view((0, 0), (lead, lead));
    let minus_identity = -DMatrix::<f64>::identity(lead, lead);
    let scale = bordered.amax().max(1.0);
    if (head - &minus_identity).amax() > 1e-12 * scale {
        return Err(Error::Shape("leading block is not -I".into()));
    }
    let rest = n - lead;
    let coupling = bordered.view((0, lead), (lead, rest)).into_owned();
    let tail = bordered.view((lead, lead), (rest, rest)).into_owned();
    Ok(tail + coupling.transpose() * coupling)
}

/// Block-diagonal assembly of square or rectangular blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Horizontal concatenation; all blocks must share a row count.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation; all blocks must share a column count.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}
