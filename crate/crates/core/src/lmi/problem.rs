use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use super::ipm::{self, IpmStatus, SparseBlock, SparseSdp};
use super::{max_eigenvalue, min_eigenvalue, FEASIBILITY_TOL};
use crate::error::{Error, Result};

/// Handle to a decision variable of one [`SdpProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Symmetric,
    Rectangular,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Free,
    PositiveDefinite,
}

/// A matrix-valued decision variable.
#[derive(Debug, Clone)]
pub struct MatrixVar {
    pub id: VarId,
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub structure: Structure,
    pub domain: Domain,
    offset: usize,
}

impl MatrixVar {
    /// Number of scalar unknowns parameterizing the variable.
    pub fn scalar_count(&self) -> usize {
        match self.structure {
            Structure::Symmetric => self.rows * (self.rows + 1) / 2,
            Structure::Rectangular => self.rows * self.cols,
            Structure::Scalar => 1,
        }
    }

    /// Entries `(row, col, value)` of the k-th basis matrix.
    ///
    /// Symmetric variables use `E_rc + E_cr` for `r < c`, so every scalar is
    /// the matrix entry itself.
    fn basis(&self, k: usize) -> Vec<(usize, usize, f64)> {
        match self.structure {
            Structure::Scalar => vec![(0, 0, 1.0)],
            Structure::Rectangular => vec![(k / self.cols, k % self.cols, 1.0)],
            Structure::Symmetric => {
                let (r, c) = sym_index(self.rows, k);
                if r == c {
                    vec![(r, r, 1.0)]
                } else {
                    vec![(r, c, 1.0), (c, r, 1.0)]
                }
            }
        }
    }

    fn assemble(&self, scalars: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (k, &v) in scalars.iter().enumerate() {
            for (r, c, a) in self.basis(k) {
                m[(r, c)] += a * v;
            }
        }
        m
    }
}

/// Row-major upper-triangle enumeration: k ↦ (r, c) with r ≤ c.
fn sym_index(n: usize, mut k: usize) -> (usize, usize) {
    for r in 0..n {
        let len = n - r;
        if k < len {
            return (r, r + k);
        }
        k -= len;
    }
    panic!("symmetric basis index out of range");
}

#[derive(Debug, Clone)]
struct Term {
    left: DMatrix<f64>,
    var: VarId,
    var_shape: (usize, usize),
    right: DMatrix<f64>,
    transpose: bool,
}

/// `constant + Σ left_k · V_k · right_k` where `V_k` may also appear transposed.
#[derive(Debug, Clone)]
pub struct AffineExpr {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    terms: Vec<Term>,
}

impl AffineExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            terms: Vec::new(),
        }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    /// `scale · V`.
    pub fn var(v: &MatrixVar, scale: f64) -> Self {
        Self::zeros(v.rows, v.cols).plus(
            DMatrix::identity(v.rows, v.rows) * scale,
            v,
            DMatrix::identity(v.cols, v.cols),
        )
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn add_constant(mut self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.shape(), (self.rows, self.cols), "constant shape");
        self.constant += m;
        self
    }

    /// Adds `left · V · right`.
    pub fn plus(mut self, left: DMatrix<f64>, v: &MatrixVar, right: DMatrix<f64>) -> Self {
        assert_eq!(left.shape(), (self.rows, v.rows), "left factor shape for {}", v.name);
        assert_eq!(right.shape(), (v.cols, self.cols), "right factor shape for {}", v.name);
        self.terms.push(Term {
            left,
            var: v.id,
            var_shape: (v.rows, v.cols),
            right,
            transpose: false,
        });
        self
    }

    /// Adds `left · Vᵀ · right`.
    pub fn plus_transposed(
        mut self,
        left: DMatrix<f64>,
        v: &MatrixVar,
        right: DMatrix<f64>,
    ) -> Self {
        assert_eq!(left.shape(), (self.rows, v.cols), "left factor shape for {}ᵀ", v.name);
        assert_eq!(right.shape(), (v.rows, self.cols), "right factor shape for {}ᵀ", v.name);
        self.terms.push(Term {
            left,
            var: v.id,
            var_shape: (v.rows, v.cols),
            right,
            transpose: true,
        });
        self
    }

    /// Adds `scale · s · I` for a scalar variable `s` (square expressions only).
    pub fn plus_scalar_identity(mut self, s: &MatrixVar, scale: f64) -> Self {
        assert_eq!(self.rows, self.cols, "scalar identity needs a square block");
        assert!(s.rows == 1 && s.cols == 1, "{} is not a scalar", s.name);
        for k in 0..self.rows {
            let mut left = DMatrix::zeros(self.rows, 1);
            left[k] = scale;
            let mut right = DMatrix::zeros(1, self.cols);
            right[k] = 1.0;
            self = self.plus(left, s, right);
        }
        self
    }

    fn transposed(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    left: t.right.transpose(),
                    var: t.var,
                    var_shape: t.var_shape,
                    right: t.left.transpose(),
                    transpose: !t.transpose,
                })
                .collect(),
        }
    }

    /// Evaluates the expression at concrete variable values.
    pub fn evaluate(&self, values: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = &values[t.var.0];
            if t.transpose {
                out += &t.left * v.transpose() * &t.right;
            } else {
                out += &t.left * v * &t.right;
            }
        }
        out
    }
}

/// Symmetric block matrix whose upper blocks are affine expressions; lower
/// blocks mirror the upper ones. Required to be `≺ 0` (strict) or `⪯ 0`.
#[derive(Debug, Clone)]
pub struct BlockLmi {
    sizes: Vec<usize>,
    blocks: BTreeMap<(usize, usize), AffineExpr>,
    strict: bool,
}

impl BlockLmi {
    /// Strict LMI (`≺ 0`), realized with the problem's margin.
    pub fn strict(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            blocks: BTreeMap::new(),
            strict: true,
        }
    }

    /// Non-strict LMI (`⪯ 0`).
    pub fn nonstrict(sizes: &[usize]) -> Self {
        Self {
            strict: false,
            ..Self::strict(sizes)
        }
    }

    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn offset(&self, block: usize) -> usize {
        self.sizes[..block].iter().sum()
    }

    /// Sets block `(i, j)`; `(j, i)` becomes its transpose. Diagonal blocks
    /// are used through their symmetric part.
    pub fn set(&mut self, i: usize, j: usize, expr: AffineExpr) -> &mut Self {
        let (i, j, expr) = if i <= j {
            (i, j, expr)
        } else {
            (j, i, expr.transposed())
        };
        assert_eq!(
            expr.shape(),
            (self.sizes[i], self.sizes[j]),
            "block ({i},{j}) shape"
        );
        self.blocks.insert((i, j), expr);
        self
    }

    /// Full symmetric matrix at the given variable values.
    pub fn evaluate(&self, values: &[DMatrix<f64>]) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (&(i, j), expr) in &self.blocks {
            let (ri, cj) = (self.offset(i), self.offset(j));
            let v = expr.evaluate(values);
            if i == j {
                let s = (&v + v.transpose()) * 0.5;
                out.view_mut((ri, cj), s.shape()).copy_from(&s);
            } else {
                out.view_mut((ri, cj), v.shape()).copy_from(&v);
                out.view_mut((cj, ri), (v.ncols(), v.nrows()))
                    .copy_from(&v.transpose());
            }
        }
        out
    }

    fn constant_part(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (&(i, j), expr) in &self.blocks {
            let (ri, cj) = (self.offset(i), self.offset(j));
            let v = &expr.constant;
            if i == j {
                let s = (v + v.transpose()) * 0.5;
                out.view_mut((ri, cj), s.shape()).copy_from(&s);
            } else {
                out.view_mut((ri, cj), v.shape()).copy_from(v);
                out.view_mut((cj, ri), (v.ncols(), v.nrows()))
                    .copy_from(&v.transpose());
            }
        }
        out
    }
}

/// Interior-point settings.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative duality gap at termination.
    pub gap_tol: f64,
    /// Relative primal/dual residual at termination.
    pub feas_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gap_tol: 1e-9,
            feas_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// The objective is unbounded below over the feasible set.
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// One matrix per declared variable, indexed by [`VarId::index`].
    pub values: Vec<DMatrix<f64>>,
    pub objective_value: f64,
    /// Strictness margin the problem was solved with.
    pub margin: f64,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn value(&self, v: &MatrixVar) -> &DMatrix<f64> {
        &self.values[v.id.0]
    }

    pub fn scalar(&self, v: &MatrixVar) -> f64 {
        self.values[v.id.0][(0, 0)]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Eigenvalue re-verification of a solution.
#[derive(Debug, Clone)]
pub struct Verification {
    /// `λ_max` of each LMI in declaration order.
    pub lmi_max_eigenvalues: Vec<f64>,
    /// `λ_min` of each positive-definite variable, in declaration order.
    pub pd_min_eigenvalues: Vec<f64>,
    pub passed: bool,
}

/// A linear trace objective over matrix variables subject to block LMIs.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    vars: Vec<MatrixVar>,
    objective: Vec<(VarId, f64)>,
    lmis: Vec<BlockLmi>,
    margin: Option<f64>,
    options: SolverOptions,
    scalar_count: usize,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        structure: Structure,
        domain: Domain,
    ) -> MatrixVar {
        assert!(rows > 0 && cols > 0, "variable {name} has an empty shape");
        match structure {
            Structure::Symmetric => assert_eq!(rows, cols, "symmetric variable {name} must be square"),
            Structure::Scalar => assert!(rows == 1 && cols == 1, "scalar variable {name} must be 1x1"),
            Structure::Rectangular => {}
        }
        assert!(
            domain == Domain::Free || rows == cols,
            "positive-definite variable {name} must be square"
        );
        assert!(
            domain == Domain::Free || structure != Structure::Rectangular,
            "positive-definite variable {name} must be symmetric"
        );
        let v = MatrixVar {
            id: VarId(self.vars.len()),
            name: name.to_string(),
            rows,
            cols,
            structure,
            domain,
            offset: self.scalar_count,
        };
        self.scalar_count += v.scalar_count();
        self.vars.push(v.clone());
        v
    }

    pub fn vars(&self) -> &[MatrixVar] {
        &self.vars
    }

    pub fn lmis(&self) -> &[BlockLmi] {
        &self.lmis
    }

    /// Adds `weight · Tr{V}` to the minimized objective.
    pub fn minimize_trace(&mut self, v: &MatrixVar, weight: f64) {
        assert_eq!(v.rows, v.cols, "trace of non-square {}", v.name);
        self.objective.push((v.id, weight));
    }

    pub fn add_lmi(&mut self, lmi: BlockLmi) -> Result<()> {
        for expr in lmi.blocks.values() {
            for t in &expr.terms {
                let declared = self
                    .vars
                    .get(t.var.0)
                    .ok_or_else(|| Error::Shape("LMI references an undeclared variable".into()))?;
                if (declared.rows, declared.cols) != t.var_shape {
                    return Err(Error::Shape(format!(
                        "variable {} used with a stale shape",
                        declared.name
                    )));
                }
            }
        }
        self.lmis.push(lmi);
        Ok(())
    }

    /// Overrides the strictness margin.
    pub fn set_margin(&mut self, margin: f64) {
        self.margin = Some(margin);
    }

    pub fn set_options(&mut self, options: SolverOptions) {
        self.options = options;
    }

    /// Margin used for strict inequalities: an override, or
    /// `1e-8 · (1 + max spectral norm of the constant blocks)`.
    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or_else(|| {
            let biggest = self
                .lmis
                .iter()
                .map(|l| super::spectral_norm(&l.constant_part()))
                .fold(0.0, f64::max);
            1e-8 * (1.0 + biggest)
        })
    }

    /// Objective value at concrete variable values.
    pub fn objective_at(&self, values: &[DMatrix<f64>]) -> f64 {
        self.objective
            .iter()
            .map(|(id, w)| w * values[id.0].trace())
            .sum()
    }

    /// Scalar coefficient matrices of every LMI (and PD domain block).
    fn compile(&self, margin: f64) -> SparseSdp {
        let m = self.scalar_count;
        let mut blocks = Vec::new();

        for lmi in &self.lmis {
            let n = lmi.dim();
            let mut per_var: Vec<HashMap<(usize, usize), f64>> = vec![HashMap::new(); m];
            for (&(bi, bj), expr) in &lmi.blocks {
                let (ro, co) = (lmi.offset(bi), lmi.offset(bj));
                for t in &expr.terms {
                    let var = &self.vars[t.var.0];
                    for k in 0..var.scalar_count() {
                        let contrib = term_basis_contribution(t, var, k);
                        let acc = &mut per_var[var.offset + k];
                        for c in 0..contrib.ncols() {
                            for r in 0..contrib.nrows() {
                                let a = contrib[(r, c)];
                                if a == 0.0 {
                                    continue;
                                }
                                let (gr, gc) = (ro + r, co + c);
                                if bi == bj {
                                    // symmetric part of a diagonal block
                                    let key = (gr.min(gc), gr.max(gc));
                                    let w = if gr == gc { a } else { 0.5 * a };
                                    *acc.entry(key).or_insert(0.0) += w;
                                } else {
                                    *acc.entry((gr, gc)).or_insert(0.0) += a;
                                }
                            }
                        }
                    }
                }
            }
            let mut constant = lmi.constant_part();
            if lmi.strict {
                for d in 0..n {
                    constant[(d, d)] += margin;
                }
            }
            blocks.push(SparseBlock::new(n, -constant, per_var));
        }

        // positive-definite domains: −V + εI ⪯ 0
        for v in self.vars.iter().filter(|v| v.domain == Domain::PositiveDefinite) {
            let n = v.rows;
            let mut per_var: Vec<HashMap<(usize, usize), f64>> = vec![HashMap::new(); m];
            for k in 0..v.scalar_count() {
                let (r, c) = match v.structure {
                    Structure::Symmetric => sym_index(n, k),
                    _ => (0, 0),
                };
                per_var[v.offset + k].insert((r, c), -1.0);
            }
            let constant = DMatrix::identity(n, n) * margin;
            blocks.push(SparseBlock::new(n, -constant, per_var));
        }

        let mut c = DVector::zeros(m);
        for &(id, w) in &self.objective {
            let v = &self.vars[id.0];
            for k in 0..v.scalar_count() {
                for (r, cc, a) in v.basis(k) {
                    if r == cc {
                        c[v.offset + k] += w * a;
                    }
                }
            }
        }
        SparseSdp::new(c, blocks)
    }

    /// Solves the problem with the default (or overridden) margin.
    pub fn solve(&self) -> SdpSolution {
        let margin = self.margin();
        let sdp = self.compile(margin);
        let result = ipm::solve(&sdp, &self.options);
        let values: Vec<DMatrix<f64>> = self
            .vars
            .iter()
            .map(|v| v.assemble(&result.y.as_slice()[v.offset..v.offset + v.scalar_count()]))
            .collect();
        let status = match result.status {
            IpmStatus::Optimal => SolveStatus::Optimal,
            IpmStatus::Infeasible => SolveStatus::Infeasible,
            IpmStatus::Unbounded => SolveStatus::Unbounded,
            IpmStatus::Failed => SolveStatus::NumericalFailure,
        };
        let objective_value = self.objective_at(&values);
        SdpSolution {
            status,
            values,
            objective_value,
            margin,
            iterations: result.iterations,
        }
    }

    /// Re-checks every constraint by eigendecomposition with slack `tol`.
    pub fn verify(&self, sol: &SdpSolution, tol: f64) -> Verification {
        let lmi_max_eigenvalues: Vec<f64> = self
            .lmis
            .iter()
            .map(|l| max_eigenvalue(&l.evaluate(&sol.values)))
            .collect();
        let pd_min_eigenvalues: Vec<f64> = self
            .vars
            .iter()
            .filter(|v| v.domain == Domain::PositiveDefinite)
            .map(|v| min_eigenvalue(&sol.values[v.id.0]))
            .collect();
        let lmi_ok = self.lmis.iter().zip(&lmi_max_eigenvalues).all(|(l, &ev)| {
            let required = if l.strict { -sol.margin } else { 0.0 };
            ev <= required + tol
        });
        let pd_ok = pd_min_eigenvalues.iter().all(|&ev| ev >= sol.margin - tol);
        Verification {
            lmi_max_eigenvalues,
            pd_min_eigenvalues,
            passed: lmi_ok && pd_ok,
        }
    }

    /// [`Self::verify`] at the default feasibility tolerance.
    pub fn verify_default(&self, sol: &SdpSolution) -> Verification {
        self.verify(sol, FEASIBILITY_TOL)
    }
}

/// `left · E_k · right` (or with `E_kᵀ`) for the k-th basis matrix of `var`.
fn term_basis_contribution(t: &Term, var: &MatrixVar, k: usize) -> DMatrix<f64> {
    let rows = t.left.nrows();
    let cols = t.right.ncols();
    let mut out = DMatrix::zeros(rows, cols);
    for (r, c, a) in var.basis(k) {
        let (r, c) = if t.transpose { (c, r) } else { (r, c) };
        let lcol = t.left.column(r);
        let rrow = t.right.row(c);
        out.ger(a, &lcol, &rrow.transpose(), 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn schur_bound_two_by_two() {
        // min Θ s.t. [[−1, 0.5], [0.5, −Θ]] ≺ 0  ⇒  Θ > 0.25
        let mut p = SdpProblem::new();
        let th = p.add_var("theta", 1, 1, Structure::Symmetric, Domain::PositiveDefinite);
        let mut lmi = BlockLmi::strict(&[1, 1]);
        lmi.set(0, 0, AffineExpr::constant(scalar(-1.0)));
        lmi.set(0, 1, AffineExpr::constant(scalar(0.5)));
        lmi.set(1, 1, AffineExpr::var(&th, -1.0));
        p.add_lmi(lmi).unwrap();
        p.minimize_trace(&th, 1.0);
        let sol = p.solve();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let eps = sol.margin;
        assert!((sol.objective_value - (0.25 + eps)).abs() < 1e-6, "{}", sol.objective_value);
        assert!(p.verify_default(&sol).passed);
    }

    #[test]
    fn lower_bound_attained_at_zero() {
        // min t s.t. −t·I ≺ 0  ⇒  t* = ε
        let mut p = SdpProblem::new();
        let t = p.add_var("t", 1, 1, Structure::Scalar, Domain::Free);
        let mut lmi = BlockLmi::strict(&[2]);
        lmi.set(0, 0, AffineExpr::zeros(2, 2).plus_scalar_identity(&t, -1.0));
        p.add_lmi(lmi).unwrap();
        p.minimize_trace(&t, 1.0);
        let sol = p.solve();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective_value.abs() < 1e-6);
    }

    #[test]
    fn unbounded_below_is_reported() {
        // min t s.t. t·I ≺ 0
        let mut p = SdpProblem::new();
        let t = p.add_var("t", 1, 1, Structure::Scalar, Domain::Free);
        let mut lmi = BlockLmi::strict(&[2]);
        lmi.set(0, 0, AffineExpr::zeros(2, 2).plus_scalar_identity(&t, 1.0));
        p.add_lmi(lmi).unwrap();
        p.minimize_trace(&t, 1.0);
        assert_eq!(p.solve().status, SolveStatus::Unbounded);
    }

    #[test]
    fn infeasible_is_reported() {
        // x ≺ 0 and −x + 1 ≺ 0 cannot both hold
        let mut p = SdpProblem::new();
        let x = p.add_var("x", 1, 1, Structure::Scalar, Domain::Free);
        let mut a = BlockLmi::strict(&[1]);
        a.set(0, 0, AffineExpr::var(&x, 1.0));
        let mut b = BlockLmi::strict(&[1]);
        b.set(0, 0, AffineExpr::var(&x, -1.0).add_constant(&scalar(1.0)));
        p.add_lmi(a).unwrap();
        p.add_lmi(b).unwrap();
        p.minimize_trace(&x, 1.0);
        assert_eq!(p.solve().status, SolveStatus::Infeasible);
    }

    #[test]
    fn transposed_blocks_mirror() {
        let mut p = SdpProblem::new();
        let k = p.add_var("k", 2, 1, Structure::Rectangular, Domain::Free);
        let mut lmi = BlockLmi::strict(&[2, 1]);
        lmi.set(
            1,
            0,
            AffineExpr::zeros(1, 2).plus_transposed(
                DMatrix::identity(1, 1),
                &k,
                DMatrix::identity(2, 2),
            ),
        );
        let values = vec![DMatrix::from_column_slice(2, 1, &[3.0, 4.0])];
        let m = lmi.evaluate(&values);
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(2, 1)], 4.0);
        p.add_lmi(lmi).unwrap();
    }

    #[test]
    fn sym_index_enumerates_upper_triangle() {
        let pairs: Vec<_> = (0..6).map(|k| sym_index(3, k)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]);
    }
}
