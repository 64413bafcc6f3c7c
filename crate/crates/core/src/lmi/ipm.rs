//! Infeasible-start primal-dual path-following method for dual-form SDPs
//!
//! ```text
//!   max  bᵀy   s.t.  Z = C − Σ_j y_j A_j ⪰ 0        (block diagonal)
//!   min ⟨C,X⟩  s.t.  ⟨A_j, X⟩ = b_j,  X ⪰ 0
//! ```
//!
//! HKM search direction with a Mehrotra predictor-corrector. Each `A_j` is
//! stored as sparse upper-triangle entries per block; the Schur matrix is
//! built from `T_i = X A_i Z⁻¹` so the cost scales with the nonzeros.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::problem::SolverOptions;

/// Upper-triangle entries `(r, c, a)` of a symmetric coefficient matrix.
type Entries = Vec<(usize, usize, f64)>;

pub(crate) struct SparseBlock {
    size: usize,
    c: DMatrix<f64>,
    active: Vec<(usize, Entries)>,
}

impl SparseBlock {
    pub(crate) fn new(size: usize, c: DMatrix<f64>, per_var: Vec<HashMap<(usize, usize), f64>>) -> Self {
        let active = per_var
            .into_iter()
            .enumerate()
            .filter_map(|(j, map)| {
                let mut entries: Entries = map
                    .into_iter()
                    .filter(|&(_, a)| a != 0.0)
                    .map(|((r, c), a)| (r, c, a))
                    .collect();
                if entries.is_empty() {
                    None
                } else {
                    entries.sort_by_key(|&(r, c, _)| (r, c));
                    Some((j, entries))
                }
            })
            .collect();
        Self { size, c, active }
    }
}

/// `min cᵀy` subject to `C_k − Σ y_j A_kj ⪰ 0` for every block.
pub(crate) struct SparseSdp {
    c: DVector<f64>,
    blocks: Vec<SparseBlock>,
}

impl SparseSdp {
    pub(crate) fn new(c: DVector<f64>, blocks: Vec<SparseBlock>) -> Self {
        Self { c, blocks }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Failed,
}

pub(crate) struct IpmResult {
    pub status: IpmStatus,
    pub y: DVector<f64>,
    pub iterations: usize,
}

fn inner(entries: &Entries, y: &DMatrix<f64>) -> f64 {
    entries
        .iter()
        .map(|&(r, c, a)| {
            if r == c {
                a * y[(r, r)]
            } else {
                a * (y[(r, c)] + y[(c, r)])
            }
        })
        .sum()
}

fn add_scaled(entries: &Entries, alpha: f64, out: &mut DMatrix<f64>) {
    for &(r, c, a) in entries {
        out[(r, c)] += alpha * a;
        if r != c {
            out[(c, r)] += alpha * a;
        }
    }
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Largest `α` with `X + α·dX ⪰ 0` (infinite if the direction never leaves the cone).
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = Cholesky::new(x.clone()) else {
        return 0.0;
    };
    let l = chol.l();
    let Some(half) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(w) = l.solve_lower_triangular(&half.transpose()) else {
        return 0.0;
    };
    let lmin = SymmetricEigen::new(sym(w))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    y: DVector<f64>,
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
}

pub(crate) fn solve(p: &SparseSdp, opt: &SolverOptions) -> IpmResult {
    let m = p.c.len();
    let b = -&p.c;
    let nblocks = p.blocks.len();

    let mut used = vec![false; m];
    for blk in &p.blocks {
        for (j, _) in &blk.active {
            used[*j] = true;
        }
    }
    if (0..m).any(|j| !used[j] && b[j] != 0.0) {
        return IpmResult {
            status: IpmStatus::Unbounded,
            y: DVector::zeros(m),
            iterations: 0,
        };
    }
    if nblocks == 0 {
        return IpmResult {
            status: IpmStatus::Optimal,
            y: DVector::zeros(m),
            iterations: 0,
        };
    }

    let n_total: usize = p.blocks.iter().map(|b| b.size).sum();
    let norm_b = b.norm();
    let norm_c = p.blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>().sqrt();

    let mut it = Iterate {
        x: Vec::with_capacity(nblocks),
        z: Vec::with_capacity(nblocks),
        y: DVector::zeros(m),
    };
    for blk in &p.blocks {
        let n = blk.size as f64;
        let a_norms: Vec<f64> = blk
            .active
            .iter()
            .map(|(_, e)| {
                e.iter()
                    .map(|&(r, c, a)| if r == c { a * a } else { 2.0 * a * a })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let ratio = blk
            .active
            .iter()
            .zip(&a_norms)
            .map(|((j, _), na)| (1.0 + b[*j].abs()) / (1.0 + na))
            .fold(0.0, f64::max);
        let xi = 10f64.max(n.sqrt()).max(n * ratio);
        let eta = a_norms
            .iter()
            .copied()
            .fold(10f64.max(n.sqrt()), f64::max)
            .max(blk.c.norm());
        it.x.push(DMatrix::identity(blk.size, blk.size) * xi);
        it.z.push(DMatrix::identity(blk.size, blk.size) * eta);
    }
    let tr_x0: f64 = it.x.iter().map(|x| x.trace()).sum();

    let mut stalled = 0;
    let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);

    for iter in 0..opt.max_iterations {
        // residuals
        let mut ax = DVector::zeros(m);
        for (k, blk) in p.blocks.iter().enumerate() {
            for (j, e) in &blk.active {
                ax[*j] += inner(e, &it.x[k]);
            }
        }
        let rp = &b - &ax;
        let rd: Vec<DMatrix<f64>> = p
            .blocks
            .iter()
            .enumerate()
            .map(|(k, blk)| {
                let mut r = &blk.c - &it.z[k];
                for (j, e) in &blk.active {
                    add_scaled(e, -it.y[*j], &mut r);
                }
                r
            })
            .collect();
        let pobj: f64 = p.blocks.iter().zip(&it.x).map(|(blk, x)| dot(&blk.c, x)).sum();
        let dobj = b.dot(&it.y);
        let mu = it.x.iter().zip(&it.z).map(|(x, z)| dot(x, z)).sum::<f64>() / n_total as f64;
        let rd_norm = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt();
        let relgap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pinf = rp.norm() / (1.0 + norm_b);
        let dinf = rd_norm / (1.0 + norm_c);
        last = (relgap, pinf, dinf);

        if relgap < opt.gap_tol && pinf < opt.feas_tol && dinf < opt.feas_tol {
            return IpmResult {
                status: IpmStatus::Optimal,
                y: it.y,
                iterations: iter,
            };
        }

        let tr_x: f64 = it.x.iter().map(|x| x.trace()).sum();
        if pobj < 0.0 && tr_x > 1e4 * tr_x0 && -pobj > 1e8 * ax.norm() {
            return IpmResult {
                status: IpmStatus::Infeasible,
                y: it.y,
                iterations: iter,
            };
        }
        if dobj > 0.0 && dobj > 1e8 * (norm_c + rd_norm) {
            return IpmResult {
                status: IpmStatus::Unbounded,
                y: it.y,
                iterations: iter,
            };
        }

        let Some(zinv) = it
            .z
            .iter()
            .map(|z| Cholesky::new(z.clone()).map(|c| sym(c.inverse())))
            .collect::<Option<Vec<_>>>()
        else {
            break;
        };

        // Schur complement M_ij = Σ_k ⟨A_kj, X_k A_ki Z_k⁻¹⟩
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for (k, blk) in p.blocks.iter().enumerate() {
            let (x, zi) = (&it.x[k], &zinv[k]);
            let mut t = DMatrix::<f64>::zeros(blk.size, blk.size);
            for (i, ei) in &blk.active {
                t.fill(0.0);
                for &(r, c, a) in ei {
                    t.ger(a, &x.column(r), &zi.column(c), 1.0);
                    if r != c {
                        t.ger(a, &x.column(c), &zi.column(r), 1.0);
                    }
                }
                for (j, ej) in &blk.active {
                    schur[(*i, *j)] += inner(ej, &t);
                }
            }
        }
        let mut schur = sym(schur);
        for j in (0..m).filter(|&j| !used[j]) {
            schur[(j, j)] = 1.0;
        }
        let Some(factor) = factor_regularized(schur) else {
            break;
        };

        let x_rd_zi: Vec<DMatrix<f64>> = (0..nblocks).map(|k| &it.x[k] * &rd[k] * &zinv[k]).collect();

        let direction = |rc_zi: &[DMatrix<f64>]| -> Direction {
            let mut rhs = rp.clone();
            for (k, blk) in p.blocks.iter().enumerate() {
                let g = &x_rd_zi[k] - &rc_zi[k];
                for (j, e) in &blk.active {
                    rhs[*j] += inner(e, &g);
                }
            }
            for j in (0..m).filter(|&j| !used[j]) {
                rhs[j] = 0.0;
            }
            let dy = factor.solve(&rhs);
            let mut dz = Vec::with_capacity(nblocks);
            let mut dx = Vec::with_capacity(nblocks);
            for (k, blk) in p.blocks.iter().enumerate() {
                let mut d = rd[k].clone();
                for (j, e) in &blk.active {
                    add_scaled(e, -dy[*j], &mut d);
                }
                dx.push(sym(&rc_zi[k] - &it.x[k] * &d * &zinv[k]));
                dz.push(d);
            }
            Direction { dx, dz, dy }
        };

        let steps = |d: &Direction| -> (f64, f64) {
            let ap = (0..nblocks)
                .map(|k| max_step(&it.x[k], &d.dx[k]))
                .fold(f64::INFINITY, f64::min);
            let ad = (0..nblocks)
                .map(|k| max_step(&it.z[k], &d.dz[k]))
                .fold(f64::INFINITY, f64::min);
            (ap, ad)
        };

        // predictor
        let rc_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
        let aff = direction(&rc_aff);
        let (ap_max, ad_max) = steps(&aff);
        let (ap, ad) = (ap_max.min(1.0), ad_max.min(1.0));
        let mu_aff = (0..nblocks)
            .map(|k| dot(&(&it.x[k] + &aff.dx[k] * ap), &(&it.z[k] + &aff.dz[k] * ad)))
            .sum::<f64>()
            / n_total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let rc_cor: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|k| {
                &zinv[k] * (sigma * mu) - &it.x[k] - &aff.dx[k] * &aff.dz[k] * &zinv[k]
            })
            .collect();
        let dir = direction(&rc_cor);
        let (ap_max, ad_max) = steps(&dir);
        let gamma = 0.9 + 0.09 * ap.min(ad);
        let ap = (gamma * ap_max).min(1.0);
        let ad = (gamma * ad_max).min(1.0);
        if !(ap.is_finite() && ad.is_finite()) {
            break;
        }

        for k in 0..nblocks {
            it.x[k] += &dir.dx[k] * ap;
            it.z[k] += &dir.dz[k] * ad;
        }
        it.y += &dir.dy * ad;

        if ap.max(ad) < 1e-10 {
            stalled += 1;
            if stalled >= 5 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    // loose acceptance when progress stops near the optimum
    let (relgap, pinf, dinf) = last;
    let status = if relgap < 1e-6 && pinf < 1e-6 && dinf < 1e-6 {
        IpmStatus::Optimal
    } else {
        IpmStatus::Failed
    };
    IpmResult {
        status,
        y: it.y,
        iterations: opt.max_iterations,
    }
}

fn factor_regularized(mut m: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(1e-300);
    let mut delta = 1e-14 * scale;
    for _ in 0..8 {
        for i in 0..m.nrows() {
            m[(i, i)] += delta;
        }
        if let Some(c) = Cholesky::new(m.clone()) {
            return Some(c);
        }
        delta *= 100.0;
    }
    None
}
