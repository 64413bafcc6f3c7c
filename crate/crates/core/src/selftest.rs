//! Self-contained consistency suites, run by the `selftest` subcommand.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fusion::{self, LocalErrorMap, NoiseLayout};
use crate::harness::{self, ExperimentConfig};
use crate::linear::{self, LocalSystem};
use crate::lmi;
use crate::models::NoiseKind;

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub checks: usize,
    pub failures: usize,
    pub detail: String,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checks > 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            let verdict = if s.passed() { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {}: {}/{} ({})", s.name, s.checks - s.failures, s.checks, s.detail)?;
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `α I + β R Rᵀ` with log-uniform `α`, so verdicts land on both sides.
fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let alpha = 10f64.powf(rng.random_range(-2.0..1.5));
    let r = gaussian(rng, n, n);
    DMatrix::identity(n, n) * alpha + &r * r.transpose() * rng.random_range(0.0..1.0)
}

fn random_local_system(rng: &mut ChaCha8Rng, n: usize) -> LocalSystem {
    let n_w = rng.random_range(1..=n);
    let q = rng.random_range(1..=n);
    let n_v = rng.random_range(1..=q);
    LocalSystem {
        a: gaussian(rng, n, n) * 0.7,
        b: gaussian(rng, n, n_w),
        c: gaussian(rng, q, n),
        b_sensor: gaussian(rng, q, n_v),
    }
}

/// Bordered vs condensed negative-definiteness verdicts on random local and
/// fusion instances (`n ≤ 3`, `L ≤ 3`).
pub fn schur_suite(instances: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut negative = 0;
    for k in 0..instances {
        let n = rng.random_range(1..=3);
        let (bordered, condensed) = if k % 2 == 0 {
            let sys = random_local_system(&mut rng, n);
            let gain = gaussian(&mut rng, n, sys.c.nrows()) * 0.5;
            let p = random_pd(&mut rng, n);
            let theta = random_pd(&mut rng, sys.noise_dim());
            let bordered = linear::local_bordered(&sys, &gain, &p, &theta);
            let m = lmi::hstack(&[&(sys.g(&gain) * &sys.a), &sys.b_f(&gain)]);
            let weights = lmi::block_diag(&[p, theta]);
            (bordered, m.transpose() * &m - weights)
        } else {
            let l = rng.random_range(1..=3);
            let a = gaussian(&mut rng, n, n) * 0.7;
            let n_w = rng.random_range(1..=n);
            let b = gaussian(&mut rng, n, n_w);
            let maps: Vec<LocalErrorMap> = (0..l)
                .map(|_| {
                    let q = rng.random_range(1..=n);
                    let c = gaussian(&mut rng, q, n);
                    let n_v = rng.random_range(1..=q);
                    let bs = gaussian(&mut rng, q, n_v);
                    let gain = gaussian(&mut rng, n, q) * 0.5;
                    LocalErrorMap::new(&gain, &a, &b, &c, &bs)
                })
                .collect();
            let layout = if rng.random_bool(0.5) {
                NoiseLayout::LinearShared
            } else {
                NoiseLayout::NonlinearPerSensor
            };
            let sys = fusion::build_stacked(&maps, layout).expect("consistent maps");
            let mut omegas: Vec<DMatrix<f64>> = (0..l).map(|_| gaussian(&mut rng, n, n) * 0.5).collect();
            let partial = omegas[..l - 1].iter().fold(DMatrix::zeros(n, n), |acc, o| acc + o);
            omegas[l - 1] = DMatrix::identity(n, n) - partial;
            let nl = n * l;
            let m = sys.noise_dim();
            let joint = random_pd(&mut rng, nl + m);
            let p = joint.view((0, 0), (nl, nl)).into_owned();
            let upsilon = joint.view((0, nl), (nl, m)).into_owned();
            let theta = joint.view((nl, nl), (m, m)).into_owned();
            let bordered = fusion::fusion_bordered(&sys, &omegas, &p, &upsilon, &theta);
            let omega = sys.omega_row(&omegas);
            let mm = lmi::hstack(&[&(&omega * &sys.a_f), &(&omega * &sys.b_f)]);
            (bordered, mm.transpose() * &mm - joint)
        };
        let a = lmi::max_eigenvalue(&bordered) < 0.0;
        let b = lmi::max_eigenvalue(&condensed) < 0.0;
        negative += usize::from(b);
        failures += usize::from(a != b);
    }
    SuiteResult {
        name: "schur-equivalence",
        checks: instances,
        failures,
        detail: format!("{negative} negative-definite instances"),
    }
}

/// One-step local error recursion vs simulate-and-difference.
pub fn error_recursion_suite(instances: usize, seed: u64, tol: f64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..=3);
        let sys = random_local_system(&mut rng, n);
        let gain = gaussian(&mut rng, n, sys.c.nrows());
        let x_prev = gaussian_vec(&mut rng, n);
        let x_hat_prev = gaussian_vec(&mut rng, n);
        let w = gaussian_vec(&mut rng, sys.b.ncols());
        let v = gaussian_vec(&mut rng, sys.b_sensor.ncols());
        let x = &sys.a * &x_prev + &sys.b * &w;
        let y = &sys.c * &x + &sys.b_sensor * &v;
        let x_hat = linear::lse_predict_correct(&sys.a, &sys.c, &x_hat_prev, &y, &gain);
        let xi = DVector::from_iterator(w.len() + v.len(), w.iter().chain(v.iter()).copied());
        let oracle = linear::error_recursion_oracle(&(&x_prev - &x_hat_prev), &sys, &gain, &xi);
        let err = (&x - &x_hat - oracle).amax();
        worst = worst.max(err);
        failures += usize::from(!(err <= tol));
    }
    SuiteResult {
        name: "local-error-recursion",
        checks: instances,
        failures,
        detail: format!("max deviation {worst:.3e}"),
    }
}

/// Stacked error recursion and fused error vs simulate-and-difference.
pub fn fusion_recursion_suite(instances: usize, seed: u64, tol: f64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..=3);
        let l = rng.random_range(1..=3);
        let a = gaussian(&mut rng, n, n) * 0.7;
        let n_w = rng.random_range(1..=n);
        let b = gaussian(&mut rng, n, n_w);
        let w = gaussian_vec(&mut rng, b.ncols());
        let x_prev = gaussian_vec(&mut rng, n);
        let x = &a * &x_prev + &b * &w;
        let mut maps = Vec::with_capacity(l);
        let mut v = Vec::with_capacity(l);
        let mut e_prev = Vec::with_capacity(l);
        let mut estimates = Vec::with_capacity(l);
        for _ in 0..l {
            let q = rng.random_range(1..=n);
            let c = gaussian(&mut rng, q, n);
            let n_v = rng.random_range(1..=q);
            let bs = gaussian(&mut rng, q, n_v);
            let gain = gaussian(&mut rng, n, q);
            let vi = gaussian_vec(&mut rng, bs.ncols());
            let x_hat_prev = gaussian_vec(&mut rng, n);
            let y = &c * &x + &bs * &vi;
            estimates.push(linear::lse_predict_correct(&a, &c, &x_hat_prev, &y, &gain));
            e_prev.extend((&x_prev - &x_hat_prev).iter().copied());
            maps.push(LocalErrorMap::new(&gain, &a, &b, &c, &bs));
            v.push(vi);
        }
        let sys = fusion::build_stacked(&maps, NoiseLayout::LinearShared).expect("consistent maps");
        let mut omegas: Vec<DMatrix<f64>> = (0..l).map(|_| gaussian(&mut rng, n, n) * 0.5).collect();
        let partial = omegas[..l - 1].iter().fold(DMatrix::zeros(n, n), |acc, o| acc + o);
        omegas[l - 1] = DMatrix::identity(n, n) - partial;
        let xi = sys.stack_noise(&w, &v);
        let (e_f, e0) = fusion::fusion_error_oracle(&DVector::from_vec(e_prev), &sys, &omegas, &xi);
        let fused = fusion::fuse(&omegas, &estimates).expect("matching weights");
        let mut err = (&x - &fused - e0).amax();
        for (i, est) in estimates.iter().enumerate() {
            err = err.max((&x - est - e_f.rows(i * n, n)).amax());
        }
        worst = worst.max(err);
        failures += usize::from(!(err <= tol));
    }
    SuiteResult {
        name: "fusion-error-recursion",
        checks: instances,
        failures,
        detail: format!("max deviation {worst:.3e}"),
    }
}

/// Re-verifies every per-step certificate of a tracking run. Each step
/// contributes `L` local checks and one fused check; uncertified designs
/// count as failures.
pub fn certificate_suite(noise: NoiseKind, horizon: usize, seed: u64) -> SuiteResult {
    let cfg = ExperimentConfig::tracking(noise, horizon, seed);
    let exp = match harness::run_linear_experiment(&cfg) {
        Ok(e) => e,
        Err(e) => {
            return SuiteResult {
                name: "certificates",
                checks: 1,
                failures: 1,
                detail: format!("experiment failed: {e}"),
            }
        }
    };
    let certs = harness::linear_certificates(&exp.design, &exp.run);
    let mut checks = 0;
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for c in &certs {
        for v in c.local.iter().chain([&c.fused, &c.fused_trace]) {
            checks += 1;
            match v {
                Some(x) if *x < 0.0 => worst = worst.max(*x),
                Some(x) => {
                    worst = worst.max(*x);
                    failures += 1;
                }
                None => failures += 1,
            }
        }
    }
    SuiteResult {
        name: "certificates",
        checks,
        failures,
        detail: format!("largest certificate value {worst:.3e}"),
    }
}

pub fn run_all() -> SelftestReport {
    SelftestReport {
        suites: vec![
            schur_suite(200, 1),
            error_recursion_suite(100, 2, 1e-12),
            fusion_recursion_suite(100, 3, 1e-12),
            certificate_suite(NoiseKind::TypeIII, 100, 42),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        let report = run_all();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn schur_suite_sees_both_verdicts() {
        let s = schur_suite(60, 11);
        let negatives: usize = s.detail.split_whitespace().next().unwrap().parse().unwrap();
        assert!(negatives > 0 && negatives < 60, "{}", s.detail);
    }
}
