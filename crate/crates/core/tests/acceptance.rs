//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fusionest::fusion::{self, StackedErrorSystem};
use fusionest::harness::{self, ExperimentConfig, Method};
use fusionest::linear::{self, LocalSystem, VARTHETA_MAX};
use fusionest::lmi::SolveStatus;
use fusionest::models::NoiseKind;
use fusionest::selftest;

const SCHUR_INSTANCES: usize = 200;
const SCHUR_BUDGET: Duration = Duration::from_secs(10);
const CERTIFICATE_BUDGET: Duration = Duration::from_secs(120);
const BOUNDEDNESS_RATIO: f64 = 1.5;
const CONTRACTION_RUNS: u64 = 50;
const DOMINANCE_REL_TOL: f64 = 1e-6;
const KF_RUNS: usize = 200;
const KF_BUDGET: Duration = Duration::from_secs(15 * 60);
const MISMATCH_Q_SCALE: f64 = 10.0;
const MISMATCH_R_SCALE: f64 = 0.1;
const ROBOT_RUNS: usize = 100;
const RECURSION_INSTANCES: usize = 100;
const RECURSION_TOL: f64 = 1e-12;
const SCALAR_SYSTEMS: usize = 20;
const SCALAR_TOL: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, outcome: &Outcome, elapsed: Duration) {
    let verdict = if outcome.pass { "PASS" } else { "FAIL" };
    println!(
        "{verdict} criterion {id} ({name}): {} [{:.1} s]",
        outcome.detail,
        elapsed.as_secs_f64()
    );
}

/// Optimal fused objective against each single-sensor selection:
/// returns the number of violations and the worst relative excess.
fn dominance(sys: &StackedErrorSystem, optimal: f64) -> (usize, f64) {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..sys.sensors {
        let sel = fusion::selection(sys.state_dim, sys.sensors, i);
        match fusion::solve_fixed_weights(sys, &sel) {
            Ok(w) if w.status == SolveStatus::Infeasible => {}
            Ok(w) if w.status == SolveStatus::Optimal => {
                let excess = (optimal - w.objective) / w.objective.abs().max(1e-300);
                worst = worst.max(excess);
                violations += usize::from(excess > DOMINANCE_REL_TOL);
            }
            _ => violations += 1,
        }
    }
    (violations, worst)
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    let s = selftest::schur_suite(SCHUR_INSTANCES, 2024);
    let elapsed = start.elapsed();
    let agree = s.checks - s.failures;
    Outcome {
        pass: s.failures == 0 && s.checks == SCHUR_INSTANCES && elapsed < SCHUR_BUDGET,
        detail: format!("{agree}/{} verdicts agree, {}", s.checks, s.detail),
    }
}

/// Criteria 2 and the tracking half of 5.
fn criterion2() -> (Outcome, (usize, usize, f64)) {
    let start = Instant::now();
    let cfg = ExperimentConfig::tracking(NoiseKind::TypeIII, 100, 42);
    let exp = match harness::run_linear_experiment(&cfg) {
        Ok(e) => e,
        Err(e) => {
            return (
                Outcome {
                    pass: false,
                    detail: format!("experiment failed: {e}"),
                },
                (1, 0, f64::NAN),
            )
        }
    };
    let mut non_optimal = 0;
    for d in &exp.design.steps {
        non_optimal += d.gains.iter().filter(|g| g.status != SolveStatus::Optimal || !g.certified).count();
        non_optimal += usize::from(d.fusion.status != SolveStatus::Optimal || !d.fusion.certified);
    }
    let certs = harness::linear_certificates(&exp.design, &exp.run);
    let mut violations = 0;
    let mut max_local = f64::NEG_INFINITY;
    let mut max_fused = f64::NEG_INFINITY;
    for c in &certs {
        for v in c.local.iter().flatten() {
            max_local = max_local.max(*v);
            violations += usize::from(*v >= 0.0);
        }
        if let Some(v) = c.fused {
            max_fused = max_fused.max(v);
            violations += usize::from(v >= 0.0);
        }
    }
    let elapsed = start.elapsed();
    let mut dom = (0, 0, f64::NEG_INFINITY);
    for d in &exp.design.steps {
        let (v, w) = dominance(&d.stacked, d.fusion.objective);
        dom.0 += v;
        dom.1 += d.stacked.sensors;
        dom.2 = dom.2.max(w);
    }
    (
        Outcome {
            pass: non_optimal == 0 && violations == 0 && elapsed < CERTIFICATE_BUDGET,
            detail: format!(
                "{} steps, {non_optimal} non-optimal designs, {violations} violated inequalities, \
                 max local index {max_local:.3e}, max fused gap {max_fused:.3e}",
                certs.len()
            ),
        },
        dom,
    )
}

fn criterion3() -> Outcome {
    let cfg = ExperimentConfig::tracking(NoiseKind::TypeIII, 500, 42);
    let exp = match harness::run_linear_experiment(&cfg) {
        Ok(e) => e,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("experiment failed: {e}"),
            }
        }
    };
    let steps = &exp.run.series.steps;
    let l = exp.run.series.sensors;
    let max_over = |lo: usize, hi: usize, k: usize| {
        steps
            .iter()
            .filter(|s| s.t > lo && s.t <= hi)
            .map(|s| if k < l { s.se_lse[k] } else { s.se_dfe })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..=l {
        let early = max_over(10, 50, k);
        let late = max_over(50, 500, k);
        let ratio = late / early;
        pass &= ratio <= BOUNDEDNESS_RATIO;
        let name = if k < l { format!("lse_{}", k + 1) } else { "dfe".into() };
        parts.push(format!("{name} ratio {ratio:.4}"));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

/// Criteria 4 and the robot half of 5.
fn criterion4() -> (Outcome, (usize, usize, f64)) {
    let cfg = ExperimentConfig::robot(120, 42);
    let noise = cfg.noise_source();
    let mut good_runs = 0;
    let mut max_jd = f64::NEG_INFINITY;
    let mut errors = Vec::new();
    let mut dom = (0, 0, f64::NEG_INFINITY);
    for run in 0..CONTRACTION_RUNS {
        match harness::run_nonlinear(&cfg, &cfg.robot, &noise, run, true) {
            Ok(r) => {
                let jd = r
                    .output
                    .series
                    .steps
                    .iter()
                    .flat_map(|s| s.jd.iter().copied())
                    .fold(f64::NEG_INFINITY, f64::max);
                max_jd = max_jd.max(jd);
                good_runs += usize::from(jd < 1.0);
                for d in &r.steps {
                    if !d.fusion.certified {
                        dom.0 += 1;
                        continue;
                    }
                    let sys = d.stacked.as_ref().expect("fusion computed");
                    let (v, w) = dominance(sys, d.fusion.objective);
                    dom.0 += v;
                    dom.1 += sys.sensors;
                    dom.2 = dom.2.max(w);
                }
            }
            Err(e) => errors.push(format!("run {run}: {e}")),
        }
    }
    (
        Outcome {
            pass: good_runs as u64 == CONTRACTION_RUNS,
            detail: format!(
                "{good_runs}/{CONTRACTION_RUNS} runs with J_d < 1 throughout, max J_d {max_jd:.4}{}",
                if errors.is_empty() {
                    String::new()
                } else {
                    format!(", errors: {}", errors.join("; "))
                }
            ),
        },
        dom,
    )
}

fn criterion5(tracking: (usize, usize, f64), robot: (usize, usize, f64)) -> Outcome {
    let violations = tracking.0 + robot.0;
    let checks = tracking.1 + robot.1;
    Outcome {
        pass: violations == 0 && checks > 0,
        detail: format!(
            "{violations} violations over {checks} selection oracles, worst relative excess {:.3e}",
            tracking.2.max(robot.2)
        ),
    }
}

fn criterion6() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::tracking(NoiseKind::TypeII, 100, 42);
    cfg.runs = KF_RUNS;
    let kf = |q_scale, r_scale| Method::Kf {
        sensor: 0,
        q_scale,
        r_scale,
    };
    let methods = [
        Method::ProposedLse(0),
        kf(1.0, 1.0),
        kf(MISMATCH_Q_SCALE, MISMATCH_R_SCALE),
        kf(10.0, 10.0),
    ];
    let table = match harness::monte_carlo_pmse(&cfg, &methods) {
        Ok(t) => t,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("Monte Carlo failed: {e}"),
            }
        }
    };
    let avg: Vec<f64> = (0..methods.len())
        .map(|m| table.rows.iter().map(|r| r[m]).sum::<f64>() / table.rows.len() as f64)
        .collect();
    let (lse, kf_true, kf_mis, kf_both) = (avg[0], avg[1], avg[2], avg[3]);
    let elapsed = start.elapsed();
    Outcome {
        pass: kf_true <= lse && lse < kf_mis && elapsed < KF_BUDGET,
        detail: format!(
            "PMSE kf {kf_true:.4} <= lse_1 {lse:.4} < kf(Q x{MISMATCH_Q_SCALE}, R x{MISMATCH_R_SCALE}) {kf_mis:.4}; \
             for reference kf(Q x10, R x10) {kf_both:.4}"
        ),
    }
}

fn criterion7() -> Outcome {
    let mut cfg = ExperimentConfig::robot(120, 42);
    cfg.runs = ROBOT_RUNS;
    let methods = [Method::ProposedLse(0), Method::Ekf(0), Method::Ukf(0)];
    let table = match harness::monte_carlo_pmse(&cfg, &methods) {
        Ok(t) => t,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: format!("Monte Carlo failed: {e}"),
            }
        }
    };
    let avg = |m: &str| table.time_average(m).unwrap_or(f64::NAN);
    let (lse, ekf, ukf) = (avg("lse_1"), avg("ekf_1"), avg("ukf_1"));
    Outcome {
        pass: lse < ekf && lse < ukf,
        detail: format!("PMSE lse_1 {lse:.4e} vs ekf_1 {ekf:.4e}, ukf_1 {ukf:.4e}"),
    }
}

/// Brute force for a scalar system: for fixed `k` the best certificate puts
/// `P` at its cap and `Θ = b_f b_fᵀ/s` with `s = 1 − (gA)²/P`, so the
/// objective is `‖b_f‖²/s`; minimize over a grid of `k` refined by golden section.
fn scalar_brute_force(a: f64, b: f64, c: f64, bi: f64) -> f64 {
    let p = VARTHETA_MAX;
    let cost = |k: f64| {
        let g = 1.0 - k * c;
        let ga2 = (g * a).powi(2);
        if ga2 >= p {
            return f64::INFINITY;
        }
        let bf2 = (g * b).powi(2) + (k * bi).powi(2);
        bf2 / (1.0 - ga2 / p)
    };
    let span = 4.0 / c.abs();
    let grid = 20_000;
    let step = 2.0 * span / grid as f64;
    let (mut best_k, mut best) = (0.0, f64::INFINITY);
    for j in 0..=grid {
        let k = -span + step * j as f64;
        let v = cost(k);
        if v < best {
            best = v;
            best_k = k;
        }
    }
    let (mut lo, mut hi) = (best_k - step, best_k + step);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if cost(m1) < cost(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.min(cost(0.5 * (lo + hi)))
}

fn criterion8() -> Outcome {
    let local = selftest::error_recursion_suite(RECURSION_INSTANCES, 77, RECURSION_TOL);
    let fused = selftest::fusion_recursion_suite(RECURSION_INSTANCES, 78, RECURSION_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    let mut scalar_fail = 0;
    let mut worst = 0.0f64;
    for _ in 0..SCALAR_SYSTEMS {
        let a = rng.random_range(-1.5..1.5);
        let b = rng.random_range(0.05..1.0);
        let c = rng.random_range(0.3..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let bi = rng.random_range(0.05..1.0);
        let s = |v| DMatrix::from_element(1, 1, v);
        let sys = LocalSystem {
            a: s(a),
            b: s(b),
            c: s(c),
            b_sensor: s(bi),
        };
        let oracle = scalar_brute_force(a, b, c, bi);
        match linear::design_local_gain(&sys) {
            Ok(r) if r.certified => {
                let dev = (r.objective - oracle).abs();
                worst = worst.max(dev);
                scalar_fail += usize::from(dev > SCALAR_TOL);
            }
            _ => scalar_fail += 1,
        }
    }
    Outcome {
        pass: local.passed()
            && fused.passed()
            && local.checks == RECURSION_INSTANCES
            && fused.checks == RECURSION_INSTANCES
            && scalar_fail == 0,
        detail: format!(
            "local recursion {}/{} ({}), fusion recursion {}/{} ({}), scalar gains {}/{SCALAR_SYSTEMS} (max deviation {worst:.3e})",
            local.checks - local.failures,
            local.checks,
            local.detail,
            fused.checks - fused.failures,
            fused.checks,
            fused.detail,
            SCALAR_SYSTEMS - scalar_fail
        ),
    }
}

fn run_cli(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_fusionest"))
        .args(["tracking", "--noise-type", "3", "--seed", "42", "--out"])
        .arg(out)
        .env("FUSIONEST_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("exit {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)))
    }
}

fn criterion9() -> Outcome {
    let dir = tempfile::tempdir().expect("temporary directory");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if let Err(e) = run_cli(&a).and_then(|()| run_cli(&b)) {
        return Outcome {
            pass: false,
            detail: format!("invocation failed: {e}"),
        };
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .expect("output directory")
        .filter_map(|e| e.ok().map(|e| e.file_name()))
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .collect();
    names.sort();
    for name in &names {
        compared += 1;
        let x = std::fs::read(a.join(name)).ok();
        let y = std::fs::read(b.join(name)).ok();
        if x.is_none() || x != y {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    Outcome {
        pass: compared > 0 && differing.is_empty(),
        detail: format!("{compared} CSV files compared, {} differ", differing.len()),
    }
}

fn main() {
    let mut failed = Vec::new();
    let mut timed = |id: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        report(id, name, &outcome, start.elapsed());
        if !outcome.pass {
            failed.push(id);
        }
    };
    timed(1, "Schur equivalence", &mut criterion1);
    let mut dom_tracking = (0, 0, f64::NAN);
    timed(2, "certificate inequalities", &mut || {
        let (o, d) = criterion2();
        dom_tracking = d;
        o
    });
    timed(3, "boundedness", &mut criterion3);
    let mut dom_robot = (0, 0, f64::NAN);
    timed(4, "contraction diagnostic", &mut || {
        let (o, d) = criterion4();
        dom_robot = d;
        o
    });
    timed(5, "fusion dominance", &mut || criterion5(dom_tracking, dom_robot));
    timed(6, "Kalman filter optimality", &mut criterion6);
    timed(7, "nonlinear comparison", &mut criterion7);
    timed(8, "oracle equivalences", &mut criterion8);
    timed(9, "determinism", &mut criterion9);
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
