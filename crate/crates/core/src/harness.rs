//! End-to-end experiments: the linear tracking pipeline, the nonlinear robot
//! pipeline, certificate re-checks along simulated trajectories, and Monte
//! Carlo PMSE with the baseline filters.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, KalmanState, UkfParams};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionWeights, LocalErrorMap, NoiseLayout, StackedErrorSystem};
use crate::linear::{self, LocalGainResult, LocalSystem};
use crate::lmi::SolveStatus;
use crate::models::{
    self, LinearTimeVaryingModel, NoiseKind, NoiseSource, NonlinearModel, RobotModel,
    SamplingSchedule, StandardNoise, TrackingModel, TrajectoryRecord,
};
use crate::nonlinear::{self, LinearizedSystem, NonlinearGainResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Tracking,
    Robot,
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub noise: NoiseKind,
    pub horizon: usize,
    pub seed: u64,
    /// Monte Carlo runs for PMSE curves.
    pub runs: usize,
    /// True initial state; zero when absent.
    pub x0: Option<Vec<f64>>,
    /// Initial local estimates; the tracking default is zero, the robot
    /// default is the true initial pose.
    pub estimates0: Option<Vec<Vec<f64>>>,
    /// Tracking sampling period; Type I uses `0.5`, the others `0.5 + 0.2 sin t`.
    pub sampling: Option<SamplingSchedule>,
    /// Type II process and measurement variances.
    pub q_w: f64,
    pub q_v: f64,
    pub robot: RobotModel,
    /// Initial baseline covariance `p0·I`; absent means `1` for tracking
    /// and `1e−6` for the robot (whose initial pose is known).
    pub baseline_p0: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Tracking,
            noise: NoiseKind::TypeIII,
            horizon: 100,
            seed: 42,
            runs: 100,
            x0: None,
            estimates0: None,
            sampling: None,
            q_w: 1.8,
            q_v: 0.5,
            robot: RobotModel::default(),
            baseline_p0: None,
        }
    }
}

impl ExperimentConfig {
    pub fn tracking(noise: NoiseKind, horizon: usize, seed: u64) -> Self {
        Self {
            noise,
            horizon,
            seed,
            ..Self::default()
        }
    }

    pub fn robot(horizon: usize, seed: u64) -> Self {
        Self {
            experiment: Experiment::Robot,
            noise: NoiseKind::TypeIV,
            horizon,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let allowed = match self.experiment {
            Experiment::Tracking => matches!(
                self.noise,
                NoiseKind::TypeI | NoiseKind::TypeII | NoiseKind::TypeIII | NoiseKind::Zero
            ),
            Experiment::Robot => matches!(self.noise, NoiseKind::TypeIV | NoiseKind::Zero),
        };
        if !allowed {
            return Err(Error::Config(format!(
                "noise {:?} is not available for the {:?} experiment",
                self.noise, self.experiment
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.q_w >= 0.0 && self.q_v >= 0.0) {
            return Err(Error::Config("noise variances must be nonnegative".into()));
        }
        let (n, l) = match self.experiment {
            Experiment::Tracking => (2, 2),
            Experiment::Robot => (3, self.robot.sensors.len()),
        };
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(Error::Config(format!("x0 needs {n} entries, got {}", x0.len())));
            }
        }
        if let Some(e) = &self.estimates0 {
            if e.len() != l || e.iter().any(|v| v.len() != n) {
                return Err(Error::Config(format!("estimates0 needs {l} vectors of length {n}")));
            }
        }
        if self.experiment == Experiment::Robot {
            let r = &self.robot;
            if r.sensors.is_empty() || r.sensors.iter().any(|s| s.landmarks.iter().any(|&k| k >= r.landmarks.len())) {
                return Err(Error::Config("robot sensors reference unknown landmarks".into()));
            }
            if self.noise == NoiseKind::TypeIV {
                let dims: Vec<usize> = r
                    .sensors
                    .iter()
                    .map(|s| s.noise_gain.first().map_or(0, Vec::len))
                    .collect();
                if dims != [4, 2] {
                    return Err(Error::Config(
                        "Type IV noise needs a 4-channel and a 2-channel sensor".into(),
                    ));
                }
            }
            for s in &r.sensors {
                let cols = s.noise_gain.first().map_or(0, Vec::len);
                if s.noise_gain.len() != 2 * s.landmarks.len() || s.noise_gain.iter().any(|row| row.len() != cols) {
                    return Err(Error::Config("robot noise gain has the wrong shape".into()));
                }
            }
        }
        Ok(())
    }

    pub fn tracking_model(&self) -> TrackingModel {
        let schedule = self.sampling.unwrap_or(match self.noise {
            NoiseKind::TypeI => SamplingSchedule::Constant(0.5),
            _ => SamplingSchedule::varying(),
        });
        TrackingModel::new(schedule)
    }

    pub fn noise_source(&self) -> StandardNoise {
        match self.experiment {
            Experiment::Tracking => {
                StandardNoise::tracking(self.noise, self.seed, 2).with_variances(self.q_w, self.q_v)
            }
            Experiment::Robot => match self.noise {
                NoiseKind::TypeIV => StandardNoise::robot(NoiseKind::TypeIV, self.seed),
                _ => StandardNoise::zero(
                    3,
                    self.robot
                        .sensors
                        .iter()
                        .map(|s| s.noise_gain.first().map_or(0, Vec::len))
                        .collect(),
                ),
            },
        }
    }

    fn state_dim(&self) -> usize {
        match self.experiment {
            Experiment::Tracking => 2,
            Experiment::Robot => 3,
        }
    }

    fn sensor_count(&self) -> usize {
        match self.experiment {
            Experiment::Tracking => 2,
            Experiment::Robot => self.robot.sensors.len(),
        }
    }

    pub fn initial_state(&self) -> DVector<f64> {
        self.x0
            .as_ref()
            .map_or_else(|| DVector::zeros(self.state_dim()), |v| DVector::from_vec(v.clone()))
    }

    pub fn initial_estimates(&self) -> Vec<DVector<f64>> {
        match &self.estimates0 {
            Some(e) => e.iter().map(|v| DVector::from_vec(v.clone())).collect(),
            None => {
                let x = match self.experiment {
                    Experiment::Tracking => DVector::zeros(self.state_dim()),
                    Experiment::Robot => self.initial_state(),
                };
                vec![x; self.sensor_count()]
            }
        }
    }

    /// Baseline `(Q, R_i)`: true variances for Type II, `range²/12` for
    /// bounded noises, the configured variances otherwise.
    pub fn baseline_covariances(&self) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let noise = self.noise_source();
        let diag = |v: Vec<f64>| DMatrix::from_diagonal(&DVector::from_vec(v));
        let floor = |v: f64| v.max(1e-12);
        match (noise.process_bounds(), noise.measurement_bounds()) {
            (Some(wb), Some(vb)) if self.noise != NoiseKind::TypeII => (
                diag(wb.iter().map(|&(lo, hi)| floor(baselines::uniform_variance(lo, hi))).collect()),
                vb.iter()
                    .map(|b| diag(b.iter().map(|&(lo, hi)| floor(baselines::uniform_variance(lo, hi))).collect()))
                    .collect(),
            ),
            _ => (
                diag(vec![self.q_w; noise.w_dim()]),
                noise.v_dims().iter().map(|&d| diag(vec![self.q_v; d])).collect(),
            ),
        }
    }

    pub fn baseline_p0(&self) -> f64 {
        self.baseline_p0.unwrap_or(match self.experiment {
            Experiment::Tracking => 1.0,
            Experiment::Robot => 1e-6,
        })
    }
}

/// One row of per-step metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub t: usize,
    pub se_lse: Vec<f64>,
    pub se_dfe: f64,
    pub obj_local: Vec<f64>,
    pub obj_fusion: f64,
    pub jd: Vec<f64>,
    /// Bit `i` marks an uncertified local design `i + 1`; bit `L` the fusion design.
    pub infeasible_flags: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricSeries {
    pub sensors: usize,
    pub steps: Vec<StepMetrics>,
}

/// PMSE curves: `rows[t − 1][m]` for method `methods[m]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PmseTable {
    pub methods: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Per state component: `components[t − 1][m][k]`.
    pub components: Vec<Vec<Vec<f64>>>,
    pub runs: usize,
}

impl PmseTable {
    /// Time average of one method's curve.
    pub fn time_average(&self, method: &str) -> Option<f64> {
        let m = self.methods.iter().position(|x| x == method)?;
        Some(self.rows.iter().map(|r| r[m]).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn curve(&self, method: &str) -> Option<Vec<f64>> {
        let m = self.methods.iter().position(|x| x == method)?;
        Some(self.rows.iter().map(|r| r[m]).collect())
    }
}

fn squared_error(x: &DVector<f64>, est: &DVector<f64>) -> f64 {
    (x - est).norm_squared()
}

fn solver_error(step: usize, what: &str, status: SolveStatus) -> Error {
    Error::Solver {
        step,
        detail: format!("{what}: {status:?}"),
    }
}

/// Certified designs are used as is; infeasible ones fall back and are
/// flagged; any other failure aborts.
fn accept_status(status: SolveStatus, certified: bool, step: usize, what: &str) -> Result<bool> {
    match (status, certified) {
        (_, true) => Ok(true),
        (SolveStatus::Infeasible, _) | (SolveStatus::Optimal, false) => Ok(false),
        (s, _) => Err(solver_error(step, what, s)),
    }
}

/// Local and fusion designs of one step of the linear pipeline.
#[derive(Debug, Clone)]
pub struct LinearStepDesign {
    pub systems: Vec<LocalSystem>,
    pub gains: Vec<LocalGainResult>,
    /// Gains actually applied (the design, or the fallback when flagged).
    pub used_gains: Vec<DMatrix<f64>>,
    pub stacked: StackedErrorSystem,
    pub fusion: FusionWeights,
    pub flags: u32,
}

/// Gain and weight schedule of a linear model; it depends only on the model
/// matrices, so it is shared by every run over the same model.
#[derive(Debug, Clone)]
pub struct LinearDesign {
    /// `steps[t − 1]`.
    pub steps: Vec<LinearStepDesign>,
}

pub fn design_linear<M: LinearTimeVaryingModel + ?Sized>(model: &M, horizon: usize) -> Result<LinearDesign> {
    let l = model.sensor_count();
    let n = model.state_dim();
    let mut steps: Vec<LinearStepDesign> = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let mut flags = 0u32;
        let mut systems = Vec::with_capacity(l);
        let mut gains = Vec::with_capacity(l);
        let mut used = Vec::with_capacity(l);
        for i in 0..l {
            let sys = LocalSystem::from_model(model, i, t);
            let g = linear::design_local_gain(&sys)?;
            let k = if accept_status(g.status, g.certified, t, &format!("local gain {}", i + 1))? {
                g.k.clone()
            } else {
                flags |= 1 << i;
                let prev = steps.last().map(|s| &s.used_gains[i]);
                linear::fallback_gain(prev, n, sys.c.nrows())
            };
            systems.push(sys);
            gains.push(g);
            used.push(k);
        }
        let maps: Vec<LocalErrorMap> = systems
            .iter()
            .zip(&used)
            .map(|(s, k)| LocalErrorMap::new(k, &s.a, &s.b, &s.c, &s.b_sensor))
            .collect();
        let stacked = fusion::build_stacked(&maps, NoiseLayout::LinearShared)?;
        let mut weights = fusion::solve_fusion_weights(&stacked)?;
        if !accept_status(weights.status, weights.certified, t, "fusion weights")? {
            flags |= 1 << l;
            weights = FusionWeights {
                status: weights.status,
                objective: weights.objective,
                ..FusionWeights::equal(n, l)
            };
        }
        steps.push(LinearStepDesign {
            systems,
            gains,
            used_gains: used,
            stacked,
            fusion: weights,
            flags,
        });
    }
    Ok(LinearDesign { steps })
}

/// One simulated run of a pipeline: truth, local and fused estimates, metrics.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: MetricSeries,
    pub record: TrajectoryRecord,
    /// `local[t][i] = x̂_i(t)` for `t = 0…T`.
    pub local: Vec<Vec<DVector<f64>>>,
    /// `fused[t] = x̂(t)`; entry 0 is the plain average of the initial estimates.
    pub fused: Vec<DVector<f64>>,
}

fn average(xs: &[DVector<f64>]) -> DVector<f64> {
    xs.iter().fold(DVector::zeros(xs[0].len()), |a, x| a + x) / xs.len() as f64
}

/// Runs the linear pipeline for one noise realization against a design.
pub fn run_linear_with_design<M, N>(
    config: &ExperimentConfig,
    model: &M,
    design: &LinearDesign,
    noise: &N,
    run: u64,
) -> Result<RunOutput>
where
    M: LinearTimeVaryingModel + ?Sized,
    N: NoiseSource + ?Sized,
{
    let horizon = design.steps.len();
    let record = models::simulate_linear(model, noise, &config.initial_state(), horizon, run)?;
    let l = model.sensor_count();
    let mut local = vec![config.initial_estimates()];
    let mut fused = vec![average(&local[0])];
    let mut steps = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let d = &design.steps[t - 1];
        let prev = &local[t - 1];
        let ests: Vec<DVector<f64>> = (0..l)
            .map(|i| {
                linear::lse_predict_correct(
                    &d.systems[i].a,
                    &d.systems[i].c,
                    &prev[i],
                    &record.measurements[t - 1][i],
                    &d.used_gains[i],
                )
            })
            .collect();
        let x_f = fusion::fuse(&d.fusion.omegas, &ests)?;
        let x = &record.states[t];
        steps.push(StepMetrics {
            t,
            se_lse: ests.iter().map(|e| squared_error(x, e)).collect(),
            se_dfe: squared_error(x, &x_f),
            obj_local: d.gains.iter().map(|g| g.objective).collect(),
            obj_fusion: d.fusion.objective,
            jd: d.systems.iter().zip(&d.used_gains).map(|(s, k)| s.contraction(k)).collect(),
            infeasible_flags: d.flags,
        });
        local.push(ests);
        fused.push(x_f);
    }
    Ok(RunOutput {
        series: MetricSeries { sensors: l, steps },
        record,
        local,
        fused,
    })
}

/// A linear experiment: the shared design and the run with index 0.
#[derive(Debug, Clone)]
pub struct LinearExperiment {
    pub model: TrackingModel,
    pub design: LinearDesign,
    pub run: RunOutput,
}

/// Algorithm for linear models: local gains, fusion weights, local updates
/// and fusion at every step, for run 0 of the configured seed.
pub fn run_linear_experiment(config: &ExperimentConfig) -> Result<LinearExperiment> {
    config.validate()?;
    if config.experiment != Experiment::Tracking {
        return Err(Error::Config("linear experiment requires the tracking model".into()));
    }
    let model = config.tracking_model();
    let design = design_linear(&model, config.horizon)?;
    let run = run_linear_with_design(config, &model, &design, &config.noise_source(), 0)?;
    Ok(LinearExperiment { model, design, run })
}

/// Designs of one step of the nonlinear pipeline.
#[derive(Debug, Clone)]
pub struct NonlinearStepDesign {
    pub systems: Vec<LinearizedSystem>,
    pub gains: Vec<NonlinearGainResult>,
    pub used_gains: Vec<DMatrix<f64>>,
    /// Present when fusion was computed.
    pub stacked: Option<StackedErrorSystem>,
    pub fusion: FusionWeights,
    pub flags: u32,
}

#[derive(Debug, Clone)]
pub struct NonlinearRun {
    pub output: RunOutput,
    /// `steps[t − 1]`.
    pub steps: Vec<NonlinearStepDesign>,
}

/// Runs the nonlinear pipeline for one noise realization. With
/// `with_fusion = false` only the local estimators are designed and the
/// fused estimate is the plain average.
pub fn run_nonlinear<M, N>(
    config: &ExperimentConfig,
    model: &M,
    noise: &N,
    run: u64,
    with_fusion: bool,
) -> Result<NonlinearRun>
where
    M: NonlinearModel + ?Sized,
    N: NoiseSource + ?Sized,
{
    let horizon = config.horizon;
    let record = models::simulate_nonlinear(model, noise, &config.initial_state(), horizon, run)?;
    let l = model.sensor_count();
    let n = model.state_dim();
    let mut local = vec![config.initial_estimates()];
    let mut fused = vec![average(&local[0])];
    let mut metrics = Vec::with_capacity(horizon);
    let mut designs: Vec<NonlinearStepDesign> = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let mut flags = 0u32;
        let mut systems = Vec::with_capacity(l);
        let mut gains = Vec::with_capacity(l);
        let mut used = Vec::with_capacity(l);
        let mut ests = Vec::with_capacity(l);
        for i in 0..l {
            let prev = &local[t - 1][i];
            let sys = nonlinear::linearized_system(model, prev, i, t).map_err(|e| Error::Solver {
                step: t,
                detail: format!("linearization for sensor {}: {e}", i + 1),
            })?;
            let g = nonlinear::design_nonlinear_gain(&sys)?;
            let k = if accept_status(g.status, g.certified, t, &format!("local gain {}", i + 1))? {
                g.k.clone()
            } else {
                flags |= 1 << i;
                let prev_k = designs.last().map(|s| &s.used_gains[i]);
                linear::fallback_gain(prev_k, n, sys.c_j.nrows())
            };
            let mut est = nonlinear::NonlinearLocalEstimator::new(i, prev.clone());
            nonlinear::nlse_update(&mut est, model, &record.measurements[t - 1][i], &k)?;
            ests.push(est.estimate);
            systems.push(sys);
            gains.push(g);
            used.push(k);
        }
        let (stacked, weights) = if with_fusion {
            let maps: Vec<LocalErrorMap> = systems
                .iter()
                .zip(&used)
                .map(|(s, k)| LocalErrorMap::new(k, &s.a_j, &s.b, &s.c_j, &s.b_sensor))
                .collect();
            let stacked = fusion::build_stacked(&maps, NoiseLayout::NonlinearPerSensor)?;
            let mut w = fusion::solve_fusion_weights(&stacked)?;
            if !accept_status(w.status, w.certified, t, "fusion weights")? {
                flags |= 1 << l;
                w = FusionWeights {
                    status: w.status,
                    objective: w.objective,
                    ..FusionWeights::equal(n, l)
                };
            }
            (Some(stacked), w)
        } else {
            (None, FusionWeights::equal(n, l))
        };
        let x_f = fusion::fuse(&weights.omegas, &ests)?;
        let x = &record.states[t];
        metrics.push(StepMetrics {
            t,
            se_lse: ests.iter().map(|e| squared_error(x, e)).collect(),
            se_dfe: squared_error(x, &x_f),
            obj_local: gains.iter().map(|g| g.objective).collect(),
            obj_fusion: weights.objective,
            jd: systems.iter().zip(&used).map(|(s, k)| s.contraction(k)).collect(),
            infeasible_flags: flags,
        });
        designs.push(NonlinearStepDesign {
            systems,
            gains,
            used_gains: used,
            stacked,
            fusion: weights,
            flags,
        });
        local.push(ests);
        fused.push(x_f);
    }
    Ok(NonlinearRun {
        output: RunOutput {
            series: MetricSeries { sensors: l, steps: metrics },
            record,
            local,
            fused,
        },
        steps: designs,
    })
}

/// Algorithm for nonlinear models on the robot, run 0 of the configured seed.
pub fn run_nonlinear_experiment(config: &ExperimentConfig) -> Result<NonlinearRun> {
    config.validate()?;
    if config.experiment != Experiment::Robot {
        return Err(Error::Config("nonlinear experiment requires the robot model".into()));
    }
    run_nonlinear(config, &config.robot, &config.noise_source(), 0, true)
}

/// Certificate quantities of one step; negative values mean the inequality holds.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCertificates {
    pub t: usize,
    /// `eᵀe − e_prevᵀ P e_prev − ξᵀΘξ` per certified local design.
    pub local: Vec<Option<f64>>,
    /// `e_0ᵀe_0 − ξ̄ᵀ[[P, Υ], [Υᵀ, Θ]]ξ̄` when the fusion design is certified.
    pub fused: Option<f64>,
    /// `e_0ᵀe_0 − λ_max(ξ̄ξ̄ᵀ)·(Tr P + Tr Θ)`.
    pub fused_trace: Option<f64>,
}

/// Re-evaluates the per-step certificate inequalities along a linear run.
pub fn linear_certificates(design: &LinearDesign, run: &RunOutput) -> Vec<StepCertificates> {
    let rec = &run.record;
    let mut out = Vec::with_capacity(design.steps.len());
    for (idx, d) in design.steps.iter().enumerate() {
        let t = idx + 1;
        let x = &rec.states[t];
        let x_prev = &rec.states[t - 1];
        let w = &rec.process_noise[t - 1];
        let v = &rec.measurement_noise[t - 1];
        let e_prev: Vec<DVector<f64>> = run.local[t - 1].iter().map(|e| x_prev - e).collect();
        let local = d
            .gains
            .iter()
            .enumerate()
            .map(|(i, g)| {
                (d.flags & (1 << i) == 0).then(|| {
                    let xi = DVector::from_iterator(w.len() + v[i].len(), w.iter().chain(v[i].iter()).copied());
                    let e = x - &run.local[t][i];
                    linear::performance_index(&e, &e_prev[i], &xi, g)
                })
            })
            .collect();
        let fusion_ok = d.flags & (1 << d.gains.len()) == 0;
        let (fused, fused_trace) = if fusion_ok {
            let stacked_e: Vec<f64> = e_prev.iter().flat_map(|e| e.iter().copied()).collect();
            let e_f_prev = DVector::from_vec(stacked_e);
            let xi = d.stacked.stack_noise(w, v);
            let e0 = x - &run.fused[t];
            let e0e0 = e0.norm_squared();
            let bound = fusion::fused_bound(&d.fusion, &e_f_prev, &xi);
            let xbar_norm2 = e_f_prev.norm_squared() + xi.norm_squared();
            let trace = d.fusion.p.trace() + d.fusion.theta.trace();
            (Some(e0e0 - bound), Some(e0e0 - xbar_norm2 * trace))
        } else {
            (None, None)
        };
        out.push(StepCertificates {
            t,
            local,
            fused,
            fused_trace,
        });
    }
    out
}

/// Estimators compared in PMSE tables.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// Proposed local estimator of a sensor (zero-based).
    ProposedLse(usize),
    ProposedDfe,
    /// Kalman filter on one sensor with the baseline covariances scaled.
    Kf { sensor: usize, q_scale: f64, r_scale: f64 },
    Ekf(usize),
    Ukf(usize),
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Self::ProposedLse(i) => format!("lse_{}", i + 1),
            Self::ProposedDfe => "dfe".into(),
            Self::Kf { sensor, q_scale, r_scale } if *q_scale == 1.0 && *r_scale == 1.0 => {
                format!("kf_{}", sensor + 1)
            }
            Self::Kf { sensor, q_scale, r_scale } => format!("kf_{}_q{q_scale}_r{r_scale}", sensor + 1),
            Self::Ekf(i) => format!("ekf_{}", i + 1),
            Self::Ukf(i) => format!("ukf_{}", i + 1),
        }
    }

    /// Inverse of [`Method::label`].
    pub fn from_label(label: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown method {label:?}"));
        let sensor = |s: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i - 1),
                _ => Err(bad()),
            }
        };
        if label == "dfe" {
            return Ok(Self::ProposedDfe);
        }
        let (kind, rest) = label.split_once('_').ok_or_else(bad)?;
        match kind {
            "lse" => Ok(Self::ProposedLse(sensor(rest)?)),
            "ekf" => Ok(Self::Ekf(sensor(rest)?)),
            "ukf" => Ok(Self::Ukf(sensor(rest)?)),
            "kf" => {
                let mut parts = rest.split('_');
                let i = sensor(parts.next().ok_or_else(bad)?)?;
                let mut scale = |prefix: char| -> Result<f64> {
                    match parts.next() {
                        None => Ok(1.0),
                        Some(p) => p.strip_prefix(prefix).and_then(|v| v.parse().ok()).ok_or_else(bad),
                    }
                };
                let q_scale = scale('q')?;
                let r_scale = scale('r')?;
                Ok(Self::Kf {
                    sensor: i,
                    q_scale,
                    r_scale,
                })
            }
            _ => Err(bad()),
        }
    }

    fn needs_fusion(&self) -> bool {
        matches!(self, Self::ProposedDfe)
    }
}

/// Thread pool sized by `FUSIONEST_THREADS` (unset or `0` = automatic).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("FUSIONEST_THREADS") {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("FUSIONEST_THREADS must be a nonnegative integer, got {s:?}")))?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn baseline_state(config: &ExperimentConfig, sensor: usize, q_scale: f64, r_scale: f64) -> KalmanState {
    let (q, rs) = config.baseline_covariances();
    let n = config.state_dim();
    let x0 = config.initial_estimates()[sensor].clone();
    KalmanState::new(
        x0,
        DMatrix::identity(n, n) * config.baseline_p0(),
        q * q_scale,
        &rs[sensor] * r_scale,
    )
}

/// Estimates of every method for one run, `out[m][t − 1]`, and the truth.
fn run_methods(
    config: &ExperimentConfig,
    methods: &[Method],
    design: Option<&LinearDesign>,
    run: u64,
) -> Result<(TrajectoryRecord, Vec<Vec<DVector<f64>>>)> {
    let noise = config.noise_source();
    let horizon = config.horizon;
    let proposed = match config.experiment {
        Experiment::Tracking => {
            let model = config.tracking_model();
            let design = design.ok_or_else(|| Error::Config("tracking PMSE needs a design".into()))?;
            run_linear_with_design(config, &model, design, &noise, run)?
        }
        Experiment::Robot => {
            let fusion_needed = methods.iter().any(Method::needs_fusion);
            run_nonlinear(config, &config.robot, &noise, run, fusion_needed)?.output
        }
    };
    let record = &proposed.record;
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let estimates: Vec<DVector<f64>> = match *method {
            Method::ProposedLse(i) => proposed.local[1..].iter().map(|e| e[i].clone()).collect(),
            Method::ProposedDfe => proposed.fused[1..].to_vec(),
            Method::Kf { sensor, q_scale, r_scale } => {
                if config.experiment != Experiment::Tracking {
                    return Err(Error::Config("the Kalman filter baseline needs a linear model".into()));
                }
                let model = config.tracking_model();
                let mut s = baseline_state(config, sensor, q_scale, r_scale);
                let mut xs = Vec::with_capacity(horizon);
                for t in 1..=horizon {
                    s = baselines::kf_step(&s, &model, sensor, t, &record.measurements[t - 1][sensor])?;
                    xs.push(s.x.clone());
                }
                xs
            }
            Method::Ekf(sensor) | Method::Ukf(sensor) => {
                let robot;
                let tracking;
                let wrapped;
                let model: &dyn NonlinearModel = match config.experiment {
                    Experiment::Robot => {
                        robot = config.robot.clone();
                        &robot
                    }
                    Experiment::Tracking => {
                        tracking = config.tracking_model();
                        if let SamplingSchedule::Sinusoidal { .. } = tracking.schedule {
                            return Err(Error::Config(
                                "EKF/UKF on tracking needs a constant sampling period".into(),
                            ));
                        }
                        wrapped = models::LinearAsNonlinear(&tracking);
                        &wrapped
                    }
                };
                let mut s = baseline_state(config, sensor, 1.0, 1.0);
                let params = UkfParams::default();
                let mut xs = Vec::with_capacity(horizon);
                for t in 1..=horizon {
                    let y = &record.measurements[t - 1][sensor];
                    s = match method {
                        Method::Ekf(_) => baselines::ekf_step(&s, model, sensor, t, y),
                        _ => baselines::ukf_step(&s, model, sensor, t, y, &params),
                    }
                    .map_err(|e| Error::Solver {
                        step: t,
                        detail: format!("{} baseline: {e}", method.label()),
                    })?;
                    xs.push(s.x.clone());
                }
                xs
            }
        };
        out.push(estimates);
    }
    Ok((proposed.record, out))
}

/// `PMSE(t) = (1/N) Σ_runs ‖x(t) − x̂(t)‖²` for each method, runs seeded by
/// `(seed, run)`. Runs execute in parallel; the reduction is ordered, so the
/// result does not depend on the thread count.
pub fn monte_carlo_pmse(config: &ExperimentConfig, methods: &[Method]) -> Result<PmseTable> {
    config.validate()?;
    if config.runs == 0 {
        return Err(Error::Config("Monte Carlo needs at least one run".into()));
    }
    let design = match config.experiment {
        Experiment::Tracking => Some(design_linear(&config.tracking_model(), config.horizon)?),
        Experiment::Robot => None,
    };
    let n = config.state_dim();
    let horizon = config.horizon;
    let pool = thread_pool()?;
    // Per run: total and per-component squared errors, `[t][m]` and `[t][m][k]`.
    let per_run: Vec<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> = pool.install(|| {
        (0..config.runs as u64)
            .into_par_iter()
            .map(|run| {
                let (record, estimates) = run_methods(config, methods, design.as_ref(), run)?;
                let mut se = vec![vec![0.0; methods.len()]; horizon];
                let mut comp = vec![vec![vec![0.0; n]; methods.len()]; horizon];
                for (m, xs) in estimates.iter().enumerate() {
                    for (t, est) in xs.iter().enumerate() {
                        let x = &record.states[t + 1];
                        se[t][m] = squared_error(x, est);
                        for k in 0..n {
                            comp[t][m][k] = (x[k] - est[k]).powi(2);
                        }
                    }
                }
                Ok((se, comp))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut rows = vec![vec![0.0; methods.len()]; horizon];
    let mut components = vec![vec![vec![0.0; n]; methods.len()]; horizon];
    for (se, comp) in &per_run {
        for t in 0..horizon {
            for m in 0..methods.len() {
                rows[t][m] += se[t][m];
                for k in 0..n {
                    components[t][m][k] += comp[t][m][k];
                }
            }
        }
    }
    let scale = config.runs as f64;
    for t in 0..horizon {
        for m in 0..methods.len() {
            rows[t][m] /= scale;
            for k in 0..n {
                components[t][m][k] /= scale;
            }
        }
    }
    Ok(PmseTable {
        methods: methods.iter().map(Method::label).collect(),
        rows,
        components,
        runs: config.runs,
    })
}

/// Default PMSE method set for an experiment.
pub fn default_methods(config: &ExperimentConfig) -> Vec<Method> {
    match config.experiment {
        Experiment::Tracking => vec![
            Method::ProposedLse(0),
            Method::ProposedLse(1),
            Method::ProposedDfe,
            Method::Kf {
                sensor: 0,
                q_scale: 1.0,
                r_scale: 1.0,
            },
            Method::Kf {
                sensor: 1,
                q_scale: 1.0,
                r_scale: 1.0,
            },
            Method::Kf {
                sensor: 0,
                q_scale: 10.0,
                r_scale: 0.1,
            },
            Method::Kf {
                sensor: 0,
                q_scale: 10.0,
                r_scale: 10.0,
            },
        ],
        Experiment::Robot => vec![
            Method::ProposedLse(0),
            Method::ProposedLse(1),
            Method::ProposedDfe,
            Method::Ekf(0),
            Method::Ukf(0),
        ],
    }
}
