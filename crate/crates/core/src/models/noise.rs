use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// The disturbance regimes used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Decaying deterministic noise: `w = (2 + 0.2 cos t)e^{−t/9}`, `v = 0.8 sin t · e^{−t/6}`.
    #[serde(rename = "type_i")]
    TypeI,
    /// Zero-mean Gaussian white noise with variances `q_w`, `q_v`.
    #[serde(rename = "type_ii")]
    TypeII,
    /// Bounded deterministic noise: `w = cos t − 0.5`, `v = 0.7 sin t − 0.3`.
    #[serde(rename = "type_iii")]
    TypeIII,
    /// Shifted uniform noise on the robot's velocity, heading and sensors.
    #[serde(rename = "type_iv")]
    TypeIV,
    Zero,
}

/// One draw of process noise and per-sensor measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    pub w: DVector<f64>,
    pub v: Vec<DVector<f64>>,
}

/// Noise indexed by step and Monte Carlo run. Implementations must be pure
/// functions of `(t, run)` so that runs are reproducible and parallel-safe.
pub trait NoiseSource: Sync {
    fn sample(&self, t: usize, run: u64) -> NoiseSample;
}

/// Built-in noise regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardNoise {
    pub kind: NoiseKind,
    pub seed: u64,
    pub q_w: f64,
    pub q_v: f64,
    w_dim: usize,
    v_dims: Vec<usize>,
}

/// Type IV measurement channels as `(scale, shift)`: `v = scale·ρ + shift`.
const TYPE_IV_V: [(f64, f64); 6] = [
    (0.05, -0.01),
    (0.02, -0.01),
    (0.03, -0.01),
    (0.05, -0.03),
    (0.02, -0.01),
    (0.06, -0.02),
];

/// Type IV process channels `(w_p, w_r, w_θ)`.
const TYPE_IV_W: [(f64, f64); 3] = [(0.2, -0.1), (0.3, -0.1), (0.2, -0.1)];

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `(seed, run, t)`; channels are separate ChaCha streams.
fn stream(seed: u64, run: u64, t: usize, channel: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ run) ^ t as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(channel);
    rng
}

impl StandardNoise {
    /// Scalar process noise and one scalar channel per tracking sensor.
    pub fn tracking(kind: NoiseKind, seed: u64, sensors: usize) -> Self {
        assert!(kind != NoiseKind::TypeIV, "Type IV noise belongs to the robot model");
        Self {
            kind,
            seed,
            q_w: 1.8,
            q_v: 0.5,
            w_dim: 1,
            v_dims: vec![1; sensors],
        }
    }

    /// Raw `(w_p, w_r, w_θ)` plus a 4-channel and a 2-channel sensor.
    pub fn robot(kind: NoiseKind, seed: u64) -> Self {
        assert!(
            matches!(kind, NoiseKind::TypeIV | NoiseKind::Zero),
            "robot noise must be Type IV or zero"
        );
        Self {
            kind,
            seed,
            q_w: 0.0,
            q_v: 0.0,
            w_dim: 3,
            v_dims: vec![4, 2],
        }
    }

    pub fn zero(w_dim: usize, v_dims: Vec<usize>) -> Self {
        Self {
            kind: NoiseKind::Zero,
            seed: 0,
            q_w: 0.0,
            q_v: 0.0,
            w_dim,
            v_dims,
        }
    }

    pub fn with_variances(mut self, q_w: f64, q_v: f64) -> Self {
        self.q_w = q_w;
        self.q_v = q_v;
        self
    }

    pub fn w_dim(&self) -> usize {
        self.w_dim
    }

    pub fn v_dims(&self) -> &[usize] {
        &self.v_dims
    }

    /// Componentwise `[lo, hi]` of the raw process channels, when bounded.
    pub fn process_bounds(&self) -> Option<Vec<(f64, f64)>> {
        match self.kind {
            NoiseKind::TypeIII => Some(vec![(-1.5, 0.5); self.w_dim]),
            NoiseKind::TypeIV => Some(TYPE_IV_W.iter().map(|&(s, c)| (c, s + c)).collect()),
            NoiseKind::Zero => Some(vec![(0.0, 0.0); self.w_dim]),
            _ => None,
        }
    }

    /// Componentwise `[lo, hi]` of each sensor's channels, when bounded.
    pub fn measurement_bounds(&self) -> Option<Vec<Vec<(f64, f64)>>> {
        match self.kind {
            NoiseKind::TypeIII => Some(self.v_dims.iter().map(|&d| vec![(-1.0, 0.4); d]).collect()),
            NoiseKind::TypeIV => {
                let all: Vec<(f64, f64)> = TYPE_IV_V.iter().map(|&(s, c)| (c, s + c)).collect();
                Some(vec![all[..4].to_vec(), all[4..].to_vec()])
            }
            NoiseKind::Zero => Some(self.v_dims.iter().map(|&d| vec![(0.0, 0.0); d]).collect()),
            _ => None,
        }
    }

    fn uniform(&self, t: usize, run: u64, channel: u64) -> f64 {
        stream(self.seed, run, t, channel).random::<f64>()
    }

    fn gaussian(&self, t: usize, run: u64, channel: u64) -> f64 {
        stream(self.seed, run, t, channel).sample(StandardNormal)
    }
}

impl NoiseSource for StandardNoise {
    fn sample(&self, t: usize, run: u64) -> NoiseSample {
        let tf = t as f64;
        let fill = |value: f64, dims: &[usize]| dims.iter().map(|&d| DVector::from_element(d, value)).collect();
        match self.kind {
            NoiseKind::Zero => NoiseSample {
                w: DVector::zeros(self.w_dim),
                v: fill(0.0, &self.v_dims),
            },
            NoiseKind::TypeI => NoiseSample {
                w: DVector::from_element(self.w_dim, (2.0 + 0.2 * tf.cos()) * (-tf / 9.0).exp()),
                v: fill(0.8 * tf.sin() * (-tf / 6.0).exp(), &self.v_dims),
            },
            NoiseKind::TypeIII => NoiseSample {
                w: DVector::from_element(self.w_dim, tf.cos() - 0.5),
                v: fill(0.7 * tf.sin() - 0.3, &self.v_dims),
            },
            NoiseKind::TypeII => {
                let (sw, sv) = (self.q_w.sqrt(), self.q_v.sqrt());
                let w = DVector::from_fn(self.w_dim, |k, _| sw * self.gaussian(t, run, k as u64));
                let mut channel = self.w_dim as u64;
                let v = self
                    .v_dims
                    .iter()
                    .map(|&d| {
                        DVector::from_fn(d, |_, _| {
                            channel += 1;
                            sv * self.gaussian(t, run, channel - 1)
                        })
                    })
                    .collect();
                NoiseSample { w, v }
            }
            NoiseKind::TypeIV => {
                let w = DVector::from_fn(3, |k, _| {
                    let (s, c) = TYPE_IV_W[k];
                    s * self.uniform(t, run, k as u64) + c
                });
                let draw = |k: usize| {
                    let (s, c) = TYPE_IV_V[k];
                    s * self.uniform(t, run, 3 + k as u64) + c
                };
                let v = vec![
                    DVector::from_fn(4, |k, _| draw(k)),
                    DVector::from_fn(2, |k, _| draw(4 + k)),
                ];
                NoiseSample { w, v }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_three_at_zero() {
        let n = StandardNoise::tracking(NoiseKind::TypeIII, 0, 2);
        let s = n.sample(0, 0);
        assert_eq!(s.w[0], 0.5);
        assert_eq!(s.v[0][0], -0.3);
        assert_eq!(s.v[1][0], -0.3);
    }

    #[test]
    fn type_one_decays() {
        let n = StandardNoise::tracking(NoiseKind::TypeI, 0, 2);
        assert!((n.sample(0, 0).w[0] - 2.2).abs() < 1e-15);
        let late = n.sample(400, 0);
        assert!(late.w[0].abs() < 1e-15 && late.v[0][0].abs() < 1e-15);
    }

    #[test]
    fn seeded_streams_repeat() {
        let a = StandardNoise::robot(NoiseKind::TypeIV, 7);
        let b = StandardNoise::robot(NoiseKind::TypeIV, 7);
        assert_eq!(a.sample(13, 4), b.sample(13, 4));
        assert_ne!(a.sample(13, 4), a.sample(13, 5));
        let g = StandardNoise::tracking(NoiseKind::TypeII, 3, 2);
        assert_eq!(g.sample(2, 1), g.sample(2, 1));
        assert_ne!(g.sample(2, 1).v[0], g.sample(2, 1).v[1]);
    }

    #[test]
    fn type_four_channel_ranges() {
        let n = StandardNoise::robot(NoiseKind::TypeIV, 1);
        let wb = n.process_bounds().unwrap();
        assert_eq!(wb[0], (-0.1, 0.1));
        let vb = n.measurement_bounds().unwrap();
        for t in 0..200 {
            let s = n.sample(t, 0);
            for (k, &(lo, hi)) in wb.iter().enumerate() {
                assert!(s.w[k] >= lo && s.w[k] <= hi);
            }
            for (i, b) in vb.iter().enumerate() {
                for (k, &(lo, hi)) in b.iter().enumerate() {
                    assert!(s.v[i][k] >= lo && s.v[i][k] <= hi);
                }
            }
        }
    }

    #[test]
    fn gaussian_moments() {
        let n = StandardNoise::tracking(NoiseKind::TypeII, 11, 2);
        let draws: Vec<f64> = (0..20_000).map(|t| n.sample(t, 0).w[0]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.05);
        assert!((var - 1.8).abs() < 0.1);
    }
}
