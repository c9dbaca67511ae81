use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_mismatch, Result};

/// Noise levels as fractions of nominal magnitudes.
///
/// `process_std` scales the largest nominal control magnitude and is added on
/// every control channel; `measurement_std` scales the largest nominal
/// magnitude of each output channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub process_std: f64,
    pub measurement_std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn zero(seed: u64) -> Self {
        Self {
            process_std: 0.0,
            measurement_std: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.process_std >= 0.0) || !(self.measurement_std >= 0.0) {
            return Err(crate::dynamics::invalid(
                "noise",
                "standard deviation fractions must be non-negative",
            ));
        }
        Ok(())
    }

    /// Resolve fractions into absolute standard deviations.
    pub fn scaled(&self, scale: &NoiseScale) -> NoiseModel {
        NoiseModel {
            process_std: DVector::from_element(scale.control_dim, self.process_std * scale.control),
            measurement_std: &scale.outputs * self.measurement_std,
            seed: self.seed,
        }
    }
}

/// Reference magnitudes taken from a nominal trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseScale {
    pub control: f64,
    pub control_dim: usize,
    pub outputs: DVector<f64>,
}

impl NoiseScale {
    /// Single-input scale; see [`NoiseScale::from_nominal`] for the general case.
    pub fn new(control: f64, outputs: DVector<f64>) -> Self {
        Self {
            control,
            control_dim: 1,
            outputs,
        }
    }

    /// Largest absolute control entry and per-channel largest absolute output.
    pub fn from_nominal(controls: &[DVector<f64>], outputs: &[DVector<f64>]) -> Self {
        let control_dim = controls.first().map_or(0, DVector::len);
        let control = controls
            .iter()
            .flat_map(|u| u.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let nz = outputs.first().map_or(0, DVector::len);
        let outputs = DVector::from_fn(nz, |i, _| {
            outputs.iter().fold(0.0_f64, |m, z| m.max(z[i].abs()))
        });
        Self {
            control,
            control_dim,
            outputs,
        }
    }
}

/// Absolute noise standard deviations per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub process_std: DVector<f64>,
    pub measurement_std: DVector<f64>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none(control_dim: usize, output_dim: usize) -> Self {
        Self {
            process_std: DVector::zeros(control_dim),
            measurement_std: DVector::zeros(output_dim),
            seed: 0,
        }
    }

    /// Draw the noise for one episode.
    ///
    /// Process and measurement noise come from separate ChaCha streams keyed
    /// by `(seed, episode)`, so the same episode index yields the same
    /// standard-normal draws whatever the noise levels are.
    pub fn sample(&self, episode: u64, horizon: usize) -> NoiseSample {
        let mut process_rng = stream(self.seed, 2 * episode);
        let mut measure_rng = stream(self.seed, 2 * episode + 1);
        let process = (0..horizon)
            .map(|_| draw(&mut process_rng, &self.process_std))
            .collect();
        let measurement = (0..=horizon)
            .map(|_| draw(&mut measure_rng, &self.measurement_std))
            .collect();
        NoiseSample {
            process,
            measurement,
        }
    }
}

pub(crate) fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw(rng: &mut ChaCha8Rng, std: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(std.len(), |i, _| {
        let n: f64 = StandardNormal.sample(rng);
        std[i] * n
    })
}

/// Concrete noise sequences for one episode: `T` process draws and `T + 1`
/// measurement draws.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSample {
    pub process: Vec<DVector<f64>>,
    pub measurement: Vec<DVector<f64>>,
}

impl NoiseSample {
    pub fn zero(horizon: usize, control_dim: usize, output_dim: usize) -> Self {
        Self {
            process: vec![DVector::zeros(control_dim); horizon],
            measurement: vec![DVector::zeros(output_dim); horizon + 1],
        }
    }

    pub(crate) fn check(&self, horizon: usize, nu: usize, nz: usize) -> Result<()> {
        if self.process.len() < horizon || self.measurement.len() < horizon + 1 {
            return Err(dim_mismatch(format!(
                "noise sample covers {} steps, rollout needs {horizon}",
                self.process.len()
            )));
        }
        if self.process.iter().any(|w| w.len() != nu) || self.measurement.iter().any(|v| v.len() != nz)
        {
            return Err(dim_mismatch("noise sample channel count differs from system"));
        }
        Ok(())
    }

    pub fn disturb(&self, t: usize, u: &DVector<f64>) -> DVector<f64> {
        u + &self.process[t]
    }

    pub fn measure(&self, t: usize, z: &DVector<f64>) -> DVector<f64> {
        z + &self.measurement[t]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_levels_give_zero_noise() {
        let model = NoiseSpec::zero(3).scaled(&NoiseScale::new(5.0, DVector::from_vec(vec![1.0, 2.0])));
        let s = model.sample(0, 10);
        assert!(s.process.iter().all(|w| w.iter().all(|v| *v == 0.0)));
        assert!(s.measurement.iter().all(|w| w.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn common_random_numbers_across_levels() {
        let scale = NoiseScale::new(2.0, DVector::from_vec(vec![1.0, 4.0]));
        let lo = NoiseSpec { process_std: 0.1, measurement_std: 0.0, seed: 9 }.scaled(&scale);
        let hi = NoiseSpec { process_std: 0.1, measurement_std: 0.2, seed: 9 }.scaled(&scale);
        // changing the measurement level leaves the process stream untouched
        assert_eq!(lo.sample(7, 20).process, hi.sample(7, 20).process);
    }

    #[test]
    fn scale_from_nominal() {
        let u = vec![DVector::from_vec(vec![1.0, -3.0]), DVector::from_vec(vec![2.0, 0.5])];
        let z = vec![
            DVector::from_vec(vec![0.1, -2.0]),
            DVector::from_vec(vec![-0.4, 1.0]),
        ];
        let s = NoiseScale::from_nominal(&u, &z);
        assert_eq!(s.control, 3.0);
        assert_eq!(s.control_dim, 2);
        assert_eq!(s.outputs, DVector::from_vec(vec![0.4, 2.0]));
    }

    #[test]
    fn empirical_std_matches() {
        let model = NoiseSpec { process_std: 0.5, measurement_std: 0.0, seed: 1 }
            .scaled(&NoiseScale::new(2.0, DVector::zeros(1)));
        let draws: Vec<f64> = (0..4000).map(|e| model.sample(e, 1).process[0][0]).collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 / n.sqrt());
        assert!((var.sqrt() - 1.0).abs() < 0.05);
    }
}
