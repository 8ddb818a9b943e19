use std::f64::consts::TAU;
use std::sync::Arc;

use rand::Rng;

use super::{check_query, WindModel, WindSample};
use crate::rng::{self, purpose};
use crate::Result;

const MODES: usize = 3;
/// Shortest period of the temporal drift of forecast errors (12 h).
const MIN_ERROR_PERIOD_MIN: f64 = 720.0;

/// Parameters of the forecast error model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastNoise {
    pub bearing_sd: f64,
    pub speed_sd: f64,
    pub correlation_m: f64,
}

impl ForecastNoise {
    pub const NONE: ForecastNoise = ForecastNoise {
        bearing_sd: 0.0,
        speed_sd: 0.0,
        correlation_m: 2_000.0,
    };

    pub fn is_zero(&self) -> bool {
        self.bearing_sd == 0.0 && self.speed_sd == 0.0
    }
}

impl Default for ForecastNoise {
    fn default() -> Self {
        Self {
            bearing_sd: 0.15,
            speed_sd: 1.5,
            correlation_m: 2_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    wavenumber: f64,
    omega: f64,
    phase: f64,
}

impl Mode {
    fn draw(r: &mut impl Rng, correlation_m: f64) -> Self {
        Self {
            wavenumber: r.random_range(0.5..1.5) / correlation_m,
            omega: r.random::<f64>() * TAU / MIN_ERROR_PERIOD_MIN,
            phase: r.random::<f64>() * TAU,
        }
    }
}

/// Unit-variance smooth perturbation: a sum of sinusoids in altitude with
/// slowly drifting phases.
fn smooth_field(modes: &[Mode; MODES], altitude_m: f64, t_min: f64) -> f64 {
    let amp = (2.0 / MODES as f64).sqrt();
    modes
        .iter()
        .map(|m| amp * (m.wavenumber * altitude_m + m.omega * t_min + m.phase).sin())
        .sum()
}

/// The observable forecast: the truth field plus altitude-correlated
/// bearing and speed errors. With zero noise every query returns the truth
/// sample unchanged.
#[derive(Debug, Clone)]
pub struct ForecastModel {
    base: Arc<dyn WindModel>,
    noise: ForecastNoise,
    seed: u64,
    bearing_modes: [Mode; MODES],
    speed_modes: [Mode; MODES],
}

impl ForecastModel {
    pub fn new(base: Arc<dyn WindModel>, noise: ForecastNoise, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[purpose::FORECAST]);
        let corr = noise.correlation_m.max(1.0);
        let bearing_modes = std::array::from_fn(|_| Mode::draw(&mut r, corr));
        let speed_modes = std::array::from_fn(|_| Mode::draw(&mut r, corr));
        Self {
            base,
            noise,
            seed,
            bearing_modes,
            speed_modes,
        }
    }

    pub fn base(&self) -> &Arc<dyn WindModel> {
        &self.base
    }

    pub fn noise(&self) -> ForecastNoise {
        self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl WindModel for ForecastModel {
    fn sample(&self, x_km: f64, y_km: f64, altitude_m: f64, t_min: f64) -> Result<WindSample> {
        check_query(x_km, y_km, altitude_m, t_min)?;
        let truth = self.base.sample(x_km, y_km, altitude_m, t_min)?;
        if self.noise.is_zero() {
            return Ok(truth);
        }
        let db = self.noise.bearing_sd * smooth_field(&self.bearing_modes, altitude_m, t_min);
        let ds = self.noise.speed_sd * smooth_field(&self.speed_modes, altitude_m, t_min);
        Ok(WindSample::new(
            truth.bearing + db,
            (truth.speed + ds).clamp(0.0, self.base.v_max()),
        ))
    }

    fn v_max(&self) -> f64 {
        self.base.v_max()
    }

    fn time_horizon(&self) -> Option<f64> {
        self.base.time_horizon()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windfield::{LayeredWindModel, ALT_MAX_M, ALT_MIN_M};
    use proptest::prelude::*;

    #[test]
    fn zero_noise_forecast_of_constant_field() {
        let truth: Arc<dyn WindModel> = Arc::new(LayeredWindModel::uniform(0.0, 10.0));
        let f = ForecastModel::new(truth.clone(), ForecastNoise::NONE, 99);
        let w = f.sample(12.0, -40.0, 18_000.0, 60.0).unwrap();
        assert_eq!(w, truth.sample(12.0, -40.0, 18_000.0, 60.0).unwrap());
        assert!((w.speed - 10.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_forecast_deviates_smoothly() {
        let truth: Arc<dyn WindModel> = Arc::new(LayeredWindModel::uniform(1.0, 10.0));
        let f = ForecastModel::new(truth, ForecastNoise::default(), 3);
        let a = f.sample(0.0, 0.0, 20_000.0, 0.0).unwrap();
        let b = f.sample(0.0, 0.0, 20_010.0, 0.0).unwrap();
        let far: Vec<_> = (0..50)
            .map(|i| f.sample(0.0, 0.0, ALT_MIN_M + 200.0 * i as f64, 0.0).unwrap())
            .collect();
        assert!((a.speed - b.speed).abs() < 0.05);
        assert!(far.iter().any(|w| (w.speed - 10.0).abs() > 0.3));
        // the same seed reproduces the same errors
        let g = ForecastModel::new(f.base().clone(), f.noise(), 3);
        assert_eq!(a, g.sample(0.0, 0.0, 20_000.0, 0.0).unwrap());
    }

    proptest! {
        #[test]
        fn zero_noise_equals_truth_everywhere(
            seed in 0u64..500, fseed in any::<u64>(),
            x in -300.0f64..300.0, y in -300.0f64..300.0,
            z in ALT_MIN_M..=ALT_MAX_M, t in 0.0f64..3000.0,
        ) {
            let truth: Arc<dyn WindModel> = Arc::new(LayeredWindModel::random(seed, 7, 50.0));
            let noise = ForecastNoise { bearing_sd: 0.0, speed_sd: 0.0, correlation_m: 1234.0 };
            let f = ForecastModel::new(truth.clone(), noise, fseed);
            prop_assert_eq!(f.sample(x, y, z, t).unwrap(), truth.sample(x, y, z, t).unwrap());
        }
    }
}
