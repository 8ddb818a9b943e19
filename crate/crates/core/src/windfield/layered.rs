use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;

use super::{check_query, WindModel, WindSample, ALT_MAX_M, ALT_MIN_M, ALT_SPAN_M};
use crate::rng::{self, purpose};
use crate::{Error, Result};

/// One horizontally uniform wind layer.
#[derive(Debug, Clone, PartialEq)]
pub struct WindLayer {
    pub center_m: f64,
    pub bearing_rad: f64,
    pub speed_mps: f64,
    /// Half-width of the triangular blending kernel.
    pub extent_m: f64,
    /// rad/min
    pub bearing_rate: f64,
    /// m/s per minute
    pub speed_rate: f64,
    /// Amplitude (m/s) of an optional sinusoidal speed modulation.
    pub modulation_mps: f64,
    pub modulation_period_min: f64,
}

impl WindLayer {
    pub fn steady(center_m: f64, bearing_rad: f64, speed_mps: f64, extent_m: f64) -> Self {
        Self {
            center_m,
            bearing_rad,
            speed_mps,
            extent_m,
            bearing_rate: 0.0,
            speed_rate: 0.0,
            modulation_mps: 0.0,
            modulation_period_min: 1440.0,
        }
    }

    fn weight(&self, altitude_m: f64) -> f64 {
        (1.0 - (altitude_m - self.center_m).abs() / self.extent_m).max(0.0)
    }

    fn components_at(&self, t_min: f64, phase: f64) -> (f64, f64) {
        let modulation = if self.modulation_mps != 0.0 {
            self.modulation_mps * (TAU * t_min / self.modulation_period_min + phase).sin()
        } else {
            0.0
        };
        let speed = (self.speed_mps + self.speed_rate * t_min + modulation).max(0.0);
        let (s, c) = (self.bearing_rad + self.bearing_rate * t_min).sin_cos();
        (speed * s, speed * c)
    }
}

/// Procedural truth model: a stack of layers blended in altitude with
/// triangular kernels, with linear drift and optional sinusoidal modulation
/// in time. Horizontally homogeneous.
#[derive(Debug, Clone)]
pub struct LayeredWindModel {
    layers: Vec<WindLayer>,
    phases: Vec<f64>,
    seed: u64,
    v_max: f64,
}

impl LayeredWindModel {
    pub fn new(layers: Vec<WindLayer>, seed: u64, v_max: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidWindModel("no layers".into()));
        }
        if !(v_max > 0.0 && v_max.is_finite()) {
            return Err(Error::InvalidWindModel(format!("v_max must be positive, got {v_max}")));
        }
        for (i, l) in layers.iter().enumerate() {
            let finite = [
                l.center_m,
                l.bearing_rad,
                l.speed_mps,
                l.extent_m,
                l.bearing_rate,
                l.speed_rate,
                l.modulation_mps,
                l.modulation_period_min,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !finite || l.extent_m <= 0.0 || l.speed_mps < 0.0 || l.modulation_period_min <= 0.0 {
                return Err(Error::InvalidWindModel(format!(
                    "layer {i} has invalid parameters: {l:?}"
                )));
            }
        }
        if let Some(gap) = first_uncovered_altitude(&layers) {
            return Err(Error::InvalidWindModel(format!("no layer covers altitude {gap} m")));
        }
        let mut phase_rng = rng::stream(seed, &[purpose::WIND]);
        let phases = layers.iter().map(|_| phase_rng.random::<f64>() * TAU).collect();
        Ok(Self {
            layers,
            phases,
            seed,
            v_max,
        })
    }

    /// One layer spanning the whole band: a constant field.
    pub fn uniform(bearing_rad: f64, speed_mps: f64) -> Self {
        Self::new(
            vec![WindLayer::steady(20_000.0, bearing_rad, speed_mps, ALT_SPAN_M)],
            0,
            super::DEFAULT_V_MAX,
        )
        .expect("uniform layer is valid")
    }

    /// Four evenly spaced steady layers blowing east, west, north and south
    /// (bottom to top). Each opposing pair sits in adjacent layers, so a
    /// balloon reverses its drift with a single short altitude change.
    pub fn opposing_layers(speed_mps: f64, v_max: f64) -> Self {
        let bearings = [FRAC_PI_2, 1.5 * PI, 0.0, PI];
        let spacing = ALT_SPAN_M / 3.0;
        let layers = bearings
            .iter()
            .enumerate()
            .map(|(i, &b)| WindLayer::steady(ALT_MIN_M + spacing * i as f64, b, speed_mps, spacing))
            .collect();
        Self::new(layers, 0, v_max).expect("preset layers are valid")
    }

    /// A randomly drawn stack of `n_layers` evenly spaced layers with slow
    /// drifts and modulations.
    pub fn random(seed: u64, n_layers: usize, v_max: f64) -> Self {
        let n = n_layers.max(2);
        let spacing = ALT_SPAN_M / (n - 1) as f64;
        let mut r = rng::stream(seed, &[purpose::WIND, 1]);
        let layers = (0..n)
            .map(|i| WindLayer {
                center_m: ALT_MIN_M + spacing * i as f64,
                bearing_rad: r.random::<f64>() * TAU,
                speed_mps: r.random_range(3.0..25.0),
                extent_m: spacing,
                bearing_rate: r.random_range(-0.002..0.002),
                speed_rate: r.random_range(-0.004..0.004),
                modulation_mps: r.random_range(0.0..3.0),
                modulation_period_min: r.random_range(360.0..1440.0),
            })
            .collect();
        Self::new(layers, seed, v_max).expect("random layers are valid")
    }

    pub fn layers(&self) -> &[WindLayer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Returns an altitude in the band where every layer weight is zero.
fn first_uncovered_altitude(layers: &[WindLayer]) -> Option<f64> {
    // Kernel supports are open intervals (c - e, c + e).
    let mut cursor = ALT_MIN_M;
    loop {
        let reach = layers
            .iter()
            .filter(|l| l.center_m - l.extent_m < cursor && cursor < l.center_m + l.extent_m)
            .map(|l| l.center_m + l.extent_m)
            .fold(f64::NEG_INFINITY, f64::max);
        if reach == f64::NEG_INFINITY {
            return Some(cursor);
        }
        if reach > ALT_MAX_M {
            return None;
        }
        cursor = reach;
    }
}

impl WindModel for LayeredWindModel {
    fn sample(&self, x_km: f64, y_km: f64, altitude_m: f64, t_min: f64) -> Result<WindSample> {
        check_query(x_km, y_km, altitude_m, t_min)?;
        let (mut east, mut north, mut total) = (0.0, 0.0, 0.0);
        for (layer, &phase) in self.layers.iter().zip(&self.phases) {
            let w = layer.weight(altitude_m);
            if w > 0.0 {
                let (e, n) = layer.components_at(t_min, phase);
                east += w * e;
                north += w * n;
                total += w;
            }
        }
        debug_assert!(total > 0.0);
        Ok(WindSample::from_components(east / total, north / total, self.v_max))
    }

    fn v_max(&self) -> f64 {
        self.v_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windfield::DEFAULT_V_MAX;
    use proptest::prelude::*;

    #[test]
    fn single_layer_is_constant() {
        let m = LayeredWindModel::uniform(0.0, 10.0);
        for &(x, y, z, t) in &[
            (0.0, 0.0, 15_000.0, 0.0),
            (-80.0, 3.0, 25_000.0, 2_000.0),
            (1.0, 1.0, 19_321.0, 7.5),
        ] {
            let w = m.sample(x, y, z, t).unwrap();
            assert!(w.bearing.abs() < 1e-12 || (w.bearing - TAU).abs() < 1e-12);
            assert!((w.speed - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_midpoint_blend() {
        // 0 rad at 16 km with 10 m/s, pi rad at 24 km with 6 m/s, hat kernels
        // of half-width 8 km. At 20 km both weights are 0.5:
        // north = 0.5*10 + 0.5*(-6) = 2, east = 0 (up to rounding of sin(pi)).
        let layers = vec![
            WindLayer::steady(16_000.0, 0.0, 10.0, 8_000.0),
            WindLayer::steady(24_000.0, PI, 6.0, 8_000.0),
        ];
        let m = LayeredWindModel::new(layers, 0, DEFAULT_V_MAX).unwrap();
        let w = m.sample(0.0, 0.0, 20_000.0, 0.0).unwrap();
        assert!((w.speed - 2.0).abs() < 1e-12, "{w:?}");
        assert!(w.bearing < 1e-12 || TAU - w.bearing < 1e-12, "{w:?}");

        // At 17 km: weights 7/8 and 1/8 (sum 1).
        // north = 7/8*10 - 1/8*6 = (70 - 6) / 8 = 8
        let w = m.sample(0.0, 0.0, 17_000.0, 0.0).unwrap();
        assert!((w.speed - 8.0).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn rejects_gaps_in_coverage() {
        let layers = vec![
            WindLayer::steady(15_000.0, 0.0, 5.0, 3_000.0),
            WindLayer::steady(25_000.0, 0.0, 5.0, 3_000.0),
        ];
        let err = LayeredWindModel::new(layers, 0, 50.0).unwrap_err();
        assert!(err.to_string().contains("18000"), "{err}");
        // kernel exactly zero at the band edge is a gap too
        let edge = vec![WindLayer::steady(20_000.0, 0.0, 5.0, 5_000.0)];
        assert!(LayeredWindModel::new(edge, 0, 50.0).is_err());
        assert!(LayeredWindModel::new(vec![], 0, 50.0).is_err());
        let negative = vec![WindLayer::steady(20_000.0, 0.0, -1.0, 9_000.0)];
        assert!(LayeredWindModel::new(negative, 0, 50.0).is_err());
    }

    #[test]
    fn opposing_preset_layers() {
        let m = LayeredWindModel::opposing_layers(10.0, 50.0);
        let bottom = m.sample(0.0, 0.0, 15_000.0, 0.0).unwrap().components();
        let second = m.sample(0.0, 0.0, 15_000.0 + 10_000.0 / 3.0, 0.0).unwrap().components();
        let top = m.sample(0.0, 0.0, 25_000.0, 0.0).unwrap().components();
        assert!((bottom.0 - 10.0).abs() < 1e-9 && bottom.1.abs() < 1e-9);
        assert!((second.0 + 10.0).abs() < 1e-9 && second.1.abs() < 1e-9);
        assert!(top.0.abs() < 1e-9 && (top.1 + 10.0).abs() < 1e-9);
    }

    #[test]
    fn speed_clamped_to_v_max() {
        let layers = vec![WindLayer::steady(20_000.0, 1.0, 80.0, 9_000.0)];
        let m = LayeredWindModel::new(layers, 0, 50.0).unwrap();
        assert_eq!(m.sample(0.0, 0.0, 20_000.0, 0.0).unwrap().speed, 50.0);
    }

    #[test]
    fn random_model_is_seed_deterministic() {
        let a = LayeredWindModel::random(5, 8, 50.0);
        let b = LayeredWindModel::random(5, 8, 50.0);
        let c = LayeredWindModel::random(6, 8, 50.0);
        let q = |m: &LayeredWindModel| m.sample(1.0, 2.0, 21_234.5, 333.0).unwrap();
        assert_eq!(q(&a), q(&b));
        assert_ne!(q(&a), q(&c));
    }

    proptest! {
        #[test]
        fn blended_speed_bounded_by_contributing_layers(
            seed in 0u64..1000,
            n in 2usize..10,
            z in ALT_MIN_M..=ALT_MAX_M,
            t in 0.0f64..3000.0,
        ) {
            let m = LayeredWindModel::random(seed, n, 1e6);
            let w = m.sample(0.0, 0.0, z, t).unwrap();
            prop_assert!(w.speed.is_finite() && w.speed >= 0.0);
            prop_assert!(w.bearing >= 0.0 && w.bearing < TAU);
            let max_contrib = m
                .layers
                .iter()
                .zip(&m.phases)
                .filter(|(l, _)| l.weight(z) > 0.0)
                .map(|(l, &p)| {
                    let (e, n) = l.components_at(t, p);
                    e.hypot(n)
                })
                .fold(0.0, f64::max);
            prop_assert!(w.speed <= max_contrib + 1e-9);
        }

        #[test]
        fn codirectional_layers_interpolate_speed_within_bounds(
            s0 in 0.0f64..40.0, s1 in 0.0f64..40.0, b in 0.0f64..TAU, z in ALT_MIN_M..=ALT_MAX_M,
        ) {
            let layers = vec![
                WindLayer::steady(ALT_MIN_M, b, s0, ALT_SPAN_M),
                WindLayer::steady(ALT_MAX_M, b, s1, ALT_SPAN_M),
            ];
            let m = LayeredWindModel::new(layers, 0, 50.0).unwrap();
            let w = m.sample(0.0, 0.0, z, 0.0).unwrap();
            prop_assert!(w.speed >= s0.min(s1) - 1e-9 && w.speed <= s0.max(s1) + 1e-9);
            // hat kernels spanning the band blend linearly
            let frac = (z - ALT_MIN_M) / ALT_SPAN_M;
            prop_assert!((w.speed - (s0 + (s1 - s0) * frac)).abs() < 1e-9);
        }
    }
}
