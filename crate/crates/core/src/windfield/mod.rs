//! Wind fields over the 15–25 km operational band.
//!
//! Bearings are the direction the air mass moves toward, clockwise from
//! north (+y), in `[0, 2π)`. Internally models blend winds as `(east, north)`
//! component vectors so that bearing wrap-around never produces artifacts.

mod forecast;
mod gridded;
mod layered;

use std::f64::consts::TAU;
use std::fmt;

pub use forecast::{ForecastModel, ForecastNoise};
pub use gridded::{write_gridded, GriddedWindModel, WindGrid};
pub use layered::{LayeredWindModel, WindLayer};

use crate::{Error, Result};

pub const ALT_MIN_M: f64 = 15_000.0;
pub const ALT_MAX_M: f64 = 25_000.0;
pub const ALT_SPAN_M: f64 = ALT_MAX_M - ALT_MIN_M;

/// Default speed clamp and normalization constant.
pub const DEFAULT_V_MAX: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindSample {
    pub bearing: f64,
    pub speed: f64,
}

impl WindSample {
    pub fn new(bearing: f64, speed: f64) -> Self {
        Self {
            bearing: wrap_bearing(bearing),
            speed,
        }
    }

    /// Builds a sample from `(east, north)` components, clamping speed to
    /// `v_max`. A zero vector gets bearing 0.
    pub fn from_components(east: f64, north: f64, v_max: f64) -> Self {
        let speed = east.hypot(north);
        let bearing = if speed > 0.0 {
            wrap_bearing(east.atan2(north))
        } else {
            0.0
        };
        Self {
            bearing,
            speed: speed.min(v_max),
        }
    }

    /// `(east, north)` components in m/s.
    pub fn components(&self) -> (f64, f64) {
        let (s, c) = self.bearing.sin_cos();
        (self.speed * s, self.speed * c)
    }
}

pub(crate) fn wrap_bearing(b: f64) -> f64 {
    let w = b.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Vertical profile at one horizontal position.
#[derive(Debug, Clone, PartialEq)]
pub struct WindColumn {
    pub levels: Vec<(f64, WindSample)>,
}

impl WindColumn {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// A queryable wind field. Implementations are immutable after construction.
pub trait WindModel: Send + Sync + fmt::Debug {
    fn sample(&self, x_km: f64, y_km: f64, altitude_m: f64, t_min: f64) -> Result<WindSample>;

    /// Speed clamp applied to every returned sample.
    fn v_max(&self) -> f64;

    /// Last time (minutes) for which the model holds data. Procedural models
    /// never run out and return `None`.
    fn time_horizon(&self) -> Option<f64> {
        None
    }
}

pub(crate) fn check_query(x_km: f64, y_km: f64, altitude_m: f64, t_min: f64) -> Result<()> {
    if !altitude_m.is_finite() || !(ALT_MIN_M..=ALT_MAX_M).contains(&altitude_m) {
        return Err(Error::AltitudeOutOfRange { altitude_m });
    }
    if !x_km.is_finite() || !y_km.is_finite() {
        return Err(Error::WindDomain(format!("non-finite position ({x_km}, {y_km})")));
    }
    if !t_min.is_finite() || t_min < 0.0 {
        return Err(Error::WindDomain(format!("time {t_min} min outside [0, inf)")));
    }
    Ok(())
}

pub fn sample_wind(model: &dyn WindModel, x_km: f64, y_km: f64, altitude_m: f64, t_min: f64) -> Result<WindSample> {
    model.sample(x_km, y_km, altitude_m, t_min)
}

/// Altitude of level `i` out of `n_levels` uniformly spaced levels.
pub fn level_altitude(i: usize, n_levels: usize) -> f64 {
    debug_assert!(n_levels >= 2 && i < n_levels);
    ALT_MIN_M + (ALT_SPAN_M * i as f64) / (n_levels - 1) as f64
}

pub fn sample_column(model: &dyn WindModel, x_km: f64, y_km: f64, t_min: f64, n_levels: usize) -> Result<WindColumn> {
    if n_levels < 2 {
        return Err(Error::Usage(format!(
            "wind column needs at least 2 levels, got {n_levels}"
        )));
    }
    let levels = (0..n_levels)
        .map(|i| {
            let alt = level_altitude(i, n_levels);
            model.sample(x_km, y_km, alt, t_min).map(|w| (alt, w))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindColumn { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn components_follow_compass_convention() {
        let (e, n) = WindSample::new(0.0, 10.0).components();
        assert!(e.abs() < 1e-12 && (n - 10.0).abs() < 1e-12);
        let (e, n) = WindSample::new(FRAC_PI_2, 10.0).components();
        assert!((e - 10.0).abs() < 1e-12 && n.abs() < 1e-12);
        let w = WindSample::from_components(-3.0, 0.0, 50.0);
        assert!((w.bearing - 1.5 * PI).abs() < 1e-12);
        assert_eq!(WindSample::from_components(0.0, 0.0, 50.0), WindSample::new(0.0, 0.0));
        assert_eq!(WindSample::from_components(60.0, 80.0, 50.0).speed, 50.0);
    }

    #[test]
    fn bearings_wrap_into_range() {
        assert!(wrap_bearing(-1e-18) < TAU);
        assert_eq!(wrap_bearing(TAU), 0.0);
        assert!((wrap_bearing(-FRAC_PI_2) - 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn column_altitudes() {
        let m = LayeredWindModel::uniform(0.0, 10.0);
        let col = sample_column(&m, 0.0, 0.0, 0.0, 37).unwrap();
        assert_eq!(col.len(), 37);
        assert_eq!(col.levels[0].0, 15_000.0);
        assert_eq!(col.levels[36].0, 25_000.0);
        assert!((col.levels[1].0 - 15_277.777_777_777_8).abs() < 1e-6);
        assert!(col.levels.iter().all(|(_, w)| *w == col.levels[0].1));

        let col = sample_column(&m, 0.0, 0.0, 0.0, 2).unwrap();
        assert_eq!(
            col.levels.iter().map(|l| l.0).collect::<Vec<_>>(),
            vec![15_000.0, 25_000.0]
        );
        assert!(sample_column(&m, 0.0, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn column_entries_equal_point_samples() {
        let m = LayeredWindModel::random(11, 6, DEFAULT_V_MAX);
        let col = sample_column(&m, 3.0, -4.0, 125.0, 19).unwrap();
        for (alt, w) in &col.levels {
            assert_eq!(*w, m.sample(3.0, -4.0, *alt, 125.0).unwrap());
        }
    }

    #[test]
    fn out_of_band_queries_fail() {
        let m = LayeredWindModel::uniform(0.0, 10.0);
        assert!(matches!(
            m.sample(0.0, 0.0, 14_999.0, 0.0),
            Err(Error::AltitudeOutOfRange { .. })
        ));
        assert!(m.sample(0.0, 0.0, 25_000.1, 0.0).is_err());
        assert!(m.sample(0.0, 0.0, f64::NAN, 0.0).is_err());
        assert!(m.sample(f64::INFINITY, 0.0, 20_000.0, 0.0).is_err());
        assert!(m.sample(0.0, 0.0, 20_000.0, -1.0).is_err());
    }
}
