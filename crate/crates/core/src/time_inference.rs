//! Recovering the unknown time of day at which an image was captured.
//!
//! Only the capture date is known. Given buildings with annotated shadow
//! lengths and ground-truth heights, the capture time is the instant whose
//! solar elevation makes the shadow-derived heights agree best (in RMSE)
//! with the ground truth.
//!
//! The search is a 60 s grid over the daylight window followed by a
//! per-bracket refinement to one second. Elevation is nearly symmetric about
//! solar noon, so a morning and an afternoon minimum usually both exist; when
//! they cannot be told apart at one-second resolution the earlier one wins.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::photogrammetry::{elevation_tangent, BuildingHeight, ShadowLength};
use crate::search::integer_minimize;
use crate::solar::{daylight_window, solar_position, DaylightWindow, GeoLocation, UtcInstant};

pub const GRID_STEP_S: i64 = 60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeInferenceError {
    #[error("no buildings to fit")]
    EmptyInput,
    #[error("sun never rises at ({lat}, {lon}) on {date}")]
    PolarNight { date: NaiveDate, lat: f64, lon: f64 },
}

/// One building's annotated shadow and known height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowObservation {
    pub shadow: ShadowLength<f64>,
    pub gt_height: BuildingHeight<f64>,
}

impl ShadowObservation {
    pub fn new(shadow: ShadowLength<f64>, gt_height: BuildingHeight<f64>) -> Self {
        Self { shadow, gt_height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalMinimum {
    pub time: UtcInstant,
    pub residual_rmse_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeFit {
    pub best_time: UtcInstant,
    pub residual_rmse_m: f64,
    pub n_buildings: usize,
    pub search_step_s: i64,
    /// Daylight window the grid covered.
    pub window: DaylightWindow,
    /// Refined minimum of every grid bracket, in time order. The morning and
    /// afternoon solutions of the elevation ambiguity both appear here.
    pub local_minima: Vec<LocalMinimum>,
}

/// Height RMSE (m) if the image had been captured at `t`. Infinite when the
/// sun is not strictly between horizon and zenith.
pub fn height_rmse_at(loc: GeoLocation, t: UtcInstant, buildings: &[ShadowObservation]) -> f64 {
    let sun = solar_position(loc, t);
    let Ok(tan) = elevation_tangent::<f64>(&sun) else {
        return f64::INFINITY;
    };
    let sq: f64 = buildings
        .iter()
        .map(|b| {
            let d = b.shadow.meters() * tan - b.gt_height.meters();
            d * d
        })
        .sum();
    (sq / buildings.len() as f64).sqrt()
}

pub fn infer_capture_time(
    date: NaiveDate,
    loc: GeoLocation,
    buildings: &[ShadowObservation],
) -> Result<TimeFit, TimeInferenceError> {
    if buildings.is_empty() {
        return Err(TimeInferenceError::EmptyInput);
    }
    let window = daylight_window(loc, date).ok_or(TimeInferenceError::PolarNight {
        date,
        lat: loc.lat_deg(),
        lon: loc.lon_deg(),
    })?;
    let objective = |s: i64| height_rmse_at(loc, UtcInstant::from_unix_seconds(s), buildings);

    let (lo, hi) = (window.sunrise.unix_seconds(), window.sunset.unix_seconds());
    let mut grid: Vec<(i64, f64)> = (lo..=hi)
        .step_by(GRID_STEP_S as usize)
        .map(|s| (s, objective(s)))
        .collect();
    if grid.last().map(|&(s, _)| s) != Some(hi) {
        grid.push((hi, objective(hi)));
    }
    let grid_min = grid.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);

    let mut minima = Vec::new();
    for i in grid_bracket_minima(&grid) {
        let (centre, centre_val) = grid[i];
        let a = (centre - GRID_STEP_S).max(lo);
        let b = (centre + GRID_STEP_S).min(hi);
        let (mut t, mut v) = integer_minimize(objective, a, b);
        if centre_val < v || (centre_val == v && centre < t) {
            (t, v) = (centre, centre_val);
        }
        // Objective change over one second: minima closer than this are
        // indistinguishable at the instant resolution.
        let slack = [t - 1, t + 1]
            .into_iter()
            .filter(|s| (lo..=hi).contains(s))
            .map(|s| (objective(s) - v).abs())
            .fold(0.0, f64::max);
        minima.push((t, v, slack));
    }

    let best_val = minima.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let best_slack = minima
        .iter()
        .find(|m| m.1 == best_val)
        .map(|m| m.2)
        .unwrap_or(0.0);
    // Earliest minimum tied with the best, never worse than any grid point.
    let &(best_s, residual, _) = minima
        .iter()
        .find(|m| m.1 <= best_val + best_slack.max(m.2) && m.1 <= grid_min)
        .expect("the refined global minimum is never worse than the grid minimum");

    Ok(TimeFit {
        best_time: UtcInstant::from_unix_seconds(best_s),
        residual_rmse_m: residual,
        n_buildings: buildings.len(),
        search_step_s: GRID_STEP_S,
        window,
        local_minima: minima
            .iter()
            .map(|&(t, v, _)| LocalMinimum {
                time: UtcInstant::from_unix_seconds(t),
                residual_rmse_m: v,
            })
            .collect(),
    })
}

/// Indices of grid points that are no larger than their neighbours; on a
/// plateau only the first point is reported.
fn grid_bracket_minima(grid: &[(i64, f64)]) -> Vec<usize> {
    let n = grid.len();
    (0..n)
        .filter(|&i| {
            let v = grid[i].1;
            let left_ok = i == 0 || v < grid[i - 1].1;
            let right_ok = i + 1 == n || v <= grid[i + 1].1;
            v.is_finite() && left_ok && right_ok
        })
        .collect()
}
