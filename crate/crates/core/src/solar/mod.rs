//! Solar geometry: where the sun is for a given place and UTC instant, and
//! when it is above the horizon on a given day.
//!
//! Positions are geometric (no atmospheric refraction) and topocentric.
//! Everything here is a pure function of its inputs.

mod spa;
mod tables;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::golden_section_minimize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolarError {
    #[error("latitude {0}° outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0}° outside [-180, 180]")]
    InvalidLongitude(f64),
    #[error("elevation {0}° outside [-90, 90]")]
    InvalidElevation(f64),
    #[error("azimuth {0}° is not finite")]
    InvalidAzimuth(f64),
    #[error("invalid UTC instant: {0}")]
    InvalidInstant(String),
}

/// A point on the earth's surface; longitude is east-positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLocation")]
pub struct GeoLocation {
    lat_deg: f64,
    lon_deg: f64,
}

#[derive(Deserialize)]
struct RawLocation {
    lat_deg: f64,
    lon_deg: f64,
}

impl TryFrom<RawLocation> for GeoLocation {
    type Error = SolarError;

    fn try_from(raw: RawLocation) -> Result<Self, Self::Error> {
        GeoLocation::new(raw.lat_deg, raw.lon_deg)
    }
}

impl GeoLocation {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self, SolarError> {
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(SolarError::InvalidLatitude(lat_deg));
        }
        if !(-180.0..=180.0).contains(&lon_deg) {
            return Err(SolarError::InvalidLongitude(lon_deg));
        }
        Ok(Self { lat_deg, lon_deg })
    }

    pub fn lat_deg(&self) -> f64 {
        self.lat_deg
    }

    pub fn lon_deg(&self) -> f64 {
        self.lon_deg
    }
}

/// A UTC instant at one-second resolution.
///
/// Stored as seconds since the Unix epoch; displayed and serialized as
/// `YYYY-MM-DDTHH:MM:SSZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UtcInstant(i64);

impl UtcInstant {
    pub fn from_ymd_hms(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        minute: u32,
        second: u32,
    ) -> Result<Self, SolarError> {
        let date = NaiveDate::from_ymd_opt(year, month, day).ok_or_else(|| {
            SolarError::InvalidInstant(format!("{year:04}-{month:02}-{day:02} is not a date"))
        })?;
        let time = NaiveTime::from_hms_opt(hour, minute, second).ok_or_else(|| {
            SolarError::InvalidInstant(format!("{hour:02}:{minute:02}:{second:02} is not a time"))
        })?;
        Ok(Self(date.and_time(time).and_utc().timestamp()))
    }

    pub fn from_unix_seconds(secs: i64) -> Self {
        Self(secs)
    }

    pub fn unix_seconds(self) -> i64 {
        self.0
    }

    /// 00:00:00 UTC on `date`.
    pub fn midnight(date: NaiveDate) -> Self {
        Self(date.and_time(NaiveTime::MIN).and_utc().timestamp())
    }

    pub fn date(self) -> NaiveDate {
        self.naive().date()
    }

    pub fn offset_seconds(self, secs: i64) -> Self {
        Self(self.0 + secs)
    }

    fn naive(self) -> NaiveDateTime {
        DateTime::from_timestamp(self.0, 0)
            .expect("unix seconds within chrono's range")
            .naive_utc()
    }
}

impl fmt::Display for UtcInstant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.naive().format("%Y-%m-%dT%H:%M:%SZ"))
    }
}

impl FromStr for UtcInstant {
    type Err = SolarError;

    /// Accepts `YYYY-MM-DDTHH:MM:SS` with an optional trailing `Z`; a space
    /// may replace the `T`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_end_matches('Z').replacen(' ', "T", 1);
        NaiveDateTime::parse_from_str(&trimmed, "%Y-%m-%dT%H:%M:%S")
            .map(|dt| Self(dt.and_utc().timestamp()))
            .map_err(|e| SolarError::InvalidInstant(format!("{s:?}: {e}")))
    }
}

impl TryFrom<String> for UtcInstant {
    type Error = SolarError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<UtcInstant> for String {
    fn from(t: UtcInstant) -> Self {
        t.to_string()
    }
}

/// Sun direction: elevation above the horizon and azimuth clockwise from
/// true north.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarPosition {
    elevation_deg: f64,
    azimuth_deg: f64,
}

impl SolarPosition {
    /// Validates elevation and wraps azimuth into `[0, 360)`.
    pub fn new(elevation_deg: f64, azimuth_deg: f64) -> Result<Self, SolarError> {
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(SolarError::InvalidElevation(elevation_deg));
        }
        if !azimuth_deg.is_finite() {
            return Err(SolarError::InvalidAzimuth(azimuth_deg));
        }
        let mut azimuth_deg = azimuth_deg.rem_euclid(360.0);
        if azimuth_deg >= 360.0 {
            azimuth_deg = 0.0;
        }
        Ok(Self {
            elevation_deg,
            azimuth_deg,
        })
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }
}

/// Geometric topocentric sun position.
pub fn solar_position(loc: GeoLocation, t: UtcInstant) -> SolarPosition {
    let (elevation_deg, azimuth_deg) = spa::topocentric(loc.lat_deg, loc.lon_deg, t.unix_seconds());
    SolarPosition {
        elevation_deg,
        azimuth_deg,
    }
}

fn elevation_at(loc: GeoLocation, secs: i64) -> f64 {
    spa::topocentric(loc.lat_deg, loc.lon_deg, secs).0
}

/// The part of a local solar day during which the sun is above the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaylightWindow {
    /// First second with positive elevation (window start for polar day).
    pub sunrise: UtcInstant,
    /// Last second with positive elevation (window end for polar day).
    pub sunset: UtcInstant,
    /// Second of maximum elevation.
    pub solar_noon: UtcInstant,
}

impl DaylightWindow {
    pub fn duration_seconds(&self) -> i64 {
        self.sunset.unix_seconds() - self.sunrise.unix_seconds()
    }
}

const HALF_DAY: i64 = 43_200;
const SCAN_STEP: i64 = 600;

/// Mean solar noon of the local day `date` at `loc`, in UTC seconds.
fn mean_solar_noon(loc: GeoLocation, date: NaiveDate) -> i64 {
    UtcInstant::midnight(date).unix_seconds() + HALF_DAY - (loc.lon_deg * 240.0).round() as i64
}

/// Local solar day containing `t`: the UTC instant shifted by
/// longitude/15 hours, truncated to a date. This is the `date` that
/// [`daylight_window`] expects.
pub fn local_solar_date(loc: GeoLocation, t: UtcInstant) -> NaiveDate {
    t.offset_seconds((loc.lon_deg * 240.0).round() as i64)
        .date()
}

/// Daylight on the local solar day `date`, i.e. the 24 h centred on mean
/// solar noon (12:00 UTC shifted by −longitude/15 hours).
///
/// Returns `None` for polar night. For polar day the window spans the whole
/// 24 h. Crossings are located by bisection to one second.
pub fn daylight_window(loc: GeoLocation, date: NaiveDate) -> Option<DaylightWindow> {
    let centre = mean_solar_noon(loc, date);
    let (lo, hi) = (centre - HALF_DAY, centre + HALF_DAY);
    let elev = |s: i64| elevation_at(loc, s);

    let samples: Vec<(i64, f64)> = (lo..=hi)
        .step_by(SCAN_STEP as usize)
        .map(|s| (s, elev(s)))
        .collect();

    let noon = refine_extremum(&samples, lo, hi, |s| -elev(s));
    if elev(noon) <= 0.0 {
        return None;
    }

    let morning: Vec<_> = samples
        .iter()
        .copied()
        .filter(|&(s, _)| s <= noon)
        .collect();
    let evening: Vec<_> = samples
        .iter()
        .copied()
        .filter(|&(s, _)| s >= noon)
        .collect();
    let dawn_low = refine_extremum(&morning, lo, noon, elev);
    let dusk_low = refine_extremum(&evening, noon, hi, elev);

    let sunrise = if elev(dawn_low) > 0.0 {
        lo
    } else {
        // elev(a) <= 0 < elev(b)
        let (mut a, mut b) = (dawn_low, noon);
        while b - a > 1 {
            let mid = a + (b - a) / 2;
            if elev(mid) > 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
        b
    };
    let sunset = if elev(dusk_low) > 0.0 {
        hi
    } else {
        // elev(a) > 0 >= elev(b)
        let (mut a, mut b) = (noon, dusk_low);
        while b - a > 1 {
            let mid = a + (b - a) / 2;
            if elev(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    };

    Some(DaylightWindow {
        sunrise: UtcInstant(sunrise),
        sunset: UtcInstant(sunset),
        solar_noon: UtcInstant(noon),
    })
}

/// Second in `[lo, hi]` minimizing `f`, seeded from the coarse `samples`.
fn refine_extremum<F: Fn(i64) -> f64>(samples: &[(i64, f64)], lo: i64, hi: i64, f: F) -> i64 {
    let seed = samples
        .iter()
        .map(|&(s, _)| (s, f(s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, _)| s)
        .unwrap_or(lo);
    let a = (seed - SCAN_STEP).max(lo);
    let b = (seed + SCAN_STEP).min(hi);
    let (x, _) = golden_section_minimize(|x: f64| f(x.round() as i64), a as f64, b as f64, 1.0);
    let x = x.round() as i64;
    [x - 1, x, x + 1, seed]
        .into_iter()
        .filter(|s| (lo..=hi).contains(s))
        .min_by(|&p, &q| f(p).total_cmp(&f(q)).then(p.cmp(&q)))
        .unwrap_or(seed)
}
