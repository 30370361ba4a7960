//! Topocentric sun position after Reda & Andreas' solar position algorithm
//! (NREL/TP-560-34302), without the refraction step.
//!
//! All angles are carried in degrees between steps and converted to radians
//! only at trigonometric calls, mirroring the reference description.

#![allow(clippy::many_single_char_names)]

use super::tables::{
    EARTH_B0, EARTH_B1, EARTH_L0, EARTH_L1, EARTH_L2, EARTH_L3, EARTH_L4, EARTH_L5, EARTH_R0,
    EARTH_R1, EARTH_R2, EARTH_R3, EARTH_R4, NUTATION,
};

const J2000: f64 = 2_451_545.0;
const UNIX_EPOCH_JD: f64 = 2_440_587.5;
const SECONDS_PER_DAY: f64 = 86_400.0;

const ABERRATION_ARCSEC: f64 = -20.4898;
const EQUATORIAL_PARALLAX_ARCSEC: f64 = 8.794;
const EARTH_FLATTENING: f64 = 0.996_647_19;

/// TT − UT1 in seconds, sampled every five years. Observed values up to 2025,
/// held near the recent plateau afterwards.
const DELTA_T_TABLE: [(f64, f64); 13] = [
    (1990.0, 56.86),
    (1995.0, 60.78),
    (2000.0, 63.83),
    (2005.0, 64.69),
    (2010.0, 66.07),
    (2015.0, 67.64),
    (2020.0, 69.36),
    (2025.0, 69.10),
    (2030.0, 69.50),
    (2035.0, 70.00),
    (2040.0, 70.50),
    (2045.0, 71.00),
    (2050.0, 71.50),
];

/// Piecewise-linear ΔT for a decimal year, clamped at the table ends.
pub(crate) fn delta_t_seconds(decimal_year: f64) -> f64 {
    let (first, last) = (DELTA_T_TABLE[0], DELTA_T_TABLE[DELTA_T_TABLE.len() - 1]);
    if decimal_year <= first.0 {
        return first.1;
    }
    if decimal_year >= last.0 {
        return last.1;
    }
    let window = DELTA_T_TABLE
        .windows(2)
        .find(|w| decimal_year < w[1].0)
        .expect("year lies inside the table");
    let (y0, d0) = window[0];
    let (y1, d1) = window[1];
    d0 + (d1 - d0) * (decimal_year - y0) / (y1 - y0)
}

fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

fn series(terms: &[[f64; 3]], jme: f64) -> f64 {
    terms.iter().map(|t| t[0] * (t[1] + t[2] * jme).cos()).sum()
}

fn polynomial(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Geometric topocentric `(elevation_deg, azimuth_deg)` for an observer at
/// sea level.
pub(crate) fn topocentric(lat_deg: f64, lon_deg: f64, unix_seconds: i64) -> (f64, f64) {
    let jd = unix_seconds as f64 / SECONDS_PER_DAY + UNIX_EPOCH_JD;
    let decimal_year = 2000.0 + (jd - J2000) / 365.25;
    let jde = jd + delta_t_seconds(decimal_year) / SECONDS_PER_DAY;

    let jc = (jd - J2000) / 36_525.0;
    let jce = (jde - J2000) / 36_525.0;
    let jme = jce / 10.0;

    // Heliocentric position of the earth.
    let l_terms = [
        series(&EARTH_L0, jme),
        series(&EARTH_L1, jme),
        series(&EARTH_L2, jme),
        series(&EARTH_L3, jme),
        series(&EARTH_L4, jme),
        series(&EARTH_L5, jme),
    ];
    let l = normalize_degrees((polynomial(&l_terms, jme) / 1e8).to_degrees());
    let b = (polynomial(&[series(&EARTH_B0, jme), series(&EARTH_B1, jme)], jme) / 1e8).to_degrees();
    let r_terms = [
        series(&EARTH_R0, jme),
        series(&EARTH_R1, jme),
        series(&EARTH_R2, jme),
        series(&EARTH_R3, jme),
        series(&EARTH_R4, jme),
    ];
    let r = polynomial(&r_terms, jme) / 1e8;

    // Geocentric.
    let theta = normalize_degrees(l + 180.0);
    let beta = -b;

    // Nutation in longitude and obliquity.
    let x = [
        polynomial(
            &[297.85036, 445_267.111_480, -0.001_914_2, 1.0 / 189_474.0],
            jce,
        ),
        polynomial(
            &[357.52772, 35_999.050_340, -0.000_160_3, -1.0 / 300_000.0],
            jce,
        ),
        polynomial(
            &[134.96298, 477_198.867_398, 0.008_697_2, 1.0 / 56_250.0],
            jce,
        ),
        polynomial(
            &[93.27191, 483_202.017_538, -0.003_682_5, 1.0 / 327_270.0],
            jce,
        ),
        polynomial(
            &[125.04452, -1_934.136_261, 0.002_070_8, 1.0 / 450_000.0],
            jce,
        ),
    ];
    let (mut dpsi, mut deps) = (0.0, 0.0);
    for (y, [a, bb, c, d]) in NUTATION.iter() {
        let arg: f64 = y.iter().zip(&x).map(|(&yi, &xi)| f64::from(yi) * xi).sum();
        let arg = arg.to_radians();
        dpsi += (a + bb * jce) * arg.sin();
        deps += (c + d * jce) * arg.cos();
    }
    let dpsi = dpsi / 36_000_000.0;
    let deps = deps / 36_000_000.0;

    // True obliquity of the ecliptic.
    let u = jme / 10.0;
    let eps0 = polynomial(
        &[
            84_381.448, -4_680.93, -1.55, 1_999.25, -51.38, -249.67, -39.05, 7.12, 27.87, 5.79,
            2.45,
        ],
        u,
    );
    let eps = eps0 / 3600.0 + deps;

    let aberration = ABERRATION_ARCSEC / (3600.0 * r);
    let lambda = theta + dpsi + aberration;

    // Apparent sidereal time at Greenwich.
    let nu0 = normalize_degrees(
        280.460_618_37 + 360.985_647_366_29 * (jd - J2000) + 0.000_387_933 * jc * jc
            - jc * jc * jc / 38_710_000.0,
    );
    let nu = nu0 + dpsi * eps.to_radians().cos();

    // Geocentric right ascension and declination.
    let (lambda_r, eps_r, beta_r) = (lambda.to_radians(), eps.to_radians(), beta.to_radians());
    let alpha = normalize_degrees(
        (lambda_r.sin() * eps_r.cos() - beta_r.tan() * eps_r.sin())
            .atan2(lambda_r.cos())
            .to_degrees(),
    );
    let delta = (beta_r.sin() * eps_r.cos() + beta_r.cos() * eps_r.sin() * lambda_r.sin())
        .asin()
        .to_degrees();

    let hour_angle = normalize_degrees(nu + lon_deg - alpha);

    // Parallax correction to topocentric coordinates.
    let xi = (EQUATORIAL_PARALLAX_ARCSEC / (3600.0 * r)).to_radians();
    let phi = lat_deg.to_radians();
    let u_r = (EARTH_FLATTENING * phi.tan()).atan();
    let px = u_r.cos();
    let py = EARTH_FLATTENING * u_r.sin();
    let h_r = hour_angle.to_radians();
    let delta_r = delta.to_radians();
    let denom = delta_r.cos() - px * xi.sin() * h_r.cos();
    let dalpha = (-px * xi.sin() * h_r.sin()).atan2(denom);
    let delta_topo = ((delta_r.sin() - py * xi.sin()) * dalpha.cos()).atan2(denom);
    let h_topo = h_r - dalpha;

    let elevation = (phi.sin() * delta_topo.sin() + phi.cos() * delta_topo.cos() * h_topo.cos())
        .asin()
        .to_degrees();
    let gamma = h_topo
        .sin()
        .atan2(h_topo.cos() * phi.sin() - delta_topo.tan() * phi.cos())
        .to_degrees();
    let azimuth = normalize_degrees(gamma + 180.0);

    (elevation.clamp(-90.0, 90.0), azimuth)
}
