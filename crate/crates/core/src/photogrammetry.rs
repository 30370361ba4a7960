//! Shadow-length ↔ building-height geometry for a nadir view of flat ground.
//!
//! A vertical edge of height `H` lit at solar elevation `σ` casts a ground
//! shadow of length `S = H / tan σ`; the estimator inverts this as
//! `H = S · tan σ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::solar::SolarPosition;

/// 400 px image patches covering 1000 m on a side.
pub const PATCH_GSD_M_PER_PX: f64 = 1000.0 / 400.0;

/// Elevations outside this band give grazing or near-vertical shadows; the
/// arithmetic still holds but estimates are flagged.
pub const USABLE_ELEVATION_DEG: (f64, f64) = (5.0, 85.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("sun at {0}° elevation is not above the horizon; shadow geometry undefined")]
    SunBelowHorizon(f64),
    #[error("sun at {0}° elevation is at the zenith; no shadow is cast")]
    SunAtZenith(f64),
    #[error("length {0} m must be finite and non-negative")]
    InvalidLength(f64),
    #[error("ground sampling {0} m/px must be finite and positive")]
    InvalidSampling(f64),
}

macro_rules! non_negative_meters {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name<T>(T);

        impl<T: Scalar> $name<T> {
            pub fn new(meters: T) -> Result<Self, GeometryError> {
                if meters.is_finite() && meters >= T::zero() {
                    Ok(Self(meters))
                } else {
                    Err(GeometryError::InvalidLength(meters.as_f64()))
                }
            }

            pub fn zero() -> Self {
                Self(T::zero())
            }

            pub fn meters(self) -> T {
                self.0
            }
        }
    };
}

non_negative_meters!(
    /// Ground length of a cast shadow, meters.
    ShadowLength
);
non_negative_meters!(
    /// Height of a building above flat ground, meters.
    BuildingHeight
);

/// Ground sample distance, meters per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroundSampling<T>(T);

impl<T: Scalar> GroundSampling<T> {
    pub fn new(meters_per_pixel: T) -> Result<Self, GeometryError> {
        if meters_per_pixel.is_finite() && meters_per_pixel > T::zero() {
            Ok(Self(meters_per_pixel))
        } else {
            Err(GeometryError::InvalidSampling(meters_per_pixel.as_f64()))
        }
    }

    /// 2.5 m/px, the sampling of 400 px / 1000 m patches.
    pub fn patch_default() -> Self {
        Self(T::lit(PATCH_GSD_M_PER_PX))
    }

    pub fn meters_per_pixel(self) -> T {
        self.0
    }
}

/// Image-space point, origin top-left, x right, y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> PixelPoint<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A computed quantity plus whether the sun was outside the usable band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate<Q> {
    pub value: Q,
    pub outside_usable_band: bool,
}

/// `tan σ` for a sun strictly between the horizon and the zenith.
pub fn elevation_tangent<T: Scalar>(sun: &SolarPosition) -> Result<T, GeometryError> {
    let e = sun.elevation_deg();
    if e <= 0.0 {
        return Err(GeometryError::SunBelowHorizon(e));
    }
    if e >= 90.0 {
        return Err(GeometryError::SunAtZenith(e));
    }
    Ok(T::lit(e.to_radians()).tan())
}

fn outside_band(sun: &SolarPosition) -> bool {
    let e = sun.elevation_deg();
    e < USABLE_ELEVATION_DEG.0 || e > USABLE_ELEVATION_DEG.1
}

/// `H = S · tan σ`.
pub fn height_from_shadow<T: Scalar>(
    shadow: ShadowLength<T>,
    sun: &SolarPosition,
) -> Result<Estimate<BuildingHeight<T>>, GeometryError> {
    let tan = elevation_tangent::<T>(sun)?;
    Ok(Estimate {
        value: BuildingHeight::new(shadow.meters() * tan)?,
        outside_usable_band: outside_band(sun),
    })
}

/// `S = H / tan σ`.
pub fn shadow_from_height<T: Scalar>(
    height: BuildingHeight<T>,
    sun: &SolarPosition,
) -> Result<Estimate<ShadowLength<T>>, GeometryError> {
    let tan = elevation_tangent::<T>(sun)?;
    Ok(Estimate {
        value: ShadowLength::new(height.meters() / tan)?,
        outside_usable_band: outside_band(sun),
    })
}

/// Ground length between two marked shadow endpoints.
pub fn shadow_length_from_endpoints<T: Scalar>(
    start: PixelPoint<T>,
    end: PixelPoint<T>,
    gsd: GroundSampling<T>,
) -> Result<ShadowLength<T>, GeometryError> {
    ShadowLength::new(start.distance(end) * gsd.meters_per_pixel())
}

/// Endpoints → shadow → height in one step; the single path shared by the
/// CLI and the annotation service.
pub fn height_from_endpoints<T: Scalar>(
    start: PixelPoint<T>,
    end: PixelPoint<T>,
    gsd: GroundSampling<T>,
    sun: &SolarPosition,
) -> Result<Estimate<BuildingHeight<T>>, GeometryError> {
    height_from_shadow(shadow_length_from_endpoints(start, end, gsd)?, sun)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn sun(elev: f64) -> SolarPosition {
        SolarPosition::new(elev, 180.0).unwrap()
    }

    fn s(m: f64) -> ShadowLength<f64> {
        ShadowLength::new(m).unwrap()
    }

    fn h(m: f64) -> BuildingHeight<f64> {
        BuildingHeight::new(m).unwrap()
    }

    #[test]
    fn forty_five_degrees_is_identity() {
        let est = height_from_shadow(s(10.0), &sun(45.0)).unwrap();
        assert_relative_eq!(est.value.meters(), 10.0, max_relative = 1e-15);
        assert!(!est.outside_usable_band);
        let back = shadow_from_height(h(10.0), &sun(45.0)).unwrap();
        assert_relative_eq!(back.value.meters(), 10.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_shadow_zero_height() {
        assert_eq!(
            height_from_shadow(s(0.0), &sun(30.0))
                .unwrap()
                .value
                .meters(),
            0.0
        );
        assert_eq!(
            shadow_from_height(h(0.0), &sun(62.0))
                .unwrap()
                .value
                .meters(),
            0.0
        );
    }

    #[test]
    fn sixty_degrees_gives_root_three() {
        let est = height_from_shadow(s(20.0), &sun(60.0)).unwrap();
        assert_relative_eq!(est.value.meters(), 20.0 * 3f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(est.value.meters(), 34.641, epsilon = 5e-4);
    }

    #[test]
    fn degenerate_sun_is_rejected() {
        assert_eq!(
            height_from_shadow(s(5.0), &sun(0.0)),
            Err(GeometryError::SunBelowHorizon(0.0))
        );
        assert_eq!(
            height_from_shadow(s(5.0), &sun(-3.0)),
            Err(GeometryError::SunBelowHorizon(-3.0))
        );
        assert_eq!(
            shadow_from_height(h(5.0), &sun(90.0)),
            Err(GeometryError::SunAtZenith(90.0))
        );
    }

    #[test]
    fn usable_band_flags() {
        assert!(
            height_from_shadow(s(1.0), &sun(4.9))
                .unwrap()
                .outside_usable_band
        );
        assert!(
            !height_from_shadow(s(1.0), &sun(5.0))
                .unwrap()
                .outside_usable_band
        );
        assert!(
            !height_from_shadow(s(1.0), &sun(85.0))
                .unwrap()
                .outside_usable_band
        );
        assert!(
            height_from_shadow(s(1.0), &sun(85.1))
                .unwrap()
                .outside_usable_band
        );
    }

    #[test]
    fn newtypes_reject_bad_values() {
        assert!(ShadowLength::new(-1.0_f64).is_err());
        assert!(BuildingHeight::new(f64::INFINITY).is_err());
        assert!(GroundSampling::new(0.0_f64).is_err());
        assert!(GroundSampling::new(f64::NAN).is_err());
    }

    #[test]
    fn endpoint_examples() {
        let gsd = GroundSampling::<f64>::patch_default();
        let p = |x, y| PixelPoint::new(x, y);
        let l = shadow_length_from_endpoints(p(0.0, 0.0), p(3.0, 4.0), gsd).unwrap();
        assert_eq!(l.meters(), 12.5);
        let l = shadow_length_from_endpoints(p(10.0, 10.0), p(10.0, 10.0), gsd).unwrap();
        assert_eq!(l.meters(), 0.0);
        let l = shadow_length_from_endpoints(p(0.0, 0.0), p(400.0, 0.0), gsd).unwrap();
        assert_eq!(l.meters(), 1000.0);
    }

    #[test]
    fn single_precision_path() {
        let est = height_from_shadow(ShadowLength::new(20.0_f32).unwrap(), &sun(60.0)).unwrap();
        assert_relative_eq!(est.value.meters(), 34.641_016, max_relative = 1e-6);
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(hm in 0.0..500.0f64, elev in 0.01..89.99f64) {
            let sp = sun(elev);
            let sl = shadow_from_height(h(hm), &sp).unwrap().value;
            let back = height_from_shadow(sl, &sp).unwrap().value.meters();
            prop_assert!((back - hm).abs() <= 1e-12 * hm.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn monotone_in_shadow_and_elevation(
            a in 0.0..300.0f64, d in 1e-6..50.0f64, e in 0.5..89.0f64, de in 0.01..0.9f64
        ) {
            let lo = height_from_shadow(s(a), &sun(e)).unwrap().value.meters();
            let hi = height_from_shadow(s(a + d), &sun(e)).unwrap().value.meters();
            prop_assert!(hi > lo);
            let steeper = height_from_shadow(s(a + d), &sun(e + de)).unwrap().value.meters();
            prop_assert!(steeper > hi);
        }

        #[test]
        fn endpoint_length_symmetric_and_translation_invariant(
            x0 in -1e3..1e3f64, y0 in -1e3..1e3f64, x1 in -1e3..1e3f64, y1 in -1e3..1e3f64,
            tx in -1e3..1e3f64, ty in -1e3..1e3f64
        ) {
            let gsd = GroundSampling::new(0.7).unwrap();
            let (a, b) = (PixelPoint::new(x0, y0), PixelPoint::new(x1, y1));
            let ab = shadow_length_from_endpoints(a, b, gsd).unwrap().meters();
            let ba = shadow_length_from_endpoints(b, a, gsd).unwrap().meters();
            prop_assert_eq!(ab, ba);
            let moved = shadow_length_from_endpoints(
                PixelPoint::new(x0 + tx, y0 + ty), PixelPoint::new(x1 + tx, y1 + ty), gsd,
            ).unwrap().meters();
            prop_assert!((moved - ab).abs() <= 1e-9 * ab.max(1.0));
        }
    }
}
