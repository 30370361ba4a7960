//! Synthetic overhead scenes with exact ground truth.
//!
//! Flat ground, nadir view, opaque rectangular prisms. Each building casts a
//! shadow of length `H / tan σ` along the anti-azimuth; image x points east
//! and y points south.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnnotationRecord, BoundingBox, DatasetError, PixelRect, RasterImage};
use crate::photogrammetry::{shadow_from_height, BuildingHeight, GroundSampling, PixelPoint};
use crate::solar::{local_solar_date, solar_position, GeoLocation, SolarPosition, UtcInstant};

pub const GROUND_RGB: [u8; 3] = [128, 134, 118];
pub const SHADOW_RGB: [u8; 3] = [28, 30, 38];
pub const ROOF_RGB: [u8; 3] = [214, 204, 186];

/// Building footprint in pixel coordinates (`[x0, x1) × [y0, y1)`).
pub type Footprint = PixelRect;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBuilding {
    pub footprint: Footprint,
    /// Height used for rendering.
    pub height_m: f64,
    /// Ground-truth label written to the record; defaults to `height_m`.
    pub label_m: Option<f64>,
}

impl SceneBuilding {
    pub fn new(footprint: Footprint, height_m: f64) -> Self {
        Self {
            footprint,
            height_m,
            label_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub gsd: GroundSampling<f64>,
    pub buildings: Vec<SceneBuilding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RasterImage,
    pub records: Vec<AnnotationRecord>,
    pub sun: SolarPosition,
}

/// Unit vector (image coordinates) pointing from a building to its shadow.
pub fn shadow_direction(sun: &SolarPosition) -> (f64, f64) {
    let az = sun.azimuth_deg().to_radians();
    (-az.sin(), az.cos())
}

struct CastShadow {
    footprint: Footprint,
    dir: (f64, f64),
    length_px: f64,
}

impl CastShadow {
    fn covers(&self, px: f64, py: f64) -> bool {
        // Is there t in [0, L] with (px, py) − t·dir inside the footprint?
        let mut lo = 0.0_f64;
        let mut hi = self.length_px;
        for (p, d, a, b) in [
            (px, self.dir.0, self.footprint.x0, self.footprint.x1),
            (py, self.dir.1, self.footprint.y0, self.footprint.y1),
        ] {
            if d.abs() < 1e-12 {
                if p < a || p > b {
                    return false;
                }
            } else {
                let (t0, t1) = ((p - b) / d, (p - a) / d);
                lo = lo.max(t0.min(t1));
                hi = hi.min(t0.max(t1));
            }
        }
        lo <= hi
    }

    /// Footprint corner furthest along the shadow direction, and the tip of
    /// its shadow.
    fn endpoints(&self) -> (PixelPoint<f64>, PixelPoint<f64>) {
        let f = &self.footprint;
        let x = if self.dir.0 >= 0.0 { f.x1 } else { f.x0 };
        let y = if self.dir.1 >= 0.0 { f.y1 } else { f.y0 };
        let start = PixelPoint::new(x, y);
        let end = PixelPoint::new(
            x + self.dir.0 * self.length_px,
            y + self.dir.1 * self.length_px,
        );
        (start, end)
    }

    fn bounds(&self) -> PixelRect {
        let (ox, oy) = (self.dir.0 * self.length_px, self.dir.1 * self.length_px);
        PixelRect {
            x0: self.footprint.x0 + ox.min(0.0),
            x1: self.footprint.x1 + ox.max(0.0),
            y0: self.footprint.y0 + oy.min(0.0),
            y1: self.footprint.y1 + oy.max(0.0),
        }
    }
}

fn overlaps(a: &Footprint, b: &Footprint) -> bool {
    a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1
}

/// A building's box plus its shadow start and end, in pixels.
pub type ShadowAnnotation = (BoundingBox, PixelPoint<f64>, PixelPoint<f64>);

/// Render with an explicit sun direction. Records carry no location, date or
/// time; [`synthesize_scene`] fills those in.
pub fn render_scene(
    spec: &SceneSpec,
    sun: &SolarPosition,
) -> Result<(RasterImage, Vec<ShadowAnnotation>), DatasetError> {
    for (i, a) in spec.buildings.iter().enumerate() {
        if !(a.footprint.width() > 0.0 && a.footprint.height() > 0.0) {
            return Err(DatasetError::InvalidRecord(format!(
                "building {i} has an empty footprint"
            )));
        }
        if spec.buildings[..i]
            .iter()
            .any(|b| overlaps(&a.footprint, &b.footprint))
        {
            return Err(DatasetError::InvalidRecord(format!(
                "building {i} overlaps another"
            )));
        }
    }
    let dir = shadow_direction(sun);
    let mpp = spec.gsd.meters_per_pixel();
    let mut shadows = Vec::with_capacity(spec.buildings.len());
    for b in &spec.buildings {
        let h = BuildingHeight::new(b.height_m)?;
        let length_m = shadow_from_height(h, sun)?.value.meters();
        shadows.push(CastShadow {
            footprint: b.footprint,
            dir,
            length_px: length_m / mpp,
        });
    }

    let mut image = RasterImage::filled(spec.width, spec.height, GROUND_RGB)?;
    for y in 0..spec.height {
        let py = f64::from(y) + 0.5;
        for x in 0..spec.width {
            let px = f64::from(x) + 0.5;
            let roof = spec.buildings.iter().any(|b| {
                let f = &b.footprint;
                px >= f.x0 && px < f.x1 && py >= f.y0 && py < f.y1
            });
            if roof {
                image.set_pixel(x, y, ROOF_RGB);
            } else if shadows.iter().any(|s| s.covers(px, py)) {
                image.set_pixel(x, y, SHADOW_RGB);
            }
        }
    }

    let annotations = shadows
        .iter()
        .map(|s| {
            let (start, end) = s.endpoints();
            let bbox = BoundingBox::from_pixel_rect(0, s.bounds(), spec.width, spec.height);
            (bbox, start, end)
        })
        .collect();
    Ok((image, annotations))
}

/// Seeded layout of `n` non-touching buildings (4–12 px footprints, heights
/// a whole number of 3 m storeys from 1 to 10) kept `margin` px away from
/// the image border.
pub fn random_scene_spec(
    image_id: &str,
    width: u32,
    height: u32,
    gsd: GroundSampling<f64>,
    n: usize,
    margin: f64,
    seed: u64,
) -> Result<SceneSpec, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (f64::from(width), f64::from(height));
    if w - 2.0 * margin < 12.0 || h - 2.0 * margin < 12.0 {
        return Err(DatasetError::InvalidRecord(format!(
            "{width}×{height} image too small for margin {margin}"
        )));
    }
    let mut buildings: Vec<SceneBuilding> = Vec::with_capacity(n);
    let mut attempts = 0;
    while buildings.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(DatasetError::InvalidRecord(format!(
                "cannot place {n} buildings on {width}×{height}"
            )));
        }
        let (x0, y0) = (
            rng.random_range(margin..w - margin - 12.0),
            rng.random_range(margin..h - margin - 12.0),
        );
        let fp = PixelRect {
            x0,
            y0,
            x1: x0 + rng.random_range(4.0..12.0),
            y1: y0 + rng.random_range(4.0..12.0),
        };
        let padded = PixelRect {
            x0: fp.x0 - 2.0,
            y0: fp.y0 - 2.0,
            x1: fp.x1 + 2.0,
            y1: fp.y1 + 2.0,
        };
        if buildings.iter().any(|b| overlaps(&padded, &b.footprint)) {
            continue;
        }
        buildings.push(SceneBuilding::new(
            fp,
            3.0 * f64::from(rng.random_range(1..=10u32)),
        ));
    }
    Ok(SceneSpec {
        image_id: image_id.into(),
        width,
        height,
        gsd,
        buildings,
    })
}

/// Render the scene as seen at `(loc, t)` and emit one ground-truth record
/// per building with exact shadow endpoints.
pub fn synthesize_scene(
    spec: &SceneSpec,
    loc: GeoLocation,
    t: UtcInstant,
) -> Result<Scene, DatasetError> {
    let sun = solar_position(loc, t);
    let (image, annotations) = render_scene(spec, &sun)?;
    let records = spec
        .buildings
        .iter()
        .zip(annotations)
        .enumerate()
        .map(|(i, (b, (bbox, start, end)))| {
            let label = b.label_m.unwrap_or(b.height_m);
            let floors = label / 3.0;
            let mut rec = AnnotationRecord::unannotated(
                spec.image_id.clone(),
                i as u32,
                bbox,
                spec.gsd,
                loc,
                local_solar_date(loc, t),
            );
            rec.shadow_start_px = Some(start);
            rec.shadow_end_px = Some(end);
            rec.capture_time = Some(t);
            rec.gt_height_m = Some(label);
            rec.gt_floors = (floors >= 1.0 && floors.fract() == 0.0).then_some(floors as u32);
            rec
        })
        .collect();
    Ok(Scene {
        image,
        records,
        sun,
    })
}
