//! Annotated building records: ingestion, unit conversion, cleaning, test
//! subset selection, synthetic scenes and the on-disk record store.

mod raster;
mod store;
mod synth;
mod yolo;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::photogrammetry::{
    height_from_shadow, shadow_length_from_endpoints, BuildingHeight, Estimate, GeometryError,
    GroundSampling, PixelPoint, ShadowLength,
};
use crate::solar::{solar_position, GeoLocation, SolarError, UtcInstant};

pub use raster::{crop_and_resize, RasterImage, PATCH_SIZE};
pub use store::{
    compact, decode_records, encode_records, read_records, write_records, AnnotationStore, Replay,
};
pub use synth::{
    random_scene_spec, render_scene, shadow_direction, synthesize_scene, Footprint, Scene,
    SceneBuilding, SceneSpec, ShadowAnnotation, GROUND_RGB, ROOF_RGB, SHADOW_RGB,
};
pub use yolo::{format_yolo_labels, parse_yolo_labels, BoundingBox, LabelParse, PixelRect};

/// Storey height used to convert floor counts to meters.
pub const METERS_PER_FLOOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("floor count must be at least 1, got {0}")]
    NonPositiveFloors(u32),
    #[error("crop of {width:.2}×{height:.2} px is smaller than 2×2")]
    DegenerateCrop { width: f64, height: f64 },
    #[error("record {image_id}#{box_index} is missing {field}")]
    MissingFields {
        image_id: String,
        box_index: u32,
        field: &'static str,
    },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image codec: {0}")]
    Image(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solar(#[from] SolarError),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

/// One building: its box, shadow annotation, geolocation, capture date/time
/// and ground truth. Serialized field order is the declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    /// Index of the box within the image's label file.
    pub box_index: u32,
    pub bbox: BoundingBox,
    pub shadow_start_px: Option<PixelPoint<f64>>,
    pub shadow_end_px: Option<PixelPoint<f64>>,
    /// Stored when annotated; no estimate consumes it.
    pub vertical_edge_px: Option<f64>,
    pub gsd_m_per_px: GroundSampling<f64>,
    pub loc: GeoLocation,
    pub capture_date: NaiveDate,
    pub capture_time: Option<UtcInstant>,
    pub gt_height_m: Option<f64>,
    pub gt_floors: Option<u32>,
}

impl AnnotationRecord {
    /// Record for a box with nothing annotated yet.
    pub fn unannotated(
        image_id: impl Into<String>,
        box_index: u32,
        bbox: BoundingBox,
        gsd: GroundSampling<f64>,
        loc: GeoLocation,
        capture_date: NaiveDate,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            box_index,
            bbox,
            shadow_start_px: None,
            shadow_end_px: None,
            vertical_edge_px: None,
            gsd_m_per_px: gsd,
            loc,
            capture_date,
            capture_time: None,
            gt_height_m: None,
            gt_floors: None,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.shadow_start_px.is_some() != self.shadow_end_px.is_some() {
            return Err(DatasetError::InvalidRecord(format!(
                "{}#{}: shadow endpoints must both be present or both absent",
                self.image_id, self.box_index
            )));
        }
        if let Some(h) = self.gt_height_m {
            BuildingHeight::new(h)?;
        }
        if let Some(f) = self.gt_floors {
            floors_to_height(f)?;
        }
        if let Some(v) = self.vertical_edge_px {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DatasetError::InvalidRecord(format!("vertical edge {v} px")));
            }
        }
        Ok(())
    }

    fn missing(&self, field: &'static str) -> DatasetError {
        DatasetError::MissingFields {
            image_id: self.image_id.clone(),
            box_index: self.box_index,
            field,
        }
    }

    /// Ground-truth height: the explicit height if present, else floors × 3 m.
    pub fn ground_truth_height(&self) -> Option<f64> {
        self.gt_height_m.or_else(|| {
            self.gt_floors
                .and_then(|f| floors_to_height(f).ok())
                .map(|h| h.meters())
        })
    }

    /// Annotated shadow length in meters, if both endpoints are marked.
    pub fn shadow_length(&self) -> Option<ShadowLength<f64>> {
        let (a, b) = (self.shadow_start_px?, self.shadow_end_px?);
        shadow_length_from_endpoints(a, b, self.gsd_m_per_px).ok()
    }

    /// Height implied by the annotated shadow at the recorded capture time.
    pub fn analytic_height(&self) -> Result<Estimate<BuildingHeight<f64>>, DatasetError> {
        let shadow = self
            .shadow_length()
            .ok_or_else(|| self.missing("shadow endpoints"))?;
        let t = self
            .capture_time
            .ok_or_else(|| self.missing("capture_time"))?;
        Ok(height_from_shadow(shadow, &solar_position(self.loc, t))?)
    }
}

pub fn floors_to_height(floors: u32) -> Result<BuildingHeight<f64>, DatasetError> {
    if floors == 0 {
        return Err(DatasetError::NonPositiveFloors(floors));
    }
    Ok(BuildingHeight::new(f64::from(floors) * METERS_PER_FLOOR)?)
}

/// Height label bin (m): the nearest multiple of 3 in `[3, 33]`.
pub fn height_bin(height_m: f64) -> u32 {
    let floors = (height_m / METERS_PER_FLOOR).round().clamp(1.0, 11.0);
    (floors * METERS_PER_FLOOR) as u32
}

/// Thresholds of the noise-handling rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleaningRules {
    /// Heights above this are replaced by `cap_label_m`.
    pub height_cap_m: f64,
    pub cap_label_m: f64,
    /// Buildings at or below this height...
    pub low_height_max_m: f64,
    /// ...are dropped when their shadow is at least this long.
    pub shadow_outlier_m: f64,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            height_cap_m: 30.0,
            cap_label_m: 33.0,
            low_height_max_m: 9.0,
            shadow_outlier_m: 50.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_input: usize,
    pub n_kept: usize,
    /// Kept records whose height was replaced by the cap label.
    pub n_capped: usize,
    /// Dropped by the low-building / long-shadow rule.
    pub n_dropped_long_shadow: usize,
    /// Kept records carrying no ground truth (no rule applies).
    pub n_without_ground_truth: usize,
    /// Kept records per height bin (m).
    pub height_histogram: BTreeMap<u32, usize>,
}

impl DatasetStats {
    pub fn n_dropped(&self) -> usize {
        self.n_dropped_long_shadow
    }
}

/// Apply the height cap and the long-shadow exclusion. Records without
/// ground truth pass through untouched; others get `gt_height_m` filled in
/// (from floors if needed) so the result is a fixed point of cleaning.
pub fn clean_dataset(
    records: Vec<AnnotationRecord>,
    rules: &CleaningRules,
) -> (Vec<AnnotationRecord>, DatasetStats) {
    let mut stats = DatasetStats {
        n_input: records.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(records.len());
    for mut rec in records {
        let Some(mut h) = rec.ground_truth_height() else {
            stats.n_without_ground_truth += 1;
            kept.push(rec);
            continue;
        };
        if h <= rules.low_height_max_m {
            if let Some(s) = rec.shadow_length() {
                if s.meters() >= rules.shadow_outlier_m {
                    stats.n_dropped_long_shadow += 1;
                    continue;
                }
            }
        }
        if h > rules.height_cap_m && h != rules.cap_label_m {
            h = rules.cap_label_m;
            stats.n_capped += 1;
        }
        rec.gt_height_m = Some(h);
        *stats.height_histogram.entry(height_bin(h)).or_default() += 1;
        kept.push(rec);
    }
    stats.n_kept = kept.len();
    (kept, stats)
}

/// Keep records whose analytic height is within `threshold_m` of ground
/// truth.
pub fn select_test_subset(
    records: &[AnnotationRecord],
    threshold_m: f64,
) -> Result<Vec<AnnotationRecord>, DatasetError> {
    let mut out = Vec::new();
    for rec in records {
        let gt = rec
            .ground_truth_height()
            .ok_or_else(|| rec.missing("ground truth height"))?;
        let est = rec.analytic_height()?.value.meters();
        if (est - gt).abs() <= threshold_m {
            out.push(rec.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photogrammetry::shadow_from_height;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn base(height: Option<f64>, shadow_m: Option<f64>) -> AnnotationRecord {
        let mut r = AnnotationRecord::unannotated(
            "img",
            0,
            BoundingBox::full(),
            GroundSampling::patch_default(),
            GeoLocation::new(31.23, 121.47).unwrap(),
            NaiveDate::from_ymd_opt(2015, 6, 1).unwrap(),
        );
        r.gt_height_m = height;
        if let Some(s) = shadow_m {
            r.shadow_start_px = Some(PixelPoint::new(0.0, 0.0));
            r.shadow_end_px = Some(PixelPoint::new(s / 2.5, 0.0));
        }
        r
    }

    #[test]
    fn floors_convert_at_three_meters() {
        assert_eq!(floors_to_height(1).unwrap().meters(), 3.0);
        assert_eq!(floors_to_height(10).unwrap().meters(), 30.0);
        assert_eq!(floors_to_height(11).unwrap().meters(), 33.0);
        assert_eq!(floors_to_height(0), Err(DatasetError::NonPositiveFloors(0)));
    }

    #[test]
    fn bins() {
        assert_eq!(height_bin(0.2), 3);
        assert_eq!(height_bin(12.0), 12);
        assert_eq!(height_bin(13.4), 12);
        assert_eq!(height_bin(30.0), 30);
        assert_eq!(height_bin(33.0), 33);
        assert_eq!(height_bin(400.0), 33);
    }

    #[test]
    fn cleaning_rules() {
        let rules = CleaningRules::default();
        let (out, stats) = clean_dataset(
            vec![
                base(Some(45.0), None),
                base(Some(6.0), Some(60.0)),
                base(Some(6.0), Some(20.0)),
            ],
            &rules,
        );
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].gt_height_m, Some(33.0));
        assert_eq!(out[1], base(Some(6.0), Some(20.0)));
        assert_eq!(stats.n_capped, 1);
        assert_eq!(stats.n_dropped_long_shadow, 1);
        assert_eq!(stats.n_input, stats.n_kept + stats.n_dropped());
    }

    #[test]
    fn boundaries_are_inclusive_where_stated() {
        let rules = CleaningRules::default();
        // exactly 9 m and exactly 50 m → dropped; 30 m is not capped
        let (out, _) = clean_dataset(vec![base(Some(9.0), Some(50.0))], &rules);
        assert!(out.is_empty());
        let (out, _) = clean_dataset(vec![base(Some(9.1), Some(80.0))], &rules);
        assert_eq!(out.len(), 1);
        let (out, stats) = clean_dataset(vec![base(Some(30.0), None)], &rules);
        assert_eq!(out[0].gt_height_m, Some(30.0));
        assert_eq!(stats.n_capped, 0);
    }

    #[test]
    fn floors_only_records_are_filled_in() {
        let mut r = base(None, None);
        r.gt_floors = Some(14);
        let (out, stats) =
            clean_dataset(vec![r, base(None, Some(70.0))], &CleaningRules::default());
        assert_eq!(out[0].gt_height_m, Some(33.0));
        assert_eq!(stats.n_without_ground_truth, 1);
        assert_eq!(stats.height_histogram.get(&33), Some(&1));
    }

    #[test]
    fn validate_checks_endpoint_pairing() {
        let mut r = base(Some(3.0), None);
        r.shadow_start_px = Some(PixelPoint::new(1.0, 1.0));
        assert!(r.validate().is_err());
        r.shadow_end_px = Some(PixelPoint::new(2.0, 1.0));
        assert!(r.validate().is_ok());
        r.gt_floors = Some(0);
        assert!(r.validate().is_err());
    }

    fn timed(height: f64, shadow_scale: f64, t: UtcInstant) -> AnnotationRecord {
        let mut r = base(Some(height), None);
        let sun = solar_position(r.loc, t);
        let s = shadow_from_height(BuildingHeight::new(height).unwrap(), &sun)
            .unwrap()
            .value
            .meters();
        r.capture_time = Some(t);
        r.shadow_start_px = Some(PixelPoint::new(10.0, 10.0));
        r.shadow_end_px = Some(PixelPoint::new(10.0, 10.0 + s * shadow_scale / 2.5));
        r
    }

    #[test]
    fn subset_keeps_exact_and_drops_far() {
        let t = UtcInstant::from_ymd_hms(2015, 6, 1, 2, 0, 0).unwrap();
        let exact = timed(21.0, 1.0, t);
        let mut far = timed(20.0, 1.0, t);
        far.gt_height_m = Some(30.0);
        let kept = select_test_subset(&[exact.clone(), far], 2.5).unwrap();
        assert_eq!(kept, vec![exact]);
    }

    #[test]
    fn subset_requires_fields() {
        let r = base(Some(3.0), Some(4.0));
        assert!(matches!(
            select_test_subset(&[r], 2.5),
            Err(DatasetError::MissingFields {
                field: "capture_time",
                ..
            })
        ));
    }

    #[test]
    fn subset_matches_brute_force_filter() {
        let t = UtcInstant::from_ymd_hms(2015, 6, 1, 1, 30, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let noise = Normal::new(1.0, 0.1).unwrap();
        let records: Vec<_> = (0..500)
            .map(|i| timed(3.0 * (1 + i % 10) as f64, noise.sample(&mut rng), t))
            .collect();
        let kept = select_test_subset(&records, 2.5).unwrap();

        // Independent filter: recompute elevation and shadow from raw fields.
        let sun = solar_position(records[0].loc, t);
        let tan = sun.elevation_deg().to_radians().tan();
        let expected: Vec<_> = records
            .iter()
            .filter(|r| {
                let (a, b) = (r.shadow_start_px.unwrap(), r.shadow_end_px.unwrap());
                let s = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt() * 2.5;
                (s * tan - r.gt_height_m.unwrap()).abs() <= 2.5
            })
            .cloned()
            .collect();
        assert_eq!(kept, expected);
        assert!(kept.len() > 100 && kept.len() < 500);
    }
}
