//! Session logic, independent of the HTTP transport.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use umbra::dataset::{
    parse_yolo_labels, read_records, AnnotationRecord, AnnotationStore, BoundingBox, DatasetError,
    PixelRect, RasterImage,
};
use umbra::photogrammetry::{height_from_endpoints, GeometryError, PATCH_GSD_M_PER_PX};
use umbra::solar::{daylight_window, solar_position};
use umbra::time_inference::{infer_capture_time, ShadowObservation, TimeFit, TimeInferenceError};
use umbra::{BuildingHeight, GeoLocation, GroundSampling, PixelPoint, UtcInstant};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("image {0:?} has no usable label file")]
    MissingLabels(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} is closed")]
    SessionClosed(String),
    #[error("box index {index} out of range (image has {count} boxes)")]
    BoxOutOfRange { index: u32, count: usize },
    #[error("endpoint ({x}, {y}) lies outside the {width}×{height} image")]
    OutOfBoundsEndpoints {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("sun is not usable at the {time_source} time {time} ({detail})")]
    SunBelowHorizon {
        time_source: TimeSource,
        time: String,
        detail: String,
    },
    #[error("session has no annotated building with ground truth")]
    NoGroundTruth,
    #[error("sun never rises on {date} at ({lat}, {lon})")]
    PolarNight { date: String, lat: f64, lon: f64 },
    #[error("missing {0}: not in the request and no ground-truth records for the image")]
    MissingMetadata(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("catalog: {0}")]
    Catalog(String),
    #[error("store: {0}")]
    Store(#[from] DatasetError),
}

impl ServiceError {
    /// Stable machine-readable name.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::UnknownImage(_) => "UnknownImage",
            Self::MissingLabels(_) => "MissingLabels",
            Self::UnknownSession(_) => "UnknownSession",
            Self::SessionClosed(_) => "SessionClosed",
            Self::BoxOutOfRange { .. } => "BoxOutOfRange",
            Self::OutOfBoundsEndpoints { .. } => "OutOfBoundsEndpoints",
            Self::SunBelowHorizon { .. } => "SunBelowHorizon",
            Self::NoGroundTruth => "NoGroundTruth",
            Self::PolarNight { .. } => "PolarNight",
            Self::MissingMetadata(_) => "MissingMetadata",
            Self::InvalidRequest(_) => "InvalidRequest",
            Self::Catalog(_) => "Catalog",
            Self::Store(_) => "Store",
        }
    }
}

/// Where the capture time behind an estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeSource {
    /// Set by an explicit time refinement.
    Resolved,
    /// Fit over the session's earlier ground-truthed annotations.
    BestFit,
    SolarNoon,
}

impl std::fmt::Display for TimeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Resolved => "resolved",
            Self::BestFit => "best-fit",
            Self::SolarNoon => "solar-noon",
        })
    }
}

/// One catalog image. Immutable once loaded.
#[derive(Debug)]
struct ImageEntry {
    png: Arc<[u8]>,
    width: u32,
    height: u32,
    /// `None` when the label file is absent or holds no valid box.
    boxes: Option<Vec<BoundingBox>>,
    /// Ground-truth records by box index, from `<id>.ndrec`.
    truth: HashMap<u32, AnnotationRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxView {
    pub index: u32,
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    /// The box in image pixels.
    pub rect_px: PixelRect,
    pub gt_height_m: Option<f64>,
}

/// Body of `POST /sessions`. Location, date and ground sampling default to
/// the image's ground-truth records when omitted.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct OpenSession {
    pub image_id: String,
    pub lat_deg: Option<f64>,
    pub lon_deg: Option<f64>,
    pub capture_date: Option<chrono::NaiveDate>,
    pub gsd_m_per_px: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub image_id: String,
    pub loc: GeoLocation,
    pub capture_date: chrono::NaiveDate,
    pub gsd_m_per_px: GroundSampling,
    pub resolved_time: Option<UtcInstant>,
    pub cursor: u32,
    pub n_boxes: usize,
    pub n_annotated: usize,
    pub closed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionOpened {
    pub session: SessionView,
    pub image_width: u32,
    pub image_height: u32,
    pub boxes: Vec<BoxView>,
    #[serde(skip)]
    pub png: Arc<[u8]>,
}

/// Body of `POST /sessions/{id}/annotations`.
#[derive(Debug, Clone, Deserialize)]
pub struct AnnotationEvent {
    pub box_index: u32,
    pub start_px: PixelPoint,
    pub end_px: PixelPoint,
    #[serde(default)]
    pub vertical_edge_px: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Submission {
    pub stored: AnnotationRecord,
    pub est_height_m: f64,
    pub gt_height_m: Option<f64>,
    pub abs_error_m: Option<f64>,
    pub time_source: TimeSource,
    pub capture_time: UtcInstant,
    pub elevation_deg: f64,
    pub outside_usable_band: bool,
    /// Wall-clock time the submission was accepted.
    pub received_at: UtcInstant,
}

#[derive(Debug)]
struct Session {
    id: String,
    image_id: String,
    image: Arc<ImageEntry>,
    loc: GeoLocation,
    date: chrono::NaiveDate,
    gsd: GroundSampling,
    resolved: Option<UtcInstant>,
    /// Fit over earlier submissions; cleared when a ground-truthed
    /// annotation arrives.
    best_fit: Option<TimeFit>,
    cursor: u32,
    /// Latest submission per box.
    latest: BTreeMap<u32, AnnotationRecord>,
    closed: bool,
}

impl Session {
    fn n_boxes(&self) -> usize {
        self.image.boxes.as_ref().map_or(0, Vec::len)
    }

    fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            image_id: self.image_id.clone(),
            loc: self.loc,
            capture_date: self.date,
            gsd_m_per_px: self.gsd,
            resolved_time: self.resolved,
            cursor: self.cursor,
            n_boxes: self.n_boxes(),
            n_annotated: self.latest.len(),
            closed: self.closed,
        }
    }

    fn observations(&self) -> Vec<ShadowObservation> {
        self.latest
            .values()
            .filter_map(|r| {
                let h = BuildingHeight::new(r.ground_truth_height()?).ok()?;
                Some(ShadowObservation::new(r.shadow_length()?, h))
            })
            .collect()
    }

    fn fit(&self) -> Result<TimeFit, ServiceError> {
        let obs = self.observations();
        if obs.is_empty() {
            return Err(ServiceError::NoGroundTruth);
        }
        infer_capture_time(self.date, self.loc, &obs).map_err(|e| match e {
            TimeInferenceError::EmptyInput => ServiceError::NoGroundTruth,
            TimeInferenceError::PolarNight { date, lat, lon } => ServiceError::PolarNight {
                date: date.to_string(),
                lat,
                lon,
            },
        })
    }

    /// resolved → best fit over earlier annotations → solar noon.
    fn provisional_time(&mut self) -> Result<(UtcInstant, TimeSource), ServiceError> {
        if let Some(t) = self.resolved {
            return Ok((t, TimeSource::Resolved));
        }
        if self.best_fit.is_none() && !self.observations().is_empty() {
            self.best_fit = Some(self.fit()?);
        }
        if let Some(fit) = &self.best_fit {
            return Ok((fit.best_time, TimeSource::BestFit));
        }
        let w = daylight_window(self.loc, self.date).ok_or_else(|| ServiceError::PolarNight {
            date: self.date.to_string(),
            lat: self.loc.lat_deg(),
            lon: self.loc.lon_deg(),
        })?;
        Ok((w.solar_noon, TimeSource::SolarNoon))
    }
}

/// The annotation backend: an immutable image catalog, live sessions and the
/// single store writer.
pub struct AnnotationService {
    catalog: HashMap<String, Arc<ImageEntry>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
    store: AnnotationStore,
}

impl std::fmt::Debug for AnnotationService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnotationService")
            .field("images", &self.catalog.len())
            .field("store", &self.store)
            .finish()
    }
}

fn load_entry(dir: &Path, id: &str) -> Result<ImageEntry, ServiceError> {
    let png_path = dir.join(format!("{id}.png"));
    let png = fs::read(&png_path)
        .map_err(|e| ServiceError::Catalog(format!("{}: {e}", png_path.display())))?;
    let raster = RasterImage::from_png_bytes(&png)
        .map_err(|e| ServiceError::Catalog(format!("{id}: {e}")))?;
    let boxes = fs::read_to_string(dir.join(format!("{id}.txt")))
        .ok()
        .map(|t| parse_yolo_labels(&t).boxes)
        .filter(|b| !b.is_empty());
    let truth_path = dir.join(format!("{id}.ndrec"));
    let truth = if truth_path.exists() {
        read_records(&truth_path)?
            .records
            .into_iter()
            .filter(|r| r.image_id == id)
            .map(|r| (r.box_index, r))
            .collect()
    } else {
        HashMap::new()
    };
    Ok(ImageEntry {
        png: png.into(),
        width: raster.width(),
        height: raster.height(),
        boxes,
        truth,
    })
}

impl AnnotationService {
    /// Load every `<id>.png` under `catalog_dir` (with optional `<id>.txt`
    /// labels and `<id>.ndrec` ground truth) and take the writer lock on
    /// `store_path`.
    pub fn open(catalog_dir: &Path, store_path: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let mut catalog = HashMap::new();
        let entries = fs::read_dir(catalog_dir)
            .map_err(|e| ServiceError::Catalog(format!("{}: {e}", catalog_dir.display())))?;
        for entry in entries {
            let path = entry
                .map_err(|e| ServiceError::Catalog(e.to_string()))?
                .path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            catalog.insert(id.to_string(), Arc::new(load_entry(catalog_dir, id)?));
        }
        Ok(Self {
            catalog,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            store: AnnotationStore::open(store_path)?,
        })
    }

    pub fn store_path(&self) -> &Path {
        self.store.path()
    }

    pub fn image_ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.catalog.keys().cloned().collect();
        ids.sort();
        ids
    }

    fn entry(&self, image_id: &str) -> Result<&Arc<ImageEntry>, ServiceError> {
        self.catalog
            .get(image_id)
            .ok_or_else(|| ServiceError::UnknownImage(image_id.into()))
    }

    pub fn image_png(&self, image_id: &str) -> Result<Arc<[u8]>, ServiceError> {
        Ok(self.entry(image_id)?.png.clone())
    }

    pub fn boxes(&self, image_id: &str) -> Result<Vec<BoxView>, ServiceError> {
        let e = self.entry(image_id)?;
        let boxes = e
            .boxes
            .as_ref()
            .ok_or_else(|| ServiceError::MissingLabels(image_id.into()))?;
        Ok(boxes
            .iter()
            .enumerate()
            .map(|(i, b)| BoxView {
                index: i as u32,
                class_id: b.class_id,
                cx: b.cx,
                cy: b.cy,
                w: b.w,
                h: b.h,
                rect_px: b.pixel_rect(e.width, e.height),
                gt_height_m: e
                    .truth
                    .get(&(i as u32))
                    .and_then(AnnotationRecord::ground_truth_height),
            })
            .collect())
    }

    pub fn open_session(&self, req: &OpenSession) -> Result<SessionOpened, ServiceError> {
        let image = self.entry(&req.image_id)?.clone();
        let boxes = self.boxes(&req.image_id)?;
        let reference = image.truth.values().min_by_key(|r| r.box_index);
        let lat = req
            .lat_deg
            .or(reference.map(|r| r.loc.lat_deg()))
            .ok_or(ServiceError::MissingMetadata("lat_deg"))?;
        let lon = req
            .lon_deg
            .or(reference.map(|r| r.loc.lon_deg()))
            .ok_or(ServiceError::MissingMetadata("lon_deg"))?;
        let loc =
            GeoLocation::new(lat, lon).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
        let date = req
            .capture_date
            .or(reference.map(|r| r.capture_date))
            .ok_or(ServiceError::MissingMetadata("capture_date"))?;
        let gsd = match req.gsd_m_per_px {
            Some(g) => {
                GroundSampling::new(g).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?
            }
            None => reference.map_or(
                GroundSampling::new(PATCH_GSD_M_PER_PX).expect("positive"),
                |r| r.gsd_m_per_px,
            ),
        };
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        let session = Session {
            id: id.clone(),
            image_id: req.image_id.clone(),
            image: image.clone(),
            loc,
            date,
            gsd,
            resolved: None,
            best_fit: None,
            cursor: 0,
            latest: BTreeMap::new(),
            closed: false,
        };
        let view = session.view();
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(SessionOpened {
            session: view,
            image_width: image.width,
            image_height: image.height,
            boxes,
            png: image.png.clone(),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.into()))
    }

    /// Run `f` with the session locked; closed sessions are refused.
    fn with_open<R>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<R, ServiceError>,
    ) -> Result<R, ServiceError> {
        let s = self.session(id)?;
        let mut s = s.lock().unwrap_or_else(|p| p.into_inner());
        if s.closed {
            return Err(ServiceError::SessionClosed(id.into()));
        }
        f(&mut s)
    }

    pub fn session_view(&self, id: &str) -> Result<SessionView, ServiceError> {
        let s = self.session(id)?;
        let view = s.lock().unwrap_or_else(|p| p.into_inner()).view();
        Ok(view)
    }

    /// Close a session; later operations on it fail with `SessionClosed`.
    pub fn close_session(&self, id: &str) -> Result<SessionView, ServiceError> {
        self.with_open(id, |s| {
            s.closed = true;
            Ok(s.view())
        })
    }

    pub fn submit_annotation(
        &self,
        session_id: &str,
        ev: &AnnotationEvent,
    ) -> Result<Submission, ServiceError> {
        self.with_open(session_id, |s| {
            let boxes = s
                .image
                .boxes
                .as_ref()
                .expect("sessions only open on labelled images");
            let bbox = *boxes
                .get(ev.box_index as usize)
                .ok_or(ServiceError::BoxOutOfRange {
                    index: ev.box_index,
                    count: boxes.len(),
                })?;
            let (w, h) = (s.image.width, s.image.height);
            for p in [ev.start_px, ev.end_px] {
                let inside = p.x.is_finite()
                    && p.y.is_finite()
                    && (0.0..=f64::from(w)).contains(&p.x)
                    && (0.0..=f64::from(h)).contains(&p.y);
                if !inside {
                    return Err(ServiceError::OutOfBoundsEndpoints {
                        x: p.x,
                        y: p.y,
                        width: w,
                        height: h,
                    });
                }
            }

            let (t, source) = s.provisional_time()?;
            let sun = solar_position(s.loc, t);
            let est =
                height_from_endpoints(ev.start_px, ev.end_px, s.gsd, &sun).map_err(
                    |e| match e {
                        GeometryError::SunBelowHorizon(_) | GeometryError::SunAtZenith(_) => {
                            ServiceError::SunBelowHorizon {
                                time_source: source,
                                time: t.to_string(),
                                detail: e.to_string(),
                            }
                        }
                        other => ServiceError::InvalidRequest(other.to_string()),
                    },
                )?;

            let truth = s.image.truth.get(&ev.box_index);
            let mut rec = AnnotationRecord::unannotated(
                s.image_id.clone(),
                ev.box_index,
                bbox,
                s.gsd,
                s.loc,
                s.date,
            );
            rec.shadow_start_px = Some(ev.start_px);
            rec.shadow_end_px = Some(ev.end_px);
            rec.vertical_edge_px = ev.vertical_edge_px;
            rec.capture_time = Some(t);
            rec.gt_height_m = truth.and_then(|r| r.gt_height_m);
            rec.gt_floors = truth.and_then(|r| r.gt_floors);
            self.store.append(&rec)?;

            let est_height_m = est.value.meters();
            let gt = rec.ground_truth_height();
            if gt.is_some() {
                s.best_fit = None;
            }
            s.latest.insert(ev.box_index, rec.clone());
            s.cursor = (ev.box_index + 1).min(s.n_boxes() as u32 - 1);
            Ok(Submission {
                stored: rec,
                est_height_m,
                gt_height_m: gt,
                abs_error_m: gt.map(|g| (est_height_m - g).abs()),
                time_source: source,
                capture_time: t,
                elevation_deg: sun.elevation_deg(),
                outside_usable_band: est.outside_usable_band,
                received_at: now(),
            })
        })
    }

    /// Fit the capture time to the session's ground-truthed annotations and
    /// use it for all later submissions.
    pub fn refine_session_time(&self, session_id: &str) -> Result<TimeFit, ServiceError> {
        self.with_open(session_id, |s| {
            let fit = s.fit()?;
            s.resolved = Some(fit.best_time);
            s.best_fit = Some(fit.clone());
            Ok(fit)
        })
    }
}

fn now() -> UtcInstant {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64);
    UtcInstant::from_unix_seconds(secs)
}
