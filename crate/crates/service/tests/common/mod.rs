#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use umbra::dataset::{
    format_yolo_labels, synthesize_scene, write_records, PixelRect, Scene, SceneBuilding, SceneSpec,
};
use umbra::{GeoLocation, GroundSampling, UtcInstant};

pub fn shanghai() -> GeoLocation {
    GeoLocation::new(31.23, 121.47).unwrap()
}

/// 09:45 local time.
pub fn capture_time() -> UtcInstant {
    UtcInstant::from_ymd_hms(2015, 6, 1, 1, 45, 0).unwrap()
}

/// `n` separated buildings on a 400 px tile, storey-multiple heights.
pub fn scene(id: &str, n: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buildings: Vec<SceneBuilding> = Vec::new();
    while buildings.len() < n {
        let (x, y) = (rng.random_range(20.0..340.0), rng.random_range(20.0..340.0));
        let fp = PixelRect {
            x0: x,
            y0: y,
            x1: x + rng.random_range(5.0..12.0),
            y1: y + rng.random_range(5.0..12.0),
        };
        let crowded = buildings.iter().any(|b| {
            fp.x0 < b.footprint.x1 + 2.0
                && b.footprint.x0 < fp.x1 + 2.0
                && fp.y0 < b.footprint.y1 + 2.0
                && b.footprint.y0 < fp.y1 + 2.0
        });
        if !crowded {
            buildings.push(SceneBuilding::new(
                fp,
                3.0 * f64::from(rng.random_range(2..=10u32)),
            ));
        }
    }
    let spec = SceneSpec {
        image_id: id.into(),
        width: 400,
        height: 400,
        gsd: GroundSampling::patch_default(),
        buildings,
    };
    synthesize_scene(&spec, shanghai(), capture_time()).unwrap()
}

/// Write `<id>.png`, `<id>.txt` and (optionally) `<id>.ndrec`.
pub fn write_scene(dir: &Path, id: &str, scene: &Scene, labels: bool, truth: bool) {
    scene
        .image
        .save_png(&dir.join(format!("{id}.png")))
        .unwrap();
    if labels {
        let boxes: Vec<_> = scene.records.iter().map(|r| r.bbox).collect();
        std::fs::write(dir.join(format!("{id}.txt")), format_yolo_labels(&boxes)).unwrap();
    }
    if truth {
        write_records(&dir.join(format!("{id}.ndrec")), &scene.records).unwrap();
    }
}
