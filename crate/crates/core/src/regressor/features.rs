//! Hand-crafted patch descriptors.
//!
//! Darkness is measured relative to the patch itself: the median luminance is
//! taken as open ground and the minimum as full shadow, so a pixel half
//! covered by shadow reads as 0.5. Lengths are in patch pixels divided by the
//! patch side.

use crate::dataset::{DatasetError, RasterImage, PATCH_SIZE};

pub const FEATURE_COUNT: usize = 12;

/// Declared feature layout; its hash is embedded in saved models.
pub const FEATURE_SPEC: &str = "umbra-features/v1:\
mean_r,mean_g,mean_b,var_r,var_g,var_b,mean_luma,dark_fraction,\
max_dark_run,mean_dark_run,profile_centroid,profile_spread;\
patch=50x50x3;luma=bt601;ray_step=0.25";

/// Below this median-to-minimum contrast the patch is treated as uniform and
/// darkness falls back to an absolute threshold.
const MIN_CONTRAST: f64 = 16.0;
const ABSOLUTE_DARK_LUMA: f64 = 64.0;
const RAY_STEP: f64 = 0.25;
/// Parallel rays are cast at this perpendicular spacing (px).
const RAY_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn luma(p: [u8; 3]) -> f64 {
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

struct DarknessMap {
    n: usize,
    values: Vec<f64>,
}

impl DarknessMap {
    fn new(patch: &RasterImage) -> Self {
        let n = PATCH_SIZE as usize;
        let lum: Vec<f64> = patch
            .as_bytes()
            .chunks_exact(3)
            .map(|p| luma([p[0], p[1], p[2]]))
            .collect();
        let mut sorted = lum.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let lo = sorted[0];
        let values = if median - lo < MIN_CONTRAST {
            lum.iter()
                .map(|&l| if l < ABSOLUTE_DARK_LUMA { 1.0 } else { 0.0 })
                .collect()
        } else {
            lum.iter()
                .map(|&l| ((median - l) / (median - lo)).clamp(0.0, 1.0))
                .collect()
        };
        Self { n, values }
    }

    /// Bilinear darkness at continuous coordinates (pixel centres at +0.5);
    /// zero outside the patch.
    fn at(&self, x: f64, y: f64) -> f64 {
        let n = self.n as f64;
        if !(0.0..n).contains(&x) || !(0.0..n).contains(&y) {
            return 0.0;
        }
        let (u, v) = ((x - 0.5).clamp(0.0, n - 1.0), (y - 0.5).clamp(0.0, n - 1.0));
        let (i0, j0) = (u.floor() as usize, v.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(self.n - 1), (j0 + 1).min(self.n - 1));
        let (fx, fy) = (u - i0 as f64, v - j0 as f64);
        let g = |i: usize, j: usize| self.values[j * self.n + i];
        let top = g(i0, j0) * (1.0 - fx) + g(i1, j0) * fx;
        let bottom = g(i0, j1) * (1.0 - fx) + g(i1, j1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// 12 descriptors of a `PATCH_SIZE²` patch given the direction shadows fall
/// (the sun's anti-azimuth).
pub fn extract_features(
    patch: &RasterImage,
    sun_azimuth_deg: f64,
) -> Result<FeatureVector, DatasetError> {
    if patch.width() != PATCH_SIZE || patch.height() != PATCH_SIZE {
        return Err(DatasetError::ShapeMismatch(format!(
            "patch is {}×{}, expected {PATCH_SIZE}×{PATCH_SIZE}",
            patch.width(),
            patch.height()
        )));
    }
    let side = f64::from(PATCH_SIZE);
    let npx = (PATCH_SIZE * PATCH_SIZE) as f64;
    let mut f = [0.0; FEATURE_COUNT];

    let bytes = patch.as_bytes();
    for c in 0..3 {
        let vals = bytes
            .iter()
            .skip(c)
            .step_by(3)
            .map(|&v| f64::from(v) / 255.0);
        let mean = vals.clone().sum::<f64>() / npx;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / npx;
        f[c] = mean;
        f[3 + c] = var;
    }
    f[6] = bytes
        .chunks_exact(3)
        .map(|p| luma([p[0], p[1], p[2]]))
        .sum::<f64>()
        / npx
        / 255.0;

    let dark = DarknessMap::new(patch);
    f[7] = dark.values.iter().sum::<f64>() / npx;

    // Rays parallel to the shadow direction, swept across the patch.
    let az = sun_azimuth_deg.to_radians();
    let (dx, dy) = (-az.sin(), az.cos());
    let (px, py) = (-dy, dx);
    let c = side / 2.0;
    let reach = side * std::f64::consts::FRAC_1_SQRT_2;
    let n_steps = (2.0 * reach / RAY_STEP).ceil() as usize;
    let n_rays = (2.0 * reach / RAY_SPACING).ceil() as usize;
    let mut runs = Vec::with_capacity(n_rays);
    let mut profile = vec![0.0; n_steps];
    for r in 0..=n_rays {
        let off = -reach + r as f64 * RAY_SPACING;
        let mut run = 0.0;
        for (k, slot) in profile.iter_mut().enumerate() {
            let s = -reach + (k as f64 + 0.5) * RAY_STEP;
            let d = dark.at(c + px * off + dx * s, c + py * off + dy * s);
            run += d * RAY_STEP;
            *slot += d * RAY_SPACING * RAY_STEP;
        }
        runs.push(run);
    }
    f[8] = runs.iter().copied().fold(0.0, f64::max) / side;
    let lit: Vec<f64> = runs.iter().copied().filter(|&r| r > 0.5).collect();
    f[9] = if lit.is_empty() {
        0.0
    } else {
        lit.iter().sum::<f64>() / lit.len() as f64 / side
    };

    // Darkness mass projected onto the shadow axis.
    let mass: f64 = profile.iter().sum();
    if mass > 1e-9 {
        let pos = |k: usize| -reach + (k as f64 + 0.5) * RAY_STEP;
        let centroid = profile
            .iter()
            .enumerate()
            .map(|(k, &m)| m * pos(k))
            .sum::<f64>()
            / mass;
        let spread = (profile
            .iter()
            .enumerate()
            .map(|(k, &m)| m * (pos(k) - centroid).powi(2))
            .sum::<f64>()
            / mass)
            .sqrt();
        f[10] = centroid / side;
        f[11] = spread / side;
    }
    Ok(FeatureVector(f))
}
