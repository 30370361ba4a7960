use serde::{Deserialize, Serialize};

use crate::photogrammetry::{elevation_tangent, BuildingHeight, GeometryError, ShadowLength};
use crate::scalar::Scalar;
use crate::solar::SolarPosition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    L1,
    #[serde(rename = "MSE")]
    Mse,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::L1 => "L1",
            Self::Mse => "MSE",
        })
    }
}

/// Loss on height after pushing the predicted shadow through `H = S·tan σ`,
/// and its derivative with respect to the predicted shadow length.
///
/// The L1 subgradient at the kink is 0.
pub fn height_loss<T: Scalar>(
    pred_shadow: ShadowLength<T>,
    sun: &SolarPosition,
    gt_height: BuildingHeight<T>,
    kind: LossKind,
) -> Result<(T, T), GeometryError> {
    let tan = elevation_tangent::<T>(sun)?;
    Ok(height_loss_with_tan(
        pred_shadow.meters(),
        tan,
        gt_height.meters(),
        kind,
    ))
}

/// Same as [`height_loss`] with `tan σ` precomputed and no range checks on
/// the prediction (the training loop feeds raw network outputs through it).
#[inline]
pub(crate) fn height_loss_with_tan<T: Scalar>(pred: T, tan: T, gt: T, kind: LossKind) -> (T, T) {
    let r = pred * tan - gt;
    match kind {
        LossKind::L1 => {
            let g = if r > T::zero() {
                tan
            } else if r < T::zero() {
                -tan
            } else {
                T::zero()
            };
            (r.abs(), g)
        }
        LossKind::Mse => (r * r, T::lit(2.0) * r * tan),
    }
}
