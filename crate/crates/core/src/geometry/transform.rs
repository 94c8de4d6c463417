use nalgebra::{Matrix3, Vector3};

use super::{GeometryError, PointCloud, UnitQuaternion};

/// Rotation, translation and per-axis scale: `p ↦ R (s ⊙ p) + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    rotation: UnitQuaternion,
    translation: Vector3<f64>,
    scale: Vector3<f64>,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn new(
        rotation: UnitQuaternion,
        translation: Vector3<f64>,
        scale: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(GeometryError::NonPositiveScale);
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(Self {
            rotation,
            translation,
            scale,
        })
    }

    /// Rotation plus translation with unit scale.
    pub fn rigid(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
            scale: Vector3::repeat(1.0),
        }
    }

    pub fn identity() -> Self {
        Self::rigid(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn rotation(&self) -> UnitQuaternion {
        self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.scale
    }

    pub fn is_rigid(&self) -> bool {
        self.scale.iter().all(|s| *s == 1.0)
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(&self.scale.component_mul(p)) + self.translation
    }

    pub fn to_affine(&self) -> AffineMap {
        AffineMap {
            linear: self.rotation.to_matrix() * Matrix3::from_diagonal(&self.scale),
            translation: self.translation,
        }
    }
}

/// Maps every point of `p` through `t`, preserving order.
pub fn apply_transform(t: &SimilarityTransform, p: &PointCloud) -> PointCloud {
    PointCloud::from_points_unchecked(p.points().iter().map(|x| t.apply_point(x)).collect())
}

/// General affine point map `p ↦ L p + t`.
///
/// Anisotropic scale and rotation do not commute, so composing two
/// [`SimilarityTransform`]s is only closed when the product of linear parts
/// factors as `R · diag(s)`. This type carries compositions and inverses
/// exactly; [`AffineMap::to_similarity`] recovers the factored form when it
/// exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl AffineMap {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.linear * p + self.translation
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_points_unchecked(cloud.points().iter().map(|p| self.apply_point(p)).collect())
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn then_after(&self, inner: &AffineMap) -> AffineMap {
        AffineMap {
            linear: self.linear * inner.linear,
            translation: self.linear * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Result<AffineMap, GeometryError> {
        let inv = self
            .linear
            .try_inverse()
            .ok_or(GeometryError::SingularLinearPart)?;
        Ok(AffineMap {
            linear: inv,
            translation: -(inv * self.translation),
        })
    }

    /// Factors the linear part as `R · diag(s)` with `R` a proper rotation and
    /// `s > 0`. Fails when the columns are not mutually orthogonal (relative
    /// tolerance 1e-9) or the map contains a reflection.
    pub fn to_similarity(&self) -> Result<SimilarityTransform, GeometryError> {
        let cols: [Vector3<f64>; 3] = [
            self.linear.column(0).into(),
            self.linear.column(1).into(),
            self.linear.column(2).into(),
        ];
        let scale = Vector3::new(cols[0].norm(), cols[1].norm(), cols[2].norm());
        if scale.iter().any(|s| *s < 1e-300) {
            return Err(GeometryError::SingularLinearPart);
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let cos = cols[a].dot(&cols[b]) / (scale[a] * scale[b]);
            if cos.abs() > 1e-9 {
                return Err(GeometryError::NotRepresentable);
            }
        }
        let rot = Matrix3::from_columns(&[cols[0] / scale[0], cols[1] / scale[1], cols[2] / scale[2]]);
        if rot.determinant() < 0.0 {
            return Err(GeometryError::NotRepresentable);
        }
        SimilarityTransform::new(UnitQuaternion::from_matrix(&rot)?, self.translation, scale)
    }
}

/// Composition `outer ∘ inner` as a point-mapping operator.
///
/// Call [`AffineMap::to_similarity`] on the result to get a closed-form
/// transform; it succeeds whenever the composed linear part is a rotation
/// times a diagonal scale (isotropic inner scale, rigid outer transform,
/// axis-aligned outer rotation, ...).
pub fn compose(outer: &SimilarityTransform, inner: &SimilarityTransform) -> AffineMap {
    outer.to_affine().then_after(&inner.to_affine())
}

/// Inverse of a similarity transform as an affine operator.
pub fn inverse(t: &SimilarityTransform) -> AffineMap {
    let inv_scale = Matrix3::from_diagonal(&t.scale.map(|s| 1.0 / s));
    let rt = t.rotation.to_matrix().transpose();
    AffineMap {
        linear: inv_scale * rt,
        translation: -(inv_scale * rt * t.translation),
    }
}
