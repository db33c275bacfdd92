//! Gaussian splats, skeletal skinning, and a front-to-back rasterizer.
//!
//! [`rasterize`] returns the composited image together with each splat's
//! accumulated transmittance-weighted alpha; [`rasterize_backward`] gives
//! gradients with respect to color and opacity.

mod camera;
mod error;
mod image;
mod raster;
mod rig;
mod splat;

pub use camera::Camera;
pub use error::{Result, SplatError};
pub use image::Image;
pub use raster::{
    project_splat, rasterize, rasterize_backward, Projection, Render, SplatGrads, CUTOFF, DILATION, MAX_ALPHA,
    NEAR,
};
pub use rig::{
    joint, lbs_transform, lbs_with_transforms, BodyPose, JointTransform, SkinnedRig, Skeleton, SPLATS_PER_POINT,
};
pub use splat::{read_splats, sigmoid, write_splats, GaussianSplat, DUMP_FLOATS};

pub use nalgebra::{Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
