//! Desk-scale relightable-asset pipeline: simulate a gradient-illumination
//! light stage on analytic scenes, recover photometric-stereo normals and
//! albedo, fit a signed-distance field from multi-view normals, synthesize
//! novel-view G-buffers by depth-guided reprojection, recover roughness by
//! inverse rendering, and relight under arbitrary illumination via
//! spherical-Gaussian shading.
//!
//! Conventions used throughout:
//! - world frame is right-handed, y up; cameras look down their local +z
//! - image origin top-left, u right, v down
//! - all image data is linear radiance; gamma only at PNG preview export
//! - depth rasters store distance along the unit pixel ray
//!   (= Euclidean distance to the camera center)

pub mod asset;
pub mod brdf;
pub mod camera;
pub mod error;
pub mod gbuffer;
pub mod geometry;
pub mod image;
pub mod lighting;
pub mod materialopt;
pub mod math;
pub mod metrics;
pub mod pfm;
pub mod photometric;
pub mod scene;
pub mod shading;
pub mod stagesim;

pub use camera::{Camera, Ray};
pub use error::{Error, Result};
pub use image::ImageBuffer;
pub use lighting::{EnvironmentMap, GradientPattern, SgLobe, SgMixture};
pub use math::{Mat3, Rgb, Vec2, Vec3};
pub use scene::SceneSpec;
