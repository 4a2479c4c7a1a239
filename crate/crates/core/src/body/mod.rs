//! Procedural articulated body: a 24-joint kinematic tree, ten linear
//! shape coefficients, linear blend skinning and a weak-perspective camera.

mod lbs;
pub mod skeleton;
mod template;

pub use lbs::{lbs, lbs_var, posed_joints, rodrigues, BodyMesh, BodyParams, Camera};
pub use skeleton::{JOINT_NAMES, NUM_JOINTS, NUM_SHAPE, PARENTS, PARTS};
pub use template::{make_template, BodyTemplate, TemplateConfig};
