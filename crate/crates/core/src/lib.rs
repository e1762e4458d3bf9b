//! Facial albedo capture and statistical modelling on a shared mesh template.

pub mod camera;
pub mod color;
pub mod error;
pub mod gradient;
pub mod inpaint;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod poisson;
pub mod raster;
pub mod render;
pub mod sampling;
pub mod signal;
pub mod solver;
pub mod sparse;
pub mod synth;
pub mod visibility;

pub use error::{Error, Result};
pub use mesh::{SymmetryMap, TriangleMesh, Vec3};
pub use signal::VertexSignal;
