//! Neural radiance field on a multiresolution hash encoding.

pub mod checkpoint;
pub mod export;
pub mod field;
pub mod hashgrid;
pub mod mlp;
pub mod render;
pub mod scalar;
pub mod sh;
pub mod train;

pub use export::{export_pointcloud, ColorMode};
pub use field::{FieldConfig, FieldGrad, FieldNetwork, FieldSample, RadianceField};
pub use hashgrid::{HashGrid, HashGridConfig};
pub use render::{render_panorama_view, render_pinhole_view, render_ray, RenderedRay, RenderedView, Sampling};
pub use scalar::Scalar;
pub use train::{loss_and_grad, train, Adam, PixelPool, Progress, RayBatch, TrainConfig, TrainReport};
