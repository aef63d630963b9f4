//! Graph-convolutional human mesh regression without mesh supervision.

pub mod autodiff;
pub mod body;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod net;
pub mod pipeline;
pub mod prior;
pub mod render;
pub mod scalar;
pub mod sparse;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Mesh32 = mesh::Mesh<f32>;
pub type Mesh64 = mesh::Mesh<f64>;
pub type Camera32 = render::CameraParams<f32>;
pub type Camera64 = render::CameraParams<f64>;
pub type Sample32 = body::TrainingSample<f32>;
pub type Sample64 = body::TrainingSample<f64>;
pub type Model32 = net::BodyModel<f32>;
pub type Model64 = net::BodyModel<f64>;
pub type Params32 = net::NetworkParams<f32>;
pub type Params64 = net::NetworkParams<f64>;
