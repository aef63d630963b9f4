//! Graph-convolutional mesh regressor.

pub mod checkpoint;
pub mod forward;
pub mod layers;
pub mod model;
pub mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use forward::{embed_inputs, forward_network, NetworkOutput};
pub use layers::{attach_features, graph_conv_layer};
pub use model::BodyModel;
pub use params::{NetConfig, NetworkParams};
