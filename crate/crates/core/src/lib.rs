//! A single-stage convolutional network (convolution, max pooling, dense
//! stack) with hand-written backpropagation, plain gradient descent, and a
//! finite-difference gradient checker.

pub mod activations;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod model;
pub mod network;
pub mod tensor;

pub use activations::Activation;
pub use dataio::Dataset;
pub use error::{Error, ParseError, Result};
pub use gradcheck::{check_network, GradReport};
pub use layers::Fault;
pub use losses::Loss;
pub use network::{Architecture, GradientSet, Network, TrainConfig};
pub use tensor::Tensor;
