//! Model-division video semantic communication: a learned joint
//! source-channel codec that splits every group of pictures into one common
//! feature map and per-frame individual maps, ranks feature elements by
//! estimated entropy and sends only the most informative ones over a noisy
//! channel.

pub mod channel;
pub mod codec;
pub mod conv;
pub mod data;
pub mod division;
pub mod entropy;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod tensor;
pub mod training;
pub mod video;
pub mod vlc;

pub use error::{Error, Result};
