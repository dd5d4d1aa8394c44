//! Minimal tensor engine and the encoder families used for face-forgery
//! detection: frame-wise 2-D CNNs, recurrent heads over frame features and
//! spatio-temporal 3-D CNNs.

pub mod blocks;
pub mod checkpoint;
pub mod encoders;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use encoders::{
    bigru_frozen_blocks, build_image2d, build_seq_bigru, build_seq_lstm, build_st3d, sigmoid, Encoder, EncoderOutput,
    EncoderSpec, Family, Image2dNet, Normalization,
};
pub use error::EncoderError;
pub use optim::Adam;
pub use param::{Mode, Module, Param, Visitor};
pub use scalar::Scalar;
pub use tensor::Tensor;
