mod basic;
mod conv;
mod rnn;

pub use basic::{BatchNorm, Dropout, GlobalAvgPool, Linear, MaxPool3d, Relu};
pub use conv::{conv_out_len, Conv3d};
pub use rnn::{reverse_time, BiGru, Gru, Lstm};
