//! Activity detection and multi-user detection for grant-free code-domain NOMA uplinks.
//!
//! Numerical code is generic over [`scalar::Real`]; the aliases below fix the
//! precisions the experiment pipeline uses.

pub mod error;
pub mod frontend;
pub mod scalar;
pub mod simulator;
pub mod threshold;
pub mod linalg;
pub mod metrics;
pub mod cs;
pub mod mud;
pub mod cnn;
mod binio;
pub mod container;
pub mod config;
pub mod eval;
pub mod validation;
pub mod experiment;

pub type Frame = simulator::PacketFrame<f64>;
pub type Frame32 = simulator::PacketFrame<f32>;
pub type Channel = simulator::ChannelState<f64>;
pub type Tensor = frontend::DecorrelatedTensor<f64>;
/// Storage and network-input precision.
pub type Tensor32 = frontend::DecorrelatedTensor<f32>;
pub type StatParams = threshold::SymbolStatParams<f64>;
pub type OmpOutput = cs::OmpResult<f64>;
pub type AmpOutput = cs::AmpResult<f64>;
pub type MudResult = mud::MudOutput<f64>;
/// Networks train and run in single precision.
pub type Net = cnn::Network<f32>;
/// Double-precision network, used for gradient checks.
pub type Net64 = cnn::Network<f64>;
pub type Dataset = container::Dataset<f32>;
