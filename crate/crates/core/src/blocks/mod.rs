//! Differentiable building blocks of the network and the fusion modules.

pub mod aspp;
pub mod attention_gate;
pub mod axial;
pub mod convnext;
pub mod dilated;
pub mod eca;
pub mod involution;
pub mod layers;
pub mod spectral;
pub mod spherical;
pub mod stochastic;

pub use aspp::Aspp;
pub use attention_gate::AttentionGate;
pub use axial::GatedAxial;
pub use convnext::ConvNeXt3d;
pub use dilated::{BlockConfig, DilatedBlock};
pub use eca::Eca;
pub use involution::Involution3d;
pub use layers::{downsample, dropout, BatchNorm3d, ChannelNorm, Conv3d, Upsample};
pub use spectral::{LogKernel, SpectralMask};
pub use spherical::SphericalConv3d;
pub use stochastic::stochastic_depth;
