//! Layer primitives with forward and backward passes.

pub mod activation;
pub mod conv;
pub mod norm;
pub mod pool;
pub mod reference;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{
    conv3d_backward, conv3d_forward, deconv3d_backward, deconv3d_forward, ConvGrads, Kernel3D,
    Padding,
};
pub use norm::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_infer, batchnorm_forward_train,
    BNState, BnCache, BnGrads, Mode,
};
pub use pool::{
    maxpool3d_backward, maxpool3d_forward, unpool3d_backward, unpool3d_forward, PoolOutput,
    PoolSpec,
};
