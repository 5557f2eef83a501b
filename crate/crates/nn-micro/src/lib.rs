//! Double-precision tensor kernel for semantic-prior feature fusion.
//!
//! Implements the SAMF block (alignment of a frozen prior, multiplicative and
//! additive modulation, residual refinement) forward and backward, a stack of
//! such blocks, and a two-branch training loss whose branches share an
//! encoder-decoder. Every backward pass is written by hand and checked
//! against central finite differences in [`check`].

pub mod check;
pub mod conv;
pub mod error;
pub mod loss;
pub mod norm;
pub mod params;
pub mod samf;
pub mod tensor;
pub mod toy;
pub mod upsample;

pub use conv::{conv, conv_backward, ConvGrads, ConvParams};
pub use error::{NnError, Result};
pub use loss::{co_isd_loss, soft_dice, BranchLossWeights, CoIsdLoss};
pub use norm::{batch_norm, NormParams};
pub use params::{shared_grad_accumulate, ParamSet, Parameters};
pub use samf::{samf_backward, samf_forward, stack_samf, SamfCache, SamfStage};
pub use tensor::Tensor3;
pub use toy::CoIsdToy;
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
