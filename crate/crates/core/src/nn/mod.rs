//! Small dense networks with hand-written gradients.
//!
//! Parameters of a model live in one flat vector so the optimizer, the file
//! format and gradient checks all share the same layout.

mod adam;
mod mlp;
mod norm;

pub use adam::OptimizerState;
pub use mlp::{silu, silu_grad, LinearLayout, MlpConfig, MlpModel, MLP_MAGIC};
pub use norm::{adagn, group_norm, group_norm_backward, GroupNormCache, GROUP_NORM_EPS};
