//! Quantitative mapping: MAP estimation of `(PD, T1, T2)` from multi-contrast
//! observations, synthetic phantoms and property histograms.

mod fit;
mod histogram;
mod model;
mod phantom;

pub use fit::{fit_volume, fit_volume_with_threads, fit_voxel, FitResult, VoxelFit};
pub use histogram::{histogram, property_histogram, Histogram};
pub use model::{
    inverse_parameterize, map_objective, objective_gradient, parameterize, residuals_and_jacobian, FitConfig,
    Observation, PROPERTY_MAX, PROPERTY_MIN,
};
pub use phantom::{brain2d, make_phantom, PhantomSpec, Shape, Tissue, BRAIN2D_TISSUES};
