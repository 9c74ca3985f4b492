//! Phantoms, simulated datasets, image metrics and tensor files.

pub mod dataset;
pub mod metrics;
pub mod phantom;
pub mod tensor;

pub use dataset::{build_dataset, load_dataset, save_dataset, Dataset, PoissonNoise};
pub use metrics::{mse, psnr};
pub use phantom::{make_phantom, PhantomSpec, Primitive, Shape};
pub use tensor::{load_tensor, save_tensor, Dtype, Tensor};
