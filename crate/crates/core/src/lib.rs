pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod experiments;
pub mod field_io;
pub mod jko;
pub mod kernels;
pub mod metric;
pub mod quadrature;
pub mod scalar;
pub mod selfcheck;
pub mod spectral;
pub mod thermo;

pub use config::RunConfig;
pub use dynamics::{Ensemble, Integrator, SimState};
pub use kernels::{Kernel, KernelFamily};
pub use scalar::Scalar;
pub use spectral::{Grid, RealField};
pub use thermo::ModelParams;

pub type Grid64 = Grid<f64>;
pub type Field64 = RealField<f64>;
pub type Kernel64 = Kernel<f64>;
pub type ModelParams64 = ModelParams<f64>;
pub type SimState64 = SimState<f64>;
pub type Grid32 = Grid<f32>;
pub type Field32 = RealField<f32>;
pub type Kernel32 = Kernel<f32>;
pub type ModelParams32 = ModelParams<f32>;
pub type SimState32 = SimState<f32>;
