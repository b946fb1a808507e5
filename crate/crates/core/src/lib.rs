//! Multilevel Taylor-expansion fast summation for continuous convolutions
//! in 3D, with differentiable explicit, root-implicit and integral layers.
//!
//! The engine approximates
//! `f(q) = sum_n psi(q - p_n) w_n` for sources `p_n` and targets `q`
//! inside the open cube `(-1, 1)^3` by gridded Taylor expansions on a
//! hierarchy of uniform voxel grids. Every layer's backward pass reuses the
//! same machinery with adjoints inserted as sources.

pub mod dataio;
pub mod error;
pub mod expansion;
pub mod kernel;
pub mod layers;
pub mod multiindex;
pub mod oracle;
pub mod par;
pub mod poly1d;
pub mod ray;
pub mod scenes;
pub mod sources;
pub mod trainer;

pub use error::{Error, Result};
pub use expansion::{Accessor, Engine, EngineConfig, Precision};
pub use kernel::{KernelFamily, KernelModel};
pub use multiindex::{MultiIndex, MultiIndexTable};
pub use poly1d::Poly1D;
pub use sources::SourceSet;
