//! Adaptive rectilinear meshes for implicit neural representations.
//!
//! The crate turns a pre-trained coordinate network into a 2^d-tree mesh
//! with network values sampled at the vertices. Refinement is driven either
//! by how far the network can be pruned on each element (interpolative
//! decomposition of hidden activations), by a direct interpolation-error
//! estimate, or applied uniformly.
//!
//! Modules:
//! - [`inr`]: network representation, weight files, forward pass, pruned rebuild
//! - [`lowrank`]: interpolative decompositions via column-pivoted QR
//! - [`mesh`]: the adaptive tree, vertices, interpolation and sampling
//! - [`driver`]: refinement campaigns and diagnostics
//! - [`metrics`]: global RMSE and campaign reports
//! - [`export`]: legacy VTK output
//! - [`trainer`]: small INR fits to analytic targets

pub mod driver;
pub mod error;
pub mod export;
pub mod inr;
pub mod lowrank;
pub mod mesh;
pub mod metrics;
pub mod trainer;

pub use driver::{run_campaign, run_time_slices, Campaign, Mode, RunConfig};
pub use error::{Error, Result};
pub use inr::{load_inr, ActivationKind, DomainBox, FourierEncoding, Layer, Mlp};
pub use lowrank::{interp_decomp, InterpDecomp};
pub use mesh::{ElementId, MeshTree, VertexValues};
