//! Synthetic cerebrovascular MRA-TOF patch generation.
//!
//! The crate covers the whole chain from a binary vessel segmentation to a
//! labeled synthetic patch: centerline graph extraction ([`graph`]), B-spline
//! modelling and perturbation of the branches ([`spline`]), tube
//! rasterization ([`raster`]), calibrated noise backgrounds ([`background`]),
//! aneurysm placement ([`aneurysm`]), texture metrics ([`texture`]) and the
//! batch pipeline ([`pipeline`]).

pub mod aneurysm;
pub mod background;
pub mod error;
pub mod graph;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod spline;
pub mod texture;
pub mod topology;
pub mod volume;
pub mod vvol;

pub use error::{Error, ParseError, Result};
pub use volume::{crop, gaussian_filter_3d, max_composite, DType, PatchRegion, Volume};
