//! Gray image segmentation from echo state network equilibrium features.
//!
//! Each pixel intensity is held as a constant input to a random tanh reservoir until the
//! reservoir settles; the settled state is that pixel's feature vector. Intrinsic plasticity can
//! first adapt the neurons' gains and biases to the image's intensity stream. The features, or the
//! raw intensities, are then clustered into segments.
//!
//! ```no_run
//! use esn_segment::prelude::*;
//!
//! let img = make_synthetic_benchmark(256, 256, 1)?;
//! let initial = generate_reservoir(10, 1, 0.9, 42)?;
//! let tuned = ip_tune(&initial, img.intensities(), &IpConfig::default())?;
//! let features = extract_features(&tuned, &img, &ExtractOptions::default())?;
//! let seg = segment(SegmentInput::Features(&features), &SegmentParams::default())?;
//! assert_eq!(seg.k, 3);
//! # Ok::<(), esn_segment::Error>(())
//! ```

pub mod clustering;
pub mod error;
pub mod exec;
pub mod features;
pub mod image_io;
mod io_util;
pub mod ip;
pub mod pipeline;
pub mod reservoir;

pub use error::{Error, ErrorClass, Result};
pub use exec::Execution;

pub mod prelude {
    pub use crate::clustering::{
        label_agreement, segment, Method, SegmentInput, SegmentParams, Segmentation,
    };
    pub use crate::error::{Error, Result};
    pub use crate::exec::Execution;
    pub use crate::features::{extract_features, select_features, ExtractOptions, FeatureMap};
    pub use crate::image_io::{load_gray, make_synthetic_benchmark, GrayImage};
    pub use crate::ip::{empirical_kl, ip_tune, IpConfig};
    pub use crate::reservoir::{generate_reservoir, Reservoir};
}
