//! Pure algorithms behind the fluorodx pipeline.
//!
//! Everything in this crate works on in-memory values only: manifests,
//! images as float buffers, logits, label/score vectors. File formats, model
//! backbones and the HTTP service live in the `fluorodx` crate.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// `!(x > 0.0)` guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

/// Serializes a closed vocabulary as its canonical spelling.
macro_rules! string_serde {
    ($($name:ty),+) => {$(
        #[cfg(feature = "serde")]
        impl serde::Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        #[cfg(feature = "serde")]
        impl<'de> serde::Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
                let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    )+};
}

pub mod arch;
pub mod augment;
pub mod bbox;
pub mod error;
pub mod gradcam;
pub mod image;
pub mod kfold;
pub mod label;
pub mod loss;
pub mod manifest;
pub mod metrics;
pub mod preprocess;
pub mod rng;
pub mod schedule;
pub mod selection;
pub mod split;
pub mod weights;

string_serde!(ArchitectureId, augment::Strategy, Label, Split, Variant, Origin);

pub use arch::ArchitectureId;
pub use error::{Error, Result};
pub use image::Image;
pub use label::{Label, Origin, Split, Variant};
pub use manifest::{DatasetManifest, ImageRecord};
