//! Registered infrared/visible pairs: discovery, decoding, augmentation.

mod augment;
mod color;
mod discover;
mod image_io;
pub mod synthetic;

pub use augment::{augment, AugmentationPolicy};
pub use color::{rgb_to_ycbcr, ycbcr_to_rgb};
pub use discover::{discover_dataset, read_manifest, scan_pairs, PairListing, PairRecord};
pub use image_io::{load_gray, load_pair, save_gray, save_rgb, to_u8, ImagePair};
