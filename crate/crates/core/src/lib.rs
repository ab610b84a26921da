//! Cryptanalysis workbench for the MCKBA/HCKBA chaotic image cipher.
//!
//! The cipher itself lives in [`cipher`], [`keystream`] and [`block_codec`].
//! [`kernel`] partially inverts `(alpha + x) ^ (beta + x)`, which is all the
//! known-plaintext ([`kpa`]) and chosen-plaintext ([`cpa`]) attacks need to
//! recover an equivalent key. [`prob`] evaluates and measures how often a key
//! bit is confirmed by a single observation.

pub mod block_codec;
pub mod cipher;
pub mod cpa;
pub mod error;
pub mod image;
pub mod kernel;
pub mod keystream;
pub mod kpa;
pub mod prob;
pub mod word;

pub use block_codec::{blocks_to_image, image_to_blocks, BlockStream};
pub use cipher::{decrypt_image, encrypt_image, KeyClass, ParityClass, Selector};
pub use error::{Error, Result};
pub use image::GrayImage;
pub use kernel::{KernelInstance, PartialKeyObservation};
pub use keystream::{keygen, SecretKey, SelectorSequence};
pub use word::WordSize;
