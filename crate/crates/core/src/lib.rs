//! Toolkit for deploying large read-only file collections as SquashFS bundles.
//!
//! Large datasets of many small files are slow to scan on shared and networked
//! filesystems. This crate packs directory trees into SquashFS 4.0 images
//! ("bundles"), shards big collections into groups of top-level members,
//! presents many bundles as a single union namespace, serves that namespace
//! over read-only SFTP, and measures metadata-scan throughput against plain
//! host directories.
//!
//! The main entry points are [`pack::pack`], [`reader::BundleReader`],
//! [`overlay::OverlayReader`], [`sftp::serve`] and the [`bench`] module.

pub mod bench;
pub mod error;
pub mod format;
pub mod mount;
pub mod overlay;
pub mod pack;
pub mod reader;
pub mod sftp;
pub mod source;

pub use error::{Error, Result};
