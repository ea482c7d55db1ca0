//! Core data structures for maintaining conjunctive queries with inequality
//! joins under updates.
//!
//! Everything here is `no_std` with `alloc`; IO, file formats and the command
//! line live in the `dynjoin` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod gjt;
pub mod gmr;
pub mod gyo;
pub mod query;
pub mod trep;

pub(crate) type Map<K, V> = hashbrown::HashMap<K, V, rustc_hash::FxBuildHasher>;
