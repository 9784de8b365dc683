//! Secondary-memory triple indexing on a shared paged B+tree substrate.
//!
//! Three index families over the same pager and B+tree code:
//!
//! * [`triplet`]: one B+tree keyed on every distinct atom, with a
//!   three-bucket payload per atom (the role-free index this crate is named
//!   after),
//! * [`baselines::MapIndex`]: three B+trees keyed on full triples
//!   (SOP / PSO / OSP),
//! * [`baselines::HexIndex`]: three B+trees keyed on atom pairs
//!   (SO / PS / OS) with the third role stored as a payload list.
//!
//! [`eval`] evaluates basic graph patterns against any family with exact
//! block-read metering, [`data`] covers synthetic generation and N-Triples
//! ingestion, and [`bench`] reproduces the index-size and I/O-cost
//! experiments at desk scale.

pub mod baselines;
pub mod bench;
pub mod btree;
pub mod data;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod model;
pub mod pager;
pub mod payload;
pub mod triplet;

pub use error::{Error, Result};
