//! Bias subspaces for static word embeddings.
//!
//! The crate identifies the bias subspace of a social category from its
//! defining word sets, combines the subspaces of several categories into one
//! (SUM, MEAN, or the direction closest to all of them), removes bias with
//! hard-debiasing, and measures the result.
//!
//! | module | contents |
//! |--------|----------|
//! | [`embeddings`] | text-format loading, saving, normalization |
//! | [`wordsets`] | category word lists and vocabulary resolution |
//! | [`subspace`] | centered defining sets and PCA |
//! | [`compose`] | SUM / MEAN / intersection direction, subspace geometry |
//! | [`debias`] | neutralize, equalize, sequential and composed strategies |
//! | [`eval`] | MAC, paired t-test, FPED / FNED |
//! | [`pipeline`] | request/response types and end-to-end commands |

pub mod compose;
pub mod debias;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod subspace;
pub mod vector;
pub mod wordsets;

pub use compose::{Composition, CompositionResult};
pub use debias::{DebiasPlan, Strategy};
pub use embeddings::{EmbeddingFormat, EmbeddingSet};
pub use error::{Error, ErrorKind, Result};
pub use subspace::{BiasSubspace, PcaOptions};
pub use wordsets::CategorySpec;
