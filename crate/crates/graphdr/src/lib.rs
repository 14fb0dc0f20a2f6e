//! Semi-supervised node classification on citation graphs, with a priori and
//! a posteriori dimensionality reduction and clustering diagnostics.
//!
//! The crate trains four one-hidden-layer node classifiers (MLP, GCN, GAT,
//! GraphConv) on citation datasets with a masked cross-entropy loss, optionally
//! compresses input features before training (PCA, autoencoder), embeds learned
//! logits into 2-D afterwards (PCA, t-SNE, UMAP), and scores both
//! classification quality (accuracy/precision/recall/F1) and cluster quality
//! (Silhouette, Dunn). Everything is deterministic given a seed.
//!
//! See the `examples/` directory for one runnable example per capability, and
//! the `graphdr` binary for the batch experiment driver.

pub mod data;
pub mod dimred;
pub mod eigen;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod metrics;
pub mod models;
pub mod plot;
pub mod rng;
pub mod sparse;
pub mod tape;
pub mod train;

pub use error::{GraphDrError, Result};
pub use matrix::DenseMatrix;
pub use rng::Rng;
pub use sparse::SparseAdjacency;
