//! Dimensionality reducers: PCA and autoencoder for a priori compression,
//! PCA, t-SNE and UMAP for a posteriori 2-D embedding.

pub mod autoencoder;
pub mod pca;
pub mod tsne;
pub mod umap;

pub use autoencoder::{ae_encode, ae_train, bottleneck_sweep, AeModel};
pub use pca::{pca_fit, pca_transform, PcaModel};
pub use tsne::{tsne_embed, TsneConfig, TsneResult};
pub use umap::{umap_embed, UmapConfig};
