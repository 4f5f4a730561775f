//! Feature files, dataset manifests, class catalogs and seeded class splits.

pub mod catalog;
pub mod features;
pub mod manifest;
pub mod splits;

pub use catalog::{
    derive_new_classes, CatalogClass, CatalogError, ClassCatalog, OverlapEntry, DEFAULT_OVERLAP_THRESHOLD,
};
pub use features::{write_features, FeatureFile, FeatureFileError, FeatureHeader};
pub use manifest::{load_manifest, write_manifest, Dataset, DatasetError, Manifest, ManifestEntry};
pub use splits::{build_splits, SplitConfig, SplitError, SplitSpec};
