//! Elaborative description workflow: crawl candidate sentences, persist
//! them, record human selections and export the final description file.

pub mod api;
pub mod crawl;
pub mod sources;
pub mod store;

pub use api::{AnnotationRequest, AnnotationResponse, AnnotationStatus, ClassDetail, ClassSummary};
pub use crawl::{crawl_candidates, parse_class_list, Candidate, CrawlError, EdCandidateSet, SourceTag};
pub use sources::{DictionarySource, EncyclopediaSource, FixtureSources, SourceError};
pub use store::{EdStore, StoreError};

/// Environment variable naming the store file.
pub const STORE_ENV: &str = "REHEARSAL_ED_STORE";
