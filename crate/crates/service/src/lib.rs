//! HTTP session service for the interactive reranking loop: create a session
//! for a query, label entities one at a time, and read back the reranked
//! answers. Sessions persist as append-only event logs and replay exactly.

pub mod api;
pub mod catalog;
pub mod error;
pub mod service;
pub mod session;
pub mod store;

pub use api::{router, serve};
pub use catalog::{Catalog, QueryRef, RerankerChoice};
pub use error::{ErrorBody, Result, ServiceError};
pub use service::{CreateRequest, PreferenceRequest, SessionService};
pub use session::{Event, RankingPage, Session, SessionMetadata, View};
pub use store::{Snapshot, Store};
