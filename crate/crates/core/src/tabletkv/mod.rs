//! Sharded key-value tablets named by lease.

mod map;
pub mod server;

pub use server::{tablet_server, Applied, SplitDone, TabletServer, TabletState, GET, NOT_FOUND, PUT, SPLIT};
pub use map::{tablet_id_of, tablet_lease_name, EndKey, SharedTabletMap, TabletDescriptor, TabletMap, TABLET_LEASE_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TabletError {
    #[error("bad-split: key {key:?} is not strictly inside tablet {tablet}")]
    BadSplit { tablet: String, key: String },
    #[error("unknown tablet {0}")]
    UnknownTablet(String),
    #[error("invalid tablet map: {0}")]
    InvalidMap(String),
}
