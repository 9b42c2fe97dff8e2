//! Identical-prefix collision search and chosen-prefix scaffolding.

pub mod birthday;
pub mod bundle;
pub mod ipc;
pub mod pool;
pub(crate) mod path;
pub mod reference;
pub(crate) mod search;
mod tail;
pub mod verify;

pub use birthday::{birthday_cost, birthday_search, padding_bits, BirthdayConfig, BirthdayMatch};
pub use bundle::{ingest_cpc_bundle, BundleError, CpcSuffixBundle, SuffixSide};
pub use ipc::{find_ipc_collision, CollisionError, IpcSuffixPair, PrefixContext};
pub use verify::{verify_bytes, verify_collision, CollisionReport};
