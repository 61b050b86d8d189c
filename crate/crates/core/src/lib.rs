//! Bounded rolling KV-cache memory for streaming transformer inference.
//!
//! Each frame's incremental key/value contribution is kept or dropped as a
//! whole block. Blocks are summarized by a normalized mean key, and a
//! fixed-capacity mid-term bank keeps the subset chosen by greedy
//! farthest-first k-center under cosine dissimilarity. A small anchor tier
//! pins the first frame and promotes sparse, reliable, novel frames.
//!
//! Baseline policies (recent-K reservation, token-level diversity retention,
//! full cache), diagnostics, a deterministic synthetic stream generator and
//! the binary container formats live alongside.

pub mod anchor;
pub mod checkpoint;
pub mod container;
pub mod diagnostics;
pub mod error;
pub mod manager;
pub mod memory;
pub mod mid_bank;
pub mod oracle;
pub mod policies;
pub mod runner;
pub mod sim;
pub mod trace;

pub use anchor::{AnchorConfig, AnchorTier};
pub use error::{Error, Result};
pub use manager::{LoadedCache, ManagerConfig, MemoryManager, StepOutput};
pub use memory::{compute_prototype, cosine_distance, FrameBlock, FrameMeta, LayerKv, Prototype, StreamConfig};
pub use mid_bank::{select_k_center, MidBank};
pub use policies::{Policy, RetentionMask};
pub use trace::{RetentionTrace, TraceEvent};
