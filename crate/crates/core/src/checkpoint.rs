//! Manager checkpoints.
//!
//! ```text
//! magic    b"KVBCKPT\0"
//! version  u32 (any other version is refused)
//! len      u32, then `len` bytes of header JSON
//! per stored block, in header order, per layer: keys then values (f32 LE)
//! ```
//!
//! The header lists tier membership by frame id; prototypes are recomputed
//! from the stored keys on load, so a resumed manager continues bit-for-bit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::anchor::{AnchorRecord, AnchorTier};
use crate::container::{check_magic, check_stream_config, read_json, read_layer, write_f32s, write_json, write_u32};
use crate::error::{Error, Result};
use crate::manager::{ManagerConfig, MemoryManager, StoredBlock};
use crate::memory::{FrameBlock, FrameMeta};
use crate::mid_bank::MidBank;
use crate::policies::{Policy, RecentWindow, TokenEntry, TokenMemory};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KVBCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnchorState {
    slots: Vec<u64>,
    t_last: Option<u64>,
    started: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ManagerConfig,
    next_frame: u64,
    anchors: AnchorState,
    banks: Vec<Vec<u64>>,
    recent: Vec<u64>,
    tokens: Vec<Vec<(u64, u32)>>,
    /// Metadata of every stored block, ascending; payloads follow in this order.
    blocks: Vec<FrameMeta>,
}

pub fn write_checkpoint<W: Write>(manager: &MemoryManager, mut w: W) -> Result<()> {
    let header = Header {
        config: manager.config.clone(),
        next_frame: manager.next_frame,
        anchors: AnchorState {
            slots: manager.tier.frame_ids().collect(),
            t_last: manager.tier.t_last(),
            started: manager.tier.started(),
        },
        banks: manager.banks.iter().map(|b| b.frame_ids().collect()).collect(),
        recent: manager.recent.frames().collect(),
        tokens: manager
            .tokens
            .iter()
            .map(|m| m.entries().iter().map(|e| (e.frame_id, e.token)).collect())
            .collect(),
        blocks: manager.blocks.values().map(|b| b.block.meta.clone()).collect(),
    };
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    write_json(&mut w, &header)?;
    for stored in manager.blocks.values() {
        for kv in &stored.block.layers {
            write_f32s(&mut w, &kv.keys)?;
            write_f32s(&mut w, &kv.values)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MemoryManager> {
    check_magic(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let header: Header = read_json(&mut r, "checkpoint header")?;
    check_stream_config(&header.config.stream)?;
    let fresh = MemoryManager::new(header.config.clone()).map_err(|e| bad(format!("bad manager config: {e}")))?;
    let stream = &header.config.stream;
    let layers = stream.num_layers;
    let n = stream.tokens_per_frame;

    let mut blocks: BTreeMap<u64, Arc<StoredBlock>> = BTreeMap::new();
    for meta in &header.blocks {
        if meta.frame_id >= header.next_frame {
            return Err(bad(format!("stored frame {} is not before frame {}", meta.frame_id, header.next_frame)));
        }
        if blocks.keys().next_back().is_some_and(|&last| last >= meta.frame_id) {
            return Err(bad("stored blocks are not strictly ascending"));
        }
        let kv = (0..layers).map(|l| read_layer(&mut r, stream, l)).collect::<Result<Vec<_>>>()?;
        let block = FrameBlock { meta: meta.clone(), layers: kv };
        block.validate(stream).map_err(|e| bad(e.to_string()))?;
        let stored = StoredBlock::new(block).map_err(|e| bad(e.to_string()))?;
        blocks.insert(meta.frame_id, Arc::new(stored));
    }
    let stored = |id: u64| blocks.get(&id).ok_or_else(|| bad(format!("frame {id} is referenced but not stored")));

    let slots = header
        .anchors
        .slots
        .iter()
        .map(|&id| {
            let b = stored(id)?;
            Ok(AnchorRecord { frame_id: id, meta: b.block.meta.clone(), prototypes: b.prototypes.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let tier = AnchorTier::restore(header.config.anchors, slots, header.anchors.t_last, header.anchors.started)?;
    if header.anchors.t_last.is_some_and(|t| t >= header.next_frame) {
        return Err(bad("anchor t_last is in the future"));
    }

    let recent = RecentWindow::restore(header.config.policy.recent_reserve(), header.recent.clone())?;
    for &id in &header.recent {
        stored(id)?;
    }

    if header.banks.len() != fresh.banks.len() {
        return Err(bad(format!("expected {} banks, found {}", fresh.banks.len(), header.banks.len())));
    }
    let mut banks = Vec::with_capacity(header.banks.len());
    for (l, ids) in header.banks.iter().enumerate() {
        let retained = ids
            .iter()
            .map(|&id| Ok((id, stored(id)?.prototypes[l].clone())))
            .collect::<Result<Vec<_>>>()?;
        banks.push(MidBank::restore(fresh.banks[l].capacity(), retained)?);
    }

    if header.tokens.len() != fresh.tokens.len() {
        return Err(bad(format!("expected {} token memories, found {}", fresh.tokens.len(), header.tokens.len())));
    }
    let budget = match header.config.policy {
        Policy::TokenLevel { budget } => budget,
        _ => 0,
    };
    let mut tokens = Vec::with_capacity(header.tokens.len());
    for (l, list) in header.tokens.iter().enumerate() {
        let entries = list
            .iter()
            .map(|&(id, tok)| {
                if tok as usize >= n {
                    return Err(bad(format!("token index {tok} out of range")));
                }
                Ok(TokenEntry::from_layer(id, &stored(id)?.block.layers[l], tok as usize))
            })
            .collect::<Result<Vec<_>>>()?;
        tokens.push(TokenMemory::restore(budget, entries)?);
    }

    // Every stored block must be held by something, except under full cache.
    if header.config.policy != Policy::FullCache {
        let referenced: BTreeSet<u64> = header
            .anchors
            .slots
            .iter()
            .chain(&header.recent)
            .chain(header.banks.iter().flatten())
            .copied()
            .chain(header.tokens.iter().flatten().map(|(id, _)| *id))
            .collect();
        if let Some(id) = blocks.keys().find(|id| !referenced.contains(id)) {
            return Err(bad(format!("stored frame {id} is not referenced")));
        }
    } else if blocks.len() as u64 != header.next_frame {
        return Err(bad("full-cache checkpoint is missing frames"));
    }

    let manager = MemoryManager {
        config: header.config,
        next_frame: header.next_frame,
        blocks,
        tier,
        banks,
        recent,
        tokens,
    };
    manager.check_invariants().map_err(|e| bad(e.to_string()))?;
    Ok(manager)
}

pub fn encode_checkpoint(manager: &MemoryManager) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(manager, &mut buf)?;
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<MemoryManager> {
    read_checkpoint(bytes)
}

pub fn save_checkpoint(manager: &MemoryManager, path: &Path) -> Result<()> {
    write_checkpoint(manager, BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<MemoryManager> {
    read_checkpoint(BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::AnchorConfig;
    use crate::sim::scenario;
    use crate::trace::RetentionTrace;

    fn run(policy: Policy, anchors: usize, split: u64) -> (String, String) {
        let spec = {
            let mut s = scenario("revisit", 9).unwrap().spec;
            s.frames = 120;
            s
        };
        let cfg = ManagerConfig {
            stream: spec.config.clone(),
            policy,
            mid_capacity: 6,
            anchors: AnchorConfig { capacity: anchors, gap: 10, ..AnchorConfig::default() },
        };
        let mut straight = MemoryManager::new(cfg.clone()).unwrap();
        let mut t1 = RetentionTrace::new();
        for b in spec.generate() {
            t1.extend(&straight.step(b).unwrap().events).unwrap();
        }
        let mut first = MemoryManager::new(cfg).unwrap();
        let mut t2 = RetentionTrace::new();
        let mut frames = spec.generate();
        for b in frames.by_ref().take(split as usize) {
            t2.extend(&first.step(b).unwrap().events).unwrap();
        }
        let bytes = encode_checkpoint(&first).unwrap();
        let mut resumed = decode_checkpoint(&bytes).unwrap();
        assert_eq!(encode_checkpoint(&resumed).unwrap(), bytes);
        for b in frames {
            t2.extend(&resumed.step(b).unwrap().events).unwrap();
        }
        (t1.hash(), t2.hash())
    }

    #[test]
    fn resumed_runs_match_uninterrupted_runs() {
        for (policy, anchors) in [
            (Policy::FrameKcenter, 3),
            (Policy::RecentK { k: 2 }, 2),
            (Policy::RecentK { k: 6 }, 0),
            (Policy::TokenLevel { budget: 96 }, 0),
            (Policy::FullCache, 0),
        ] {
            let (a, b) = run(policy, anchors, 57);
            assert_eq!(a, b, "{policy:?}");
        }
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let spec = scenario("slow-pan", 2).unwrap().spec;
        let cfg = ManagerConfig {
            stream: spec.config.clone(),
            policy: Policy::FrameKcenter,
            mid_capacity: 4,
            anchors: AnchorConfig { capacity: 2, ..AnchorConfig::default() },
        };
        let mut m = MemoryManager::new(cfg).unwrap();
        for b in spec.generate().take(10) {
            m.step(b).unwrap();
        }
        let bytes = encode_checkpoint(&m).unwrap();
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(decode_checkpoint(&v2), Err(Error::Format(_))));
        for cut in [3, 11, 40, bytes.len() - 3] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err());
        }
        let empty = MemoryManager::new(m.config().clone()).unwrap();
        let round = decode_checkpoint(&encode_checkpoint(&empty).unwrap()).unwrap();
        assert_eq!(round.next_frame(), 0);
    }
}
