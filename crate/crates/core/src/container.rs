//! Recorded frame streams.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"KVBSTRM\0"
//! version  u32
//! len      u32, then `len` bytes of manifest JSON
//! per frame:
//!   len    u32, then `len` bytes of frame metadata JSON
//!   per layer: keys then values, H*N*D f32 each
//! ```
//!
//! Readers check every length against the manifest before reading and never
//! allocate ahead of the bytes actually present.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{FrameBlock, FrameMeta, LayerKv, StreamConfig};
use crate::sim::StreamSpec;

pub const STREAM_MAGIC: &[u8; 8] = b"KVBSTRM\0";
pub const STREAM_VERSION: u32 = 1;

/// Upper bound on any JSON record inside a container.
pub(crate) const MAX_JSON_BYTES: u32 = 16 << 20;
/// Upper bound on one layer tensor, in f32 elements.
pub(crate) const MAX_TENSOR_ELEMENTS: usize = 1 << 26;

pub(crate) fn write_u32<W: Write>(w: &mut W, x: u32) -> Result<()> {
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("truncated container"),
        _ => Error::Io(e),
    })
}

pub(crate) fn write_json<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec(value)?;
    let len = u32::try_from(bytes.len())
        .ok()
        .filter(|&l| l <= MAX_JSON_BYTES)
        .ok_or_else(|| Error::format("JSON record too large"))?;
    write_u32(w, len)?;
    w.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn read_json<R: Read, T: for<'de> Deserialize<'de>>(r: &mut R, what: &str) -> Result<T> {
    let len = read_u32(r)?;
    if len > MAX_JSON_BYTES {
        return Err(Error::format(format!("{what} record of {len} bytes exceeds the limit")));
    }
    let bytes = read_bounded(r, len as usize)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(format!("bad {what} JSON: {e}")))
}

fn read_bounded<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::format("truncated container"));
    }
    Ok(buf)
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    if count > MAX_TENSOR_ELEMENTS {
        return Err(Error::format(format!("tensor of {count} elements exceeds the limit")));
    }
    let bytes = read_bounded(r, count * 4)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn check_magic<R: Read>(r: &mut R, magic: &[u8; 8], version: u32, what: &str) -> Result<()> {
    let mut m = [0u8; 8];
    read_exact(r, &mut m)?;
    if &m != magic {
        return Err(Error::format(format!("not a {what} (bad magic)")));
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(Error::format(format!("{what} version {v} is not supported (expected {version})")));
    }
    Ok(())
}

/// Reads one layer's keys and values for the given shape.
pub(crate) fn read_layer<R: Read>(r: &mut R, config: &StreamConfig, layer: usize) -> Result<LayerKv> {
    let count = config.layer_elements(layer);
    let keys = read_f32s(r, count)?;
    let values = read_f32s(r, count)?;
    LayerKv::new(config.heads(layer), config.tokens_per_frame, config.key_dim(layer), keys, values)
}

pub(crate) fn check_stream_config(config: &StreamConfig) -> Result<()> {
    config.validate().map_err(|e| Error::format(format!("bad stream config: {e}")))?;
    for l in 0..config.num_layers {
        if config.layer_elements(l) > MAX_TENSOR_ELEMENTS {
            return Err(Error::format(format!("layer {l} tensor exceeds the limit")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub config: StreamConfig,
    pub frames: u64,
    #[serde(default)]
    pub spec_hash: Option<String>,
}

pub struct StreamWriter<W: Write> {
    inner: W,
    manifest: StreamManifest,
    written: u64,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut inner: W, manifest: StreamManifest) -> Result<Self> {
        manifest.config.validate()?;
        inner.write_all(STREAM_MAGIC)?;
        write_u32(&mut inner, STREAM_VERSION)?;
        write_json(&mut inner, &manifest)?;
        Ok(StreamWriter { inner, manifest, written: 0 })
    }

    pub fn write_frame(&mut self, block: &FrameBlock) -> Result<()> {
        if self.written >= self.manifest.frames {
            return Err(Error::structural("more frames than the manifest declares"));
        }
        if block.frame_id() != self.written {
            return Err(Error::structural(format!("expected frame {}, got {}", self.written, block.frame_id())));
        }
        block.validate(&self.manifest.config)?;
        write_json(&mut self.inner, &block.meta)?;
        for kv in &block.layers {
            write_f32s(&mut self.inner, &kv.keys)?;
            write_f32s(&mut self.inner, &kv.values)?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.manifest.frames {
            return Err(Error::structural(format!(
                "wrote {} frames, manifest declares {}",
                self.written, self.manifest.frames
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct StreamReader<R: Read> {
    inner: R,
    manifest: StreamManifest,
    next: u64,
}

impl<R: Read> StreamReader<R> {
    pub fn open(mut inner: R) -> Result<Self> {
        check_magic(&mut inner, STREAM_MAGIC, STREAM_VERSION, "recorded stream")?;
        let manifest: StreamManifest = read_json(&mut inner, "manifest")?;
        check_stream_config(&manifest.config)?;
        Ok(StreamReader { inner, manifest, next: 0 })
    }

    pub fn manifest(&self) -> &StreamManifest {
        &self.manifest
    }

    /// Next frame, or `None` after the declared count.
    pub fn next_frame(&mut self) -> Result<Option<FrameBlock>> {
        if self.next >= self.manifest.frames {
            return Ok(None);
        }
        let meta: FrameMeta = read_json(&mut self.inner, "frame metadata")?;
        if meta.frame_id != self.next {
            return Err(Error::format(format!("frame record {} carries id {}", self.next, meta.frame_id)));
        }
        let config = &self.manifest.config;
        let layers = (0..config.num_layers)
            .map(|l| read_layer(&mut self.inner, config, l))
            .collect::<Result<Vec<_>>>()
            .map_err(as_format)?;
        let block = FrameBlock { meta, layers };
        block.validate(config).map_err(as_format)?;
        self.next += 1;
        Ok(Some(block))
    }
}

fn as_format(e: Error) -> Error {
    match e {
        Error::Structural(m) | Error::Config(m) => Error::Format(m),
        other => other,
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<FrameBlock>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Generates `spec` and records it to `path`.
pub fn record_spec(spec: &StreamSpec, path: &Path) -> Result<StreamManifest> {
    let manifest = StreamManifest { config: spec.config.clone(), frames: spec.frames, spec_hash: Some(spec.hash()) };
    let mut w = StreamWriter::new(BufWriter::new(std::fs::File::create(path)?), manifest.clone())?;
    for block in spec.generate() {
        w.write_frame(&block)?;
    }
    w.finish()?;
    Ok(manifest)
}

pub fn open_recorded(path: &Path) -> Result<StreamReader<BufReader<std::fs::File>>> {
    StreamReader::open(BufReader::new(std::fs::File::open(path)?))
}

/// Decodes a whole in-memory container.
pub fn decode_stream(bytes: &[u8]) -> Result<(StreamManifest, Vec<FrameBlock>)> {
    let mut reader = StreamReader::open(bytes)?;
    let mut frames = Vec::new();
    while let Some(f) = reader.next_frame()? {
        frames.push(f);
    }
    Ok((reader.manifest, frames))
}

pub fn encode_stream(manifest: &StreamManifest, frames: &[FrameBlock]) -> Result<Vec<u8>> {
    let mut w = StreamWriter::new(Vec::new(), manifest.clone())?;
    for f in frames {
        w.write_frame(f)?;
    }
    w.finish()
}
