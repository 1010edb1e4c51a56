//! Binary checkpoint format.
//!
//! ```text
//! "RAMN"                       4 bytes magic
//! version                      u32 LE, currently 1
//! header_len                   u32 LE
//! header                       header_len bytes of UTF-8 text, one key=value per line:
//!                                name=<str>
//!                                input_size=<n>
//!                                input_channels=<n>
//!                                layers=<count>
//!                                layer=<kind> units=<n> filter=<n> stride=<n> pad=<top>,<bottom>,<left>,<right> size=<n>
//!                                  (one line per layer, in order)
//!                                epochs=<n>
//!                                seed=<n>
//!                                resolution=<n>
//!                                mean=<r>,<g>,<b>
//!                                std=<r>,<g>,<b>
//! param_count                  u32 LE
//! per parameter, in layer order (weight then bias):
//!   len                        u32 LE element count
//!   values                     len × f32 LE
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::ChannelStats;
use crate::error::{Error, Result};
use crate::tensor::{PadSpec, Real, Tensor};

use super::spec::{LayerKind, LayerSpec, NetworkSpec};
use super::transfer::SourceParam;
use super::Network;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RAMN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a checkpoint was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub epochs: u32,
    pub seed: u64,
    pub resolution: u32,
    /// Normalization applied to inputs during training.
    pub stats: ChannelStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Vec<Tensor<f32>>,
    pub meta: TrainingMeta,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::config(format!("malformed checkpoint: {}", msg.into()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad("unexpected end of data"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, n: usize) -> Result<Vec<T>> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != n {
        return Err(bad(format!("expected {n} comma-separated values in {s:?}")));
    }
    parts.iter().map(|p| p.parse().map_err(|_| bad(format!("bad number {p:?}")))).collect()
}

impl Checkpoint {
    pub fn from_network(network: &Network<f32>, meta: TrainingMeta) -> Self {
        Checkpoint { spec: network.spec().clone(), params: network.params().to_vec(), meta }
    }

    /// Rebuilds the network and checks every stored tensor against the
    /// shapes the spec implies.
    pub fn to_network<T: Real>(&self) -> Result<Network<T>> {
        let mut net = Network::<f32>::build(&self.spec)?;
        if net.params().len() != self.params.len() {
            return Err(bad(format!(
                "spec needs {} parameter tensors, file has {}",
                net.params().len(),
                self.params.len()
            )));
        }
        for (dst, src) in net.params_mut().iter_mut().zip(&self.params) {
            if dst.shape() != src.shape() {
                return Err(bad(format!("parameter shape {:?} != {:?}", src.shape(), dst.shape())));
            }
            *dst = src.clone();
        }
        Ok(net.cast())
    }

    pub fn source_params(&self) -> Vec<SourceParam> {
        match self.to_network::<f32>() {
            Ok(net) => net.source_params(),
            Err(_) => Vec::new(),
        }
    }

    fn header(&self) -> String {
        let mut h = String::new();
        let s = &self.spec;
        let _ = writeln!(h, "name={}", s.name);
        let _ = writeln!(h, "input_size={}", s.input_size);
        let _ = writeln!(h, "input_channels={}", s.input_channels);
        let _ = writeln!(h, "layers={}", s.layers.len());
        for l in &s.layers {
            let pad = l.pad.unwrap_or_default();
            let _ = writeln!(
                h,
                "layer={} units={} filter={} stride={} pad={},{},{},{} size={}",
                l.kind,
                l.units,
                l.filter,
                l.stride,
                pad.top,
                pad.bottom,
                pad.left,
                pad.right,
                l.expected_size.unwrap_or(0)
            );
        }
        let m = &self.meta;
        let _ = writeln!(h, "epochs={}", m.epochs);
        let _ = writeln!(h, "seed={}", m.seed);
        let _ = writeln!(h, "resolution={}", m.resolution);
        let _ = writeln!(h, "mean={},{},{}", m.stats.mean[0], m.stats.mean[1], m.stats.mean[2]);
        let _ = writeln!(h, "std={},{},{}", m.stats.std[0], m.stats.std[1], m.stats.std[2]);
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.params.iter().map(Tensor::len).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.len() as u32).to_le_bytes());
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("missing RAMN magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?).map_err(|_| bad("header is not UTF-8"))?;

        let mut lines = header.lines();
        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected {key}=..., found {line:?}")))
        };
        let num = |s: String| -> Result<u64> { s.parse().map_err(|_| bad(format!("bad number {s:?}"))) };

        let name = field("name")?;
        let input_size = num(field("input_size")?)? as usize;
        let input_channels = num(field("input_channels")?)? as usize;
        let count = num(field("layers")?)? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            layers.push(parse_layer(&field("layer")?)?);
        }
        let epochs = num(field("epochs")?)? as u32;
        let seed = num(field("seed")?)?;
        let resolution = num(field("resolution")?)? as u32;
        let mean: Vec<f32> = parse_list(&field("mean")?, 3)?;
        let std: Vec<f32> = parse_list(&field("std")?, 3)?;

        let spec = NetworkSpec { name, input_size, input_channels, layers };
        let template = Network::<f32>::build(&spec)?;
        let n_params = r.u32()? as usize;
        if n_params != template.params().len() {
            return Err(bad(format!("expected {} parameter tensors, found {n_params}", template.params().len())));
        }
        let mut params = Vec::with_capacity(n_params);
        for t in template.params() {
            let len = r.u32()? as usize;
            if len != t.len() {
                return Err(bad(format!("parameter of shape {:?} stored with {len} values", t.shape())));
            }
            let raw = r.take(4 * len)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            params.push(Tensor::new(t.shape().to_vec(), data)?);
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after parameters"));
        }
        let stats = ChannelStats { mean: [mean[0], mean[1], mean[2]], std: [std[0], std[1], std[2]] };
        Ok(Checkpoint { spec, params, meta: TrainingMeta { epochs, seed, resolution, stats } })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| Error::Data { path: path.to_path_buf(), message: e.to_string() })
    }
}

fn parse_layer(line: &str) -> Result<LayerSpec> {
    let mut parts = line.split(' ');
    let kind = parts
        .next()
        .and_then(LayerKind::from_name)
        .ok_or_else(|| bad(format!("unknown layer kind in {line:?}")))?;
    let mut get = |key: &str| -> Result<&str> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(key))
            .and_then(|p| p.strip_prefix('='))
            .ok_or_else(|| bad(format!("expected {key}= in {line:?}")))
    };
    let parse = |s: &str| -> Result<usize> { s.parse().map_err(|_| bad(format!("bad number {s:?}"))) };
    let units = parse(get("units")?)?;
    let filter = parse(get("filter")?)?;
    let stride = parse(get("stride")?)?;
    let pad: Vec<usize> = parse_list(get("pad")?, 4)?;
    let size = parse(get("size")?)?;
    Ok(LayerSpec {
        kind,
        units,
        filter,
        stride,
        pad: Some(PadSpec { top: pad[0], bottom: pad[1], left: pad[2], right: pad[3] }),
        expected_size: Some(size),
    })
}
