use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::ops::window_output_size;
use crate::tensor::PadSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    MaxPool,
    GlobalPool,
    Dense,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::GlobalPool => "globalpool",
            LayerKind::Dense => "dense",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "conv" => LayerKind::Conv,
            "maxpool" => LayerKind::MaxPool,
            "globalpool" => LayerKind::GlobalPool,
            "dense" => LayerKind::Dense,
            _ => return None,
        })
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One row of an architecture table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output channels for conv, output width for dense, 0 for pooling.
    pub units: usize,
    pub filter: usize,
    pub stride: usize,
    /// `None` asks the builder to solve for the padding that yields
    /// `expected_size`.
    pub pad: Option<PadSpec>,
    /// Output spatial size; checked against the built network when present.
    pub expected_size: Option<usize>,
}

impl LayerSpec {
    pub fn conv(units: usize, filter: usize, stride: usize, pad: PadSpec, size: usize) -> Self {
        LayerSpec { kind: LayerKind::Conv, units, filter, stride, pad: Some(pad), expected_size: Some(size) }
    }

    pub fn maxpool(window: usize, stride: usize, size: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool,
            units: 0,
            filter: window,
            stride,
            pad: Some(PadSpec::NONE),
            expected_size: Some(size),
        }
    }

    pub fn global_pool() -> Self {
        LayerSpec {
            kind: LayerKind::GlobalPool,
            units: 0,
            filter: 0,
            stride: 0,
            pad: Some(PadSpec::NONE),
            expected_size: Some(1),
        }
    }

    pub fn dense(units: usize) -> Self {
        LayerSpec { kind: LayerKind::Dense, units, filter: 0, stride: 0, pad: Some(PadSpec::NONE), expected_size: Some(1) }
    }
}

/// Declarative network: a square input followed by an ordered layer list
/// ending in exactly one global pool and one single-output dense layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub input_size: usize,
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

/// A layer with every size and padding made concrete.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResolvedLayer {
    pub index: usize,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_size: usize,
    pub out_size: usize,
    pub filter: usize,
    pub stride: usize,
    pub pad: PadSpec,
}

/// Human-facing layer number. Row 1 of an architecture table is the input,
/// so the first layer in the list is row 2.
pub fn layer_row(index: usize) -> usize {
    index + 2
}

pub(crate) fn layer_error(index: usize, kind: LayerKind, err: Error) -> Error {
    let row = layer_row(index);
    match err {
        Error::Config(msg) => Error::Config(format!("layer {row} ({kind}): {msg}")),
        Error::Numeric(msg) => Error::Numeric(format!("layer {row} ({kind}): {msg}")),
        other => other,
    }
}

/// Smallest total padding `p < 2·filter` for which a `filter`/`stride`
/// window over `input` gives `target` outputs. The extra cell of an odd
/// total goes after (bottom/right).
pub fn solve_pad(input: usize, filter: usize, stride: usize, target: usize) -> Option<PadSpec> {
    (0..2 * filter).find_map(|total| {
        let lo = total / 2;
        let hi = total - lo;
        (window_output_size(input, filter, stride, lo, hi) == Some(target)).then_some(PadSpec::split(lo, hi))
    })
}

impl NetworkSpec {
    /// Index of the last convolution (the one feeding the global pool).
    pub fn last_conv_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.kind == LayerKind::Conv)
    }

    fn check_head(&self) -> Result<()> {
        let n = self.layers.len();
        let pools = self.layers.iter().filter(|l| l.kind == LayerKind::GlobalPool).count();
        let denses = self.layers.iter().filter(|l| l.kind == LayerKind::Dense).count();
        if n < 3
            || pools != 1
            || denses != 1
            || self.layers[n - 2].kind != LayerKind::GlobalPool
            || self.layers[n - 1].kind != LayerKind::Dense
        {
            return Err(Error::config(format!(
                "network {} must end with exactly one globalpool followed by one dense layer",
                self.name
            )));
        }
        if self.layers[n - 1].units != 1 {
            return Err(Error::config(format!("network {}: dense head must have exactly 1 unit", self.name)));
        }
        if self.layers[n - 3].kind != LayerKind::Conv {
            return Err(Error::config(format!(
                "network {}: the global pool must directly follow a convolution",
                self.name
            )));
        }
        Ok(())
    }

    /// Traces sizes through the layer list, solving missing paddings and
    /// checking every stated output size.
    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        if self.input_size == 0 || self.input_channels == 0 {
            return Err(Error::config(format!("network {}: input must be non-empty", self.name)));
        }
        self.check_head()?;
        let mut size = self.input_size;
        let mut channels = self.input_channels;
        let mut out = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let fail = |msg: String| layer_error(index, layer.kind, Error::Config(msg));
            let (out_channels, out_size, pad) = match layer.kind {
                LayerKind::Conv | LayerKind::MaxPool => {
                    if layer.filter == 0 || layer.stride == 0 {
                        return Err(fail("filter and stride must be positive".into()));
                    }
                    let pad = match (layer.pad, layer.expected_size) {
                        (Some(p), _) => p,
                        (None, Some(target)) => solve_pad(size, layer.filter, layer.stride, target).ok_or_else(|| {
                            fail(format!(
                                "no padding gives size {target} from {size} with filter {} stride {}",
                                layer.filter, layer.stride
                            ))
                        })?,
                        (None, None) => return Err(fail("needs either a padding or an expected size".into())),
                    };
                    if layer.kind == LayerKind::MaxPool && !pad.is_none() {
                        return Err(fail("max pooling takes no padding".into()));
                    }
                    let h = window_output_size(size, layer.filter, layer.stride, pad.top, pad.bottom);
                    let w = window_output_size(size, layer.filter, layer.stride, pad.left, pad.right);
                    let produced = match (h, w) {
                        (Some(h), Some(w)) if h == w => h,
                        _ => {
                            return Err(fail(format!(
                                "window {} stride {} does not fit a {size}x{size} input with padding {pad:?}",
                                layer.filter, layer.stride
                            )))
                        }
                    };
                    let ch = if layer.kind == LayerKind::Conv { layer.units } else { channels };
                    if ch == 0 {
                        return Err(fail("convolution needs at least one output channel".into()));
                    }
                    (ch, produced, pad)
                }
                LayerKind::GlobalPool => (channels, 1, PadSpec::NONE),
                LayerKind::Dense => (layer.units, 1, PadSpec::NONE),
            };
            if let Some(expected) = layer.expected_size {
                if expected != out_size {
                    return Err(fail(format!("output size {out_size} does not match expected {expected}")));
                }
            }
            out.push(ResolvedLayer {
                index,
                kind: layer.kind,
                in_channels: channels,
                out_channels,
                in_size: size,
                out_size,
                filter: layer.filter,
                stride: layer.stride,
                pad,
            });
            channels = out_channels;
            size = out_size;
        }
        Ok(out)
    }

    /// Copy with every padding and output size filled in from [`resolve`].
    ///
    /// [`resolve`]: NetworkSpec::resolve
    pub fn resolved(&self) -> Result<NetworkSpec> {
        let layers = self.resolve()?;
        let mut spec = self.clone();
        for (l, r) in spec.layers.iter_mut().zip(&layers) {
            l.pad = Some(r.pad);
            l.expected_size = Some(r.out_size);
        }
        Ok(spec)
    }

    /// Same filters, strides, and paddings on a different input size, with
    /// output sizes recomputed.
    pub fn with_input_size(&self, input_size: usize) -> Result<NetworkSpec> {
        let base = self.resolved()?;
        let mut spec = base.clone();
        spec.input_size = input_size;
        for l in spec.layers.iter_mut() {
            if matches!(l.kind, LayerKind::Conv | LayerKind::MaxPool) {
                l.expected_size = None;
            }
        }
        spec.resolved()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_pad_examples() {
        // filter 4 stride 1 from 224 to 225 needs 4 cells, split 2/2
        assert_eq!(solve_pad(224, 4, 1, 225), Some(PadSpec::split(2, 2)));
        assert_eq!(solve_pad(6, 4, 1, 6), Some(PadSpec::split(1, 2)));
        assert_eq!(solve_pad(448, 5, 2, 224), Some(PadSpec::split(1, 2)));
        assert_eq!(solve_pad(10, 3, 1, 20), None);
    }

    #[test]
    fn unachievable_size_names_layer() {
        let spec = NetworkSpec {
            name: "bad".into(),
            input_size: 10,
            input_channels: 1,
            layers: vec![
                LayerSpec { pad: None, ..LayerSpec::conv(2, 3, 1, PadSpec::NONE, 30) },
                LayerSpec::global_pool(),
                LayerSpec::dense(1),
            ],
        };
        let err = spec.resolve().unwrap_err().to_string();
        assert!(err.contains("layer 2 (conv)"), "{err}");
    }

    #[test]
    fn head_is_required() {
        let spec = NetworkSpec {
            name: "headless".into(),
            input_size: 8,
            input_channels: 1,
            layers: vec![LayerSpec::conv(2, 3, 1, PadSpec::uniform(1), 8), LayerSpec::dense(1)],
        };
        assert!(matches!(spec.resolve(), Err(Error::Config(_))));
    }
}
