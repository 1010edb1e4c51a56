//! Built-in architectures.
//!
//! Paddings are solved offline so every output size matches the reference
//! size column exactly, and ship here as constants.

use crate::tensor::PadSpec;

use super::spec::{LayerSpec, NetworkSpec};

const SAME3: PadSpec = PadSpec::uniform(1);
const SAME5: PadSpec = PadSpec::uniform(2);
const VALID: PadSpec = PadSpec::NONE;
/// Filter 4, stride 1: grows the map by one cell.
const GROW4: PadSpec = PadSpec::uniform(2);
/// Filter 4, stride 1: shrinks the map by one cell (or halves it with stride 2).
const SHRINK4: PadSpec = PadSpec::uniform(1);

pub const NET5: &str = "net5";
pub const NET4: &str = "net4";
pub const NET5_RAM128: &str = "net5_ram128";
pub const NET5_RAM256: &str = "net5_ram256";
pub const NET_SMALL: &str = "net_small";

fn conv(units: usize, filter: usize, stride: usize, pad: PadSpec, size: usize) -> LayerSpec {
    LayerSpec::conv(units, filter, stride, pad, size)
}

fn pool(stride: usize, size: usize) -> LayerSpec {
    LayerSpec::maxpool(3, stride, size)
}

fn head(mut layers: Vec<LayerSpec>) -> Vec<LayerSpec> {
    layers.push(LayerSpec::global_pool());
    layers.push(LayerSpec::dense(1));
    layers
}

fn spec(name: &str, input_size: usize, layers: Vec<LayerSpec>) -> NetworkSpec {
    NetworkSpec { name: name.to_string(), input_size, input_channels: 3, layers: head(layers) }
}

/// Net-5 on 448-pixel inputs (rows 2-20).
pub fn net5() -> NetworkSpec {
    spec(
        NET5,
        448,
        vec![
            conv(32, 5, 2, SAME5, 224),
            conv(32, 3, 1, SAME3, 224),
            pool(2, 111),
            conv(64, 5, 2, SAME5, 56),
            conv(64, 3, 1, SAME3, 56),
            conv(64, 3, 1, SAME3, 56),
            pool(2, 27),
            conv(128, 3, 1, SAME3, 27),
            conv(128, 3, 1, SAME3, 27),
            conv(128, 3, 1, SAME3, 27),
            pool(2, 13),
            conv(256, 3, 1, SAME3, 13),
            conv(256, 3, 1, SAME3, 13),
            conv(256, 3, 1, SAME3, 13),
            pool(2, 6),
            conv(512, 3, 1, SAME3, 6),
            conv(512, 3, 1, SAME3, 6),
        ],
    )
}

/// Net-4 on 448-pixel inputs. Even filters alternate between growing and
/// shrinking the map by one cell, which is where the 225/57/28/14 sizes
/// come from.
pub fn net4() -> NetworkSpec {
    spec(
        NET4,
        448,
        vec![
            conv(32, 4, 2, SHRINK4, 224),
            conv(32, 4, 1, GROW4, 225),
            pool(2, 112),
            conv(64, 4, 2, SHRINK4, 56),
            conv(64, 4, 1, GROW4, 57),
            conv(64, 4, 1, SHRINK4, 56),
            pool(2, 27),
            conv(128, 4, 1, GROW4, 28),
            conv(128, 4, 1, SHRINK4, 27),
            conv(128, 4, 1, GROW4, 28),
            pool(2, 13),
            conv(256, 4, 1, GROW4, 14),
            conv(256, 4, 1, SHRINK4, 13),
            conv(256, 4, 1, GROW4, 14),
            pool(2, 6),
            conv(512, 4, 1, PadSpec::split(1, 2), 6),
        ],
    )
}

/// Net-5 truncated after Conv-11 for 128-pixel inputs, mapping at 54×54.
///
/// Conv-2, MaxPool-4 and Conv-5 lose their strides; only MaxPool-8 still
/// halves the map. With every layer "same"-padded that leaves 62×62, so
/// Conv-2 and Conv-9..11 run unpadded:
/// 128 → 124 (Conv-2, 5×5) → 124 → 122 (MaxPool-4, 3×3 s1) → 122 → 122
/// → 122 → 60 (MaxPool-8) → 58 → 56 → 54.
pub fn net5_ram128() -> NetworkSpec {
    spec(
        NET5_RAM128,
        128,
        vec![
            conv(32, 5, 1, VALID, 124),
            conv(32, 3, 1, SAME3, 124),
            pool(1, 122),
            conv(64, 5, 1, SAME5, 122),
            conv(64, 3, 1, SAME3, 122),
            conv(64, 3, 1, SAME3, 122),
            pool(2, 60),
            conv(128, 3, 1, VALID, 58),
            conv(128, 3, 1, VALID, 56),
            conv(128, 3, 1, VALID, 54),
        ],
    )
}

/// Net-5 truncated after Conv-15 for 256-pixel inputs, mapping at 56×56.
///
/// Keeping any two stride-2 stages besides Conv-2 and MaxPool-4 cannot reach
/// 56 from 256, so MaxPool-8 and MaxPool-12 are dropped and Conv-5 loses
/// its stride. Conv-2, Conv-5 and Conv-6 run unpadded:
/// 256 → 126 (Conv-2, 5×5 s2) → 126 → 62 (MaxPool-4) → 58 (Conv-5, 5×5)
/// → 56 (Conv-6) → 56 through Conv-15.
pub fn net5_ram256() -> NetworkSpec {
    spec(
        NET5_RAM256,
        256,
        vec![
            conv(32, 5, 2, VALID, 126),
            conv(32, 3, 1, SAME3, 126),
            pool(2, 62),
            conv(64, 5, 1, VALID, 58),
            conv(64, 3, 1, VALID, 56),
            conv(64, 3, 1, SAME3, 56),
            conv(128, 3, 1, SAME3, 56),
            conv(128, 3, 1, SAME3, 56),
            conv(128, 3, 1, SAME3, 56),
            conv(256, 3, 1, SAME3, 56),
            conv(256, 3, 1, SAME3, 56),
            conv(256, 3, 1, SAME3, 56),
        ],
    )
}

/// Five-convolution miniature for 64-pixel inputs with the same untied
/// biases and sum-pool + dense head, small enough to train on a CPU.
pub fn net_small() -> NetworkSpec {
    spec(
        NET_SMALL,
        64,
        vec![
            conv(16, 5, 2, SAME5, 32),
            conv(16, 3, 1, SAME3, 32),
            pool(2, 15),
            conv(32, 3, 1, SAME3, 15),
            conv(32, 3, 1, SAME3, 15),
            conv(32, 3, 1, SAME3, 15),
        ],
    )
}

pub fn builtin_specs() -> Vec<NetworkSpec> {
    vec![net5(), net4(), net5_ram128(), net5_ram256(), net_small()]
}

pub fn builtin_spec(name: &str) -> Option<NetworkSpec> {
    builtin_specs().into_iter().find(|s| s.name == name)
}
