use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::spec::{layer_row, LayerKind};
use super::{Checkpoint, Network, ParamRole};

/// A parameter tensor offered for transfer.
#[derive(Clone, Debug)]
pub struct SourceParam {
    pub layer: usize,
    pub kind: LayerKind,
    pub role: ParamRole,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferEntry {
    pub layer: usize,
    pub kind: LayerKind,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub copied: bool,
    pub reason: Option<String>,
}

/// Which target parameters were copied and which kept their initialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransferReport {
    pub entries: Vec<TransferEntry>,
    /// Factor applied to copied dense weights, if any.
    pub dense_rescale: Option<f64>,
}

impl TransferReport {
    pub fn copied(&self) -> usize {
        self.entries.iter().filter(|e| e.copied).count()
    }

    pub fn skipped(&self) -> usize {
        self.entries.len() - self.copied()
    }
}

impl fmt::Display for TransferReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let status = if e.copied { "copied".to_string() } else { format!("skipped ({})", e.reason.as_deref().unwrap_or("")) };
            writeln!(f, "layer {:>2} {:<7} {:<6} {:?}: {status}", layer_row(e.layer), e.kind.name(), e.role.name(), e.shape)?;
        }
        if let Some(k) = self.dense_rescale {
            writeln!(f, "dense weights rescaled by {k:.6} for the new feature-map area")?;
        }
        write!(f, "{} copied, {} skipped", self.copied(), self.skipped())
    }
}

/// Copies every source parameter whose layer position, layer kind, role,
/// and shape all match a target parameter. Everything else in the target is
/// left as initialized.
pub fn transfer_weights<T: Real>(source: &[SourceParam], target: &mut Network<T>) -> TransferReport {
    let slots = target.slots().to_vec();
    let mut entries = Vec::with_capacity(slots.len());
    for (param, slot) in target.params_mut().iter_mut().zip(slots) {
        let candidate = source.iter().find(|s| s.layer == slot.layer && s.role == slot.role);
        let reason = match candidate {
            None => Some("no source layer at this position".to_string()),
            Some(s) if s.kind != slot.kind => Some(format!("source layer is {}", s.kind)),
            Some(s) if s.tensor.shape() != param.shape() => Some(format!("source shape {:?}", s.tensor.shape())),
            Some(s) => {
                *param = s.tensor.cast();
                None
            }
        };
        entries.push(TransferEntry {
            layer: slot.layer,
            kind: slot.kind,
            role: slot.role,
            shape: param.shape().to_vec(),
            copied: reason.is_none(),
            reason,
        });
    }
    TransferReport { entries, dense_rescale: None }
}

/// [`transfer_weights`] from a checkpoint. Copied dense weights are then
/// multiplied by `A_source / A_target`, the ratio of final feature-map areas,
/// so the summing pool keeps the source network's output scale.
pub fn transfer_from_checkpoint<T: Real>(source: &Checkpoint, target: &mut Network<T>) -> Result<TransferReport> {
    let mut report = transfer_weights(&source.source_params(), target);
    let layers = source.spec.resolve()?;
    let src_size = layers
        .iter()
        .rev()
        .find(|l| l.kind == LayerKind::Conv)
        .map(|l| l.out_size)
        .ok_or_else(|| Error::config("source checkpoint has no convolution"))?;
    let dst_size = target.feature_size();
    let dense_copied = report.entries.iter().any(|e| e.kind == LayerKind::Dense && e.role == ParamRole::Weight && e.copied);
    if dense_copied && src_size != dst_size {
        let factor = (src_size * src_size) as f64 / (dst_size * dst_size) as f64;
        let idx = target
            .slots()
            .iter()
            .position(|s| s.kind == LayerKind::Dense && s.role == ParamRole::Weight)
            .expect("dense head");
        let k = T::from_f64_lossy(factor);
        target.params_mut()[idx].data_mut().iter_mut().for_each(|v| *v *= k);
        report.dense_rescale = Some(factor);
    }
    Ok(report)
}
