//! The recorded-operation list and the backward pass.

use super::Tensor;
use crate::error::{Error, Result};

type BackwardFn = Box<dyn Fn(&[f32])>;

struct Recorded {
    output: Tensor,
    backward: BackwardFn,
}

/// Ordered list of recorded operations. Creation order is topological by
/// construction: an operation's inputs always exist before its output, so
/// the backward pass is a single reverse sweep that visits every recorded
/// operation exactly once.
///
/// A disabled record turns every operation into a pure forward computation
/// that allocates no gradient state; outputs built under it do not require
/// gradients, so downstream operations skip recording as well.
#[derive(Default)]
pub struct CompRecord {
    entries: Vec<Recorded>,
    enabled: bool,
}

impl CompRecord {
    /// A recording context for a gradient-carrying forward pass.
    pub fn new() -> Self {
        CompRecord {
            entries: Vec::new(),
            enabled: true,
        }
    }

    /// A no-grad context: nothing is recorded, outputs are detached.
    pub fn disabled() -> Self {
        CompRecord {
            entries: Vec::new(),
            enabled: false,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Record `output` with its backward rule when recording is active and
    /// some input carries gradients. Callers pass `needs_grad` = whether any
    /// input requires a gradient; the output's flag is set accordingly.
    pub(crate) fn push(
        &mut self,
        needs_grad: bool,
        output: &Tensor,
        backward: impl Fn(&[f32]) + 'static,
    ) {
        if self.enabled && needs_grad {
            output.set_requires_grad(true);
            self.entries.push(Recorded {
                output: output.clone(),
                backward: Box::new(backward),
            });
        }
    }
}

/// Run reverse-mode differentiation from a scalar loss.
///
/// Gradients accumulate (`+=`) across fan-out. Leaves that do not
/// participate in the loss keep whatever their gradient slot already holds
/// (callers that want explicit zeros call `zero_grad` on each leaf first).
pub fn backward(record: &CompRecord, loss: &Tensor) -> Result<()> {
    if !loss.is_scalar() {
        return Err(Error::Precondition(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Precondition(
            "backward on a tensor that is not connected to a recorded computation".into(),
        ));
    }
    loss.zero_grad();
    loss.accumulate_grad(&[1.0]);
    for entry in record.entries.iter().rev() {
        let grad = entry.output.grad_ref();
        if let Some(g) = grad.as_ref() {
            (entry.backward)(g);
        }
    }
    Ok(())
}
