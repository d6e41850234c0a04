//! Define-by-run computation tape.
//!
//! A tape is created per forward pass. `leaf` registers an array as a tracked
//! leaf; `apply` evaluates a primitive and records it whenever any input is
//! tracked. `backward` replays the records in reverse and returns gradients
//! for every tracked leaf reachable from the loss. A tape is never mutated by
//! `backward`, so it may be replayed any number of times and simply dropped
//! when the step is done.

use std::collections::HashMap;

use super::{kernels, DiffArray, Primitive};
use crate::error::{Error, Result};

pub type NodeId = usize;

struct OpRecord {
    prim: Primitive,
    inputs: Vec<DiffArray>,
    output: DiffArray,
}

#[derive(Default)]
pub struct Tape {
    records: Vec<OpRecord>,
    n_nodes: usize,
    leaves: Vec<NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn fresh_node(&mut self) -> NodeId {
        let id = self.n_nodes;
        self.n_nodes += 1;
        id
    }

    /// Register `array` as a tracked leaf; returns a tracked view sharing the
    /// same value buffer.
    pub fn leaf(&mut self, array: &DiffArray) -> DiffArray {
        let id = self.fresh_node();
        self.leaves.push(id);
        array.with_node(id)
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    /// Evaluate a primitive; record it when any input is tracked.
    pub fn apply(&mut self, prim: Primitive, inputs: &[&DiffArray]) -> Result<DiffArray> {
        let out = kernels::eval(&prim, inputs)?;
        if inputs.iter().any(|a| a.is_tracked()) {
            let id = self.fresh_node();
            let out = out.with_node(id);
            self.records.push(OpRecord {
                prim,
                inputs: inputs.iter().map(|a| (*a).clone()).collect(),
                output: out.clone(),
            });
            Ok(out)
        } else {
            Ok(out)
        }
    }

    /// Reverse pass from a tracked scalar loss.
    pub fn backward(&self, loss: &DiffArray) -> Result<GradMap> {
        let loss_node = loss.node().ok_or_else(|| {
            Error::NotDifferentiable("loss is not tracked on this tape".to_string())
        })?;
        if loss.len() != 1 {
            return Err(Error::NotDifferentiable(format!(
                "loss must be a scalar, got shape {:?}",
                loss.shape()
            )));
        }
        if loss_node >= self.n_nodes {
            return Err(Error::NotDifferentiable(
                "loss node does not belong to this tape".to_string(),
            ));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.n_nodes];
        grads[loss_node] = Some(vec![1.0]);

        for rec in self.records.iter().rev() {
            let out_node = rec.output.node().expect("recorded outputs are tracked");
            let Some(grad_out) = grads[out_node].take() else {
                continue;
            };
            let input_grads = kernels::vjp(&rec.prim, &rec.inputs, &rec.output, &grad_out);
            grads[out_node] = Some(grad_out);
            for (input, grad) in rec.inputs.iter().zip(input_grads) {
                let (Some(node), Some(g)) = (input.node(), grad) else {
                    continue;
                };
                match &mut grads[node] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    slot => *slot = Some(g),
                }
            }
        }

        let mut map = HashMap::new();
        for rec in &self.records {
            for input in &rec.inputs {
                if let Some(node) = input.node() {
                    // leaf ids are assigned in increasing order
                    if self.leaves.binary_search(&node).is_ok() {
                        if let Some(g) = &grads[node] {
                            map.entry(node).or_insert_with(|| {
                                DiffArray::from_vec(input.shape().to_vec(), g.clone())
                                    .expect("gradient shape mirrors value shape")
                            });
                        }
                    }
                }
            }
        }
        Ok(GradMap { map })
    }
}

/// Gradients keyed by leaf node id.
#[derive(Debug, Default)]
pub struct GradMap {
    map: HashMap<NodeId, DiffArray>,
}

impl GradMap {
    pub fn get(&self, node: NodeId) -> Option<&DiffArray> {
        self.map.get(&node)
    }

    /// Gradient of a tracked array, or zeros if no gradient reached it.
    pub fn grad_of(&self, array: &DiffArray) -> DiffArray {
        array
            .node()
            .and_then(|n| self.map.get(&n))
            .cloned()
            .unwrap_or_else(|| DiffArray::zeros(array.shape()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl GradMap {
    /// Euclidean norm over every gradient in the map.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .map(|g| g.values().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale every gradient in place (used for global-norm clipping).
    pub fn scale_all(&mut self, factor: f64) {
        for grad in self.map.values_mut() {
            let scaled: Vec<f64> = grad.values().iter().map(|v| v * factor).collect();
            *grad = DiffArray::from_vec(grad.shape().to_vec(), scaled)
                .expect("shape unchanged by scaling");
        }
    }
}
