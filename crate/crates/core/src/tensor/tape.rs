//! Operation recording and the reverse pass.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{Error, Result};

use super::ops::{vjp, Primitive};
use super::{NodeId, Parameter, Tensor};

/// Saved view of one operand: enough for the backward kernels, with no
/// handle back to the tape (avoids an Rc cycle through records).
pub(crate) struct Saved {
    pub id: Option<NodeId>,
    pub shape: Vec<usize>,
    pub values: Arc<[f64]>,
}

struct Record {
    op: Primitive,
    inputs: Vec<Saved>,
    out_id: NodeId,
    out_values: Arc<[f64]>,
}

#[derive(Default)]
struct TapeInner {
    next_node: NodeId,
    records: Vec<Record>,
    node_shapes: Vec<Vec<usize>>,
}

/// Append-only record of primitive applications. Cheap to clone (shared
/// handle); confined to one thread.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    fn new_node(&self, shape: &[usize]) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        let id = inner.next_node;
        inner.next_node += 1;
        inner.node_shapes.push(shape.to_vec());
        id
    }

    /// Attach a copy of `t` to this tape as a leaf node.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let id = self.new_node(t.shape());
        Tensor::from_parts(
            t.shape().to_vec(),
            t.values_arc(),
            Some(super::BoundNode { tape: self.clone(), id }),
        )
    }

    pub fn num_records(&self) -> usize {
        self.inner.borrow().records.len()
    }

    pub(crate) fn record(&self, op: Primitive, inputs: &[&Tensor], out_shape: &[usize], out_values: &Arc<[f64]>) -> NodeId {
        let saved = inputs
            .iter()
            .map(|t| Saved {
                id: t.node.as_ref().map(|b| b.id),
                shape: t.shape().to_vec(),
                values: t.values_arc(),
            })
            .collect();
        let out_id = self.new_node(out_shape);
        self.inner.borrow_mut().records.push(Record {
            op,
            inputs: saved,
            out_id,
            out_values: out_values.clone(),
        });
        out_id
    }
}

/// The tape all attached inputs agree on, if any.
pub(crate) fn unify_tape(inputs: &[&Tensor]) -> Result<Option<Tape>> {
    let mut found: Option<Tape> = None;
    for t in inputs {
        if let Some(b) = &t.node {
            match &found {
                None => found = Some(b.tape.clone()),
                Some(f) if f.same_tape(&b.tape) => {}
                Some(_) => return Err(Error::TapeMismatch),
            }
        }
    }
    Ok(found)
}

/// Adjoints of every node reached from a backward root.
pub struct Gradients {
    tape: Tape,
    adjoints: HashMap<NodeId, Vec<f64>>,
}

impl Gradients {
    /// Gradient of the root with respect to `t`. Zero tensor when `t` is on
    /// the tape but unreached; `None` when `t` is detached or foreign.
    pub fn wrt(&self, t: &Tensor) -> Option<Tensor> {
        let b = t.node.as_ref()?;
        if !self.tape.same_tape(&b.tape) {
            return None;
        }
        match self.adjoints.get(&b.id) {
            Some(a) => Some(Tensor::new(t.shape().to_vec(), a.clone())),
            None => Some(Tensor::zeros(t.shape())),
        }
    }
}

/// Reverse pass from a scalar root: one visit per record, newest first.
pub fn backward(root: &Tensor) -> Result<Gradients> {
    let bound = root.node.as_ref().ok_or(Error::DetachedRoot)?;
    if root.len() != 1 {
        return Err(Error::NonScalarRoot(root.shape().to_vec()));
    }
    let tape = bound.tape.clone();
    let inner = tape.inner.borrow();
    let mut adjoints: HashMap<NodeId, Vec<f64>> = HashMap::new();
    adjoints.insert(bound.id, vec![1.0]);

    for rec in inner.records.iter().rev() {
        let Some(out_adj) = adjoints.get(&rec.out_id) else {
            continue;
        };
        let out_adj = out_adj.clone();
        let input_grads = vjp(rec.op, &rec.inputs, &rec.out_values, &out_adj);
        for (saved, grad) in rec.inputs.iter().zip(input_grads) {
            let (Some(id), Some(g)) = (saved.id, grad) else {
                continue;
            };
            match adjoints.get_mut(&id) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                None => {
                    adjoints.insert(id, g);
                }
            }
        }
    }
    drop(inner);
    Ok(Gradients { tape, adjoints })
}

/// Per-step binding of named parameters onto one tape.
///
/// Binding the same parameter twice returns the same leaf node, so a
/// parameter used by several objective terms accumulates one gradient.
/// A `Bindings` without a tape evaluates networks detached (no recording),
/// which is how evaluation-only passes run.
pub struct Bindings {
    tape: Option<Tape>,
    bound: RefCell<IndexMap<String, Tensor>>,
}

impl Bindings {
    pub fn new(tape: &Tape) -> Bindings {
        Bindings { tape: Some(tape.clone()), bound: RefCell::new(IndexMap::new()) }
    }

    /// Bindings that never record: forward passes run detached.
    pub fn detached() -> Bindings {
        Bindings { tape: None, bound: RefCell::new(IndexMap::new()) }
    }

    pub fn bind(&self, p: &Parameter) -> Tensor {
        if let Some(t) = self.bound.borrow().get(&p.name) {
            return t.clone();
        }
        let bound = match (&self.tape, p.trainable) {
            (Some(tape), true) => tape.leaf(&p.tensor),
            _ => p.tensor.detached(),
        };
        self.bound.borrow_mut().insert(p.name.clone(), bound.clone());
        bound
    }

    /// Gradient per bound parameter name; unreached parameters get zeros.
    pub fn grads_by_name(&self, grads: &Gradients) -> IndexMap<String, Tensor> {
        self.bound
            .borrow()
            .iter()
            .map(|(name, t)| {
                let g = grads.wrt(t).unwrap_or_else(|| Tensor::zeros(t.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
