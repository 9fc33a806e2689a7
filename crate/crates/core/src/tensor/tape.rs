//! Reverse-mode gradient tape over batched row-matrices.
//!
//! Every node value is a matrix whose rows are independent samples; ops act
//! row-wise, so a tape built for a batch of B samples replays the per-sample
//! rules B times and parameter gradients come out summed over the batch in
//! row order.

use super::matrix::DenseMatrix;
use super::ops::{affine_backward_rows, affine_forward_rows, avgpool1d_backward, avgpool1d_forward, PoolSpec};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Indexed parameter storage the tape reads weights from. Biases are stored
/// as single-row matrices.
pub trait ParamSource {
    fn param(&self, slot: usize) -> &DenseMatrix;
    fn slot_count(&self) -> usize;
}

impl ParamSource for [DenseMatrix] {
    fn param(&self, slot: usize) -> &DenseMatrix {
        &self[slot]
    }

    fn slot_count(&self) -> usize {
        self.len()
    }
}

impl ParamSource for Vec<DenseMatrix> {
    fn param(&self, slot: usize) -> &DenseMatrix {
        &self[slot]
    }

    fn slot_count(&self) -> usize {
        self.len()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: NodeId, weight: usize, bias: usize },
    AvgPool { x: NodeId, spec: PoolSpec },
    Concat { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseMatrix,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Output of [`GradTape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<DenseMatrix>,
    nodes: Vec<Option<DenseMatrix>>,
}

impl Gradients {
    pub fn param(&self, slot: usize) -> &DenseMatrix {
        &self.params[slot]
    }

    pub fn params(&self) -> &[DenseMatrix] {
        &self.params
    }

    pub fn into_params(self) -> Vec<DenseMatrix> {
        self.params
    }

    /// Gradient reaching a recorded node, if any flowed into it.
    pub fn node(&self, id: NodeId) -> Option<&DenseMatrix> {
        self.nodes[id.0].as_ref()
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: DenseMatrix, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records an input. Input gradients are only formed for leaves with
    /// `requires_grad` set.
    pub fn leaf(&mut self, value: DenseMatrix, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn affine<P: ParamSource + ?Sized>(
        &mut self,
        x: NodeId,
        params: &P,
        weight: usize,
        bias: usize,
    ) -> Result<NodeId> {
        let value = affine_forward_rows(self.value(x), params.param(weight), params.param(bias).data())?;
        Ok(self.push(Op::Affine { x, weight, bias }, value, true))
    }

    pub fn avgpool(&mut self, x: NodeId, spec: PoolSpec) -> Result<NodeId> {
        let input = self.value(x);
        let out_len = spec.output_len(input.cols())?;
        let mut data = Vec::with_capacity(input.rows() * out_len);
        for row in input.iter_rows() {
            data.extend(avgpool1d_forward(row, spec)?);
        }
        let value = DenseMatrix::new(input.rows(), out_len, data)?;
        let needs = self.nodes[x.0].needs_grad;
        Ok(self.push(Op::AvgPool { x, spec }, value, needs))
    }

    /// Row-wise concatenation: each output row is `a`'s row followed by `b`'s.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rows() != vb.rows() {
            return Err(Error::Shape(format!(
                "concat: {} rows vs {} rows",
                va.rows(),
                vb.rows()
            )));
        }
        let cols = va.cols() + vb.cols();
        let mut data = Vec::with_capacity(va.rows() * cols);
        for (ra, rb) in va.iter_rows().zip(vb.iter_rows()) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let value = DenseMatrix::new(va.rows(), cols, data)?;
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(Op::Concat { a, b }, value, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b))?;
        let needs = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        Ok(self.push(Op::Add { a, b }, value, needs))
    }

    /// Replays the tape in reverse. `seeds` carries the upstream gradient
    /// for each output node; seeds for the same node are summed.
    pub fn backward<P: ParamSource + ?Sized>(
        &self,
        params: &P,
        seeds: &[(NodeId, DenseMatrix)],
    ) -> Result<Gradients> {
        let mut param_grads: Vec<DenseMatrix> = (0..params.slot_count())
            .map(|s| {
                let p = params.param(s);
                DenseMatrix::zeros(p.rows(), p.cols())
            })
            .collect();
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            let node = self
                .nodes
                .get(id.0)
                .ok_or_else(|| Error::Usage(format!("seed refers to unknown node {}", id.0)))?;
            if node.value.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "seed gradient {:?} for node of shape {:?}",
                    g.shape(),
                    node.value.shape()
                )));
            }
            accumulate(&mut grads[id.0], g.clone())?;
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {}
                Op::Affine { x, weight, bias } => {
                    let want_x = self.nodes[x.0].needs_grad;
                    // split borrow: weight and bias slots are distinct
                    let (gw, gb) = two_mut(&mut param_grads, weight, bias);
                    let gx = affine_backward_rows(
                        &g,
                        &self.nodes[x.0].value,
                        params.param(weight),
                        gw,
                        gb.data_mut(),
                        want_x,
                    )?;
                    if let Some(gx) = gx {
                        accumulate(&mut grads[x.0], gx)?;
                    }
                }
                Op::AvgPool { x, spec } => {
                    if self.nodes[x.0].needs_grad {
                        let in_len = self.nodes[x.0].value.cols();
                        let mut data = Vec::with_capacity(g.rows() * in_len);
                        for row in g.iter_rows() {
                            data.extend(avgpool1d_backward(row, in_len, spec)?);
                        }
                        accumulate(&mut grads[x.0], DenseMatrix::new(g.rows(), in_len, data)?)?;
                    }
                }
                Op::Concat { a, b } => {
                    let split = self.nodes[a.0].value.cols();
                    let rest = g.cols() - split;
                    if self.nodes[a.0].needs_grad {
                        let mut data = Vec::with_capacity(g.rows() * split);
                        for row in g.iter_rows() {
                            data.extend_from_slice(&row[..split]);
                        }
                        accumulate(&mut grads[a.0], DenseMatrix::new(g.rows(), split, data)?)?;
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut data = Vec::with_capacity(g.rows() * rest);
                        for row in g.iter_rows() {
                            data.extend_from_slice(&row[split..]);
                        }
                        accumulate(&mut grads[b.0], DenseMatrix::new(g.rows(), rest, data)?)?;
                    }
                }
                Op::Add { a, b } => {
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads[b.0], g.clone())?;
                    }
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads[a.0], g.clone())?;
                    }
                }
            }
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients {
            params: param_grads,
            nodes: grads,
        })
    }
}

fn accumulate(slot: &mut Option<DenseMatrix>, g: DenseMatrix) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn two_mut(v: &mut [DenseMatrix], i: usize, j: usize) -> (&mut DenseMatrix, &mut DenseMatrix) {
    assert_ne!(i, j, "weight and bias must occupy different slots");
    if i < j {
        let (lo, hi) = v.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}
