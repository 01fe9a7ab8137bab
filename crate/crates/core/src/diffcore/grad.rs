use std::collections::{HashMap, HashSet};

use super::node::{vjp, DiffNode};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients keyed by the node they were taken with respect to.
#[derive(Debug, Default, Clone)]
pub struct GradMap {
    grads: HashMap<u64, DiffNode>,
}

impl GradMap {
    /// Gradient for `node`; `None` means zero.
    pub fn get(&self, node: &DiffNode) -> Option<&DiffNode> {
        self.grads.get(&node.id())
    }

    /// Gradient value for `node`, zero-filled when absent.
    pub fn value_or_zero(&self, node: &DiffNode) -> Tensor {
        self.get(node).map(|g| g.value().clone()).unwrap_or_else(|| Tensor::zeros(node.shape()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
///
/// With `create_graph` the returned gradients are graph nodes that can be
/// differentiated again; otherwise they are constants. Nodes in `wrt` that do
/// not influence `output` receive a zero gradient.
pub fn grad(output: &DiffNode, wrt: &[DiffNode], create_graph: bool) -> Result<GradMap> {
    if output.value().len() != 1 {
        return Err(Error::shape("grad", format!("output must be scalar, got {:?}", output.shape())));
    }

    // Every parent is created before its child, so descending id order is a
    // valid reverse topological order.
    let mut nodes: Vec<DiffNode> = Vec::new();
    let mut seen = HashSet::new();
    let mut stack = vec![output.clone()];
    while let Some(n) = stack.pop() {
        if !n.requires_grad() || !seen.insert(n.id()) {
            continue;
        }
        stack.extend(n.parents().iter().cloned());
        nodes.push(n);
    }
    nodes.sort_by_key(|n| n.id());

    let targets: HashSet<u64> = wrt.iter().map(|n| n.id()).collect();
    let mut relevant: HashSet<u64> = HashSet::new();
    for n in &nodes {
        if targets.contains(&n.id()) || n.parents().iter().any(|p| relevant.contains(&p.id())) {
            relevant.insert(n.id());
        }
    }

    let mut grads: HashMap<u64, DiffNode> = HashMap::new();
    if relevant.contains(&output.id()) {
        grads.insert(output.id(), DiffNode::constant(Tensor::filled(output.shape(), 1.0)));
    }

    for n in nodes.iter().rev() {
        if n.parents().is_empty() || !relevant.contains(&n.id()) {
            continue;
        }
        let Some(g) = grads.get(&n.id()).cloned() else { continue };
        let needed: Vec<bool> = n.parents().iter().map(|p| relevant.contains(&p.id())).collect();
        let contributions = if create_graph {
            vjp(n.op(), n.parents(), n, &g, &needed)
        } else {
            let parents: Vec<DiffNode> = n.parents().iter().map(DiffNode::detach).collect();
            vjp(n.op(), &parents, &n.detach(), &g.detach(), &needed)
        }
        .map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite { op: n.op().name() },
            other => other,
        })?;

        for (p, c) in n.parents().iter().zip(contributions) {
            let Some(c) = c else { continue };
            if !c.value().all_finite() {
                return Err(Error::NonFinite { op: n.op().name() });
            }
            let acc = match grads.remove(&p.id()) {
                Some(prev) => prev.add(&c)?,
                None => c,
            };
            grads.insert(p.id(), acc);
        }
    }

    let mut out = GradMap::default();
    for w in wrt {
        let g = match grads.get(&w.id()) {
            Some(g) => g.clone(),
            None => DiffNode::constant(Tensor::zeros(w.shape())),
        };
        out.grads.insert(w.id(), g);
    }
    Ok(out)
}
