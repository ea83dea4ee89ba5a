use std::collections::HashSet;

use super::{ops, Tensor};
use crate::error::{Error, Result};

/// Operation records reachable from a root, parents before children.
pub struct Graph {
    nodes: Vec<Tensor>,
}

impl Graph {
    /// Collects every tensor that requires gradient and is reachable from
    /// `root`, in topological order (iterative post-order DFS).
    pub fn from_root(root: &Tensor) -> Self {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        if !root.requires_grad() {
            return Graph { nodes: order };
        }
        let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.node() {
                for p in node.parents.iter().rev() {
                    if p.requires_grad() && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        Graph { nodes: order }
    }

    pub fn nodes(&self) -> &[Tensor] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations (non-leaf entries).
    pub fn op_count(&self) -> usize {
        self.nodes.iter().filter(|t| !t.is_leaf()).count()
    }
}

impl Tensor {
    /// Accumulates d(self)/d(t) into every reachable tensor `t` that requires
    /// gradient. `self` must hold exactly one element.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let graph = Graph::from_root(self);
        self.accumulate_grad(&[1.0]);
        for t in graph.nodes.iter().rev() {
            let Some(node) = t.node() else { continue };
            let Some(g) = t.grad() else { continue };
            let grads = ops::backward_op(&node.op, &node.parents, t, &g);
            for (parent, grad) in node.parents.iter().zip(grads) {
                if let Some(grad) = grad {
                    parent.accumulate_grad(&grad);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Tensor::param(&[], vec![2.0]).unwrap();
        let y = Tensor::param(&[], vec![3.0]).unwrap();
        let loss = x.mul(&y).unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0]);
        assert_eq!(y.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn relu_dead_region_has_zero_gradient() {
        let x = Tensor::param(&[1], vec![-1.0]).unwrap();
        x.relu().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let x = Tensor::param(&[], vec![5.0]).unwrap();
        x.add(&x).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn constants_never_accumulate() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let c = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        x.mul(&c).unwrap().sum_all().backward().unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.scale(2.0).backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn graph_is_topologically_ordered_and_visits_once() {
        let x = Tensor::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = x.matmul(&x).unwrap();
        let b = a.add(&x).unwrap().softmax(1).unwrap();
        let loss = b.mul(&a).unwrap().sum_all();
        let graph = Graph::from_root(&loss);
        let ids: Vec<usize> = graph.nodes().iter().map(Tensor::id).collect();
        let unique: HashSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), ids.len());
        for (pos, t) in graph.nodes().iter().enumerate() {
            if let Some(node) = t.node() {
                for p in &node.parents {
                    let ppos = ids.iter().position(|&i| i == p.id()).unwrap();
                    assert!(ppos < pos);
                }
            }
        }
        // x, a, a+x, softmax, mul, sum
        assert_eq!(graph.len(), 6);
        assert_eq!(graph.op_count(), 5);
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = super::super::no_grad(|| x.scale(3.0));
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
        assert!(x.scale(3.0).requires_grad());
    }
}
