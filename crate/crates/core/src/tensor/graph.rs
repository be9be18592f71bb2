use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::{Element, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

impl<T: Element> Tensor<T> {
    /// Recorded nodes reachable from `self`, ordered so that every node
    /// follows all of its inputs.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        // (node, inputs already expanded)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.id()) {
                continue;
            }
            let Some(op) = &node.0.op else { continue };
            stack.push((node.clone(), true));
            for input in op.inputs.iter().rev() {
                if input.0.op.is_some() && !seen.contains(&input.id()) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }

    /// Back-propagates from a single-element loss into every reachable
    /// gradient-tracking leaf.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        let seed = vec![T::one()];
        if self.is_leaf() {
            if self.requires_grad() {
                self.accumulate_grad(&seed);
            }
            return Ok(());
        }

        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for node in self.topo_order().iter().rev() {
            let Some(upstream) = pending.remove(&node.id()) else {
                continue;
            };
            let op = node.0.op.as_ref().expect("topo order holds recorded nodes");
            let grads = (op.backward)(&upstream);
            debug_assert_eq!(grads.len(), op.inputs.len(), "{}: gradient arity", op.name);
            for (input, grad) in op.inputs.iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(grad.len(), input.numel(), "{}: gradient size", op.name);
                if input.is_leaf() {
                    input.accumulate_grad(&grad);
                } else {
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, &b)| *a = *a + b),
                        None => {
                            pending.insert(input.id(), grad);
                        }
                    }
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
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.add(&x).unwrap();
        assert!(matches!(y.backward(), Err(Error::NonScalarLoss(s)) if s == vec![2]));
    }

    #[test]
    fn sum_gives_ones() {
        let x = Tensor::<f64>::param(&[2, 3], vec![0.5; 6]).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn square_gives_two_x() {
        let x = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let unused = Tensor::<f64>::param(&[3], vec![1.0; 3]).unwrap();
        x.sum().backward().unwrap();
        assert!(unused.grad().is_none());
        assert_eq!(unused.grad_or_zeros(), vec![0.0; 3]);
    }

    #[test]
    fn diamond_visits_shared_node_once() {
        // y = x * 2; loss = sum(y + y) -> d/dx = 4
        let x = Tensor::<f64>::param(&[3], vec![1.0, -1.0, 2.0]).unwrap();
        let y = x.scale(2.0);
        y.add(&y).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0; 3]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = Tensor::<f64>::param(&[1], vec![1.0]).unwrap();
        x.sum().backward().unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::<f32>::param(&[1], vec![1.0]).unwrap();
        let y = no_grad(|| x.scale(3.0));
        assert!(y.is_leaf());
        assert!(is_grad_enabled());
    }
}
