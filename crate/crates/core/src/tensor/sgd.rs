use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← momentum·v + grad; p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Real = f32> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.expect_same_shape(g)?;
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        } else if self.velocity.len() != grads.len()
            || self.velocity.iter().zip(grads).any(|(v, g)| v.shape() != g.shape())
        {
            return Err(Error::shape("parameter list changed between steps"));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
        Ok(())
    }
}
