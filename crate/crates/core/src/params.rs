//! Named parameter sets shared by the model parts, the optimiser and checkpoints.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// A group of trainable tensors with stable names and order.
pub trait Parameters {
    /// Graph handles for one forward pass.
    type Vars;

    fn named(&self) -> Vec<(String, &Tensor)>;
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    /// Registers every tensor as a graph leaf.
    fn bind(&self, g: &mut Graph) -> Self::Vars;

    /// The leaves of `vars`, in the same order as [`Parameters::named`].
    fn leaves(vars: &Self::Vars) -> Vec<Var>;

    fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// `uniform(−1/√fan, 1/√fan)` initialisation.
pub fn scaled_uniform<R: Rng + ?Sized>(shape: &[usize], fan: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan.max(1) as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}
