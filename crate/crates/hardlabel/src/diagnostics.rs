//! White-box instrumentation: ground-truth attribution of dual points and
//! the sign-vote intuition table. Verifier tooling only; nothing here is on
//! the attack path.

use crate::model::MlpNetwork;
use crate::{Network, Vector};

/// Hidden neuron whose critical hyperplane is closest to `x`, with the
/// input-space distance `|V| / |grad V|`. Layers are 1-indexed.
pub fn nearest_critical_neuron(net: &Network, x: &Vector) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for layer in 1..=net.hidden_layers() {
        let v = net.hidden_state(x, layer).ok()?;
        let map = net.local_affine_map(x, layer).ok()?;
        for j in 0..v.len() {
            let g = map.matrix.row(j).norm();
            if g > 1e-12 {
                let d = v[j].abs() / g;
                if best.map_or(true, |(_, _, b)| d < b) {
                    best = Some((layer, j, d));
                }
            }
        }
    }
    best
}

/// Input-space distance from `x` to the decision boundary between the two
/// top classes (white-box): |top1 - top2| / |grad(top1 - top2)|.
pub fn boundary_residual(net: &Network, x: &Vector) -> f64 {
    let logits = net.forward(x).expect("forward");
    let map = net
        .local_affine_map(x, net.architecture().len() - 1)
        .expect("local map");
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
    let (a, b) = (order[0], order[1]);
    let grad = (map.matrix.row(a) - map.matrix.row(b)).norm();
    if grad < 1e-12 {
        return f64::INFINITY;
    }
    (logits[a] - logits[b]).abs() / grad
}

/// Builds an extraction state holding the true parameters of the first
/// `upto` layers (test scaffolding for per-layer evaluation).
pub fn true_prefix_state(net: &MlpNetwork<f64>, upto: usize) -> crate::state::ExtractionState {
    use crate::state::{ExtractionState, NeuronStatus, RecoveredLayer};
    let mut state = ExtractionState::new(net.architecture().to_vec());
    for layer in 1..=upto {
        state
            .push_layer(RecoveredLayer {
                layer,
                weights: net.weight(layer).clone(),
                biases: net.bias(layer).clone(),
                neurons: vec![NeuronStatus::Full; net.layer_width(layer)],
            })
            .expect("true prefix layer");
    }
    state
}
