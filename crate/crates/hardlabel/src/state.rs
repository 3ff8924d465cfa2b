//! Recovered-so-far view of the target network: completed layers (signed
//! signatures and biases), plus the unsigned signatures of the layer under
//! attack. Everything downstream of layer peeling evaluates against this
//! state, never against the hidden target.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::MlpNetwork;
use crate::{Matrix, Network, Vector};

/// Recovery outcome for one neuron.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NeuronStatus {
    /// Signature covers every input coordinate.
    Full,
    /// Some input coordinates were never active in the supporting cluster;
    /// those weights are reported as zero and listed here.
    Partial { missing: Vec<usize> },
    /// No dual points were found for this neuron.
    Unrecovered,
}

/// One fully processed layer: unit-norm signed weight rows plus biases on
/// the same scale.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RecoveredLayer {
    pub layer: usize,
    #[serde(with = "crate::state::serde_matrix")]
    pub weights: Matrix,
    #[serde(with = "crate::state::serde_vector")]
    pub biases: Vector,
    pub neurons: Vec<NeuronStatus>,
}

/// Unsigned signature of one neuron of the layer under attack.
#[derive(Debug, Clone)]
pub struct PendingNeuron {
    pub weights: Vector,
    pub bias: f64,
    pub status: NeuronStatus,
}

/// The target layer mid-recovery: signatures known up to sign.
#[derive(Debug, Clone, Default)]
pub struct PendingLayer {
    pub neurons: Vec<Option<PendingNeuron>>,
}

#[derive(Debug, Clone)]
pub struct ExtractionState {
    architecture: Vec<usize>,
    complete: Vec<RecoveredLayer>,
    prefix: Option<Network>,
    pub pending: Option<PendingLayer>,
}

impl ExtractionState {
    pub fn new(architecture: Vec<usize>) -> Self {
        Self {
            architecture,
            complete: Vec::new(),
            prefix: None,
            pending: None,
        }
    }

    pub fn architecture(&self) -> &[usize] {
        &self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.architecture[0]
    }

    /// Number of completed layers (the next target is this plus one).
    pub fn recovered_layers(&self) -> usize {
        self.complete.len()
    }

    pub fn layer(&self, layer: usize) -> &RecoveredLayer {
        &self.complete[layer - 1]
    }

    pub fn layers(&self) -> &[RecoveredLayer] {
        &self.complete
    }

    /// Output width of the recovered prefix (the input width of the layer
    /// under attack).
    pub fn hidden_dim(&self) -> usize {
        self.architecture[self.complete.len()]
    }

    pub fn push_layer(&mut self, layer: RecoveredLayer) -> Result<()> {
        let idx = self.complete.len() + 1;
        if layer.layer != idx {
            return Err(Error::Precondition(format!(
                "pushed layer {} but expected {idx}",
                layer.layer
            )));
        }
        let (rows, cols) = (self.architecture[idx], self.architecture[idx - 1]);
        if layer.weights.shape() != (rows, cols) || layer.biases.len() != rows {
            return Err(Error::ArchitectureMismatch(format!(
                "layer {idx} shapes {:?}",
                layer.weights.shape()
            )));
        }
        self.complete.push(layer);
        self.pending = None;
        self.rebuild_prefix();
        Ok(())
    }

    fn rebuild_prefix(&mut self) {
        if self.complete.is_empty() {
            self.prefix = None;
            return;
        }
        let arch: Vec<usize> = self.architecture[..=self.complete.len()].to_vec();
        let weights: Vec<Matrix> = self.complete.iter().map(|l| l.weights.clone()).collect();
        let biases: Vec<Vector> = self.complete.iter().map(|l| l.biases.clone()).collect();
        self.prefix = Some(MlpNetwork::new(arch, weights, biases).expect("prefix shapes"));
    }

    /// Post-ReLU output of the recovered prefix at `x` (identity when no
    /// layer is recovered yet).
    pub fn hidden(&self, x: &Vector) -> Result<Vector> {
        match &self.prefix {
            None => Ok(x.clone()),
            Some(net) => {
                let mut v = net.hidden_state(x, net.architecture().len() - 1)?;
                v.apply(|e| {
                    if *e < 0.0 {
                        *e = 0.0;
                    }
                });
                Ok(v)
            }
        }
    }

    /// Local linear map of the recovered prefix at `x` including the final
    /// ReLU mask: rows of inactive output neurons are zero. Identity when no
    /// layer is recovered.
    pub fn post_activation_map(&self, x: &Vector) -> Result<Matrix> {
        match &self.prefix {
            None => Ok(DMatrix::identity(self.input_dim(), self.input_dim())),
            Some(net) => {
                let last = net.architecture().len() - 1;
                let mut m = net.local_affine_map(x, last)?.matrix;
                let v = net.hidden_state(x, last)?;
                for (row, val) in v.iter().enumerate() {
                    if *val <= 0.0 {
                        m.row_mut(row).fill(0.0);
                    }
                }
                Ok(m)
            }
        }
    }

    /// Active mask of the recovered prefix output at `x`.
    pub fn active_mask(&self, x: &Vector) -> Result<Vec<bool>> {
        Ok(self.hidden(x)?.iter().map(|v| *v > 0.0).collect())
    }

    /// Input-space distance from `x` to the nearest critical hyperplane of a
    /// recovered neuron, over completed layers and (optionally) the pending
    /// signatures. Returns `(layer, neuron, distance)` for the closest one.
    pub fn nearest_recovered_plane(
        &self,
        x: &Vector,
        include_pending: bool,
    ) -> Result<Option<(usize, usize, f64)>> {
        let mut best: Option<(usize, usize, f64)> = None;
        let mut consider = |layer: usize, neuron: usize, dist: f64| {
            if best.map_or(true, |(_, _, d)| dist < d) {
                best = Some((layer, neuron, dist));
            }
        };
        if let Some(net) = &self.prefix {
            for layer in 1..=net.architecture().len() - 1 {
                let v = net.hidden_state(x, layer)?;
                let map = net.local_affine_map(x, layer)?;
                for j in 0..v.len() {
                    let g = map.matrix.row(j).norm();
                    if g > 1e-12 {
                        consider(layer, j, v[j].abs() / g);
                    }
                }
            }
        }
        if include_pending {
            if let Some(pending) = &self.pending {
                let layer = self.complete.len() + 1;
                let h = self.hidden(x)?;
                let post = self.post_activation_map(x)?;
                for (j, n) in pending.neurons.iter().enumerate() {
                    let Some(n) = n else { continue };
                    let val = n.weights.dot(&h) + n.bias;
                    let g = (n.weights.transpose() * &post).norm();
                    if g > 1e-12 {
                        consider(layer, j, val.abs() / g);
                    }
                }
            }
        }
        Ok(best)
    }

    /// True when `x` lies on the critical hyperplane of recovered neuron
    /// `(layer, neuron)` within input-space distance `tol`, and on no other
    /// recovered plane closer than that.
    pub fn is_critical_for(
        &self,
        x: &Vector,
        layer: usize,
        neuron: usize,
        tol: f64,
    ) -> Result<bool> {
        match self.nearest_recovered_plane(x, true)? {
            Some((l, n, d)) => Ok(l == layer && n == neuron && d < tol),
            None => Ok(false),
        }
    }
}

// Serde helpers for nalgebra containers in checkpoints.
pub mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|r| m.row(r).iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_row_iterator(
            nrows,
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

pub mod serde_vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
