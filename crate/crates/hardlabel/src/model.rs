//! Fully connected ReLU networks: exact forward evaluation, per-neuron state
//! inspection and local affine maps.
//!
//! A network with architecture `d_0, ..., d_{r+1}` alternates affine layers
//! `A x + b` with component-wise ReLU; no activation follows the final layer.
//! Networks are immutable after construction, so every operation here is pure
//! and safe to call from concurrent workers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork<T: Scalar> {
    architecture: Vec<usize>,
    weights: Vec<DMatrix<T>>,
    biases: Vec<DVector<T>>,
}

/// Per-hidden-neuron activity (true = active), grouped by layer.
///
/// A neuron with pre-activation exactly zero is recorded as inactive; the
/// ReLU output is zero either way, so the convention only affects pattern
/// bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

/// Affine map `x -> matrix * x + offset` equal to a network prefix inside
/// one linear neighbourhood.
#[derive(Debug, Clone)]
pub struct LocalAffineMap<T: Scalar> {
    pub matrix: DMatrix<T>,
    pub offset: DVector<T>,
}

impl<T: Scalar> LocalAffineMap<T> {
    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        &self.matrix * x + &self.offset
    }
}

impl<T: Scalar> MlpNetwork<T> {
    /// Builds a network and validates the shape/finiteness invariants.
    pub fn new(
        architecture: Vec<usize>,
        weights: Vec<DMatrix<T>>,
        biases: Vec<DVector<T>>,
    ) -> Result<Self> {
        if architecture.len() < 2 {
            return Err(Error::InvalidModel(
                "architecture needs at least input and output widths".into(),
            ));
        }
        if architecture.iter().any(|&d| d == 0) {
            return Err(Error::InvalidModel("zero-width layer".into()));
        }
        let layers = architecture.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::InvalidModel(format!(
                "expected {layers} weight matrices and bias vectors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (rows, cols) = (architecture[i + 1], architecture[i]);
            if w.nrows() != rows || w.ncols() != cols {
                return Err(Error::InvalidModel(format!(
                    "layer {}: weight shape {}x{}, expected {rows}x{cols}",
                    i + 1,
                    w.nrows(),
                    w.ncols()
                )));
            }
            if b.len() != rows {
                return Err(Error::InvalidModel(format!(
                    "layer {}: bias length {}, expected {rows}",
                    i + 1,
                    b.len()
                )));
            }
            let finite = |v: &T| v.to_f64().map(f64::is_finite).unwrap_or(false);
            if !w.iter().all(finite) || !b.iter().all(finite) {
                return Err(Error::InvalidModel(format!(
                    "layer {}: non-finite entry",
                    i + 1
                )));
            }
        }
        Ok(Self {
            architecture,
            weights,
            biases,
        })
    }

    pub fn architecture(&self) -> &[usize] {
        &self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.architecture[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.architecture.last().unwrap()
    }

    /// Number of hidden layers `r`.
    pub fn hidden_layers(&self) -> usize {
        self.architecture.len() - 2
    }

    pub fn layer_width(&self, layer: usize) -> usize {
        self.architecture[layer]
    }

    pub fn weight(&self, layer: usize) -> &DMatrix<T> {
        &self.weights[layer - 1]
    }

    pub fn bias(&self, layer: usize) -> &DVector<T> {
        &self.biases[layer - 1]
    }

    fn check_input(&self, x: &DVector<T>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.architecture.len() - 1 {
            return Err(Error::LayerOutOfRange {
                layer,
                layers: self.architecture.len() - 1,
            });
        }
        Ok(())
    }

    /// Logits `f(x)`: affine layers with ReLU between hidden layers and no
    /// activation after the final layer.
    pub fn forward(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.hidden_state(x, self.architecture.len() - 1)
    }

    /// Pre-activation vector of layer `j` (1-indexed), i.e. the output of
    /// `f_{1..j}` before the nonlinearity.
    pub fn hidden_state(&self, x: &DVector<T>, layer: usize) -> Result<DVector<T>> {
        self.check_input(x)?;
        self.check_layer(layer)?;
        let mut v = &self.weights[0] * x + &self.biases[0];
        for l in 1..layer {
            v.apply(|e| {
                if *e < T::zero() {
                    *e = T::zero();
                }
            });
            v = &self.weights[l] * v + &self.biases[l];
        }
        Ok(v)
    }

    /// Active/inactive state of every hidden neuron at `x`.
    pub fn activation_pattern(&self, x: &DVector<T>) -> Result<ActivationPattern> {
        self.check_input(x)?;
        let mut layers = Vec::with_capacity(self.hidden_layers());
        let mut v = &self.weights[0] * x + &self.biases[0];
        for l in 0..self.hidden_layers() {
            layers.push(v.iter().map(|e| *e > T::zero()).collect());
            v.apply(|e| {
                if *e < T::zero() {
                    *e = T::zero();
                }
            });
            v = &self.weights[l + 1] * v + &self.biases[l + 1];
        }
        Ok(ActivationPattern { layers })
    }

    /// Affine map equal to the prefix `f_{1..layer}` (pre-activation output)
    /// on the linear neighbourhood of `x0`: weight products with rows zeroed
    /// for inactive neurons, with the offset fixed so the map reproduces
    /// `hidden_state(x0, layer)`.
    pub fn local_affine_map(&self, x0: &DVector<T>, layer: usize) -> Result<LocalAffineMap<T>> {
        self.check_input(x0)?;
        self.check_layer(layer)?;
        let pattern = self.activation_pattern(x0)?;
        let mut matrix = self.weights[0].clone();
        let mut offset = self.biases[0].clone();
        for l in 1..layer {
            // zero rows of inactive neurons, then feed through the next layer
            for (row, &active) in pattern.layers[l - 1].iter().enumerate() {
                if !active {
                    matrix.row_mut(row).fill(T::zero());
                    offset[row] = T::zero();
                }
            }
            offset = &self.weights[l] * offset + &self.biases[l];
            matrix = &self.weights[l] * matrix;
        }
        Ok(LocalAffineMap { matrix, offset })
    }

    /// Pre-activation value of one hidden neuron.
    pub fn neuron_value(&self, x: &DVector<T>, layer: usize, neuron: usize) -> Result<T> {
        Ok(self.hidden_state(x, layer)?[neuron])
    }

    /// Input-space gradient of one neuron's pre-activation at `x`.
    pub fn neuron_gradient(&self, x: &DVector<T>, layer: usize, neuron: usize) -> Result<DVector<T>> {
        Ok(self.local_affine_map(x, layer)?.matrix.row(neuron).transpose())
    }

    /// Rescales hidden neuron `(layer, neuron)` by `a > 0`: its row and bias
    /// are multiplied by `a`, the corresponding column of the next layer by
    /// `1/a`. Logits are unchanged for every input up to rounding.
    pub fn scale_neuron(&self, layer: usize, neuron: usize, a: T) -> Result<Self> {
        if a <= T::zero() {
            return Err(Error::NonPositiveScale(a.to_f64().unwrap_or(f64::NAN)));
        }
        if layer == 0 || layer > self.hidden_layers() {
            return Err(Error::LayerOutOfRange {
                layer,
                layers: self.hidden_layers(),
            });
        }
        let mut net = self.clone();
        let w = &mut net.weights[layer - 1];
        let scaled = w.row(neuron) * a;
        w.set_row(neuron, &scaled);
        net.biases[layer - 1][neuron] *= a;
        let next = &mut net.weights[layer];
        let inv = T::one() / a;
        let col = next.column(neuron) * inv;
        next.set_column(neuron, &col);
        Ok(net)
    }
}

// ---------------------------------------------------------------------------
// Model file format
// ---------------------------------------------------------------------------

/// On-disk form: flat row-major weight matrices, one array per layer.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    architecture: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl<T: Scalar> MlpNetwork<T> {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            architecture: self.architecture.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| {
                    (0..w.nrows())
                        .flat_map(|r| (0..w.ncols()).map(move |c| (r, c)))
                        .map(|(r, c)| w[(r, c)].to_f64().unwrap())
                        .collect()
                })
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|v| v.to_f64().unwrap()).collect())
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.architecture.len() < 2 {
            return Err(Error::InvalidModel("architecture too short".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, (w, b)) in file.weights.iter().zip(&file.biases).enumerate() {
            let (rows, cols) = (
                *file
                    .architecture
                    .get(i + 1)
                    .ok_or_else(|| Error::InvalidModel("missing layer width".into()))?,
                file.architecture[i],
            );
            if w.len() != rows * cols {
                return Err(Error::InvalidModel(format!(
                    "layer {}: {} weights, expected {}",
                    i + 1,
                    w.len(),
                    rows * cols
                )));
            }
            let conv = |v: &f64| {
                T::from_f64(*v).ok_or_else(|| Error::InvalidModel("unrepresentable value".into()))
            };
            weights.push(DMatrix::from_row_iterator(
                rows,
                cols,
                w.iter().map(|v| conv(v)).collect::<Result<Vec<_>>>()?,
            ));
            biases.push(DVector::from_vec(
                b.iter().map(|v| conv(v)).collect::<Result<Vec<_>>>()?,
            ));
        }
        Self::new(file.architecture, weights, biases)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

// ---------------------------------------------------------------------------
// Seeded generation of test targets
// ---------------------------------------------------------------------------

impl MlpNetwork<f64> {
    /// Deterministic random network. Weight std is `scale / d_in^(1/4)`
    /// (variance scaled by `1/sqrt(d_in)`); biases are calibrated per neuron
    /// against a seeded probe set so roughly `activity` of the probes land on
    /// the active side, keeping every critical hyperplane inside the
    /// populated region.
    pub fn seeded_random(
        architecture: &[usize],
        seed: u64,
        weight_scale: f64,
        activity: f64,
        domain_halfwidth: f64,
    ) -> Result<Self> {
        if architecture.len() < 2 {
            return Err(Error::InvalidModel("architecture too short".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d0 = architecture[0];
        let n_probes = 512;
        let probes: Vec<DVector<f64>> = (0..n_probes)
            .map(|_| {
                DVector::from_fn(d0, |_, _| rng.gen_range(-domain_halfwidth..domain_halfwidth))
            })
            .collect();

        let gauss = |rng: &mut ChaCha20Rng| {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut hidden: Vec<DVector<f64>> = probes.clone();
        for l in 0..architecture.len() - 1 {
            let (rows, cols) = (architecture[l + 1], architecture[l]);
            let std = weight_scale / (cols as f64).sqrt().sqrt();
            let w = DMatrix::from_fn(rows, cols, |_, _| std * gauss(&mut rng));
            let last = l + 1 == architecture.len() - 1;
            let mut b = DVector::zeros(rows);
            if last {
                // output layer: plain random biases at the logit scale
                let mut mags: Vec<f64> = hidden.iter().map(|h| (&w * h).norm()).collect();
                mags.sort_by(|a, c| a.partial_cmp(c).unwrap());
                let scale = mags[mags.len() / 2].max(1e-12) / (rows as f64).sqrt();
                for v in b.iter_mut() {
                    *v = 0.3 * scale * gauss(&mut rng);
                }
            } else {
                for n in 0..rows {
                    let mut vals: Vec<f64> = hidden.iter().map(|h| w.row(n).transpose().dot(h)).collect();
                    vals.sort_by(|a, c| a.partial_cmp(c).unwrap());
                    let jitter = 0.08 * gauss(&mut rng);
                    let q = (1.0 - activity + jitter).clamp(0.05, 0.95);
                    let idx = ((n_probes as f64 - 1.0) * q).round() as usize;
                    b[n] = -vals[idx];
                }
            }
            hidden = hidden
                .iter()
                .map(|h| {
                    let mut v = &w * h + &b;
                    if !last {
                        v.apply(|e| *e = e.max(0.0));
                    }
                    v
                })
                .collect();
            weights.push(w);
            biases.push(b);
        }
        Self::new(architecture.to_vec(), weights, biases)
    }
}

impl MlpNetwork<f64> {
    /// Fraction of uniformly sampled domain points labeled with each class.
    pub fn label_census(&self, domain_halfwidth: f64, samples: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; self.output_dim()];
        for _ in 0..samples {
            let x = DVector::from_fn(self.input_dim(), |_, _| {
                rng.gen_range(-domain_halfwidth..domain_halfwidth)
            });
            let logits = self.forward(&x).unwrap();
            counts[crate::oracle::argmax_label(&logits)] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / samples as f64)
            .collect()
    }

    /// First seed at or after `base_seed` whose network is a usable target:
    /// at least two classes each cover `min_frac` of the sampled domain.
    pub fn seeded_random_usable(
        architecture: &[usize],
        base_seed: u64,
        weight_scale: f64,
        activity: f64,
        domain_halfwidth: f64,
        min_frac: f64,
    ) -> Result<(Self, u64)> {
        for offset in 0..256 {
            let seed = base_seed + offset;
            let net = Self::seeded_random(architecture, seed, weight_scale, activity, domain_halfwidth)?;
            let census = net.label_census(domain_halfwidth, 4096, seed ^ 0x9e3779b97f4a7c15);
            if census.iter().filter(|&&f| f >= min_frac).count() >= 2 {
                return Ok((net, seed));
            }
        }
        Err(Error::InvalidModel(format!(
            "no usable seed in [{base_seed}, {base_seed}+256)"
        )))
    }
}
