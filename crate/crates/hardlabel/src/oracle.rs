//! The hard-label threat model: attack code observes argmax class labels
//! only, with every query counted.
//!
//! Attack modules interact with the target exclusively through
//! [`QueryOracle`] (usually via an [`OracleHandle`] carrying the phase the
//! query is billed to). The trait exposes labels, query counters and the
//! sampling domain; nothing else about the target leaks across this
//! boundary.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Network;

/// Attack phase a query is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    DualSearch,
    Clustering,
    Unification,
    SignVoting,
    OutputRecovery,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::DualSearch,
        Phase::Clustering,
        Phase::Unification,
        Phase::SignVoting,
        Phase::OutputRecovery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::DualSearch => "dual_search",
            Phase::Clustering => "clustering",
            Phase::Unification => "unification",
            Phase::SignVoting => "sign_voting",
            Phase::OutputRecovery => "output_recovery",
        }
    }

    pub fn from_name(name: &str) -> Result<Phase> {
        Phase::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown phase label {name:?}")))
    }

    fn index(self) -> usize {
        Phase::ALL.iter().position(|&p| p == self).unwrap()
    }
}

/// Snapshot of the per-phase query counts. Phase counts sum to the total.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLedger {
    pub dual_search: u64,
    pub clustering: u64,
    pub unification: u64,
    pub sign_voting: u64,
    pub output_recovery: u64,
}

impl QueryLedger {
    pub fn total(&self) -> u64 {
        self.dual_search + self.clustering + self.unification + self.sign_voting
            + self.output_recovery
    }

    /// Per-phase difference `self - earlier`.
    pub fn since(&self, earlier: &QueryLedger) -> QueryLedger {
        QueryLedger {
            dual_search: self.dual_search - earlier.dual_search,
            clustering: self.clustering - earlier.clustering,
            unification: self.unification - earlier.unification,
            sign_voting: self.sign_voting - earlier.sign_voting,
            output_recovery: self.output_recovery - earlier.output_recovery,
        }
    }
}

/// What the attack is allowed to see.
pub trait QueryOracle: Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    /// Per-coordinate sampling bounds (lo, hi).
    fn domain(&self) -> (&DVector<f64>, &DVector<f64>);
    /// Hard label of `x`: the smallest coordinate attaining the maximum
    /// logit. Increments the query counter.
    fn classify(&self, x: &DVector<f64>, phase: Phase) -> Result<usize>;
    fn query_count(&self) -> u64;
    fn phase_count(&self, phase: Phase) -> u64;

    fn ledger(&self) -> QueryLedger {
        QueryLedger {
            dual_search: self.phase_count(Phase::DualSearch),
            clustering: self.phase_count(Phase::Clustering),
            unification: self.phase_count(Phase::Unification),
            sign_voting: self.phase_count(Phase::SignVoting),
            output_recovery: self.phase_count(Phase::OutputRecovery),
        }
    }
}

/// In-process oracle wrapping a target network. The network is private to
/// this type; only labels cross the interface.
pub struct HardLabelOracle {
    target: Network,
    lo: DVector<f64>,
    hi: DVector<f64>,
    counter: AtomicU64,
    phase_counts: [AtomicU64; Phase::ALL.len()],
}

impl HardLabelOracle {
    /// Default sampling domain `[-5, +5]^d0`.
    pub fn new(target: Network) -> Self {
        let d = target.input_dim();
        Self::with_domain(
            target,
            DVector::from_element(d, -5.0),
            DVector::from_element(d, 5.0),
        )
    }

    pub fn with_domain(target: Network, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        assert_eq!(lo.len(), target.input_dim());
        assert_eq!(hi.len(), target.input_dim());
        Self {
            target,
            lo,
            hi,
            counter: AtomicU64::new(0),
            phase_counts: Default::default(),
        }
    }
}

/// Smallest index attaining the maximum.
pub fn argmax_label(logits: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..logits.len() {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

impl QueryOracle for HardLabelOracle {
    fn input_dim(&self) -> usize {
        self.target.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.target.output_dim()
    }

    fn domain(&self) -> (&DVector<f64>, &DVector<f64>) {
        (&self.lo, &self.hi)
    }

    fn classify(&self, x: &DVector<f64>, phase: Phase) -> Result<usize> {
        let logits = self.target.forward(x)?;
        self.counter.fetch_add(1, Ordering::Relaxed);
        self.phase_counts[phase.index()].fetch_add(1, Ordering::Relaxed);
        Ok(argmax_label(&logits))
    }

    fn query_count(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }

    fn phase_count(&self, phase: Phase) -> u64 {
        self.phase_counts[phase.index()].load(Ordering::Relaxed)
    }
}

/// Oracle reference plus the phase its queries are billed to.
#[derive(Clone, Copy)]
pub struct OracleHandle<'a> {
    oracle: &'a dyn QueryOracle,
    phase: Phase,
}

impl<'a> OracleHandle<'a> {
    pub fn new(oracle: &'a dyn QueryOracle, phase: Phase) -> Self {
        Self { oracle, phase }
    }

    pub fn with_phase(&self, phase: Phase) -> OracleHandle<'a> {
        OracleHandle {
            oracle: self.oracle,
            phase,
        }
    }

    pub fn classify(&self, x: &DVector<f64>) -> Result<usize> {
        self.oracle.classify(x, self.phase)
    }

    pub fn input_dim(&self) -> usize {
        self.oracle.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.oracle.num_classes()
    }

    pub fn domain(&self) -> (&DVector<f64>, &DVector<f64>) {
        self.oracle.domain()
    }

    /// Width of the widest domain coordinate.
    pub fn domain_width(&self) -> f64 {
        let (lo, hi) = self.domain();
        (hi - lo).max()
    }

    pub fn in_domain(&self, x: &DVector<f64>) -> bool {
        let (lo, hi) = self.domain();
        x.iter()
            .zip(lo.iter().zip(hi.iter()))
            .all(|(v, (l, h))| v >= l && v <= h)
    }

    /// Uniform sample from the domain (no oracle query).
    pub fn sample_point<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let (lo, hi) = self.domain();
        DVector::from_fn(lo.len(), |i, _| rng.gen_range(lo[i]..hi[i]))
    }

    pub fn query_count(&self) -> u64 {
        self.oracle.query_count()
    }
}

/// Two in-domain points with distinct labels.
///
/// Retries until found; a classifier that never disagrees with itself within
/// `max_attempts` samples is reported as degenerate.
pub fn sample_labeled_pair<R: Rng>(
    oracle: &OracleHandle,
    rng: &mut R,
    max_attempts: usize,
) -> Result<((DVector<f64>, usize), (DVector<f64>, usize))> {
    let mut x0 = oracle.sample_point(rng);
    let mut l0 = oracle.classify(&x0)?;
    for attempt in 1..=max_attempts {
        let x1 = oracle.sample_point(rng);
        let l1 = oracle.classify(&x1)?;
        if l1 != l0 {
            return Ok(((x0, l0), (x1, l1)));
        }
        // guard against an unlucky anchor in a sliver of its class
        if attempt % 128 == 0 {
            x0 = x1;
            l0 = l1;
        }
    }
    Err(Error::DegenerateClassifier {
        attempts: max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MlpNetwork;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn constant_logits(values: &[f64]) -> Network {
        let d = values.len();
        MlpNetwork::new(
            vec![d, d],
            vec![DMatrix::zeros(d, d)],
            vec![DVector::from_vec(values.to_vec())],
        )
        .unwrap()
    }

    #[test]
    fn classify_argmax() {
        let oracle = HardLabelOracle::new(constant_logits(&[3.0, -1.0]));
        let x = DVector::zeros(2);
        assert_eq!(oracle.classify(&x, Phase::DualSearch).unwrap(), 0);
    }

    #[test]
    fn classify_tie_smallest_index() {
        let oracle = HardLabelOracle::new(constant_logits(&[2.0, 2.0]));
        let x = DVector::zeros(2);
        assert_eq!(oracle.classify(&x, Phase::DualSearch).unwrap(), 0);
        let oracle = HardLabelOracle::new(constant_logits(&[1.0, 7.0, 7.0]));
        assert_eq!(
            oracle.classify(&DVector::zeros(3), Phase::DualSearch).unwrap(),
            1
        );
    }

    #[test]
    fn classify_matches_whitebox_forward() {
        let net = MlpNetwork::seeded_random(&[4, 4, 4], 33, 1.0, 0.7, 5.0).unwrap();
        let oracle = HardLabelOracle::new(net.clone());
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..200 {
            let x = DVector::from_fn(4, |_, _| rng.gen_range(-5.0..5.0));
            let label = oracle.classify(&x, Phase::DualSearch).unwrap();
            assert_eq!(label, argmax_label(&net.forward(&x).unwrap()));
        }
    }

    #[test]
    fn classify_rejects_bad_shape() {
        let oracle = HardLabelOracle::new(constant_logits(&[0.0, 1.0]));
        assert!(oracle.classify(&DVector::zeros(3), Phase::DualSearch).is_err());
    }

    #[test]
    fn query_counting() {
        let oracle = HardLabelOracle::new(constant_logits(&[0.0, 1.0]));
        assert_eq!(oracle.query_count(), 0);
        let x = DVector::zeros(2);
        for _ in 0..3 {
            oracle.classify(&x, Phase::SignVoting).unwrap();
        }
        assert_eq!(oracle.query_count(), 3);
        assert_eq!(oracle.phase_count(Phase::SignVoting), 3);
        assert_eq!(oracle.phase_count(Phase::DualSearch), 0);
        assert_eq!(oracle.ledger().total(), oracle.query_count());
    }

    #[test]
    fn determinism_on_cached_inputs() {
        let net = MlpNetwork::seeded_random(&[4, 5, 3], 17, 1.0, 0.7, 5.0).unwrap();
        let oracle = HardLabelOracle::new(net);
        let handle = OracleHandle::new(&oracle, Phase::DualSearch);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let points: Vec<DVector<f64>> =
            (0..1000).map(|_| handle.sample_point(&mut rng)).collect();
        let first: Vec<usize> = points.iter().map(|x| handle.classify(x).unwrap()).collect();
        let second: Vec<usize> = points.iter().map(|x| handle.classify(x).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn labeled_pair_on_balanced_classifier() {
        // linear split of the domain in half
        let net = MlpNetwork::new(
            vec![2, 2],
            vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])],
            vec![DVector::zeros(2)],
        )
        .unwrap();
        let oracle = HardLabelOracle::new(net);
        let handle = OracleHandle::new(&oracle, Phase::DualSearch);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ((x0, l0), (x1, l1)) = sample_labeled_pair(&handle, &mut rng, 100_000).unwrap();
        assert_ne!(l0, l1);
        assert_eq!(handle.classify(&x0).unwrap(), l0);
        assert_eq!(handle.classify(&x1).unwrap(), l1);
    }

    #[test]
    fn labeled_pair_degenerate_classifier() {
        let oracle = HardLabelOracle::new(constant_logits(&[1.0, 0.0]));
        let handle = OracleHandle::new(&oracle, Phase::DualSearch);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        assert!(matches!(
            sample_labeled_pair(&handle, &mut rng, 500),
            Err(Error::DegenerateClassifier { .. })
        ));
    }

    #[test]
    fn labeled_pair_multiclass() {
        let net = MlpNetwork::seeded_random(&[4, 6, 4], 5, 1.0, 0.7, 5.0).unwrap();
        let oracle = HardLabelOracle::new(net);
        let handle = OracleHandle::new(&oracle, Phase::DualSearch);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let ((x0, l0), (x1, l1)) = sample_labeled_pair(&handle, &mut rng, 100_000).unwrap();
        assert_ne!(l0, l1);
        assert_eq!(handle.classify(&x0).unwrap(), l0);
        assert_eq!(handle.classify(&x1).unwrap(), l1);
    }

    #[test]
    fn concurrent_classify_counts_exactly() {
        let net = MlpNetwork::seeded_random(&[4, 5, 3], 8, 1.0, 0.7, 5.0).unwrap();
        let oracle = HardLabelOracle::new(net);
        std::thread::scope(|s| {
            for t in 0..4 {
                let oracle = &oracle;
                s.spawn(move || {
                    let x = DVector::from_element(4, 0.1 * t as f64);
                    for _ in 0..250 {
                        oracle.classify(&x, Phase::DualSearch).unwrap();
                    }
                });
            }
        });
        assert_eq!(oracle.query_count(), 1000);
        assert_eq!(oracle.ledger().total(), 1000);
    }

    #[test]
    fn phase_labels_round_trip() {
        for p in Phase::ALL {
            assert_eq!(Phase::from_name(p.name()).unwrap(), p);
        }
        assert!(Phase::from_name("nonsense").is_err());
    }
}
