//! Signature recovery: each neuron's weight row up to a scalar, and its bias
//! on the same scale.
//!
//! Dual spaces are mapped through the recovered prefix into the target
//! layer's input space. Two dual points of the same neuron leave the union
//! of their mapped spaces rank-deficient relative to the jointly active
//! coordinates; different neurons fill the rank. Pairwise verdicts build a
//! consistency graph, maximal cliques (triple-verified) form per-neuron
//! clusters, and unifying a cluster's spaces exposes the weight row as the
//! one-dimensional orthogonal complement.
//!
//! Beyond the mapped bases, each pair contributes the difference of its
//! mapped anchors as one more vector known to lie inside the critical
//! hyperplane. At production widths (hundreds of neurons) this is
//! redundant; at desk widths it keeps pairs decidable whose active-mask
//! overlap would otherwise be too small for the rank test to say anything.

use nalgebra::DMatrix;

use crate::config::AttackConfig;
use crate::dual::{compute_dual_space, DualPoint};
use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, numeric_rank, svd_full_v};
use crate::state::ExtractionState;
use crate::{Matrix, Vector};

/// A dual space pushed into the target layer's input coordinates.
#[derive(Debug, Clone)]
pub struct MappedDualSpace {
    /// Unit basis vectors; zero at coordinates dead at this dual point.
    pub basis: Vec<Vector>,
    /// Active coordinates of the recovered hidden state at the anchor.
    pub mask: Vec<bool>,
    /// Recovered hidden state at the dual point.
    pub anchor: Vector,
}

impl MappedDualSpace {
    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&a| a).count()
    }

    /// Upper bound on the rank this space can contribute.
    fn capacity(&self) -> usize {
        self.basis.len()
    }
}

/// Recovered weight row (unit norm, canonical sign) and bias on the same
/// scale, with the unification residuals kept as confidence artifacts.
#[derive(Debug, Clone)]
pub struct NeuronSignature {
    pub layer: usize,
    pub weights: Vector,
    pub bias: f64,
    /// Coordinates never active in the supporting cluster (weights reported
    /// as zero there).
    pub missing: Vec<usize>,
    /// Smallest singular value of the unified system.
    pub residual: f64,
    /// Spread of the per-anchor bias estimates.
    pub bias_spread: f64,
}

impl NeuronSignature {
    pub fn fully_covered(&self) -> bool {
        self.missing.is_empty()
    }
}

/// Outcome of unifying one cluster.
#[derive(Debug)]
pub enum Unification {
    Recovered(NeuronSignature),
    /// Union rank too low; more dual points needed (single points always
    /// land here: one dual space cannot determine the hyperplane).
    Insufficient { rank: usize, needed: usize },
    /// The union filled the active space; the cluster does not share a
    /// neuron.
    Inconsistent,
}

/// Maps the dual space of `dp` through the recovered prefix, recording the
/// active-coordinate mask at the anchor.
pub fn map_dual_space(
    state: &ExtractionState,
    dp: &DualPoint,
    cfg: &AttackConfig,
) -> Result<MappedDualSpace> {
    let ds = compute_dual_space(dp, cfg.theta_bend)?;
    let post = state.post_activation_map(&dp.x)?;
    let mask = state.active_mask(&dp.x)?;
    let anchor = state.hidden(&dp.x)?;
    let mut basis = Vec::with_capacity(ds.basis.len());
    for v in &ds.basis {
        let mapped = &post * v;
        let n = mapped.norm();
        if n > 1e-9 {
            basis.push(mapped / n);
        }
    }
    Ok(MappedDualSpace {
        basis,
        mask,
        anchor,
    })
}

fn union_mask(spaces: &[&MappedDualSpace]) -> Vec<bool> {
    let dim = spaces[0].mask.len();
    let mut mask = vec![false; dim];
    for s in spaces {
        for (m, &a) in mask.iter_mut().zip(&s.mask) {
            *m = *m || a;
        }
    }
    mask
}

/// Stacks the mapped bases (plus anchor differences) restricted to the
/// union-active columns. Returns the matrix and the union column count.
fn stacked_system(spaces: &[&MappedDualSpace]) -> (Matrix, usize, usize) {
    let mask = union_mask(spaces);
    let cols: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| a.then_some(i))
        .collect();
    let mut rows: Vec<Vector> = Vec::new();
    let restrict = |v: &Vector| Vector::from_fn(cols.len(), |i, _| v[cols[i]]);
    for s in spaces {
        for b in &s.basis {
            rows.push(restrict(b));
        }
    }
    let mut capacity: usize = spaces.iter().map(|s| s.capacity()).sum();
    let anchor_scale = spaces
        .iter()
        .map(|s| s.anchor.norm())
        .fold(1.0f64, f64::max);
    for s in &spaces[1..] {
        let diff = restrict(&(&s.anchor - &spaces[0].anchor));
        let n = diff.norm();
        if n > 1e-9 * anchor_scale {
            rows.push(diff / n);
            capacity += 1;
        }
    }
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for (i, r) in rows.iter().enumerate() {
        m.set_row(i, &r.transpose());
    }
    (m, cols.len(), capacity)
}

/// Rank-deficiency test: do all given dual points lie on one neuron's
/// critical hyperplane? Pairs whose joint system cannot reach full rank
/// even for independent neurons are reported inconsistent (undecidable).
pub fn consistent_multi(spaces: &[&MappedDualSpace], cfg: &AttackConfig) -> bool {
    if spaces.len() < 2 {
        return true;
    }
    let (m, x_count, capacity) = stacked_system(spaces);
    if x_count == 0 || capacity < x_count {
        return false;
    }
    let (sigmas, _) = svd_full_v(&m);
    numeric_rank(&sigmas, cfg.sigma_tol) < x_count
}

/// Pairwise consistency verdict (Yes iff the union stays rank-deficient).
pub fn is_consistent(a: &MappedDualSpace, b: &MappedDualSpace, cfg: &AttackConfig) -> bool {
    consistent_multi(&[a, b], cfg)
}

/// Consistency graph over dual points with per-neuron maximal cliques.
#[derive(Debug, Default)]
pub struct ConsistencyGraph {
    pub adjacency: Vec<Vec<bool>>,
    /// Maximal cliques of size >= 2, triple-verified.
    pub clusters: Vec<Vec<usize>>,
    /// Nodes in no cluster (later-layer candidates).
    pub singletons: Vec<usize>,
}

/// Builds the consistency graph, grows maximal cliques greedily from
/// highest-degree nodes, and discards members of any triple that fails the
/// joint rank test.
pub fn cluster_dual_points(spaces: &[MappedDualSpace], cfg: &AttackConfig) -> ConsistencyGraph {
    let n = spaces.len();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c = is_consistent(&spaces[i], &spaces[j], cfg);
            adj[i][j] = c;
            adj[j][i] = c;
        }
    }
    let degree = |i: usize| adj[i].iter().filter(|&&e| e).count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (usize::MAX - degree(i), i));

    let mut assigned = vec![false; n];
    let mut clusters = Vec::new();
    for &seed in &order {
        if assigned[seed] || degree(seed) == 0 {
            continue;
        }
        let mut clique = vec![seed];
        let mut candidates: Vec<usize> = (0..n)
            .filter(|&j| !assigned[j] && adj[seed][j])
            .collect();
        candidates.sort_by_key(|&j| (usize::MAX - degree(j), j));
        for c in candidates {
            if clique.iter().all(|&m| adj[m][c]) {
                clique.push(c);
            }
        }
        if clique.len() < 2 {
            continue;
        }
        let clique = triple_filter(clique, spaces, cfg);
        if clique.len() >= 2 {
            for &m in &clique {
                assigned[m] = true;
            }
            clusters.push(clique);
        }
    }
    let singletons = (0..n).filter(|&i| !assigned[i]).collect();
    ConsistencyGraph {
        adjacency: adj,
        clusters,
        singletons,
    }
}

/// Drops every member involved in a failing triple. Spurious pairwise edges
/// are independent, so a false member keeps failing triples with genuine
/// ones.
fn triple_filter(clique: Vec<usize>, spaces: &[MappedDualSpace], cfg: &AttackConfig) -> Vec<usize> {
    let mut members = clique;
    loop {
        if members.len() < 3 {
            return members;
        }
        let mut bad: Vec<usize> = Vec::new();
        'outer: for i in 0..members.len() {
            for j in i + 1..members.len() {
                for k in j + 1..members.len() {
                    let triple = [
                        &spaces[members[i]],
                        &spaces[members[j]],
                        &spaces[members[k]],
                    ];
                    if !consistent_multi(&triple, cfg) {
                        bad = vec![members[i], members[j], members[k]];
                        break 'outer;
                    }
                }
            }
        }
        if bad.is_empty() {
            return members;
        }
        members.retain(|m| !bad.contains(m));
    }
}

/// Unifies a cluster's mapped spaces into one signature. Requires pairwise
/// consistency (asserted via the joint test).
pub fn recover_from_cluster(
    cluster: &[usize],
    spaces: &[MappedDualSpace],
    layer: usize,
    cfg: &AttackConfig,
) -> Result<Unification> {
    if cluster.is_empty() {
        return Err(Error::Precondition("empty cluster".into()));
    }
    let members: Vec<&MappedDualSpace> = cluster.iter().map(|&i| &spaces[i]).collect();
    let dim = members[0].mask.len();
    let mask = union_mask(&members);
    let covered: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| a.then_some(i))
        .collect();
    if covered.is_empty() {
        return Ok(Unification::Insufficient { rank: 0, needed: 1 });
    }
    let (m, x_count, _) = stacked_system(&members);
    let (sigmas, v) = svd_full_v(&m);
    let rank = numeric_rank(&sigmas, cfg.sigma_tol);
    if rank == x_count {
        return Ok(Unification::Inconsistent);
    }
    if rank + 1 < x_count {
        return Ok(Unification::Insufficient {
            rank,
            needed: x_count - 1,
        });
    }
    let w_cov = v.row(x_count - 1).transpose();
    let mut weights = Vector::zeros(dim);
    for (i, &c) in covered.iter().enumerate() {
        weights[c] = w_cov[i];
    }
    weights = canonical_sign(weights, 1e-12);

    let (bias, bias_spread) = recover_bias(&weights, &members);
    let missing: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| (!a).then_some(i))
        .collect();
    Ok(Unification::Recovered(NeuronSignature {
        layer,
        weights,
        bias,
        missing,
        residual: sigmas.get(x_count - 1).copied().unwrap_or(0.0),
        bias_spread,
    }))
}

/// Bias from the cluster anchors: the critical hyperplane `w.h + b = 0`
/// passes through every mapped anchor. Returns the mean estimate and the
/// spread of the individual ones.
pub fn recover_bias(weights: &Vector, members: &[&MappedDualSpace]) -> (f64, f64) {
    let estimates: Vec<f64> = members.iter().map(|s| -weights.dot(&s.anchor)).collect();
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let spread = estimates
        .iter()
        .map(|e| (e - mean).abs())
        .fold(0.0f64, f64::max);
    (mean, spread)
}

/// First-layer special case of the unification: two dual points, identity
/// prefix. Returns `None` for inconsistent pairs (the union spans the whole
/// input space).
pub fn recover_first_layer_weights(
    dp0: &DualPoint,
    dp1: &DualPoint,
    state: &ExtractionState,
    cfg: &AttackConfig,
) -> Result<Option<NeuronSignature>> {
    if state.recovered_layers() != 0 {
        return Err(Error::Precondition(
            "first-layer recovery expects an empty state".into(),
        ));
    }
    let spaces = [
        map_dual_space(state, dp0, cfg)?,
        map_dual_space(state, dp1, cfg)?,
    ];
    match recover_from_cluster(&[0, 1], &spaces, 1, cfg)? {
        Unification::Recovered(sig) => Ok(Some(sig)),
        Unification::Inconsistent => Ok(None),
        Unification::Insufficient { rank, needed } => {
            Err(Error::InsufficientSpan { rank, needed })
        }
    }
}

/// Drops dual points lying on a recovered neuron's critical hyperplane
/// (they belong to already-extracted layers).
pub fn filter_known_layer_duals(
    duals: Vec<DualPoint>,
    state: &ExtractionState,
    cfg: &AttackConfig,
    domain_width: f64,
) -> Result<Vec<DualPoint>> {
    let tol = cfg.attribution_tol * domain_width;
    let mut kept = Vec::with_capacity(duals.len());
    for dp in duals {
        match state.nearest_recovered_plane(&dp.x, false)? {
            Some((_, _, d)) if d < tol => {}
            _ => kept.push(dp),
        }
    }
    Ok(kept)
}

/// True when every input coordinate of the target layer is active in at
/// least one cluster member.
pub fn coverage_ok(members: &[&MappedDualSpace]) -> bool {
    if members.is_empty() {
        return false;
    }
    union_mask(members).iter().all(|&a| a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AttackConfig;
    use crate::diagnostics::{nearest_critical_neuron, true_prefix_state};
    use crate::dual::DualSearch;
    use crate::linalg::abs_cosine;
    use crate::model::MlpNetwork;
    use crate::oracle::{HardLabelOracle, OracleHandle, Phase};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn vec64(v: &[f64]) -> Vector {
        DVector::from_vec(v.to_vec())
    }

    fn space(basis: &[&[f64]], mask: &[bool], anchor: &[f64]) -> MappedDualSpace {
        MappedDualSpace {
            basis: basis.iter().map(|b| vec64(b)).collect(),
            mask: mask.to_vec(),
            anchor: vec64(anchor),
        }
    }

    /// Collects random dual points from a usable seeded net along with their
    /// white-box neuron attribution.
    fn labeled_duals(
        net: &MlpNetwork<f64>,
        cfg: &AttackConfig,
        count: usize,
        seed: u64,
    ) -> (Vec<DualPoint>, Vec<(usize, usize)>) {
        let oracle = HardLabelOracle::new(net.clone());
        let h = OracleHandle::new(&oracle, Phase::DualSearch);
        let search = DualSearch::new(h, cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut duals = Vec::new();
        let mut labels = Vec::new();
        while duals.len() < count {
            let Ok(dp) = search.find_random(&mut rng) else {
                continue;
            };
            let (layer, neuron, margin) = nearest_critical_neuron(net, &dp.x).unwrap();
            if margin < 1e-6 {
                duals.push(dp);
                labels.push((layer, neuron));
            }
        }
        (duals, labels)
    }

    #[test]
    fn map_is_identity_for_first_layer() {
        let cfg = AttackConfig::default();
        let state = ExtractionState::new(vec![4, 3, 2]);
        let dp = synthetic_dual(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.5; 4]);
        let mapped = map_dual_space(&state, &dp, &cfg).unwrap();
        assert_eq!(mapped.basis.len(), 2);
        assert!(mapped.mask.iter().all(|&a| a));
        for v in &mapped.basis {
            assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
        }
        assert_eq!(mapped.anchor, vec64(&[0.5; 4]));
    }

    fn synthetic_dual(n_left: &[f64], n_right: &[f64], x: &[f64]) -> DualPoint {
        use crate::dual::PatchView;
        use crate::geometry::BoundaryPoint;
        let bp = |dir: &[f64]| BoundaryPoint {
            x: vec64(x),
            class_pair: (0, 1),
            direction: vec64(dir),
            epsilon: 1e-9,
        };
        DualPoint {
            x: vec64(x),
            class_pair: (0, 1),
            left: PatchView {
                point: bp(n_left),
                normal: vec64(n_left),
            },
            right: PatchView {
                point: bp(n_right),
                normal: vec64(n_right),
            },
        }
    }

    #[test]
    fn map_through_dead_prefix_is_empty() {
        use crate::state::{NeuronStatus, RecoveredLayer};
        let cfg = AttackConfig::default();
        let mut state = ExtractionState::new(vec![4, 3, 2]);
        state
            .push_layer(RecoveredLayer {
                layer: 1,
                weights: nalgebra::DMatrix::identity(3, 4),
                biases: vec64(&[-100.0, -100.0, -100.0]),
                neurons: vec![NeuronStatus::Full; 3],
            })
            .unwrap();
        let dp = synthetic_dual(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.1; 4]);
        let mapped = map_dual_space(&state, &dp, &cfg).unwrap();
        assert!(mapped.basis.is_empty());
        assert!(mapped.mask.iter().all(|&a| !a));
    }

    #[test]
    fn mapped_basis_orthogonal_to_true_deeper_row() {
        let cfg = AttackConfig::default();
        let (net, _) = MlpNetwork::seeded_random_usable(&[8, 6, 6, 3], 70, 1.0, 0.75, 5.0, 0.05)
            .unwrap();
        let state = true_prefix_state(&net, 1);
        let (duals, labels) = labeled_duals(&net, &cfg, 30, 11);
        let mut checked = 0;
        for (dp, (layer, neuron)) in duals.iter().zip(&labels) {
            if *layer != 2 {
                continue;
            }
            let mapped = map_dual_space(&state, dp, &cfg).unwrap();
            let row = net.weight(2).row(*neuron).transpose();
            for v in &mapped.basis {
                // restrict the true row to the active coordinates
                let masked = Vector::from_fn(row.len(), |i, _| {
                    if mapped.mask[i] {
                        row[i]
                    } else {
                        0.0
                    }
                });
                let cos = v.dot(&masked).abs() / masked.norm();
                assert!(cos < 1e-6, "mapped basis leaks out of the critical plane");
            }
            checked += 1;
        }
        assert!(checked >= 3, "only {checked} layer-2 duals in the sample");
    }

    #[test]
    fn consistency_same_vs_different_first_layer() {
        let cfg = AttackConfig::default();
        let (net, _) = MlpNetwork::seeded_random_usable(&[6, 4, 3], 72, 1.0, 0.75, 5.0, 0.05)
            .unwrap();
        let state = ExtractionState::new(net.architecture().to_vec());
        let (duals, labels) = labeled_duals(&net, &cfg, 24, 13);
        let mapped: Vec<MappedDualSpace> = duals
            .iter()
            .map(|d| map_dual_space(&state, d, &cfg).unwrap())
            .collect();
        let mut same_yes = 0;
        let mut same = 0;
        let mut diff_no = 0;
        let mut diff = 0;
        for i in 0..mapped.len() {
            for j in i + 1..mapped.len() {
                if labels[i].0 != 1 || labels[j].0 != 1 {
                    continue;
                }
                let verdict = is_consistent(&mapped[i], &mapped[j], &cfg);
                if labels[i] == labels[j] {
                    same += 1;
                    same_yes += verdict as usize;
                } else {
                    diff += 1;
                    diff_no += (!verdict) as usize;
                }
            }
        }
        assert!(same >= 3, "need same-neuron pairs in the sample");
        assert!(diff >= 3);
        assert_eq!(same_yes, same, "same-neuron pair judged inconsistent");
        assert_eq!(diff_no, diff, "different-neuron pair judged consistent");
    }

    #[test]
    fn identical_points_are_consistent() {
        let cfg = AttackConfig::default();
        let s = space(
            &[&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]],
            &[true; 4],
            &[0.3, 0.4, 0.5, 0.6],
        );
        assert!(is_consistent(&s, &s.clone(), &cfg));
    }

    #[test]
    fn clustering_matches_whitebox_labels() {
        let cfg = AttackConfig::default();
        let (net, _) = MlpNetwork::seeded_random_usable(&[6, 4, 3], 74, 1.0, 0.75, 5.0, 0.05)
            .unwrap();
        let state = ExtractionState::new(net.architecture().to_vec());
        let (duals, labels) = labeled_duals(&net, &cfg, 30, 17);
        let mapped: Vec<MappedDualSpace> = duals
            .iter()
            .map(|d| map_dual_space(&state, d, &cfg).unwrap())
            .collect();
        // keep only first-layer points, as the pipeline would after filtering
        let keep: Vec<usize> = (0..mapped.len()).filter(|&i| labels[i].0 == 1).collect();
        let kept_spaces: Vec<MappedDualSpace> =
            keep.iter().map(|&i| mapped[i].clone()).collect();
        let graph = cluster_dual_points(&kept_spaces, &cfg);
        for cluster in &graph.clusters {
            let neuron = labels[keep[cluster[0]]];
            for &m in cluster {
                assert_eq!(labels[keep[m]], neuron, "mixed cluster");
            }
        }
        assert!(!graph.clusters.is_empty());
    }

    #[test]
    fn clustering_all_distinct_yields_singletons() {
        let cfg = AttackConfig::default();
        // three synthetic spaces in general position: pairwise unions fill
        // the active space
        let spaces = vec![
            space(
                &[&[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]],
                &[true; 4],
                &[0.1, 0.2, 0.3, 0.4],
            ),
            space(
                &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0]],
                &[true; 4],
                &[0.9, -0.3, 0.2, 0.8],
            ),
            space(
                &[
                    &[0.5, 0.5, 0.5, 0.5],
                    &[0.5, -0.5, 0.5, -0.5],
                ],
                &[true; 4],
                &[-0.4, 0.6, -0.2, 0.1],
            ),
        ];
        let graph = cluster_dual_points(&spaces, &cfg);
        assert!(graph.clusters.is_empty());
        assert_eq!(graph.singletons.len(), 3);
    }

    #[test]
    fn clustering_empty_input() {
        let cfg = AttackConfig::default();
        let graph = cluster_dual_points(&[], &cfg);
        assert!(graph.clusters.is_empty());
        assert!(graph.singletons.is_empty());
    }

    #[test]
    fn first_layer_recovery_hand_built() {
        let cfg = AttackConfig::default();
        let state = ExtractionState::new(vec![3, 2, 2]);
        // both duals on the plane x0 = 0.7, dual spaces e2 and (0,1,1)
        let dp0 = synthetic_dual(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.7, 0.3, -0.2]);
        let dp1 = synthetic_dual(
            &[1.0, 0.0, 0.0],
            &[0.0, std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2],
            &[0.7, -0.1, 0.4],
        );
        let sig = recover_first_layer_weights(&dp0, &dp1, &state, &cfg)
            .unwrap()
            .expect("consistent pair");
        assert!((sig.weights[0].abs() - 1.0).abs() < 1e-9, "{:?}", sig.weights);
        assert!(sig.weights[1].abs() < 1e-9 && sig.weights[2].abs() < 1e-9);
        // w = +e0 (canonical sign), so b = -0.7
        assert!((sig.bias + 0.7).abs() < 1e-9);
        assert!(sig.fully_covered());
    }

    #[test]
    fn first_layer_recovery_rejects_inconsistent() {
        let cfg = AttackConfig::default();
        let state = ExtractionState::new(vec![3, 2, 2]);
        let dp0 = synthetic_dual(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.7, 0.3, -0.2]);
        // unrelated second dual: union spans R^3
        let dp1 = synthetic_dual(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[-0.5, 0.8, 0.1]);
        assert!(recover_first_layer_weights(&dp0, &dp1, &state, &cfg)
            .unwrap()
            .is_none());
    }

    #[test]
    fn first_layer_recovery_matches_true_rows() {
        let cfg = AttackConfig::default();
        let (net, _) = MlpNetwork::seeded_random_usable(&[6, 4, 3], 76, 1.0, 0.75, 5.0, 0.05)
            .unwrap();
        let state = ExtractionState::new(net.architecture().to_vec());
        let (duals, labels) = labeled_duals(&net, &cfg, 40, 19);
        let mut by_neuron: std::collections::HashMap<usize, Vec<usize>> = Default::default();
        for (i, (layer, neuron)) in labels.iter().enumerate() {
            if *layer == 1 {
                by_neuron.entry(*neuron).or_default().push(i);
            }
        }
        let mut checked = 0;
        for (neuron, idxs) in by_neuron {
            if idxs.len() < 2 {
                continue;
            }
            let sig = recover_first_layer_weights(&duals[idxs[0]], &duals[idxs[1]], &state, &cfg)
                .unwrap()
                .expect("same-neuron pair");
            let truth = net.weight(1).row(neuron).transpose();
            let cos = abs_cosine(&sig.weights, &truth);
            assert!(cos >= 1.0 - 1e-9, "cos = {cos}, neuron {neuron}");
            // bias on the same scale as the unit-norm weights
            let scale = truth.norm();
            assert!(
                (sig.bias - net.bias(1)[neuron] / scale * sig.weights.dot(&(&truth / scale)).signum()).abs()
                    < 1e-6,
                "bias {} vs {}",
                sig.bias,
                net.bias(1)[neuron] / scale
            );
            checked += 1;
        }
        assert!(checked >= 2, "too few neurons with two duals ({checked})");
    }

    #[test]
    fn single_point_is_insufficient() {
        let cfg = AttackConfig::default();
        let s = space(
            &[&[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]],
            &[true; 4],
            &[0.3, 0.4, 0.5, 0.6],
        );
        match recover_from_cluster(&[0], &[s], 1, &cfg).unwrap() {
            Unification::Insufficient { .. } => {}
            other => panic!("expected insufficient, got {other:?}"),
        }
    }

    #[test]
    fn bias_from_single_and_coplanar_anchors() {
        let w = vec64(&[1.0, 0.0]);
        let a = space(&[], &[true, true], &[0.7, 0.5]);
        let (b, spread) = recover_bias(&w, &[&a]);
        assert!((b + 0.7).abs() < 1e-15 && spread == 0.0);
        let c1 = space(&[], &[true, true], &[2.0, -0.3]);
        let c2 = space(&[], &[true, true], &[2.0, 0.9]);
        let (b, spread) = recover_bias(&w, &[&c1, &c2]);
        assert!((b + 2.0).abs() < 1e-15 && spread < 1e-15);
    }

    #[test]
    fn filter_drops_recovered_layer_duals() {
        let cfg = AttackConfig::default();
        let (net, _) = MlpNetwork::seeded_random_usable(&[6, 4, 4, 3], 78, 1.0, 0.75, 5.0, 0.05)
            .unwrap();
        let (duals, labels) = labeled_duals(&net, &cfg, 30, 23);

        // empty state: nothing is dropped
        let empty = ExtractionState::new(net.architecture().to_vec());
        let kept = filter_known_layer_duals(duals.clone(), &empty, &cfg, 10.0).unwrap();
        assert_eq!(kept.len(), duals.len());

        // with the true first layer recovered, exactly its duals are dropped
        let state = true_prefix_state(&net, 1);
        let kept = filter_known_layer_duals(duals.clone(), &state, &cfg, 10.0).unwrap();
        let expect_kept = labels.iter().filter(|(l, _)| *l != 1).count();
        assert_eq!(kept.len(), expect_kept);
    }

    #[test]
    fn coverage_flags() {
        let full = space(&[], &[true, true], &[0.0, 0.0]);
        let hole = space(&[], &[true, false], &[0.0, 0.0]);
        assert!(coverage_ok(&[&full]));
        assert!(coverage_ok(&[&hole, &full]));
        assert!(!coverage_ok(&[&hole, &hole.clone()]));
        assert!(!coverage_ok(&[]));
    }
}
