//! Dual points: inputs on the decision boundary *and* on some neuron's
//! critical hyperplane, together with the two adjacent boundary-patch
//! normals and the dual space they span.
//!
//! The random search follows the boundary from a bisected transition point
//! along a tangent direction until the patch bends; the bend is the dual
//! point. A targeted variant rejection-samples random dual points until one
//! matches a chosen recovered neuron.

use nalgebra::DVector;
use rand::Rng;

use crate::config::AttackConfig;
use crate::error::{Error, Result};
use crate::geometry::{
    boundary_bisect_labeled, estimate_normal, project_to_boundary, unit, walk_to_bend,
    BoundaryNormal, BoundaryPoint, NormalParams, WalkEnd, WalkParams,
};
use crate::linalg::orthogonal_complement;
use crate::oracle::{sample_labeled_pair, OracleHandle};
use crate::state::ExtractionState;
use crate::Vector;

/// One side of a dual point: a boundary anchor on the patch and the patch's
/// unit normal.
#[derive(Debug, Clone)]
pub struct PatchView {
    pub point: BoundaryPoint,
    pub normal: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct DualPoint {
    pub x: Vector,
    pub left: PatchView,
    pub right: PatchView,
    /// Unordered labels of the two classes meeting at the boundary.
    pub class_pair: (usize, usize),
}

impl DualPoint {
    /// |cos| between the two patch normals; 1 means no bend at all.
    pub fn normal_cos(&self) -> f64 {
        self.left.normal.dot(&self.right.normal).abs()
    }
}

/// Orthonormal basis of the intersection of the two boundary patches at a
/// dual point: `d0 - 2` vectors orthogonal to both patch normals.
#[derive(Debug, Clone)]
pub struct DualSpace {
    pub basis: Vec<Vector>,
    pub anchor: Vector,
}

/// Boundary-search context: oracle handle plus tuning derived from config.
pub struct DualSearch<'a> {
    pub oracle: OracleHandle<'a>,
    pub cfg: &'a AttackConfig,
}

impl<'a> DualSearch<'a> {
    pub fn new(oracle: OracleHandle<'a>, cfg: &'a AttackConfig) -> Self {
        Self { oracle, cfg }
    }

    fn width(&self) -> f64 {
        self.oracle.domain_width()
    }

    pub fn normal_params(&self) -> NormalParams {
        NormalParams {
            step: self.cfg.normal_step_frac * self.width(),
            inner_rel: self.cfg.normal_inner_rel,
            bracket_steps: self.cfg.normal_bracket_steps,
        }
    }

    fn walk_params(&self, eps: f64) -> WalkParams {
        let w = self.width();
        WalkParams {
            min_step: self.cfg.walk_min_step_frac * w,
            bend_tol: self.cfg.bend_tol,
            patch_margin: self.cfg.patch_margin_frac * w,
            max_walk: 2.0 * w * (self.oracle.input_dim() as f64).sqrt(),
            eps,
        }
    }

    /// Normal estimation with shrinking probe steps when the patch turns out
    /// to be smaller than the default step.
    pub fn normal_with_retry(&self, p: &BoundaryPoint) -> Result<BoundaryNormal> {
        let mut params = self.normal_params();
        for _ in 0..4 {
            match estimate_normal(&self.oracle, p, &params) {
                Err(Error::PatchTooSmall { .. }) => params.step *= 0.25,
                other => return other,
            }
        }
        estimate_normal(&self.oracle, p, &params)
    }

    /// Checks that an estimated patch normal is consistent with a second
    /// point known to lie on the same patch.
    fn tangency_ok(&self, normal: &DVector<f64>, from: &Vector, to: &Vector, eps: f64) -> bool {
        let chord = to - from;
        let len = chord.norm();
        if len < 1e-12 {
            return true;
        }
        let off = normal.dot(&chord).abs();
        off <= (10.0 * self.cfg.bend_tol * len).max(8.0 * eps)
    }

    /// Random dual point (retries internally up to the configured budget).
    pub fn find_random<R: Rng>(&self, rng: &mut R) -> Result<DualPoint> {
        let mut last = None;
        for _ in 0..self.cfg.dual_retries {
            match self.attempt(rng) {
                Ok(dp) => return Ok(dp),
                Err(e @ Error::DegenerateClassifier { .. }) => return Err(e),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or(Error::NoDualFound {
            attempts: self.cfg.dual_retries,
        }))
    }

    fn attempt<R: Rng>(&self, rng: &mut R) -> Result<DualPoint> {
        let oracle = &self.oracle;
        let ((x0, l0), (x1, l1)) = sample_labeled_pair(oracle, rng, self.cfg.pair_attempts)?;
        let eps = self.cfg.eps_for((&x1 - &x0).norm());
        let p2 = boundary_bisect_labeled(oracle, x0.clone(), l0, x1.clone(), l1, eps)?;
        let m2 = self.normal_with_retry(&p2)?;

        // pick a tangent direction from a second boundary point nearby
        let mut excursion = self.cfg.excursion_frac * self.width();
        let mut dx = None;
        for _ in 0..5 {
            let dir = DVector::from_fn(oracle.input_dim(), |_, _| rng.gen_range(-1.0..1.0));
            let x3 = &p2.x + unit(&dir) * excursion;
            let l3 = oracle.classify(&x3)?;
            let p4 = if l3 == l0 {
                boundary_bisect_labeled(oracle, x3, l3, x1.clone(), l1, eps)?
            } else if l3 == l1 {
                boundary_bisect_labeled(oracle, x0.clone(), l0, x3, l3, eps)?
            } else {
                excursion *= 0.5;
                continue;
            };
            if p4.pair_key() == p2.pair_key()
                && self.tangency_ok(&m2.m, &p2.x, &p4.x, eps)
                && (&p4.x - &p2.x).norm() > 1e3 * eps
            {
                dx = Some(&p4.x - &p2.x);
                break;
            }
            excursion *= 0.5;
        }
        let dx = dx.ok_or(Error::NoDualFound { attempts: 5 })?;

        // walk to the bend; try the opposite direction before giving up
        let wp = self.walk_params(eps);
        let end = match walk_to_bend(oracle, &p2, &m2.m, &dx, &wp) {
            Ok(end) => end,
            Err(Error::NoBend { .. }) => walk_to_bend(oracle, &p2, &m2.m, &(-&dx), &wp)?,
            Err(e) => return Err(e),
        };
        let WalkEnd::Bend {
            x_bend,
            distance,
            right,
        } = end
        else {
            // junction with another class boundary, not a neuron bend
            return Err(Error::NoDualFound { attempts: 1 });
        };
        self.refine(x_bend, distance, &p2, &m2, &right, eps)
    }

    /// Re-anchors both patches next to the bend, re-estimates their normals
    /// there and intersects the two patch planes to pin the dual point.
    fn refine(
        &self,
        x_bend: Vector,
        bend_distance: f64,
        p_left_far: &BoundaryPoint,
        m_left_far: &BoundaryNormal,
        right: &BoundaryPoint,
        eps: f64,
    ) -> Result<DualPoint> {
        let oracle = &self.oracle;
        let margin = self.cfg.patch_margin_frac * self.width();
        let expected = p_left_far.pair_key();

        // left anchor close to the bend (lever arms amplify normal errors)
        let back = unit(&(&p_left_far.x - &x_bend));
        let left_anchor_guess = &x_bend + &back * margin.min(0.5 * bend_distance.max(margin));
        let p_left = project_to_boundary(
            oracle,
            &left_anchor_guess,
            &m_left_far.m,
            eps,
            (margin * 8.0).max(64.0 * eps),
        )
        .unwrap_or_else(|_| p_left_far.clone());
        let m_left = self.normal_with_retry(&p_left)?;
        if !self.tangency_ok(&m_left.m, &p_left.x, &x_bend, eps) {
            return Err(Error::NoDualFound { attempts: 1 });
        }

        let m_right = self.normal_with_retry(right)?;
        if right.pair_key() != expected || p_left.pair_key() != expected {
            return Err(Error::NoDualFound { attempts: 1 });
        }
        if !self.tangency_ok(&m_right.m, &right.x, &x_bend, eps) {
            return Err(Error::NoDualFound { attempts: 1 });
        }

        let cos = m_left.m.dot(&m_right.m);
        if cos.abs() >= 1.0 - self.cfg.theta_bend {
            return Err(Error::DegenerateDual);
        }

        // intersect the two patch planes: solve the 2x2 Gram system for the
        // correction x + a*mL + b*mR landing on both planes
        let r_l = m_left.m.dot(&(&p_left.x - &x_bend));
        let r_r = m_right.m.dot(&(&right.x - &x_bend));
        let det = 1.0 - cos * cos;
        let a = (r_l - cos * r_r) / det;
        let b = (r_r - cos * r_l) / det;
        let correction = &m_left.m * a + &m_right.m * b;
        let x = if correction.norm() < 0.5 * margin {
            &x_bend + correction
        } else {
            x_bend
        };

        Ok(DualPoint {
            x,
            class_pair: expected,
            left: PatchView {
                point: p_left,
                normal: m_left.m,
            },
            right: PatchView {
                point: right.clone(),
                normal: m_right.m,
            },
        })
    }

    /// Dual point whose critical neuron is `(layer, neuron)`, verified via
    /// the recovered parameters. Draws random dual points and keeps the
    /// non-matching ones in `spill` for other consumers.
    pub fn find_for_neuron<R: Rng>(
        &self,
        state: &ExtractionState,
        layer: usize,
        neuron: usize,
        rng: &mut R,
        spill: &mut Vec<DualPoint>,
    ) -> Result<DualPoint> {
        if state.recovered_layers() + 1 != layer || state.pending.is_none() {
            return Err(Error::Precondition(format!(
                "layer {layer} is not the one under attack"
            )));
        }
        let tol = self.cfg.attribution_tol * self.width();
        let mut draws = 0;
        while draws < self.cfg.targeted_draw_budget {
            draws += 1;
            let Ok(dp) = self.find_random(rng) else {
                continue;
            };
            if state.is_critical_for(&dp.x, layer, neuron, tol)? {
                return Ok(dp);
            }
            spill.push(dp);
        }
        Err(Error::NeuronStarved {
            layer,
            neuron,
            attempts: draws,
        })
    }
}

/// Orthonormal basis of the orthogonal complement of the two patch normals.
pub fn compute_dual_space(dp: &DualPoint, theta_bend: f64) -> Result<DualSpace> {
    if dp.normal_cos() >= 1.0 - theta_bend {
        return Err(Error::DegenerateDual);
    }
    let basis = orthogonal_complement(
        &[dp.left.normal.clone(), dp.right.normal.clone()],
        dp.left.normal.len(),
        1e-10,
    );
    Ok(DualSpace {
        basis,
        anchor: dp.x.clone(),
    })
}
