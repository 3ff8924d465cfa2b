//! Black-box primitives over the decision boundary: bisection onto the
//! boundary, normal reconstruction from label queries, projection back onto
//! the boundary, and walking along a patch until its orientation bends.
//!
//! Everything here sees the target only through an [`OracleHandle`]. All
//! positions are input-space vectors; all precisions are input-space
//! distances.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::canonical_sign;
use crate::oracle::OracleHandle;

/// A point on the decision boundary, located by bisection to precision
/// `epsilon` along `direction`.
#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    pub x: DVector<f64>,
    /// Labels on the low/high side along `direction`.
    pub class_pair: (usize, usize),
    /// Unit vector transverse to the boundary (the bisection direction).
    pub direction: DVector<f64>,
    pub epsilon: f64,
}

impl BoundaryPoint {
    /// Unordered class pair, for comparisons across differently oriented
    /// boundary points.
    pub fn pair_key(&self) -> (usize, usize) {
        let (a, b) = self.class_pair;
        (a.min(b), a.max(b))
    }
}

/// Unit normal of the boundary patch through `anchor`, sign-canonicalized
/// (first nonzero coordinate positive).
#[derive(Debug, Clone)]
pub struct BoundaryNormal {
    pub m: DVector<f64>,
    pub anchor: BoundaryPoint,
}

pub fn unit(v: &DVector<f64>) -> DVector<f64> {
    v / v.norm()
}

/// Bisects the segment `[x0, x1]` onto the decision boundary.
///
/// Uses exactly `ceil(log2(|x1-x0|/eps))` halvings plus the two endpoint
/// classifications.
pub fn boundary_bisect(
    oracle: &OracleHandle,
    x0: &DVector<f64>,
    x1: &DVector<f64>,
    eps: f64,
) -> Result<BoundaryPoint> {
    let l0 = oracle.classify(x0)?;
    let l1 = oracle.classify(x1)?;
    if l0 == l1 {
        return Err(Error::Precondition(format!(
            "bisection endpoints share label {l0}"
        )));
    }
    boundary_bisect_labeled(oracle, x0.clone(), l0, x1.clone(), l1, eps)
}

/// Bisection with already-known endpoint labels (saves the two queries).
pub fn boundary_bisect_labeled(
    oracle: &OracleHandle,
    mut lo: DVector<f64>,
    l_lo: usize,
    mut hi: DVector<f64>,
    mut l_hi: usize,
    eps: f64,
) -> Result<BoundaryPoint> {
    if l_lo == l_hi {
        return Err(Error::Precondition(format!(
            "bisection endpoints share label {l_lo}"
        )));
    }
    let direction = unit(&(&hi - &lo));
    // fixed halving count keeps the query budget at ceil(log2(d/eps))
    let dist = (&hi - &lo).norm();
    let steps = if dist > eps {
        (dist / eps).log2().ceil().min(200.0) as usize
    } else {
        0
    };
    for _ in 0..steps {
        let mid = (&lo + &hi) * 0.5;
        let lm = oracle.classify(&mid)?;
        if lm == l_lo {
            lo = mid;
        } else {
            hi = mid;
            l_hi = lm;
        }
    }
    Ok(BoundaryPoint {
        x: (&lo + &hi) * 0.5,
        class_pair: (l_lo, l_hi),
        direction,
        epsilon: eps,
    })
}

/// Signed distance along `dir` (unit) from `x` to the nearest label change,
/// found by an alternating doubling bracket and bisection to `inner_eps`.
///
/// Returns `Ok(None)` when no label change lies within `max_offset`.
fn signed_offset_to_boundary(
    oracle: &OracleHandle,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    start: f64,
    max_offset: f64,
    inner_eps: f64,
) -> Result<Option<(f64, usize, usize)>> {
    let l0 = oracle.classify(x)?;
    let mut t = start.max(inner_eps);
    let mut prev = 0.0f64;
    let (mut flip_t, mut flip_label) = (None, 0);
    while t <= max_offset {
        for s in [1.0f64, -1.0] {
            let l = oracle.classify(&(x + dir * (s * t)))?;
            if l != l0 {
                flip_t = Some(s * t);
                flip_label = l;
                break;
            }
        }
        if flip_t.is_some() {
            break;
        }
        prev = t;
        t *= 2.0;
    }
    let Some(ft) = flip_t else {
        return Ok(None);
    };
    // bisect between the last same-label offset and the flip
    let (mut a, mut b) = (prev * ft.signum(), ft);
    let mut l_b = flip_label;
    while (b - a).abs() > inner_eps {
        let m = 0.5 * (a + b);
        let l = oracle.classify(&(x + dir * m))?;
        if l == l0 {
            a = m;
        } else {
            b = m;
            l_b = l;
        }
    }
    Ok(Some((0.5 * (a + b), l0, l_b)))
}

/// Step sizes and limits for [`estimate_normal`].
#[derive(Debug, Clone, Copy)]
pub struct NormalParams {
    /// Probe step along each basis direction.
    pub step: f64,
    /// Inner bisection precision relative to `step`.
    pub inner_rel: f64,
    /// Bracket limit in units of `step`.
    pub bracket_steps: f64,
}

/// Reconstructs the unit normal of the boundary patch through `p` from label
/// queries alone: step `step` along each basis direction and bisect back to
/// the boundary along the recorded transverse direction; the return offsets
/// are proportional to the normal's coordinates.
pub fn estimate_normal(
    oracle: &OracleHandle,
    p: &BoundaryPoint,
    params: &NormalParams,
) -> Result<BoundaryNormal> {
    let d0 = oracle.input_dim();
    let r = &p.direction;
    let inner_eps = params.step * params.inner_rel;
    let max_offset = params.bracket_steps * params.step;
    let base = signed_offset_to_boundary(oracle, &p.x, r, params.step / 8.0, max_offset, inner_eps)?
        .ok_or(Error::PatchTooSmall { step: params.step })?
        .0;
    let mut m = DVector::zeros(d0);
    for k in 0..d0 {
        let mut c = p.x.clone();
        c[k] += params.step;
        let beta = signed_offset_to_boundary(oracle, &c, r, params.step / 8.0, max_offset, inner_eps)?
            .ok_or(Error::PatchTooSmall { step: params.step })?
            .0;
        m[k] = -(beta - base);
    }
    let norm = m.norm();
    if norm == 0.0 {
        return Err(Error::PatchTooSmall { step: params.step });
    }
    Ok(BoundaryNormal {
        m: canonical_sign(m / norm, 1e-300),
        anchor: p.clone(),
    })
}

/// Projects `x` onto the decision boundary along `dir` with an exponentially
/// expanding bracket, then bisects to `eps`.
pub fn project_to_boundary(
    oracle: &OracleHandle,
    x: &DVector<f64>,
    dir: &DVector<f64>,
    eps: f64,
    max_bracket: f64,
) -> Result<BoundaryPoint> {
    let dir = unit(dir);
    let (offset, l_near, l_far) =
        signed_offset_to_boundary(oracle, x, &dir, eps.max(1e-13) * 8.0, max_bracket, eps)?
            .ok_or(Error::ProjectionFailed {
                bracket: max_bracket,
            })?;
    let class_pair = if offset >= 0.0 {
        (l_near, l_far)
    } else {
        (l_far, l_near)
    };
    Ok(BoundaryPoint {
        x: x + &dir * offset,
        class_pair,
        direction: dir,
        epsilon: eps,
    })
}

/// How a boundary walk ended.
#[derive(Debug)]
pub enum WalkEnd {
    /// The patch bent: the boundary continues with a new orientation and the
    /// same class pair. `right` is a boundary point just beyond the bend.
    Bend {
        x_bend: DVector<f64>,
        distance: f64,
        right: BoundaryPoint,
    },
    /// The walked boundary ran into a region of a third class (a junction
    /// with another decision boundary).
    ClassChange {
        x_bend: DVector<f64>,
        distance: f64,
        observed: BoundaryPoint,
    },
}

impl WalkEnd {
    pub fn x_bend(&self) -> &DVector<f64> {
        match self {
            WalkEnd::Bend { x_bend, .. } | WalkEnd::ClassChange { x_bend, .. } => x_bend,
        }
    }

    pub fn distance(&self) -> f64 {
        match self {
            WalkEnd::Bend { distance, .. } | WalkEnd::ClassChange { distance, .. } => *distance,
        }
    }
}

/// Walk tuning; distances are absolute.
#[derive(Debug, Clone, Copy)]
pub struct WalkParams {
    /// First step length.
    pub min_step: f64,
    /// Relative re-projection displacement that declares a bend.
    pub bend_tol: f64,
    /// Re-anchor offset past the bend for the second patch.
    pub patch_margin: f64,
    /// Hard cap on the walked distance.
    pub max_walk: f64,
    /// Bisection precision for re-projections.
    pub eps: f64,
}

/// Advances `x = p.x + alpha * dx` with geometrically growing `alpha`,
/// re-projecting onto the boundary along `m_left` at every step, until the
/// boundary deviates; the deviation onset is pinned down by bisection on
/// `alpha` plus linear extrapolation of the measured displacements.
///
/// `dx` is projected to be exactly tangent (`dx` ⊥ `m_left`) before walking.
pub fn walk_to_bend(
    oracle: &OracleHandle,
    p: &BoundaryPoint,
    m_left: &DVector<f64>,
    dx: &DVector<f64>,
    params: &WalkParams,
) -> Result<WalkEnd> {
    let tangent = dx - m_left * dx.dot(m_left);
    if tangent.norm() < 1e-12 * dx.norm() {
        return Err(Error::Precondition(
            "walk direction is parallel to the patch normal".into(),
        ));
    }
    let dx = unit(&tangent);
    let eps = params.eps;
    let noise_floor = 8.0 * eps;
    let expected = p.pair_key();

    // signed displacement of the boundary from p.x + alpha*dx along m_left
    let probe = |alpha: f64, bracket: f64| -> Result<Option<(f64, (usize, usize))>> {
        let x_a = &p.x + &dx * alpha;
        Ok(
            signed_offset_to_boundary(oracle, &x_a, m_left, eps * 8.0, bracket, eps)?
                .map(|(t, a, b)| (t, (a.min(b), a.max(b)))),
        )
    };
    let threshold = |alpha: f64| (params.bend_tol * alpha).max(noise_floor);
    let on_patch = |r: &Option<(f64, (usize, usize))>, alpha: f64| -> bool {
        matches!(r, Some((d, pair)) if d.abs() <= threshold(alpha) && *pair == expected)
    };

    // growth phase
    let mut last_ok = 0.0f64;
    let mut alpha = params.min_step;
    let first_bad;
    loop {
        if alpha > params.max_walk {
            return Err(Error::NoBend {
                walked: params.max_walk,
            });
        }
        let r = probe(alpha, 4.0 * threshold(alpha).max(noise_floor))?;
        if on_patch(&r, alpha) {
            last_ok = alpha;
            alpha *= 2.0;
        } else {
            first_bad = alpha;
            break;
        }
    }

    // bisection on alpha
    let (mut ok_a, mut bad_a) = (last_ok, first_bad);
    let mut iter = 0;
    while bad_a - ok_a > (32.0 * eps).max(1e-9 * bad_a) && iter < 80 {
        let mid = 0.5 * (ok_a + bad_a);
        let r = probe(mid, 4.0 * threshold(mid).max(noise_floor))?;
        if on_patch(&r, mid) {
            ok_a = mid;
        } else {
            bad_a = mid;
        }
        iter += 1;
    }

    // The bisection converges to the alpha where the displacement crosses
    // the detection threshold, which overshoots the true onset by
    // threshold/slope; extrapolate the measured displacements back to zero.
    let gap = bad_a - ok_a;
    let mut alpha_bend = 0.5 * (ok_a + bad_a);
    let wide = |d: f64| 8.0 * (d.abs() + noise_floor);
    if let Some((d1, pair1)) = probe(bad_a, wide(threshold(bad_a)))? {
        if pair1 == expected {
            let lever = (64.0 * eps).max(2.0 * gap).max(0.5 * d1.abs());
            if let Some((d2, pair2)) = probe(bad_a + lever, wide(d1.abs() + lever))? {
                if pair2 == expected {
                    let slope = (d2 - d1) / lever;
                    if slope.abs() > 4.0 * eps / lever {
                        let overshoot = threshold(bad_a) / slope.abs();
                        let floor = (ok_a - overshoot - 2.0 * gap).max(0.0);
                        alpha_bend = (bad_a - d1 / slope).clamp(floor, bad_a);
                    }
                }
            }
        }
    }

    // pin the bend back onto the boundary
    let x_raw = &p.x + &dx * alpha_bend;
    let pin_bracket = (threshold(bad_a) * 8.0).max(64.0 * eps);
    let x_bend = match signed_offset_to_boundary(oracle, &x_raw, m_left, eps * 8.0, pin_bracket, eps)? {
        Some((t, _, _)) => &x_raw + m_left * t,
        None => x_raw,
    };

    // anchor a boundary point on the far side of the bend
    let far = bad_a + params.patch_margin;
    let x_far = &p.x + &dx * far;
    let right = project_to_boundary(
        oracle,
        &x_far,
        m_left,
        eps,
        (8.0 * (params.patch_margin + threshold(far))).max(64.0 * eps),
    )?;
    let distance = alpha_bend;
    if right.pair_key() == expected {
        Ok(WalkEnd::Bend {
            x_bend,
            distance,
            right,
        })
    } else {
        Ok(WalkEnd::ClassChange {
            x_bend,
            distance,
            observed: right,
        })
    }
}
