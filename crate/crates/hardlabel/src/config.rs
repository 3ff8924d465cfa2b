//! Attack configuration: every tolerance, step size and budget in one place.
//!
//! The file format is flat TOML (`key = value`, no tables), so a config is a
//! plain list of overrides over [`AttackConfig::default`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// RNG seed for the whole run.
    pub seed: u64,

    /// Boundary bisection precision, relative to the bisected segment length.
    /// 2^-30 leaves well over 20 bits of headroom at 64-bit precision.
    pub eps_rel: f64,
    /// Absolute floor for the bisection precision.
    pub eps_min_abs: f64,

    /// Probe step used by normal estimation, as a fraction of the domain
    /// width. The boundary patch must extend this far around the anchor.
    pub normal_step_frac: f64,
    /// Inner bisection precision of a normal probe, relative to the probe
    /// step; this bounds the per-coordinate error of the estimated normal.
    pub normal_inner_rel: f64,
    /// Bracket limit of a normal probe, in probe steps. Beyond it the patch
    /// is reported too small.
    pub normal_bracket_steps: f64,
    /// Estimate normals by probing hidden directions of the recovered prefix
    /// instead of one input dimension at a time.
    pub prefix_normals: bool,

    /// Size of the random excursion used to pick a walking direction on a
    /// boundary patch, as a fraction of the domain width.
    pub excursion_frac: f64,
    /// Relative re-projection displacement above which the walk declares the
    /// patch has bent.
    pub bend_tol: f64,
    /// Minimum |cos| deviation between patch normals for a genuine bend:
    /// normals with |cos| > 1 - theta_bend are considered parallel.
    pub theta_bend: f64,
    /// First walk step, as a fraction of the domain width.
    pub walk_min_step_frac: f64,
    /// Offset from a bend at which the second patch is re-anchored, as a
    /// fraction of the domain width (must clear the normal probe radius).
    pub patch_margin_frac: f64,

    /// Retry budget of one random dual-point search.
    pub dual_retries: usize,
    /// Random dual draws allowed before a targeted per-neuron search gives up.
    pub targeted_draw_budget: usize,
    /// Sample budget for finding a differently-labeled input pair.
    pub pair_attempts: usize,

    /// Rank threshold: singular values below sigma_tol times the largest are
    /// treated as zero.
    pub sigma_tol: f64,
    /// Pre-activation tolerance (relative to the hidden-state scale) for
    /// attributing a dual point to a recovered neuron.
    pub attribution_tol: f64,
    /// Residual spread in a cluster above which the recovered bias is
    /// flagged inconsistent.
    pub bias_spread_tol: f64,
    /// Dual points drawn per batch while recovering a layer's signatures.
    pub signature_batch: usize,
    /// Total dual-point draw budget per layer of signature recovery.
    pub signature_draw_budget: usize,

    /// Offset walked before re-estimating the decision-plane normal during a
    /// sign walk, as a fraction of the domain width.
    pub toggle_probe_frac: f64,
    /// Times the same recovered neuron may be walked through before the dual
    /// point is discarded.
    pub max_revisit: usize,
    /// Future toggles counted per distance measurement.
    pub n_toggles: usize,
    /// Minimum experiments per neuron on the first and last hidden layers.
    pub n_exp_min_edge: usize,
    /// Minimum experiments per neuron on middle hidden layers.
    pub n_exp_min_middle: usize,
    /// Target confidence level (percent) for a sign decision.
    pub cl_target: f64,
    /// Stop voting as soon as the confidence target is reached, even before
    /// the per-layer minimum. Off by default for reproducibility.
    pub adaptive_votes: bool,
    /// Confidence level (percent) below which a finished vote is re-run once
    /// on fresh dual points.
    pub cl_stall: f64,

    /// Boundary points collected per class pair when recovering the output
    /// layer, on top of the hidden width.
    pub output_extra_points: usize,

    /// Input samples for the label-agreement figure in the run report.
    pub agreement_samples: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            eps_rel: 2f64.powi(-30),
            eps_min_abs: 1e-12,
            normal_step_frac: 1e-4,
            normal_inner_rel: 1e-9,
            normal_bracket_steps: 64.0,
            prefix_normals: false,
            excursion_frac: 0.1,
            bend_tol: 1e-4,
            theta_bend: 1e-6,
            walk_min_step_frac: 1e-4,
            patch_margin_frac: 5e-4,
            dual_retries: 40,
            targeted_draw_budget: 4000,
            pair_attempts: 100_000,
            sigma_tol: 1e-7,
            attribution_tol: 1e-4,
            bias_spread_tol: 1e-5,
            signature_batch: 48,
            signature_draw_budget: 4000,
            toggle_probe_frac: 1e-3,
            max_revisit: 3,
            n_toggles: 1,
            n_exp_min_edge: 100,
            n_exp_min_middle: 1000,
            cl_target: 99.0,
            adaptive_votes: false,
            cl_stall: 75.0,
            output_extra_points: 8,
            agreement_samples: 100_000,
        }
    }
}

impl AttackConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AttackConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_rel", self.eps_rel),
            ("eps_min_abs", self.eps_min_abs),
            ("normal_step_frac", self.normal_step_frac),
            ("normal_inner_rel", self.normal_inner_rel),
            ("normal_bracket_steps", self.normal_bracket_steps),
            ("excursion_frac", self.excursion_frac),
            ("bend_tol", self.bend_tol),
            ("theta_bend", self.theta_bend),
            ("walk_min_step_frac", self.walk_min_step_frac),
            ("patch_margin_frac", self.patch_margin_frac),
            ("sigma_tol", self.sigma_tol),
            ("attribution_tol", self.attribution_tol),
            ("toggle_probe_frac", self.toggle_probe_frac),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=100.0).contains(&self.cl_target) || !(0.0..=100.0).contains(&self.cl_stall) {
            return Err(Error::Config("confidence levels are percentages".into()));
        }
        if self.n_toggles == 0 {
            return Err(Error::Config("n_toggles must be at least 1".into()));
        }
        Ok(())
    }

    /// Bisection precision for a segment of the given length.
    pub fn eps_for(&self, segment_len: f64) -> f64 {
        (self.eps_rel * segment_len).max(self.eps_min_abs)
    }

    pub fn n_exp_min(&self, layer: usize, hidden_layers: usize) -> usize {
        if layer == 1 || layer == hidden_layers {
            self.n_exp_min_edge
        } else {
            self.n_exp_min_middle
        }
    }
}
