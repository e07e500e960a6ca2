//! Censoring survival function estimation: unconditional Kaplan-Meier on
//! (Y, 1−Δ) and the kernel-weighted local Kaplan-Meier conditional on a
//! single continuous covariate within a treatment arm.

use crate::dataio::StaticDataset;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Right-continuous nonincreasing step function on (0, ∞) with S(t) = 1
/// before the first jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl SurvivalCurve {
    /// Build from jump times (strictly increasing) and post-jump values
    /// (nonincreasing, in [0,1]).
    pub fn new(jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::validation("jump_times and values must have equal length"));
        }
        let mut prev_t = f64::NEG_INFINITY;
        let mut prev_v = 1.0;
        for (&t, &v) in jump_times.iter().zip(&values) {
            if !(t > prev_t) {
                return Err(Error::validation("jump times must be strictly increasing"));
            }
            if !(0.0..=1.0).contains(&v) || v > prev_v + 1e-15 {
                return Err(Error::validation("values must be nonincreasing within [0,1]"));
            }
            prev_t = t;
            prev_v = v;
        }
        Ok(SurvivalCurve { jump_times, values })
    }

    /// The constant curve S ≡ 1.
    pub fn ones() -> Self {
        SurvivalCurve {
            jump_times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Right-continuous evaluation S(t).
    pub fn eval(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&jt| jt <= t) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }

    /// Left-limit evaluation S(t−).
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&jt| jt < t) {
            0 => 1.0,
            k => self.values[k - 1],
        }
    }

    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.jump_times.iter().copied().zip(self.values.iter().copied())
    }
}

/// Kaplan-Meier product-limit estimator of the censoring survival function,
/// treating censoring (delta = 0) as the event; risk set at t is {i: y_i ≥ t}.
pub fn km_censoring(ds: &StaticDataset) -> SurvivalCurve {
    let pairs: Vec<(f64, u8)> = ds.records().iter().map(|r| (r.y, r.delta)).collect();
    km_from_pairs(&pairs)
}

/// KM on raw (time, delta) pairs, censoring as the event.
pub fn km_from_pairs(pairs: &[(f64, u8)]) -> SurvivalCurve {
    let mut sorted: Vec<(f64, u8)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let mut jump_times = Vec::new();
    let mut values = Vec::new();
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let at_risk = n - i;
        let mut censored_here = 0usize;
        let mut j = i;
        while j < n && sorted[j].0 == t {
            if sorted[j].1 == 0 {
                censored_here += 1;
            }
            j += 1;
        }
        if censored_here > 0 {
            s *= 1.0 - censored_here as f64 / at_risk as f64;
            jump_times.push(t);
            values.push(s.max(0.0));
        }
        i = j;
    }
    SurvivalCurve { jump_times, values }
}

/// KM on (time, delta, case-weight) triples, censoring as the event; the
/// at-risk and event counts become weight masses. Unit weights reproduce
/// `km_from_pairs` exactly.
pub fn km_from_weighted_pairs(pairs: &[(f64, u8, f64)]) -> SurvivalCurve {
    let mut sorted: Vec<(f64, u8, f64)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let total: f64 = sorted.iter().map(|p| p.2).sum();
    let mut jump_times = Vec::new();
    let mut values = Vec::new();
    let mut s = 1.0;
    let mut passed = 0.0;
    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let at_risk = total - passed;
        let mut censored_here = 0.0;
        let mut j = i;
        while j < n && sorted[j].0 == t {
            if sorted[j].1 == 0 {
                censored_here += sorted[j].2;
            }
            passed += sorted[j].2;
            j += 1;
        }
        if censored_here > 0.0 && at_risk > 0.0 {
            s *= 1.0 - censored_here / at_risk;
            jump_times.push(t);
            values.push(s.max(0.0));
        }
        i = j;
    }
    SurvivalCurve { jump_times, values }
}

/// Smoothing kernel shape for Nadaraya-Watson weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    GaussianDensity,
    NormalCdf,
}

impl KernelKind {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            // normalizing constant cancels in NW weights
            KernelKind::GaussianDensity => (-0.5 * u * u).exp(),
            KernelKind::NormalCdf => statrs::function::erf::erfc(-u / std::f64::consts::SQRT_2) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::parameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec { kind, bandwidth })
    }
}

/// Kernel-weighted local Kaplan-Meier estimator of G_C(t | x, arm),
/// conditioning on a single continuous covariate within one arm.
#[derive(Debug, Clone)]
pub struct LocalKmCensoring {
    /// (covariate value, y, delta) for the arm, sorted by y.
    obs: Vec<(f64, f64, u8)>,
    kernel: KernelSpec,
}

impl LocalKmCensoring {
    pub fn fit(
        ds: &StaticDataset,
        arm: u8,
        cov_index: usize,
        kernel: KernelSpec,
    ) -> Result<Self> {
        if cov_index >= ds.covariate_dim() {
            return Err(Error::parameter(format!(
                "cov_index {cov_index} out of range for dimension {}",
                ds.covariate_dim()
            )));
        }
        let mut obs: Vec<(f64, f64, u8)> = ds
            .records()
            .iter()
            .filter(|r| r.a == arm)
            .map(|r| (r.x[cov_index], r.y, r.delta))
            .collect();
        if obs.len() < 2 {
            return Err(Error::validation(format!(
                "arm {arm} has fewer than 2 records"
            )));
        }
        obs.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(LocalKmCensoring { obs, kernel })
    }

    /// Build the conditional censoring curve at covariate value `x`.
    ///
    /// Weighted product-limit: for each censoring observation j,
    /// factor 1 − B_j(x) / Σ_k I(y_k ≥ y_j) B_k(x), applied for t ≥ y_j.
    pub fn curve_at(&self, x: f64) -> Result<SurvivalCurve> {
        let h = self.kernel.bandwidth;
        let w: Vec<f64> = self
            .obs
            .iter()
            .map(|&(xk, _, _)| self.kernel.kind.eval((x - xk) / h))
            .collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::KernelSupport);
        }
        // obs sorted by y: tail sums give Σ_k I(y_k ≥ y_j) B_k efficiently
        let n = self.obs.len();
        let mut tail = vec![0.0; n + 1];
        for i in (0..n).rev() {
            tail[i] = tail[i + 1] + w[i];
        }
        // ties in y: risk set uses y_k ≥ y_j, so all tied obs share the tail
        // sum starting at the first index with that y
        let mut jump_times = Vec::new();
        let mut values = Vec::new();
        let mut s = 1.0;
        let mut i = 0;
        while i < n {
            let t = self.obs[i].1;
            let risk = tail[i];
            let mut j = i;
            let mut changed = false;
            while j < n && self.obs[j].1 == t {
                if self.obs[j].2 == 0 && risk > 0.0 {
                    s *= 1.0 - w[j] / risk;
                    changed = true;
                }
                j += 1;
            }
            if changed {
                s = s.max(0.0);
                jump_times.push(t);
                values.push(s);
            }
            i = j;
        }
        Ok(SurvivalCurve { jump_times, values })
    }

    /// Evaluate Ĝ_C(t | x, arm).
    pub fn eval(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.curve_at(x)?.eval(t))
    }
}

/// Evaluation policy for censoring survival values used as IPCW
/// denominators.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GcConfig {
    /// Evaluate Ĝ_C(Y−) instead of Ĝ_C(Y).
    pub left_limit_weights: bool,
    /// Lower clamp for denominators.
    pub floor: f64,
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig {
            left_limit_weights: false,
            floor: 0.01,
        }
    }
}

impl GcConfig {
    pub fn value(&self, curve: &SurvivalCurve, y: f64) -> f64 {
        let v = if self.left_limit_weights {
            curve.eval_left(y)
        } else {
            curve.eval(y)
        };
        v.max(self.floor)
    }
}
