//! IPCW quantile value estimation for a candidate rule: compliance
//! indicators, observation weights, weighted quantiles, and the
//! g-function used by the dual characterization.

use crate::dataio::StaticDataset;
use crate::error::{Error, Result};
use crate::survival::{GcConfig, SurvivalCurve};
use serde::{Deserialize, Serialize};

/// Quantile level τ ∈ (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    pub tau: f64,
}

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::parameter(format!(
                "tau must lie in (0, 1), got {tau}"
            )));
        }
        Ok(QuantileSpec { tau })
    }
}

/// 1 when the observed treatment matches the rule's assignment and the
/// event was observed: [A·d + (1−A)(1−d)]·Δ.
pub fn compliance_indicator(a: u8, d: u8, delta: u8) -> u8 {
    if a == d {
        delta
    } else {
        0
    }
}

/// Observation probability π̂ = [π_A·d + (1−π_A)(1−d)] · Ĝ_C(Y) for a
/// complying record; the weight is R/π̂ with the 0/0 = 0 convention.
pub fn observation_weight(
    a: u8,
    d: u8,
    delta: u8,
    pscore: f64,
    gc_y: f64,
) -> f64 {
    if compliance_indicator(a, d, delta) == 0 {
        return 0.0;
    }
    let p_assign = if d == 1 { pscore } else { 1.0 - pscore };
    1.0 / (p_assign * gc_y)
}

/// A weighted sample of outcome values.
#[derive(Debug, Clone, Default)]
pub struct WeightedSample {
    /// (y, w) pairs, not necessarily sorted.
    pub points: Vec<(f64, f64)>,
}

impl WeightedSample {
    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|&(_, w)| w).sum()
    }

    fn sorted(&self) -> Vec<(f64, f64)> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    /// Smallest y with cumulative sorted weight ≥ threshold. Errors when
    /// total positive weight is zero or the threshold exceeds the total.
    pub fn quantile_at_mass(&self, threshold: f64) -> Result<f64> {
        let pts = self.sorted();
        let total: f64 = pts.iter().map(|&(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::EmptyEffectiveSample);
        }
        let mut cum = 0.0;
        for &(y, w) in &pts {
            cum += w;
            if cum >= threshold - 1e-12 * total.max(1.0) {
                return Ok(y);
            }
        }
        // threshold above total mass: return the largest value
        Ok(pts.last().unwrap().0)
    }

    /// τ-quantile with threshold τ · (total weight) — the minimizer of the
    /// weighted check loss.
    pub fn weighted_quantile(&self, tau: f64) -> Result<f64> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return Err(Error::EmptyEffectiveSample);
        }
        self.quantile_at_mass(tau * total)
    }
}

/// Clamped censoring survival value Ĝ_C(Y_i) per record; rule-independent,
/// so callers precompute it once per dataset.
pub fn gc_values(ds: &StaticDataset, gc: &SurvivalCurve, cfg: &GcConfig) -> Vec<f64> {
    ds.records().iter().map(|r| cfg.value(gc, r.y)).collect()
}

/// Per-record IPCW weights for a fixed treatment assignment vector, given
/// precomputed per-record censoring survival values.
pub fn ipcw_weights_from(ds: &StaticDataset, assignments: &[u8], gc_at: &[f64]) -> Vec<f64> {
    ds.records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = assignments[i];
            if compliance_indicator(r.a, d, r.delta) == 0 {
                0.0
            } else {
                observation_weight(r.a, d, r.delta, ds.propensity(i), gc_at[i])
            }
        })
        .collect()
}

/// Per-record IPCW weights for a fixed treatment assignment vector.
///
/// `assignments[i]` is the rule's decision for record i; `gc` is the
/// censoring survival curve used for all records.
pub fn ipcw_weights(
    ds: &StaticDataset,
    assignments: &[u8],
    gc: &SurvivalCurve,
    cfg: &GcConfig,
) -> Vec<f64> {
    ipcw_weights_from(ds, assignments, &gc_values(ds, gc, cfg))
}

/// IPCW estimate of the τ-quantile of the potential outcome under the
/// assignment vector: smallest observed y whose cumulative weight reaches
/// τ·n (the inverse of the IPCW empirical distribution function).
pub fn q_hat_from(
    ds: &StaticDataset,
    assignments: &[u8],
    spec: QuantileSpec,
    gc_at: &[f64],
) -> Result<f64> {
    let w = ipcw_weights_from(ds, assignments, gc_at);
    let sample = WeightedSample {
        points: ds
            .records()
            .iter()
            .zip(&w)
            .filter(|&(_, &w)| w > 0.0)
            .map(|(r, &w)| (r.y, w))
            .collect(),
    };
    if sample.points.is_empty() {
        return Err(Error::EmptyEffectiveSample);
    }
    sample.quantile_at_mass(spec.tau * ds.records().len() as f64)
}

/// `q_hat_from` with the censoring values taken from a single curve.
pub fn q_hat(
    ds: &StaticDataset,
    assignments: &[u8],
    spec: QuantileSpec,
    gc: &SurvivalCurve,
    cfg: &GcConfig,
) -> Result<f64> {
    q_hat_from(ds, assignments, spec, &gc_values(ds, gc, cfg))
}

/// Check-loss IPCW quantile under the assignment vector: smallest observed
/// y whose cumulative weight reaches τ times the *total* weight, i.e. the
/// minimizer of the weighted check loss. Self-normalizing in the realized
/// weights, which makes it noticeably less variable than `q_hat_from` as a
/// policy-search objective; used by the fitters.
pub fn check_quantile_from(
    ds: &StaticDataset,
    assignments: &[u8],
    spec: QuantileSpec,
    gc_at: &[f64],
) -> Result<f64> {
    let w = ipcw_weights_from(ds, assignments, gc_at);
    let sample = WeightedSample {
        points: ds
            .records()
            .iter()
            .zip(&w)
            .filter(|&(_, &w)| w > 0.0)
            .map(|(r, &w)| (r.y, w))
            .collect(),
    };
    if sample.points.is_empty() {
        return Err(Error::EmptyEffectiveSample);
    }
    sample.weighted_quantile(spec.tau)
}

/// `check_quantile_from` with the censoring values taken from a single curve.
pub fn check_quantile(
    ds: &StaticDataset,
    assignments: &[u8],
    spec: QuantileSpec,
    gc: &SurvivalCurve,
    cfg: &GcConfig,
) -> Result<f64> {
    check_quantile_from(ds, assignments, spec, &gc_values(ds, gc, cfg))
}

/// Mean over records of g_i(v) = R_i · I(Y_i − v > 0) / π̂_i; the IPCW
/// estimate of P(T(rule) > v).
pub fn g_mean(
    ds: &StaticDataset,
    assignments: &[u8],
    v: f64,
    gc: &SurvivalCurve,
    cfg: &GcConfig,
) -> f64 {
    let w = ipcw_weights(ds, assignments, gc, cfg);
    let n = ds.records().len() as f64;
    ds.records()
        .iter()
        .zip(&w)
        .map(|(r, &w)| if r.y > v { w } else { 0.0 })
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{apply_artificial_censoring, StaticDataset, StaticRecord};
    use crate::survival::km_censoring;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn compliance_table() {
        assert_eq!(compliance_indicator(1, 1, 1), 1);
        assert_eq!(compliance_indicator(0, 0, 1), 1);
        assert_eq!(compliance_indicator(1, 0, 1), 0);
        assert_eq!(compliance_indicator(0, 1, 1), 0);
        assert_eq!(compliance_indicator(1, 1, 0), 0);
        assert_eq!(compliance_indicator(0, 0, 0), 0);
    }

    #[test]
    fn observation_weight_values() {
        // complying treated record, pscore 0.5, Gc 0.8 -> 1/(0.5*0.8) = 2.5
        assert_eq!(observation_weight(1, 1, 1, 0.5, 0.8), 2.5);
        // complying control record, pscore 0.25 -> assign prob 0.75
        assert!((observation_weight(0, 0, 1, 0.25, 1.0) - 1.0 / 0.75).abs() < 1e-15);
        // non-complying or censored -> 0 regardless of denominators
        assert_eq!(observation_weight(1, 0, 1, 0.5, 0.8), 0.0);
        assert_eq!(observation_weight(1, 1, 0, 0.5, 0.8), 0.0);
    }

    #[test]
    fn weighted_quantile_unit_weights_median() {
        let s = WeightedSample {
            points: vec![(3.0, 1.0), (1.0, 1.0), (2.0, 1.0), (5.0, 1.0), (4.0, 1.0)],
        };
        // cumulative 3/5 = 0.6 ≥ 0.5 at y=3
        assert_eq!(s.weighted_quantile(0.5).unwrap(), 3.0);
        assert_eq!(s.weighted_quantile(0.2).unwrap(), 1.0);
        assert_eq!(s.weighted_quantile(0.99).unwrap(), 5.0);
    }

    #[test]
    fn weighted_quantile_tie_boundary() {
        // cumulative weight hits the threshold exactly: that point counts
        let s = WeightedSample {
            points: vec![(1.0, 1.0), (2.0, 1.0), (3.0, 2.0)],
        };
        // tau=0.25: threshold 1.0, cum at y=1 is exactly 1.0
        assert_eq!(s.weighted_quantile(0.25).unwrap(), 1.0);
        assert_eq!(s.weighted_quantile(0.5).unwrap(), 2.0);
    }

    #[test]
    fn weighted_quantile_zero_mass_errors() {
        let s = WeightedSample {
            points: vec![(1.0, 0.0), (2.0, 0.0)],
        };
        assert!(matches!(
            s.weighted_quantile(0.5).unwrap_err(),
            Error::EmptyEffectiveSample
        ));
    }

    #[test]
    fn weighted_quantile_minimizes_check_loss() {
        // brute-force check-loss minimum over sample points matches
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(3..30);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.1..3.0)))
                .collect();
            let tau: f64 = rng.gen_range(0.05..0.95);
            let s = WeightedSample { points: pts.clone() };
            let q = s.weighted_quantile(tau).unwrap();
            let loss = |v: f64| -> f64 {
                pts.iter()
                    .map(|&(y, w)| {
                        let u = y - v;
                        w * u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
                    })
                    .sum()
            };
            let best = pts
                .iter()
                .map(|&(y, _)| y)
                .min_by(|a, b| loss(*a).total_cmp(&loss(*b)))
                .unwrap();
            assert!(
                loss(q) <= loss(best) + 1e-9,
                "q={q} best={best} tau={tau}"
            );
        }
    }

    fn random_ds(rng: &mut ChaCha8Rng, n: usize) -> StaticDataset {
        let records = (0..n)
            .map(|_| {
                let t: f64 = rng.gen_range(0.1..5.0);
                let c: f64 = rng.gen_range(0.1..5.0);
                StaticRecord {
                    x: vec![rng.gen_range(-1.0..1.0)],
                    a: rng.gen_range(0..2),
                    y: t.min(c),
                    delta: u8::from(t <= c),
                    pscore: Some(0.5),
                }
            })
            .collect();
        StaticDataset::new(records, None).unwrap()
    }

    #[test]
    fn q_hat_neutral_under_artificial_censoring() {
        // truncating all data at M > q_hat must not move the estimate
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = GcConfig::default();
        let mut checked = 0;
        for rep in 0..40 {
            let ds = random_ds(&mut rng, 120);
            let assign: Vec<u8> = ds
                .records()
                .iter()
                .map(|r| u8::from(r.x[0] > 0.0))
                .collect();
            let gc = km_censoring(&ds);
            let spec = QuantileSpec::new(0.25).unwrap();
            let q = match q_hat(&ds, &assign, spec, &gc, &cfg) {
                Ok(q) => q,
                Err(_) => continue,
            };
            let m = q + 0.5;
            let cds = apply_artificial_censoring(&ds, m).unwrap();
            let cgc = km_censoring(&cds);
            let cq = q_hat(&cds, &assign, spec, &cgc, &cfg).unwrap();
            assert!(
                (q - cq).abs() < 1e-12,
                "rep {rep}: q={q} truncated q={cq}"
            );
            checked += 1;
        }
        assert!(checked > 30);
    }

    #[test]
    fn q_hat_dual_scan_agrees() {
        // largest observed y with Σ w_i I(y_i ≥ y) ≥ W − τn equals q_hat
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let cfg = GcConfig::default();
        for _ in 0..40 {
            let ds = random_ds(&mut rng, 100);
            let assign: Vec<u8> = ds
                .records()
                .iter()
                .map(|r| u8::from(r.x[0] > 0.0))
                .collect();
            let gc = km_censoring(&ds);
            let tau = 0.3;
            let spec = QuantileSpec::new(tau).unwrap();
            let q = match q_hat(&ds, &assign, spec, &gc, &cfg) {
                Ok(q) => q,
                Err(_) => continue,
            };
            let w = ipcw_weights(&ds, &assign, &gc, &cfg);
            let total: f64 = w.iter().sum();
            let bound = total - tau * ds.records().len() as f64;
            let dual = ds
                .records()
                .iter()
                .zip(&w)
                .filter(|&(_, &wi)| wi > 0.0)
                .map(|(r, _)| r)
                .filter(|r| {
                    let mass: f64 = ds
                        .records()
                        .iter()
                        .zip(&w)
                        .filter(|&(s, _)| s.y >= r.y)
                        .map(|(_, &wi)| wi)
                        .sum();
                    mass >= bound - 1e-9
                })
                .map(|r| r.y)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((q - dual).abs() < 1e-12, "q={q} dual={dual}");
        }
    }

    #[test]
    fn g_mean_monotone_nonincreasing_in_v() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = GcConfig::default();
        let ds = random_ds(&mut rng, 150);
        let assign: Vec<u8> = ds
            .records()
            .iter()
            .map(|r| u8::from(r.x[0] > 0.0))
            .collect();
        let gc = km_censoring(&ds);
        let mut prev = f64::INFINITY;
        let mut v = 0.0;
        while v < 5.0 {
            let g = g_mean(&ds, &assign, v, &gc, &cfg);
            assert!(g <= prev + 1e-12);
            assert!(g >= 0.0);
            prev = g;
            v += 0.25;
        }
    }
}
