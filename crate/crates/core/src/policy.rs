//! Sign-normalized linear index rules and the quantile-value policy
//! search: maximize the IPCW quantile estimate over the rule class by
//! evolutionary search, enumerating the leading-coefficient sign.

use crate::dataio::{apply_artificial_censoring, StaticDataset};
use crate::error::{Error, Result};
use crate::search::{center_on_plateau, maximize, EvoConfig};
use crate::survival::{km_censoring, GcConfig, KernelSpec, LocalKmCensoring, SurvivalCurve};
use crate::value::{check_quantile_from, compliance_indicator, gc_values, QuantileSpec};
use serde::{Deserialize, Serialize};

/// Linear index rule d(x) = I(sign·x₁ + tail·x_rest > 0) with the leading
/// coefficient normalized to ±1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRule {
    /// Coefficient of the first covariate, −1 or +1.
    pub sign: i8,
    /// Free coefficients for covariates 2..p.
    pub tail: Vec<f64>,
}

impl IndexRule {
    pub fn new(sign: i8, tail: Vec<f64>) -> Result<Self> {
        if sign != -1 && sign != 1 {
            return Err(Error::parameter(format!("sign must be -1 or 1, got {sign}")));
        }
        if tail.iter().any(|v| !v.is_finite()) {
            return Err(Error::parameter("tail coefficients must be finite"));
        }
        Ok(IndexRule { sign, tail })
    }

    pub fn dim(&self) -> usize {
        1 + self.tail.len()
    }

    pub fn decide(&self, x: &[f64]) -> Result<u8> {
        if x.len() != self.dim() {
            return Err(Error::parameter(format!(
                "rule dimension {} does not match covariate dimension {}",
                self.dim(),
                x.len()
            )));
        }
        let idx = self.sign as f64 * x[0]
            + self.tail.iter().zip(&x[1..]).map(|(b, v)| b * v).sum::<f64>();
        Ok(u8::from(idx > 0.0))
    }

    /// Decision for every record.
    pub fn assignments(&self, ds: &StaticDataset) -> Result<Vec<u8>> {
        ds.records().iter().map(|r| self.decide(&r.x)).collect()
    }
}

/// Which censoring survival estimate supplies the IPCW denominators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum CensoringModel {
    /// Unconditional Kaplan-Meier on (Y, 1−Δ).
    Km,
    /// Kernel-weighted Kaplan-Meier conditional on one covariate within
    /// each arm.
    LocalKm { cov_index: usize, kernel: KernelSpec },
    /// Ĝ_C ≡ 1 and every record treated as an event — the baseline that
    /// pretends no censoring occurred.
    Ignore,
}

impl Default for CensoringModel {
    fn default() -> Self {
        CensoringModel::Km
    }
}

/// Evolutionary-search settings for the rule coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Per-coordinate bounds for the tail; defaults to [−10, 10] each.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub population: usize,
    pub generations: usize,
    pub restarts: usize,
    pub elite: usize,
    pub crossover_prob: f64,
    pub mutation_scale: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let e = EvoConfig::default();
        SearchConfig {
            bounds: None,
            population: e.population,
            generations: e.generations,
            restarts: e.restarts,
            elite: e.elite,
            crossover_prob: e.crossover_prob,
            mutation_scale: e.mutation_scale,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn evo(&self, seed: u64) -> EvoConfig {
        EvoConfig {
            population: self.population,
            generations: self.generations,
            restarts: self.restarts,
            elite: self.elite,
            crossover_prob: self.crossover_prob,
            mutation_scale: self.mutation_scale,
            seed,
        }
    }

    pub fn resolved_bounds(&self, free_dim: usize) -> Result<Vec<(f64, f64)>> {
        match &self.bounds {
            None => Ok(vec![(-10.0, 10.0); free_dim]),
            Some(b) if b.len() == free_dim => Ok(b.clone()),
            Some(b) => Err(Error::parameter(format!(
                "{} bound pairs given, {} free coefficients",
                b.len(),
                free_dim
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyFitReport {
    pub rule: IndexRule,
    /// Estimated optimal τ-quantile value at the selected rule.
    pub value: f64,
    /// Best objective after each generation (nondecreasing).
    pub objective_trace: Vec<f64>,
    /// Complete cases (rule-compliant, uncensored) at the optimum.
    pub n_effective: usize,
    pub censoring_rate: f64,
    pub evaluations: usize,
}

/// Per-record censoring survival denominators for a dataset under a
/// censoring model. For `Ignore` the dataset must already have all
/// delta = 1 (see `naive_view`).
pub fn censoring_denominators(
    ds: &StaticDataset,
    model: &CensoringModel,
    cfg: &GcConfig,
) -> Result<Vec<f64>> {
    match model {
        CensoringModel::Km => Ok(gc_values(ds, &km_censoring(ds), cfg)),
        CensoringModel::LocalKm { cov_index, kernel } => {
            let fit0 = LocalKmCensoring::fit(ds, 0, *cov_index, *kernel)?;
            let fit1 = LocalKmCensoring::fit(ds, 1, *cov_index, *kernel)?;
            ds.records()
                .iter()
                .map(|r| {
                    let f = if r.a == 1 { &fit1 } else { &fit0 };
                    let curve = f.curve_at(r.x[*cov_index])?;
                    Ok(cfg.value(&curve, r.y))
                })
                .collect()
        }
        CensoringModel::Ignore => Ok(vec![1.0; ds.records().len()]),
    }
}

/// Copy of the dataset with censoring ignored: every record marked as an
/// event. Pair with `CensoringModel::Ignore`.
pub fn naive_view(ds: &StaticDataset) -> StaticDataset {
    let records = ds
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.delta = 1;
            r
        })
        .collect();
    StaticDataset::new(records, ds.default_pscore()).expect("valid dataset stays valid")
}

fn check_quantile_objective(
    ds: &StaticDataset,
    rule: &IndexRule,
    spec: QuantileSpec,
    gc_at: &[f64],
) -> f64 {
    let assign = match rule.assignments(ds) {
        Ok(a) => a,
        Err(_) => return f64::NEG_INFINITY,
    };
    check_quantile_from(ds, &assign, spec, gc_at).unwrap_or(f64::NEG_INFINITY)
}

/// Fit the quantile-optimal index rule.
///
/// Enumerates the leading sign, searches the tail coefficients in the box
/// for each, and reports the best rule with its value. `m` applies the
/// event-at-cutoff truncation before anything else.
pub fn fit_static(
    ds: &StaticDataset,
    spec: QuantileSpec,
    cfg: &SearchConfig,
    m: Option<f64>,
) -> Result<PolicyFitReport> {
    fit_static_with(ds, spec, cfg, m, &CensoringModel::Km, &GcConfig::default())
}

pub fn fit_static_with(
    ds: &StaticDataset,
    spec: QuantileSpec,
    cfg: &SearchConfig,
    m: Option<f64>,
    model: &CensoringModel,
    gc_cfg: &GcConfig,
) -> Result<PolicyFitReport> {
    let owned;
    let ds = match m {
        Some(m) => {
            owned = apply_artificial_censoring(ds, m)?;
            &owned
        }
        None => ds,
    };
    let naive_owned;
    let ds = if matches!(model, CensoringModel::Ignore) {
        naive_owned = naive_view(ds);
        &naive_owned
    } else {
        ds
    };
    let gc_at = censoring_denominators(ds, model, gc_cfg)?;
    let free_dim = ds.covariate_dim() - 1;
    let censoring_rate = ds.censoring_rate();

    let mut best: Option<(IndexRule, f64)> = None;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    for (k, sign) in [-1i8, 1].into_iter().enumerate() {
        if free_dim == 0 {
            // nothing to search: evaluate the two candidate rules directly
            let rule = IndexRule::new(sign, vec![])?;
            let v = check_quantile_objective(ds, &rule, spec, &gc_at);
            evaluations += 1;
            trace.push(best.as_ref().map_or(v, |(_, bv)| bv.max(v)));
            if v > f64::NEG_INFINITY && best.as_ref().map_or(true, |(_, bv)| v > *bv) {
                best = Some((rule, v));
            }
            continue;
        }
        let bounds = cfg.resolved_bounds(free_dim)?;
        let out = match maximize(&bounds, &cfg.evo(cfg.seed.wrapping_add(k as u64)), |tail| {
            let rule = IndexRule {
                sign,
                tail: tail.to_vec(),
            };
            check_quantile_objective(ds, &rule, spec, &gc_at)
        }) {
            Ok(out) => out,
            Err(Error::Fit(_)) => continue,
            Err(e) => return Err(e),
        };
        evaluations += out.evaluations;
        let prior_best = best.as_ref().map(|(_, v)| *v).unwrap_or(f64::NEG_INFINITY);
        trace.extend(out.trace.iter().map(|&v| v.max(prior_best)));
        // ties keep the earlier (lexicographically smaller) sign
        if best.as_ref().map_or(true, |(_, bv)| out.objective > *bv) {
            best = Some((IndexRule::new(sign, out.point)?, out.objective));
        }
    }
    let (mut rule, value) = best.ok_or_else(|| Error::fit("no rule complies with any observation"))?;
    // the in-sample objective is piecewise constant, so the maximizer is an
    // interval; report its midpoint rather than whichever edge the search hit
    if free_dim > 0 {
        let bounds = cfg.resolved_bounds(free_dim)?;
        let sign = rule.sign;
        let (centered, extra) = center_on_plateau(&rule.tail, value, &bounds, |tail| {
            let cand = IndexRule {
                sign,
                tail: tail.to_vec(),
            };
            check_quantile_objective(ds, &cand, spec, &gc_at)
        });
        evaluations += extra;
        rule = IndexRule::new(sign, centered)?;
    }
    let assign = rule.assignments(ds)?;
    let n_effective = ds
        .records()
        .iter()
        .zip(&assign)
        .filter(|&(r, &d)| compliance_indicator(r.a, d, r.delta) == 1)
        .count();
    Ok(PolicyFitReport {
        rule,
        value,
        objective_trace: trace,
        n_effective,
        censoring_rate,
        evaluations,
    })
}

/// Evaluate the fitted value estimate at a fixed, user-supplied rule (no
/// search): the check-loss IPCW quantile at that rule, matching the value
/// the fitters report.
pub fn value_at_rule(
    ds: &StaticDataset,
    rule: &IndexRule,
    spec: QuantileSpec,
    m: Option<f64>,
    model: &CensoringModel,
    gc_cfg: &GcConfig,
) -> Result<f64> {
    let owned;
    let ds = match m {
        Some(m) => {
            owned = apply_artificial_censoring(ds, m)?;
            &owned
        }
        None => ds,
    };
    let naive_owned;
    let ds = if matches!(model, CensoringModel::Ignore) {
        naive_owned = naive_view(ds);
        &naive_owned
    } else {
        ds
    };
    let gc_at = censoring_denominators(ds, model, gc_cfg)?;
    let assign = rule.assignments(ds)?;
    check_quantile_from(ds, &assign, spec, &gc_at)
}

/// Reuse the curve type in reports.
pub fn fitted_km(ds: &StaticDataset) -> SurvivalCurve {
    km_censoring(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::StaticRecord;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(x: Vec<f64>, a: u8, y: f64, delta: u8) -> StaticRecord {
        StaticRecord {
            x,
            a,
            y,
            delta,
            pscore: Some(0.5),
        }
    }

    #[test]
    fn rule_decision_boundary_is_strict() {
        let rule = IndexRule::new(1, vec![-0.5]).unwrap();
        assert_eq!(rule.decide(&[1.0, 1.0]).unwrap(), 1); // 1 - 0.5 > 0
        assert_eq!(rule.decide(&[0.5, 1.0]).unwrap(), 0); // exactly 0 -> 0
        assert_eq!(rule.decide(&[0.0, 1.0]).unwrap(), 0);
        let neg = IndexRule::new(-1, vec![2.0]).unwrap();
        assert_eq!(neg.decide(&[1.0, 1.0]).unwrap(), 1); // -1 + 2 > 0
    }

    #[test]
    fn rule_dimension_mismatch_errors() {
        let rule = IndexRule::new(1, vec![0.3]).unwrap();
        assert!(rule.decide(&[1.0]).is_err());
        assert!(rule.decide(&[1.0, 2.0, 3.0]).is_err());
        assert!(IndexRule::new(2, vec![]).is_err());
    }

    #[test]
    fn proportional_rules_decide_identically() {
        // scaling the full coefficient vector preserves decisions, which is
        // why the leading coefficient can be pinned to ±1
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let b2: f64 = rng.gen_range(-3.0..3.0);
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let c: f64 = rng.gen_range(0.1..5.0);
            let raw = u8::from(x[0] + b2 * x[1] > 0.0);
            let scaled = u8::from(c * x[0] + c * b2 * x[1] > 0.0);
            assert_eq!(raw, scaled);
        }
    }

    fn dominance_ds(n: usize, seed: u64) -> StaticDataset {
        // arm 1 outcomes uniformly dominate arm 0, no censoring
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|_| {
                let a = rng.gen_range(0..2u8);
                let y = if a == 1 {
                    rng.gen_range(10.0..20.0)
                } else {
                    rng.gen_range(1.0..2.0)
                };
                rec(vec![rng.gen_range(0.1..1.0), 1.0], a, y, 1)
            })
            .collect();
        StaticDataset::new(records, None).unwrap()
    }

    #[test]
    fn dominant_arm_forces_always_treat_rule() {
        // strict alternation of arms along x1 (control at both ends) and
        // outcomes increasing in x1 make treat-all strictly optimal even in
        // sample: no half-space exclusion can trade controls for treated
        // observations at a favorable rank
        let n = 201;
        let records = (0..n)
            .map(|i| {
                let x1 = 0.05 + 0.9 * i as f64 / (n - 1) as f64;
                let a = (i % 2) as u8;
                let y = if a == 1 { 10.0 + x1 } else { 1.0 + x1 };
                rec(vec![x1, 1.0], a, y, 1)
            })
            .collect();
        let ds = StaticDataset::new(records, None).unwrap();
        let spec = QuantileSpec::new(0.5).unwrap();
        let cfg = SearchConfig {
            population: 30,
            generations: 30,
            restarts: 1,
            bounds: Some(vec![(-4.0, 4.0)]),
            ..Default::default()
        };
        let report = fit_static(&ds, spec, &cfg, None).unwrap();
        let assign = report.rule.assignments(&ds).unwrap();
        assert!(assign.iter().all(|&d| d == 1), "rule must treat everyone");
        // value equals the treated-arm IPW tau-quantile
        let gc_at = vec![1.0; ds.records().len()];
        let direct = check_quantile_from(&ds, &assign, spec, &gc_at).unwrap();
        assert_eq!(report.value, direct);
    }

    #[test]
    fn reported_value_reproducible_at_reported_rule() {
        let ds = dominance_ds(150, 8);
        let spec = QuantileSpec::new(0.3).unwrap();
        let cfg = SearchConfig {
            population: 20,
            generations: 20,
            restarts: 1,
            bounds: Some(vec![(-4.0, 4.0)]),
            ..Default::default()
        };
        let report = fit_static(&ds, spec, &cfg, None).unwrap();
        let v = value_at_rule(
            &ds,
            &report.rule,
            spec,
            None,
            &CensoringModel::Km,
            &GcConfig::default(),
        )
        .unwrap();
        assert_eq!(report.value, v);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = dominance_ds(100, 3);
        let spec = QuantileSpec::new(0.5).unwrap();
        let cfg = SearchConfig {
            population: 15,
            generations: 10,
            restarts: 1,
            seed: 77,
            bounds: Some(vec![(-4.0, 4.0)]),
            ..Default::default()
        };
        let a = fit_static(&ds, spec, &cfg, None).unwrap();
        let b = fit_static(&ds, spec, &cfg, None).unwrap();
        assert_eq!(a.rule, b.rule);
        assert_eq!(a.value, b.value);
        assert_eq!(a.objective_trace, b.objective_trace);
    }

    #[test]
    fn trace_nondecreasing() {
        let ds = dominance_ds(100, 4);
        let spec = QuantileSpec::new(0.5).unwrap();
        let cfg = SearchConfig {
            population: 15,
            generations: 12,
            restarts: 2,
            bounds: Some(vec![(-4.0, 4.0)]),
            ..Default::default()
        };
        let report = fit_static(&ds, spec, &cfg, None).unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(w[1] >= w[0], "trace must be nondecreasing");
        }
        assert_eq!(*report.objective_trace.last().unwrap(), report.value);
    }

    #[test]
    fn search_matches_dense_grid_on_small_problem() {
        // 40 records, p=2: exhaustive grid over beta2 is the oracle
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let records: Vec<StaticRecord> = (0..40)
            .map(|_| {
                let x1: f64 = rng.gen_range(-1.0..1.0);
                let a = rng.gen_range(0..2u8);
                let base: f64 = rng.gen_range(0.5..3.0);
                let y = if (x1 > 0.2) == (a == 1) { base + 1.5 } else { base };
                let delta = u8::from(rng.gen_range(0.0..1.0) > 0.25);
                rec(vec![x1, 1.0], a, y.max(0.05), delta)
            })
            .collect();
        let ds = StaticDataset::new(records, None).unwrap();
        let spec = QuantileSpec::new(0.4).unwrap();
        let gc_at = censoring_denominators(&ds, &CensoringModel::Km, &GcConfig::default()).unwrap();
        let mut grid_best = f64::NEG_INFINITY;
        for sign in [-1i8, 1] {
            let mut b2 = -4.0;
            while b2 <= 4.0 {
                let rule = IndexRule::new(sign, vec![b2]).unwrap();
                let v = check_quantile_objective(&ds, &rule, spec, &gc_at);
                if v > grid_best {
                    grid_best = v;
                }
                b2 += 0.005;
            }
        }
        let cfg = SearchConfig {
            population: 40,
            generations: 40,
            restarts: 2,
            bounds: Some(vec![(-4.0, 4.0)]),
            ..Default::default()
        };
        let report = fit_static(&ds, spec, &cfg, None).unwrap();
        assert!(
            (report.value - grid_best).abs() < 1e-9,
            "search {} vs grid {}",
            report.value,
            grid_best
        );
    }

    #[test]
    fn no_compliance_is_fit_error() {
        // all records censored -> every rule scores -inf... but validation
        // rejects all-censored data, so use mismatch instead: everyone got
        // arm 0 and outcomes force... simplest: all censored except rows the
        // rule can never match is impossible; instead check p=1 with data
        // where x1=0 always (rule decides 0) and all a=1 uncensored
        let records = vec![rec(vec![0.0], 1, 1.0, 1), rec(vec![0.0], 1, 2.0, 1)];
        let ds = StaticDataset::new(records, None).unwrap();
        let spec = QuantileSpec::new(0.5).unwrap();
        let cfg = SearchConfig::default();
        assert!(fit_static(&ds, spec, &cfg, None).is_err());
    }

    #[test]
    fn naive_view_marks_everything_event() {
        let ds = StaticDataset::new(
            vec![rec(vec![1.0], 1, 1.0, 0), rec(vec![1.0], 0, 2.0, 1)],
            None,
        )
        .unwrap();
        let nv = naive_view(&ds);
        assert!(nv.records().iter().all(|r| r.delta == 1));
        let denom =
            censoring_denominators(&nv, &CensoringModel::Ignore, &GcConfig::default()).unwrap();
        assert_eq!(denom, vec![1.0, 1.0]);
    }
}
