//! Benchmark data-generating processes with retained latent potential
//! outcomes, a brute-force population-truth oracle, and the Monte Carlo
//! experiment driver comparing the censoring-aware fit against the naive
//! complete-data pretender.

use crate::dataio::{DynamicDataset, DynamicRecord, StaticDataset, StaticRecord};
use crate::derive_seed;
use crate::dynamic::{fit_dynamic_with, DynamicFitReport};
use crate::error::{Error, Result};
use crate::policy::{fit_static_with, CensoringModel, IndexRule, PolicyFitReport, SearchConfig};
use crate::survival::{GcConfig, KernelKind, KernelSpec};
use crate::value::QuantileSpec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Weibull};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Example {
    Ex1,
    Ex2,
    Ex3a,
    Ex3b,
    Ex3c,
}

impl Example {
    pub fn is_dynamic(self) -> bool {
        matches!(self, Example::Ex3a | Example::Ex3b | Example::Ex3c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub example: Example,
    pub n: usize,
    pub seed: u64,
    /// Overall censoring-rate target for the two-stage examples (0.15 or
    /// 0.40); selects the censoring scale C0.
    pub target_censoring: Option<f64>,
    pub keep_latents: bool,
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::parameter("n must be at least 1"));
        }
        match (self.example.is_dynamic(), self.target_censoring) {
            (false, Some(_)) => Err(Error::parameter(
                "target_censoring only applies to the two-stage examples",
            )),
            (true, None) => Err(Error::parameter(
                "two-stage examples need target_censoring (0.15 or 0.40)",
            )),
            _ => Ok(()),
        }
    }
}

/// Latent quantities behind one generated static record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticLatent {
    pub t0: f64,
    pub t1: f64,
    /// Uncensored survival time actually realized (consistent with a).
    pub t: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedStatic {
    pub ds: StaticDataset,
    pub latents: Option<Vec<StaticLatent>>,
}

/// Latent quantities behind one generated dynamic record: the components
/// realized along the sampled treatment path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicLatent {
    /// Stage-1 event time under the received d1.
    pub t1: f64,
    /// Post-s survival under the received (d1, d2); None if t1 ≤ s or the
    /// subject was censored before s.
    pub t2: Option<f64>,
    /// Total uncensored time along the path.
    pub t: f64,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedDynamic {
    pub ds: DynamicDataset,
    pub latents: Option<Vec<DynamicLatent>>,
}

fn ex1_t0(rng: &mut ChaCha8Rng) -> f64 {
    Weibull::new(1.0, 1.0).unwrap().sample(rng) + 1.0
}

fn ex1_t1(rng: &mut ChaCha8Rng, x1: f64) -> f64 {
    Weibull::new(0.5 + x1, 3.0).unwrap().sample(rng) + 2.0 * x1
}

fn ex1_censoring(rng: &mut ChaCha8Rng) -> f64 {
    // piecewise-constant density: 0.22 on (0,2), 0.07 on [2,10)
    if rng.gen_bool(0.44) {
        rng.gen_range(0.0..2.0)
    } else {
        rng.gen_range(2.0..10.0)
    }
}

/// Floor keeping generated times strictly positive; the normal-error model
/// of the second example can produce nonpositive draws.
const TIME_FLOOR: f64 = 1e-6;

fn generate_ex1(n: usize, seed: u64, keep: bool) -> GeneratedStatic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut latents = keep.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let x1: f64 = rng.gen_range(0.0..1.0);
        let a = u8::from(rng.gen_bool(0.5));
        let t0 = ex1_t0(&mut rng);
        let t1 = ex1_t1(&mut rng, x1);
        let t = if a == 1 { t1 } else { t0 };
        let c = ex1_censoring(&mut rng);
        records.push(StaticRecord {
            x: vec![x1, 1.0],
            a,
            y: t.min(c),
            delta: u8::from(t <= c),
            pscore: None,
        });
        if let Some(l) = latents.as_mut() {
            l.push(StaticLatent { t0, t1, t, c });
        }
    }
    GeneratedStatic {
        ds: StaticDataset::new(records, Some(0.5)).expect("generated data is valid"),
        latents,
    }
}

fn ex2_time(x1: f64, x2: f64, a: f64, eps: f64) -> f64 {
    1.0 + x1 + x2 + a * (3.0 - 3.0 * x1 - 1.5 * x2) + (0.5 + a * (1.0 + x1 + x2)) * eps
}

fn generate_ex2(n: usize, seed: u64, keep: bool) -> GeneratedStatic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let eps_law = Normal::new(0.0, 0.5).unwrap();
    let mut records = Vec::with_capacity(n);
    let mut latents = keep.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let x1: f64 = rng.gen_range(0.0..1.0);
        let x2: f64 = rng.gen_range(0.0..1.0);
        let a = u8::from(rng.gen_bool(0.5));
        let eps = eps_law.sample(&mut rng);
        let omega = std_normal.sample(&mut rng);
        // shared error: both potential outcomes move together
        let t0 = ex2_time(x1, x2, 0.0, eps).max(TIME_FLOOR);
        let t1 = ex2_time(x1, x2, 1.0, eps).max(TIME_FLOOR);
        let t = if a == 1 { t1 } else { t0 };
        let c = if a == 0 {
            4.0 + (2.0 - x1) * omega
        } else {
            2.0 + f64::from(u8::from(x1 < 0.5 || x2 < 0.5)) + omega
        }
        .max(TIME_FLOOR);
        records.push(StaticRecord {
            x: vec![x1, 1.0, x2],
            a,
            y: t.min(c),
            delta: u8::from(t <= c),
            pscore: None,
        });
        if let Some(l) = latents.as_mut() {
            l.push(StaticLatent { t0, t1, t, c });
        }
    }
    GeneratedStatic {
        ds: StaticDataset::new(records, Some(0.5)).expect("generated data is valid"),
        latents,
    }
}

/// Stage-split time for the two-stage examples.
pub const STAGE_SPLIT: f64 = 1.0;

fn lambda1(example: Example, x1: f64, d1: f64) -> f64 {
    match example {
        Example::Ex3a => 0.5 * (1.75 * (d1 - 0.5) * (x1 - 2.0)).exp(),
        Example::Ex3b => 0.2 * (2.0 * (d1 - 0.5) * (-x1 + 2.0)).exp(),
        Example::Ex3c => 0.3 * (3.0 * (d1 - 0.3) * (x1 - 3.0)).exp(),
        _ => unreachable!("stage-1 rate is only defined for the two-stage examples"),
    }
}

fn lambda2(example: Example, x1: f64, d1: f64, x2: f64, d2: f64) -> f64 {
    match example {
        Example::Ex3a => 0.3 * (2.5 * (d2 - 0.4) * (x2 - 2.0) - d1 * (x1 - 2.0)).exp(),
        Example::Ex3b => 0.2 * (1.5 * (d2 - 0.5) * (x2 - 2.0) + 0.3 * x1 + 0.3 * x2).exp(),
        Example::Ex3c => {
            0.3 * (2.0 * (d2 - 0.5) * (x2 - 2.0) - 0.5 * (d1 - 0.3) * (x1 - 3.0)).exp()
        }
        _ => unreachable!("stage-2 rate is only defined for the two-stage examples"),
    }
}

fn exp_time(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.gen_range(0.0f64..1.0);
    -(1.0 - u).ln() / rate
}

fn generate_ex3_with_c0(
    example: Example,
    n: usize,
    seed: u64,
    c0: f64,
    keep: bool,
) -> GeneratedDynamic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = STAGE_SPLIT;
    let mut records = Vec::with_capacity(n);
    let mut latents = keep.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let x1: f64 = rng.gen_range(0.0..4.0);
        let d1 = u8::from(rng.gen_bool(0.5));
        let t1 = exp_time(&mut rng, lambda1(example, x1, d1 as f64));
        let c: f64 = rng.gen_range(0.0..c0).max(TIME_FLOOR);
        let z = u8::from(t1.min(c) > s);
        let (rec, lat) = if z == 1 {
            let e: f64 = rng.gen_range(0.0..2.0);
            let x2 = 0.5 * x1 - 0.4 * (d1 as f64 - 0.5) + e;
            let d2 = u8::from(rng.gen_bool(0.5));
            let t2 = exp_time(&mut rng, lambda2(example, x1, d1 as f64, x2, d2 as f64));
            let t = s + t2;
            (
                DynamicRecord {
                    x1: vec![x1, 1.0],
                    d1,
                    z,
                    x2: vec![x2],
                    d2,
                    y: t.min(c),
                    delta: u8::from(t <= c),
                },
                DynamicLatent {
                    t1,
                    t2: Some(t2),
                    t,
                    c,
                },
            )
        } else {
            (
                DynamicRecord {
                    x1: vec![x1, 1.0],
                    d1,
                    z,
                    x2: vec![],
                    d2: 0,
                    y: t1.min(c),
                    delta: u8::from(t1 <= c),
                },
                DynamicLatent {
                    t1,
                    t2: None,
                    t: t1,
                    c,
                },
            )
        };
        records.push(rec);
        if let Some(l) = latents.as_mut() {
            l.push(lat);
        }
    }
    GeneratedDynamic {
        ds: DynamicDataset::new(records, s, 0.5, 0.5).expect("generated data is valid"),
        latents,
    }
}

fn ex3_censoring_rate(example: Example, c0: f64, n: usize, seed: u64) -> f64 {
    generate_ex3_with_c0(example, n, seed, c0, false)
        .ds
        .censoring_rate()
}

/// Bisection for the censoring scale C0 hitting the target overall
/// censoring rate; the rate is decreasing in C0.
pub fn calibrate_c0(example: Example, target: f64, n_cal: usize, seed: u64) -> Result<f64> {
    if !example.is_dynamic() {
        return Err(Error::parameter("C0 calibration applies to the two-stage examples"));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::parameter("target censoring rate must lie in (0, 1)"));
    }
    let (mut lo, mut hi) = (0.2, 400.0);
    if ex3_censoring_rate(example, lo, n_cal, seed) < target {
        return Err(Error::parameter("target censoring rate unreachable from below"));
    }
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if ex3_censoring_rate(example, mid, n_cal, seed) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn c0_cache() -> &'static Mutex<HashMap<(Example, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(Example, u64), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached C0 for (example, target); calibrated once per process at a fixed
/// internal seed so repeated generator calls agree.
pub fn c0_for(example: Example, target: f64) -> Result<f64> {
    let key = (example, target.to_bits());
    if let Some(&c0) = c0_cache().lock().unwrap().get(&key) {
        return Ok(c0);
    }
    let c0 = calibrate_c0(example, target, 200_000, 0xc0)?;
    c0_cache().lock().unwrap().insert(key, c0);
    Ok(c0)
}

pub fn generate_static(spec: &GeneratorSpec) -> Result<GeneratedStatic> {
    spec.validate()?;
    match spec.example {
        Example::Ex1 => Ok(generate_ex1(spec.n, spec.seed, spec.keep_latents)),
        Example::Ex2 => Ok(generate_ex2(spec.n, spec.seed, spec.keep_latents)),
        _ => Err(Error::parameter("two-stage example: use generate_dynamic")),
    }
}

pub fn generate_dynamic(spec: &GeneratorSpec) -> Result<GeneratedDynamic> {
    spec.validate()?;
    if !spec.example.is_dynamic() {
        return Err(Error::parameter("one-stage example: use generate_static"));
    }
    let c0 = c0_for(spec.example, spec.target_censoring.unwrap())?;
    Ok(generate_ex3_with_c0(
        spec.example,
        spec.n,
        spec.seed,
        c0,
        spec.keep_latents,
    ))
}

/// Empirical τ-quantile (lowest order statistic with at least τ·n mass).
fn empirical_quantile(buf: &mut [f64], tau: f64) -> f64 {
    let k = ((tau * buf.len() as f64).ceil() as usize).clamp(1, buf.len()) - 1;
    *buf.select_nth_unstable_by(k, f64::total_cmp).1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticTruth {
    pub rule: IndexRule,
    pub q: f64,
}

/// Latent draws reused across all candidate rules (common random numbers).
struct StaticLatentPool {
    x: Vec<Vec<f64>>,
    t0: Vec<f64>,
    t1: Vec<f64>,
}

fn static_latent_pool(example: Example, n_mc: usize, seed: u64) -> Result<StaticLatentPool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n_mc);
    let mut t0 = Vec::with_capacity(n_mc);
    let mut t1 = Vec::with_capacity(n_mc);
    match example {
        Example::Ex1 => {
            for _ in 0..n_mc {
                let x1: f64 = rng.gen_range(0.0..1.0);
                x.push(vec![x1, 1.0]);
                t0.push(ex1_t0(&mut rng));
                t1.push(ex1_t1(&mut rng, x1));
            }
        }
        Example::Ex2 => {
            let eps_law = Normal::new(0.0, 0.5).unwrap();
            for _ in 0..n_mc {
                let x1: f64 = rng.gen_range(0.0..1.0);
                let x2: f64 = rng.gen_range(0.0..1.0);
                let eps = eps_law.sample(&mut rng);
                x.push(vec![x1, 1.0, x2]);
                t0.push(ex2_time(x1, x2, 0.0, eps).max(TIME_FLOOR));
                t1.push(ex2_time(x1, x2, 1.0, eps).max(TIME_FLOOR));
            }
        }
        _ => return Err(Error::parameter("two-stage example: use truth_dynamic")),
    }
    Ok(StaticLatentPool { x, t0, t1 })
}

fn eval_static_rule(pool: &StaticLatentPool, rule: &IndexRule, tau: f64, buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    for i in 0..pool.x.len() {
        let d = rule.decide(&pool.x[i]).expect("dimension fixed by pool");
        buf.push(if d == 1 { pool.t1[i] } else { pool.t0[i] });
    }
    empirical_quantile(buf, tau)
}

/// Brute-force truth for the one-stage examples: grid search over the tail
/// coefficients (coarse pass, then a refined pass around the winner) on
/// latent potential outcomes with no censoring.
pub fn truth_static(
    example: Example,
    tau: f64,
    n_mc: usize,
    seed: u64,
    bounds: (f64, f64),
    coarse_step: f64,
    refine_step: f64,
) -> Result<StaticTruth> {
    if !(coarse_step > 0.0 && refine_step > 0.0 && bounds.0 < bounds.1) {
        return Err(Error::parameter("grid steps must be positive and bounds nondegenerate"));
    }
    let pool = static_latent_pool(example, n_mc, seed)?;
    let free_dim = pool.x[0].len() - 1;
    let mut buf = Vec::with_capacity(n_mc);
    let grid_1d = |lo: f64, hi: f64, step: f64| -> Vec<f64> {
        let k = ((hi - lo) / step).round() as usize;
        (0..=k).map(|i| lo + i as f64 * step).collect()
    };
    let mut best: Option<(IndexRule, f64)> = None;
    let consider = |rule: IndexRule, q: f64, best: &mut Option<(IndexRule, f64)>| {
        if best.as_ref().map_or(true, |(_, bq)| q > *bq) {
            *best = Some((rule, q));
        }
    };
    // coarse pass over the full box
    let coarse = grid_1d(bounds.0, bounds.1, coarse_step);
    for sign in [-1i8, 1] {
        match free_dim {
            1 => {
                for &b2 in &coarse {
                    let rule = IndexRule::new(sign, vec![b2])?;
                    let q = eval_static_rule(&pool, &rule, tau, &mut buf);
                    consider(rule, q, &mut best);
                }
            }
            2 => {
                for &b2 in &coarse {
                    for &b3 in &coarse {
                        let rule = IndexRule::new(sign, vec![b2, b3])?;
                        let q = eval_static_rule(&pool, &rule, tau, &mut buf);
                        consider(rule, q, &mut best);
                    }
                }
            }
            d => {
                return Err(Error::parameter(format!(
                    "truth grid supports 1 or 2 free coefficients, got {d}"
                )))
            }
        }
    }
    // refine around the coarse winner
    let (coarse_rule, _) = best.clone().expect("grid was nonempty");
    let refine_radius = 1.5 * coarse_step;
    let sign = coarse_rule.sign;
    let around: Vec<Vec<f64>> = coarse_rule
        .tail
        .iter()
        .map(|&c| {
            grid_1d(
                (c - refine_radius).max(bounds.0),
                (c + refine_radius).min(bounds.1),
                refine_step,
            )
        })
        .collect();
    match free_dim {
        1 => {
            for &b2 in &around[0] {
                let rule = IndexRule::new(sign, vec![b2])?;
                let q = eval_static_rule(&pool, &rule, tau, &mut buf);
                consider(rule, q, &mut best);
            }
        }
        2 => {
            for &b2 in &around[0] {
                for &b3 in &around[1] {
                    let rule = IndexRule::new(sign, vec![b2, b3])?;
                    let q = eval_static_rule(&pool, &rule, tau, &mut buf);
                    consider(rule, q, &mut best);
                }
            }
        }
        _ => unreachable!(),
    }
    let (rule, q) = best.unwrap();
    Ok(StaticTruth { rule, q })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicTruth {
    pub beta_sign: i8,
    pub beta2: f64,
    pub zeta_sign: i8,
    pub zeta2: f64,
    pub q: f64,
}

/// Latent pool for the two-stage truth: all potential components under
/// every (d1, d2) combination.
struct DynamicLatentPool {
    x1: Vec<f64>,
    t1: [Vec<f64>; 2],      // stage-1 time under d1 = 0, 1
    x2: [Vec<f64>; 2],      // intermediate covariate under d1 = 0, 1
    t2: [[Vec<f64>; 2]; 2], // post-s time under (d1, d2)
}

fn dynamic_latent_pool(example: Example, n_mc: usize, seed: u64) -> DynamicLatentPool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x1v = Vec::with_capacity(n_mc);
    let mut t1 = [Vec::with_capacity(n_mc), Vec::with_capacity(n_mc)];
    let mut x2 = [Vec::with_capacity(n_mc), Vec::with_capacity(n_mc)];
    let mut t2 = [
        [Vec::with_capacity(n_mc), Vec::with_capacity(n_mc)],
        [Vec::with_capacity(n_mc), Vec::with_capacity(n_mc)],
    ];
    for _ in 0..n_mc {
        let x1: f64 = rng.gen_range(0.0..4.0);
        let u1: f64 = rng.gen_range(0.0f64..1.0);
        let u2: f64 = rng.gen_range(0.0f64..1.0);
        let e: f64 = rng.gen_range(0.0..2.0);
        x1v.push(x1);
        for d1 in 0..2usize {
            // shared uniforms: the same subject's draws under each arm
            t1[d1].push(-(1.0 - u1).ln() / lambda1(example, x1, d1 as f64));
            let x2d = 0.5 * x1 - 0.4 * (d1 as f64 - 0.5) + e;
            x2[d1].push(x2d);
            for d2 in 0..2usize {
                t2[d1][d2]
                    .push(-(1.0 - u2).ln() / lambda2(example, x1, d1 as f64, x2d, d2 as f64));
            }
        }
    }
    DynamicLatentPool {
        x1: x1v,
        t1,
        x2,
        t2,
    }
}

fn eval_dynamic_rule(
    pool: &DynamicLatentPool,
    beta_sign: i8,
    beta2: f64,
    zeta_sign: i8,
    zeta2: f64,
    tau: f64,
    buf: &mut Vec<f64>,
) -> f64 {
    let s = STAGE_SPLIT;
    buf.clear();
    for i in 0..pool.x1.len() {
        let d1 = usize::from(beta_sign as f64 * pool.x1[i] + beta2 > 0.0);
        let t1 = pool.t1[d1][i];
        let t = if t1 <= s {
            t1
        } else {
            let x2 = pool.x2[d1][i];
            let d2 = usize::from(zeta_sign as f64 * x2 + zeta2 > 0.0);
            s + pool.t2[d1][d2][i]
        };
        buf.push(t);
    }
    empirical_quantile(buf, tau)
}

/// Brute-force truth for the two-stage examples over the class
/// I(±X1 + β2 > 0), I(±X2 + ζ2 > 0): coarse-then-refined joint grid with
/// identifiable ranges β ∈ {−1}×[0,4] ∪ {1}×[−4,0] (X1 support) and the
/// analogous ζ ranges on the X2 support.
pub fn truth_dynamic(
    example: Example,
    tau: f64,
    n_mc: usize,
    seed: u64,
    coarse_step: f64,
    refine_step: f64,
) -> Result<DynamicTruth> {
    if !example.is_dynamic() {
        return Err(Error::parameter("one-stage example: use truth_static"));
    }
    let pool = dynamic_latent_pool(example, n_mc, seed);
    let mut buf = Vec::with_capacity(n_mc);
    let grid_1d = |lo: f64, hi: f64, step: f64| -> Vec<f64> {
        let k = ((hi - lo) / step).round() as usize;
        (0..=k).map(|i| lo + i as f64 * step).collect()
    };
    let beta_range = |sign: i8, lo: f64, hi: f64, step: f64| -> Vec<f64> {
        if sign == -1 {
            grid_1d(0.0f64.max(lo), 4.0f64.min(hi), step)
        } else {
            grid_1d((-4.0f64).max(lo), 0.0f64.min(hi), step)
        }
    };
    // X2 support is [-0.2, 4.2]
    let zeta_range = |sign: i8, lo: f64, hi: f64, step: f64| -> Vec<f64> {
        if sign == -1 {
            grid_1d((-0.2f64).max(lo), 4.2f64.min(hi), step)
        } else {
            grid_1d((-4.2f64).max(lo), 0.2f64.min(hi), step)
        }
    };
    let mut best: Option<(i8, f64, i8, f64, f64)> = None;
    let scan = |bs: i8,
                    zs: i8,
                    betas: &[f64],
                    zetas: &[f64],
                    best: &mut Option<(i8, f64, i8, f64, f64)>,
                    buf: &mut Vec<f64>| {
        for &b2 in betas {
            for &z2 in zetas {
                let q = eval_dynamic_rule(&pool, bs, b2, zs, z2, tau, buf);
                if best.as_ref().map_or(true, |&(_, _, _, _, bq)| q > bq) {
                    *best = Some((bs, b2, zs, z2, q));
                }
            }
        }
    };
    for bs in [-1i8, 1] {
        for zs in [-1i8, 1] {
            let betas = beta_range(bs, f64::NEG_INFINITY, f64::INFINITY, coarse_step);
            let zetas = zeta_range(zs, f64::NEG_INFINITY, f64::INFINITY, coarse_step);
            scan(bs, zs, &betas, &zetas, &mut best, &mut buf);
        }
    }
    let (bs, b2, zs, z2, _) = best.expect("grid was nonempty");
    let r = 1.5 * coarse_step;
    let betas = beta_range(bs, b2 - r, b2 + r, refine_step);
    let zetas = zeta_range(zs, z2 - r, z2 + r, refine_step);
    scan(bs, zs, &betas, &zetas, &mut best, &mut buf);
    let (beta_sign, beta2, zeta_sign, zeta2, q) = best.unwrap();
    Ok(DynamicTruth {
        beta_sign,
        beta2,
        zeta_sign,
        zeta2,
        q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Censoring-aware IPCW pipeline.
    New,
    /// Identical pipeline pretending every observation is an event.
    Naive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McOptions {
    pub search: SearchConfig,
    /// Local-KM bandwidth on the first covariate (covariate-dependent
    /// censoring); None uses the unconditional KM.
    pub local_km_bandwidth: Option<f64>,
    /// Overall censoring target for the two-stage examples.
    pub target_censoring: Option<f64>,
    /// Artificial-censoring cutoff M.
    pub cutoff: Option<f64>,
    /// Stage-2 feature indices into (x1, d1, x2) for the two-stage fits.
    pub stage2_features: Option<Vec<usize>>,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            search: SearchConfig::default(),
            local_km_bandwidth: None,
            target_censoring: None,
            cutoff: None,
            stage2_features: None,
        }
    }
}

/// One replication's estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McRow {
    pub rep: usize,
    pub sign: i8,
    pub coefficients: Vec<f64>,
    /// For two-stage runs: the stage-2 sign and coefficients.
    pub sign2: Option<i8>,
    pub coefficients2: Option<Vec<f64>>,
    pub q: f64,
    pub censoring_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSummary {
    pub example: Example,
    pub method: Method,
    pub tau: f64,
    pub n: usize,
    pub reps: usize,
    /// Mean bias / SD per tail coefficient (stage-1 first, then stage-2).
    pub bias: Vec<f64>,
    pub sd: Vec<f64>,
    pub q_bias: f64,
    pub q_sd: f64,
    /// Fraction of replications whose leading sign missed the truth.
    pub sign_error_rate: f64,
    pub rows: Vec<McRow>,
}

/// Truth parameters a Monte Carlo run is judged against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthParams {
    pub sign: i8,
    pub coefficients: Vec<f64>,
    pub sign2: Option<i8>,
    pub coefficients2: Option<Vec<f64>>,
    pub q: f64,
}

impl From<&StaticTruth> for TruthParams {
    fn from(t: &StaticTruth) -> Self {
        TruthParams {
            sign: t.rule.sign,
            coefficients: t.rule.tail.clone(),
            sign2: None,
            coefficients2: None,
            q: t.q,
        }
    }
}

impl From<&DynamicTruth> for TruthParams {
    fn from(t: &DynamicTruth) -> Self {
        TruthParams {
            sign: t.beta_sign,
            coefficients: vec![t.beta2],
            sign2: Some(t.zeta_sign),
            coefficients2: Some(vec![t.zeta2]),
            q: t.q,
        }
    }
}

fn mc_fit_static(
    example: Example,
    tau: f64,
    n: usize,
    rep_seed: u64,
    method: Method,
    opts: &McOptions,
) -> Result<(PolicyFitReport, f64)> {
    let gen = generate_static(&GeneratorSpec {
        example,
        n,
        seed: rep_seed,
        target_censoring: None,
        keep_latents: false,
    })?;
    let model = match (method, opts.local_km_bandwidth) {
        (Method::Naive, _) => CensoringModel::Ignore,
        (Method::New, None) => CensoringModel::Km,
        (Method::New, Some(h)) => CensoringModel::LocalKm {
            cov_index: 0,
            kernel: KernelSpec::new(KernelKind::GaussianDensity, h)?,
        },
    };
    let mut cfg = opts.search.clone();
    cfg.seed = derive_seed(rep_seed, 0x5ea);
    let report = fit_static_with(
        &gen.ds,
        QuantileSpec::new(tau)?,
        &cfg,
        opts.cutoff,
        &model,
        &GcConfig::default(),
    )?;
    let cr = gen.ds.censoring_rate();
    Ok((report, cr))
}

fn mc_fit_dynamic(
    example: Example,
    tau: f64,
    n: usize,
    rep_seed: u64,
    method: Method,
    opts: &McOptions,
) -> Result<(DynamicFitReport, f64)> {
    let gen = generate_dynamic(&GeneratorSpec {
        example,
        n,
        seed: rep_seed,
        target_censoring: Some(opts.target_censoring.ok_or_else(|| {
            Error::parameter("two-stage experiment needs target_censoring")
        })?),
        keep_latents: false,
    })?;
    let mut cfg = opts.search.clone();
    cfg.seed = derive_seed(rep_seed, 0x5ea);
    let report = fit_dynamic_with(
        &gen.ds,
        QuantileSpec::new(tau)?,
        &cfg,
        opts.cutoff,
        opts.stage2_features.as_deref(),
        &GcConfig::default(),
        matches!(method, Method::Naive),
    )?;
    let cr = gen.ds.censoring_rate();
    Ok((report, cr))
}

/// Run `reps` independent generate-and-fit replications and summarize the
/// bias and spread of the estimates against the supplied truth.
pub fn mc_experiment(
    example: Example,
    tau: f64,
    n: usize,
    reps: usize,
    method: Method,
    seed: u64,
    truth: &TruthParams,
    opts: &McOptions,
) -> Result<McSummary> {
    if reps == 0 {
        return Err(Error::parameter("reps must be at least 1"));
    }
    let mut rows = Vec::with_capacity(reps);
    for rep in 0..reps {
        let rep_seed = derive_seed(seed, rep as u64);
        let row = if example.is_dynamic() {
            let (report, cr) = mc_fit_dynamic(example, tau, n, rep_seed, method, opts)?;
            McRow {
                rep,
                sign: report.rule.stage1.sign,
                coefficients: report.rule.stage1.tail.clone(),
                sign2: Some(report.rule.stage2.sign),
                coefficients2: Some(report.rule.stage2.tail.clone()),
                q: report.value,
                censoring_rate: cr,
            }
        } else {
            let (report, cr) = mc_fit_static(example, tau, n, rep_seed, method, opts)?;
            McRow {
                rep,
                sign: report.rule.sign,
                coefficients: report.rule.tail.clone(),
                sign2: None,
                coefficients2: None,
                q: report.value,
                censoring_rate: cr,
            }
        };
        rows.push(row);
    }
    // aggregate: stage-1 coefficients, then stage-2 if present
    let full = |r: &McRow| -> Vec<f64> {
        let mut v = r.coefficients.clone();
        if let Some(c2) = &r.coefficients2 {
            v.extend_from_slice(c2);
        }
        v
    };
    let truth_full: Vec<f64> = {
        let mut v = truth.coefficients.clone();
        if let Some(c2) = &truth.coefficients2 {
            v.extend_from_slice(c2);
        }
        v
    };
    let p = truth_full.len();
    let reps_f = reps as f64;
    let mut bias = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for j in 0..p {
        let vals: Vec<f64> = rows.iter().map(|r| full(r)[j]).collect();
        let mean = vals.iter().sum::<f64>() / reps_f;
        bias[j] = mean - truth_full[j];
        sd[j] = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / reps_f).sqrt();
    }
    let qs: Vec<f64> = rows.iter().map(|r| r.q).collect();
    let q_mean = qs.iter().sum::<f64>() / reps_f;
    let q_bias = q_mean - truth.q;
    let q_sd = (qs.iter().map(|v| (v - q_mean) * (v - q_mean)).sum::<f64>() / reps_f).sqrt();
    let sign_errors = rows.iter().filter(|r| r.sign != truth.sign).count();
    Ok(McSummary {
        example,
        method,
        tau,
        n,
        reps,
        bias,
        sd,
        q_bias,
        q_sd,
        sign_error_rate: sign_errors as f64 / reps_f,
        rows,
    })
}
