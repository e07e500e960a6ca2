//! Derivative-free evolutionary maximization over a box in R^d.
//!
//! Deterministic for a fixed seed: all random draws happen sequentially on
//! a single stream; only objective evaluations run in parallel.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvoConfig {
    pub population: usize,
    pub generations: usize,
    pub restarts: usize,
    pub elite: usize,
    pub crossover_prob: f64,
    /// Mutation standard deviation as a fraction of each box width.
    pub mutation_scale: f64,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population: 60,
            generations: 80,
            restarts: 2,
            elite: 2,
            crossover_prob: 0.7,
            mutation_scale: 0.15,
            seed: 0,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::parameter("population must be at least 2"));
        }
        if self.generations == 0 || self.restarts == 0 {
            return Err(Error::parameter("generations and restarts must be positive"));
        }
        if self.elite >= self.population {
            return Err(Error::parameter("elite must be smaller than population"));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(Error::parameter("crossover_prob must lie in [0, 1]"));
        }
        if !(self.mutation_scale > 0.0) {
            return Err(Error::parameter("mutation_scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvoOutcome {
    pub point: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
    /// Best objective seen so far, recorded after every generation across
    /// all restarts; nondecreasing by construction.
    pub trace: Vec<f64>,
}

fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.clamp(lo, hi)
}

/// Lexicographic comparison used to break exact objective ties so the
/// search result does not depend on evaluation order.
fn better(a_obj: f64, a_pt: &[f64], b_obj: f64, b_pt: &[f64]) -> bool {
    if a_obj != b_obj {
        return a_obj > b_obj;
    }
    for (x, y) in a_pt.iter().zip(b_pt) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Maximize `objective` over the product of `bounds` intervals. Objective
/// values of NaN are treated as −∞.
pub fn maximize<F>(bounds: &[(f64, f64)], cfg: &EvoConfig, objective: F) -> Result<EvoOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty() {
        return Err(Error::parameter("bounds must be nonempty"));
    }
    for &(lo, hi) in bounds {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::parameter(format!(
                "invalid bound [{lo}, {hi}]"
            )));
        }
    }
    let d = bounds.len();
    let eval = |pop: &[Vec<f64>]| -> Vec<f64> {
        pop.par_iter()
            .map(|p| {
                let v = objective(p);
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            })
            .collect()
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0usize;
    let mut trace = Vec::with_capacity(cfg.restarts * cfg.generations);
    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64));
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut pop: Vec<Vec<f64>> = (0..cfg.population)
            .map(|_| {
                bounds
                    .iter()
                    .map(|&(lo, hi)| rng.gen_range(lo..hi))
                    .collect()
            })
            .collect();
        let mut fit = eval(&pop);
        evaluations += pop.len();
        update_best(&mut best, &pop, &fit);
        for gen in 0..cfg.generations {
            // anneal the mutation scale from full width down to 2% so late
            // generations refine instead of wandering
            let anneal = if cfg.generations > 1 {
                0.02f64.powf(gen as f64 / (cfg.generations - 1) as f64)
            } else {
                1.0
            };
            // rank by fitness with lexicographic tie-break (stable result)
            let mut order: Vec<usize> = (0..pop.len()).collect();
            order.sort_by(|&i, &j| {
                if better(fit[i], &pop[i], fit[j], &pop[j]) {
                    std::cmp::Ordering::Less
                } else if better(fit[j], &pop[j], fit[i], &pop[i]) {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            });
            let mut next: Vec<Vec<f64>> = order
                .iter()
                .take(cfg.elite)
                .map(|&i| pop[i].clone())
                .collect();
            while next.len() < cfg.population {
                let pick = |rng: &mut ChaCha8Rng| -> usize {
                    let mut winner = rng.gen_range(0..pop.len());
                    for _ in 0..2 {
                        let c = rng.gen_range(0..pop.len());
                        if better(fit[c], &pop[c], fit[winner], &pop[winner]) {
                            winner = c;
                        }
                    }
                    winner
                };
                let pa = pick(&mut rng);
                let pb = pick(&mut rng);
                let mut child: Vec<f64> = if rng.gen_bool(cfg.crossover_prob) {
                    // blend crossover: per-coordinate convex combination
                    (0..d)
                        .map(|k| {
                            let t: f64 = rng.gen_range(0.0..1.0);
                            t * pop[pa][k] + (1.0 - t) * pop[pb][k]
                        })
                        .collect()
                } else {
                    pop[pa].clone()
                };
                for (k, c) in child.iter_mut().enumerate() {
                    let (lo, hi) = bounds[k];
                    *c = clip(
                        *c + anneal * cfg.mutation_scale * (hi - lo) * normal.sample(&mut rng),
                        lo,
                        hi,
                    );
                }
                next.push(child);
            }
            pop = next;
            fit = eval(&pop);
            evaluations += pop.len();
            update_best(&mut best, &pop, &fit);
            trace.push(best.as_ref().map_or(f64::NEG_INFINITY, |(_, f)| *f));
        }
    }
    match best {
        Some((point, objective)) => Ok(EvoOutcome {
            point,
            objective,
            evaluations,
            trace,
        }),
        None => Err(Error::fit("no finite objective value found in search box")),
    }
}

/// Center a maximizer inside its argmax set, coordinate by coordinate.
/// Piecewise-constant objectives (order-statistic values) attain their
/// maximum on a union of intervals; any search lands on an arbitrary edge
/// point of that set, which inflates the estimator's variance. For each
/// coordinate this scans a fine grid across the box, collects every value
/// attaining the incumbent maximum, and moves to the attaining point
/// closest to the midpoint of the attaining range — so the objective value
/// is exactly preserved.
pub fn center_on_plateau<F>(
    point: &[f64],
    target: f64,
    bounds: &[(f64, f64)],
    mut objective: F,
) -> (Vec<f64>, usize)
where
    F: FnMut(&[f64]) -> f64,
{
    const GRID: usize = 4000;
    if !target.is_finite() {
        return (point.to_vec(), 0);
    }
    let mut x = point.to_vec();
    let mut evals = 0usize;
    for j in 0..x.len() {
        let (lo_b, hi_b) = bounds[j];
        let width = hi_b - lo_b;
        if !(width > 0.0) {
            continue;
        }
        let base = x[j];
        let mut attained = vec![base];
        for k in 0..=GRID {
            let cand = lo_b + width * k as f64 / GRID as f64;
            x[j] = cand;
            if objective(&x) == target {
                attained.push(cand);
            }
            evals += 1;
        }
        let lo = attained.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = attained.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mid = 0.5 * (lo + hi);
        x[j] = attained
            .iter()
            .copied()
            .min_by(|a, b| {
                (a - mid)
                    .abs()
                    .total_cmp(&(b - mid).abs())
                    .then(a.total_cmp(b))
            })
            .unwrap();
    }
    (x, evals)
}

fn update_best(best: &mut Option<(Vec<f64>, f64)>, pop: &[Vec<f64>], fit: &[f64]) {
    for (p, &f) in pop.iter().zip(fit) {
        let replace = match best {
            None => f > f64::NEG_INFINITY,
            Some((bp, bf)) => better(f, p, *bf, bp),
        };
        if replace {
            *best = Some((p.clone(), f));
        }
    }
}
