//! ECG-mismatch cost and the surrogate-assisted evolutionary minimizer.
//!
//! The genetic algorithm uses truncation selection, barycentric crossover
//! with mildly extrapolating coefficients, per-coordinate Gaussian mutation
//! whose amplitude shrinks over generations, and one-elitism. Under an
//! exact-evaluation budget, early generations are fully exact and later ones
//! evaluate only the individuals ranked most promising by a radial-basis
//! surrogate fit to the growing database; everyone else inherits the
//! surrogate value. The reported optimum is always an exactly evaluated
//! individual.

pub mod rbf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecg::EcgTrace;
use crate::error::{Error, Result};

pub use rbf::{surrogate_fit, RbfSurrogate};

/// Finite admissible point set; projection maps a candidate to the nearest
/// admissible point (Euclidean, ties to the lowest index).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibleSet {
    pub points: Vec<Vec<f64>>,
}

impl AdmissibleSet {
    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d: f64 = p
                .iter()
                .zip(theta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d - 1e-300 {
                best_d = d;
                best = i;
            }
        }
        self.points[best].clone()
    }
}

/// Cartesian product of closed intervals, with an optional admissibility
/// mask for constrained searches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mask: Option<AdmissibleSet>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<SearchBox> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::config("/search_box", "inconsistent bounds"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) {
                return Err(Error::config(
                    format!("/search_box/{i}"),
                    "lower bound must be below upper bound",
                ));
            }
        }
        Ok(SearchBox {
            lower,
            upper,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: AdmissibleSet) -> SearchBox {
        self.mask = Some(mask);
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.width(i)).collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .enumerate()
            .all(|(i, &t)| t >= self.lower[i] && t <= self.upper[i])
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Clamp to the box, then project onto the mask when present.
    pub fn project(&self, theta: &mut Vec<f64>) {
        self.clamp(theta);
        if let Some(mask) = &self.mask {
            *theta = mask.project(theta);
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut theta: Vec<f64> = (0..self.dim())
            .map(|i| self.lower[i] + rng.gen::<f64>() * self.width(i))
            .collect();
        self.project(&mut theta);
        theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalKind {
    Exact,
    Surrogate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Individual {
    pub theta: Vec<f64>,
    pub cost: f64,
    pub kind: EvalKind,
}

/// Exact evaluations accumulated across generations. Points equal within
/// 1e-12 per coordinate reuse the stored cost instead of re-evaluating.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalDatabase {
    thetas: Vec<Vec<f64>>,
    costs: Vec<f64>,
}

impl EvalDatabase {
    pub fn new() -> EvalDatabase {
        EvalDatabase::default()
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[Vec<f64>] {
        &self.thetas
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn lookup(&self, theta: &[f64]) -> Option<f64> {
        self.thetas
            .iter()
            .position(|t| {
                t.len() == theta.len()
                    && t.iter().zip(theta).all(|(a, b)| (a - b).abs() <= 1e-12)
            })
            .map(|i| self.costs[i])
    }

    /// Insert unless an equivalent point exists; returns the stored cost.
    pub fn insert(&mut self, theta: &[f64], cost: f64) -> f64 {
        if let Some(existing) = self.lookup(theta) {
            return existing;
        }
        self.thetas.push(theta.to_vec());
        self.costs.push(cost);
        cost
    }

    pub fn best(&self) -> Option<(Vec<f64>, f64)> {
        self.costs
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, &c)| (self.thetas[i].clone(), c))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Total exact-evaluation budget.
    pub max_exact: usize,
    /// Fraction of the population surviving truncation selection.
    pub survivor_fraction: f64,
    /// Barycentric crossover coefficient range.
    pub crossover_low: f64,
    pub crossover_high: f64,
    /// Per-individual mutation probability.
    pub mutation_prob: f64,
    /// Initial mutation sigma as a fraction of each interval width.
    pub mutation_sigma0: f64,
    pub seed: u64,
}

impl GaConfig {
    pub fn new(population: usize, generations: usize, max_exact: usize, seed: u64) -> GaConfig {
        GaConfig {
            population,
            generations,
            max_exact,
            survivor_fraction: 0.5,
            crossover_low: -0.25,
            crossover_high: 1.25,
            mutation_prob: 0.2,
            mutation_sigma0: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::config("/ga/population", "must be at least 2"));
        }
        if self.generations == 0 {
            return Err(Error::config("/ga/generations", "must be at least 1"));
        }
        if self.max_exact < self.population {
            return Err(Error::config(
                "/ga/max_exact",
                "budget below one full generation (the first generation is fully exact)",
            ));
        }
        if self.max_exact > self.population * self.generations {
            return Err(Error::config(
                "/ga/max_exact",
                "budget exceeds total evaluations demanded",
            ));
        }
        if !(self.survivor_fraction > 0.0 && self.survivor_fraction <= 1.0) {
            return Err(Error::config("/ga/survivor_fraction", "must be in (0, 1]"));
        }
        if !(self.mutation_prob >= 0.0 && self.mutation_prob <= 1.0) {
            return Err(Error::config("/ga/mutation_prob", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Exact evaluations allotted to each generation. The first `ceil(N_g/3)`
/// generations (capped by the budget) are fully exact; the remainder ramps
/// down linearly, with rounding remainders given to the earliest generations
/// so the total equals the budget exactly.
pub fn budget_schedule(cfg: &GaConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let np = cfg.population;
    let ng = cfg.generations;
    let nex = cfg.max_exact;

    let g0 = ((ng + 2) / 3).clamp(1, nex / np);
    let mut schedule = vec![np; g0];
    let d = ng - g0;
    let mut remaining = nex - g0 * np;
    if d == 0 {
        debug_assert_eq!(remaining, 0);
        return Ok(schedule);
    }
    let wsum = d * (d + 1) / 2;
    let mut ramp: Vec<usize> = (0..d).map(|j| remaining * (d - j) / wsum).collect();
    let mut used: usize = ramp.iter().sum();
    let mut j = 0;
    while used < remaining {
        ramp[j % d] += 1;
        used += 1;
        j += 1;
    }
    // Cap at the population size, pushing overflow to later generations.
    for i in 0..d {
        if ramp[i] > np {
            let extra = ramp[i] - np;
            ramp[i] = np;
            if i + 1 < d {
                ramp[i + 1] += extra;
            } else {
                remaining = 0; // tail overflow cannot happen when nex <= np*ng
            }
        }
    }
    schedule.extend(ramp);
    debug_assert_eq!(schedule.iter().sum::<usize>(), nex);
    Ok(schedule)
}

pub fn budget_for_generation(cfg: &GaConfig, generation: usize) -> Result<usize> {
    let schedule = budget_schedule(cfg)?;
    schedule.get(generation).copied().ok_or_else(|| {
        Error::config(
            "/ga/generation",
            format!("generation {generation} outside 0..{}", cfg.generations),
        )
    })
}

/// Discrete ECG mismatch over the three limb leads:
/// `J = dt * sum_i (dI_i^2 + dII_i^2 + dIII_i^2)`.
pub fn ecg_mismatch(sim: &EcgTrace, reference: &EcgTrace) -> Result<f64> {
    if (sim.dt - reference.dt).abs() > 1e-12 {
        return Err(Error::Numerical(format!(
            "trace steps differ: {} vs {}",
            sim.dt, reference.dt
        )));
    }
    if sim.len() != reference.len() {
        return Err(Error::Dimension {
            context: "ecg mismatch".into(),
            expected: reference.len(),
            found: sim.len(),
        });
    }
    let mut total = 0.0;
    for lead in ["I", "II", "III"] {
        let a = sim.lead_index(lead)?;
        let b = reference.lead_index(lead)?;
        for (ra, rb) in sim.rows.iter().zip(&reference.rows) {
            let d = ra[a] - rb[b];
            total += d * d;
        }
    }
    Ok(sim.dt * total)
}

/// Cost of a parameter point: simulate, then apply the discrete mismatch.
pub fn cost_j<F>(theta: &[f64], reference: &EcgTrace, evaluator: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<EcgTrace>,
{
    let trace = evaluator(theta)?;
    ecg_mismatch(&trace, reference)
}

/// Mean relative error against a reference parameter vector, in percent
/// when multiplied by 100: `(1/n) sum |theta_i - ref_i| / |ref_i|`.
pub fn mean_relative_error(theta: &[f64], theta_ref: &[f64]) -> f64 {
    assert_eq!(theta.len(), theta_ref.len());
    theta
        .iter()
        .zip(theta_ref)
        .map(|(t, r)| (t - r).abs() / r.abs())
        .sum::<f64>()
        / theta.len() as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best exact cost present in this generation's population.
    pub best_cost: f64,
    pub best_theta: Vec<f64>,
    /// Evaluator calls spent this generation.
    pub exact_used: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Individual,
    pub history: Vec<GenerationRecord>,
    pub exact_evaluations: usize,
    pub database: EvalDatabase,
}

/// Minimize `cost` over the box with the seeded, budgeted genetic algorithm.
/// Exact evaluations within a generation run in parallel and are collated in
/// candidate order, so results are reproducible bit for bit per seed.
pub fn ga_minimize<F>(cost: &F, search: &SearchBox, cfg: &GaConfig) -> Result<GaResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    use rand::SeedableRng;
    cfg.validate()?;
    let schedule = budget_schedule(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let np = cfg.population;
    let n = search.dim();

    let mut population: Vec<Vec<f64>> = (0..np).map(|_| search.sample(&mut rng)).collect();
    let mut database = EvalDatabase::new();
    let mut history = Vec::with_capacity(cfg.generations);
    let mut exact_evaluations = 0usize;
    let mut elite: Option<Individual> = None;

    for g in 0..cfg.generations {
        let quota = schedule[g];

        // Decide who gets an exact evaluation.
        let known: Vec<Option<f64>> = population.iter().map(|t| database.lookup(t)).collect();
        let mut unknown: Vec<usize> = (0..np).filter(|&i| known[i].is_none()).collect();
        let exact_set: Vec<usize> = if unknown.len() <= quota {
            unknown.clone()
        } else {
            let surrogate = surrogate_fit(&database, search)?;
            let mut ranked: Vec<(usize, f64)> = unknown
                .iter()
                .map(|&i| (i, surrogate.predict(&population[i])))
                .collect();
            ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            unknown = ranked.iter().map(|(i, _)| *i).collect();
            unknown[..quota].to_vec()
        };

        // Exact evaluations, in parallel, collated by candidate index.
        let evaluated: Vec<(usize, f64)> = exact_set
            .par_iter()
            .map(|&i| cost(&population[i]).map(|c| (i, c)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| {
                Error::Numerical(format!(
                    "evaluator failed in generation {g} after {exact_evaluations} exact \
                     evaluations ({} generations completed): {e}",
                    history.len()
                ))
            })?;
        exact_evaluations += evaluated.len();

        let mut individuals: Vec<Individual> = Vec::with_capacity(np);
        let mut exact_cost: Vec<Option<f64>> = known.clone();
        for &(i, c) in &evaluated {
            database.insert(&population[i], c);
            exact_cost[i] = Some(c);
        }
        let surrogate = if exact_cost.iter().any(|c| c.is_none()) {
            Some(surrogate_fit(&database, search)?)
        } else {
            None
        };
        for (i, theta) in population.iter().enumerate() {
            let (cost_val, kind) = match exact_cost[i] {
                Some(c) => (c, EvalKind::Exact),
                None => (
                    surrogate.as_ref().expect("surrogate required").predict(theta),
                    EvalKind::Surrogate,
                ),
            };
            individuals.push(Individual {
                theta: theta.clone(),
                cost: cost_val,
                kind,
            });
        }

        // Track the elite by exact cost only.
        let gen_best_exact = individuals
            .iter()
            .filter(|ind| ind.kind == EvalKind::Exact)
            .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap());
        if let Some(best) = gen_best_exact {
            if elite
                .as_ref()
                .map(|e| best.cost < e.cost)
                .unwrap_or(true)
            {
                elite = Some(best.clone());
            }
        }
        let elite_now = elite.clone().ok_or_else(|| {
            Error::Numerical("no exact evaluation available for elitism".into())
        })?;
        history.push(GenerationRecord {
            generation: g,
            best_cost: elite_now.cost,
            best_theta: elite_now.theta.clone(),
            exact_used: evaluated.len(),
        });

        if g + 1 == cfg.generations {
            break;
        }

        // Truncation selection on the current cost values.
        let mut order: Vec<usize> = (0..np).collect();
        order.sort_by(|&a, &b| {
            individuals[a]
                .cost
                .partial_cmp(&individuals[b].cost)
                .unwrap()
                .then(a.cmp(&b))
        });
        let keep = ((np as f64 * cfg.survivor_fraction).ceil() as usize).clamp(1, np);
        let survivors: Vec<Vec<f64>> = order[..keep]
            .iter()
            .map(|&i| individuals[i].theta.clone())
            .collect();

        // Refill with barycentric crossover of random survivor pairs.
        let mut next: Vec<Vec<f64>> = survivors.clone();
        while next.len() < np {
            let a = rng.gen_range(0..survivors.len());
            let b = if survivors.len() > 1 {
                let mut b = rng.gen_range(0..survivors.len() - 1);
                if b >= a {
                    b += 1;
                }
                b
            } else {
                a
            };
            for _ in 0..2 {
                if next.len() == np {
                    break;
                }
                let lambda = cfg.crossover_low
                    + rng.gen::<f64>() * (cfg.crossover_high - cfg.crossover_low);
                let child: Vec<f64> = survivors[a]
                    .iter()
                    .zip(&survivors[b])
                    .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                    .collect();
                next.push(child);
            }
        }

        // Shrinking Gaussian mutation.
        let sigma_scale = cfg.mutation_sigma0 * (1.0 - (g + 1) as f64 / cfg.generations as f64);
        for theta in next.iter_mut() {
            if rng.gen::<f64>() < cfg.mutation_prob {
                for (i, t) in theta.iter_mut().enumerate() {
                    *t += gaussian(&mut rng) * sigma_scale * search.width(i);
                }
            }
        }
        for theta in next.iter_mut() {
            let mut v = std::mem::take(theta);
            search.project(&mut v);
            *theta = v;
        }
        debug_assert!(next.iter().all(|t| search.contains(t)));

        // One-elitism: the best exact individual always survives.
        next[0] = elite_now.theta.clone();
        let _ = n;
        population = next;
    }

    let best = elite.ok_or_else(|| Error::Numerical("optimizer produced no result".into()))?;
    Ok(GaResult {
        best,
        history,
        exact_evaluations,
        database,
    })
}

/// Standard normal via Box-Muller, driven by the seeded generator.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Infarct-center identification: a 2D search constrained to the admissible
/// mask (e.g. left-ventricle element centroids), with ECG-mismatch cost.
pub fn identify_infarct<F>(
    reference: &EcgTrace,
    evaluator: F,
    search: &SearchBox,
    cfg: &GaConfig,
) -> Result<GaResult>
where
    F: Fn(&[f64]) -> Result<EcgTrace> + Sync,
{
    if search.mask.is_none() {
        return Err(Error::config(
            "/search_box/mask",
            "infarct search requires an admissibility mask",
        ));
    }
    let cost = |theta: &[f64]| cost_j(theta, reference, &evaluator);
    ga_minimize(&cost, search, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(dt: f64, rows: Vec<Vec<f64>>) -> EcgTrace {
        let names: Vec<String> = ["I", "II", "III"].iter().map(|s| s.to_string()).collect();
        let mut t = EcgTrace::new(dt, 0.0, names);
        for r in rows {
            t.push(r).unwrap();
        }
        t
    }

    #[test]
    fn mismatch_zero_for_identical() {
        let a = trace(0.5, vec![vec![1.0, 2.0, 1.0], vec![0.5, 0.2, -0.3]]);
        assert_eq!(ecg_mismatch(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mismatch_constant_offset_closed_form() {
        let n = 7;
        let c = 0.3;
        let base: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, -1.0, 2.0]).collect();
        let shifted: Vec<Vec<f64>> = base
            .iter()
            .map(|r| vec![r[0] + c, r[1], r[2]])
            .collect();
        let a = trace(0.5, shifted);
        let b = trace(0.5, base);
        let j = ecg_mismatch(&a, &b).unwrap();
        assert!((j - 0.5 * n as f64 * c * c).abs() < 1e-12);
    }

    #[test]
    fn mismatch_matches_double_loop_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let rows_a: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let rows_b: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let dt = 0.25;
        let a = trace(dt, rows_a.clone());
        let b = trace(dt, rows_b.clone());
        // independently coded brute-force double loop
        let mut oracle = 0.0;
        for i in 0..5 {
            for l in 0..3 {
                let d = rows_a[i][l] - rows_b[i][l];
                oracle += d * d;
            }
        }
        oracle *= dt;
        assert!((ecg_mismatch(&a, &b).unwrap() - oracle).abs() < 1e-14);
    }

    #[test]
    fn mismatch_rejects_length_and_step_mismatch() {
        let a = trace(0.5, vec![vec![0.0; 3]; 4]);
        let b = trace(0.5, vec![vec![0.0; 3]; 5]);
        assert!(ecg_mismatch(&a, &b).is_err());
        let c = trace(0.25, vec![vec![0.0; 3]; 4]);
        assert!(ecg_mismatch(&a, &c).is_err());
    }

    #[test]
    fn table_rows_of_mean_relative_error() {
        let reference = [0.8, 1e-3, 200.0, 120.0];
        let m1 = mean_relative_error(&[0.95, 9.3e-4, 185.0, 126.0], &reference);
        assert!((100.0 * m1 - 9.6).abs() < 0.05, "{}", 100.0 * m1);
        let m2 = mean_relative_error(&[0.86, 1e-3, 179.0, 123.5], &reference);
        assert!((100.0 * m2 - 5.2).abs() < 0.05, "{}", 100.0 * m2);
        assert_eq!(mean_relative_error(&reference, &reference), 0.0);
    }

    #[test]
    fn budget_examples() {
        // headline configuration: totals must match exactly
        let cfg = GaConfig::new(80, 15, 600, 0);
        let s = budget_schedule(&cfg).unwrap();
        assert_eq!(s.len(), 15);
        assert_eq!(s.iter().sum::<usize>(), 600);
        assert_eq!(s[0], 80); // first generation fully exact
        for w in s.windows(2) {
            assert!(w[1] <= w[0], "schedule not nonincreasing: {s:?}");
        }

        // saturated budget: every evaluation exact
        let cfg = GaConfig::new(10, 7, 70, 0);
        let s = budget_schedule(&cfg).unwrap();
        assert!(s.iter().all(|&e| e == 10));

        // first-phase cap exceeding the budget shrinks the exact phase
        let cfg = GaConfig::new(300, 20, 1700, 0);
        let s = budget_schedule(&cfg).unwrap();
        assert_eq!(s.iter().sum::<usize>(), 1700);
        assert_eq!(s[0], 300);

        // infeasible budgets rejected
        assert!(budget_schedule(&GaConfig::new(80, 15, 40, 0)).is_err());
        assert!(budget_schedule(&GaConfig::new(10, 2, 100, 0)).is_err());
    }

    #[test]
    fn sphere_function_statistical_fixture() {
        // analytic optimum; statistical acceptance over 100 seeds
        let target = [0.62, 0.37];
        let cost = |theta: &[f64]| -> Result<f64> {
            Ok(theta
                .iter()
                .zip(&target)
                .map(|(t, s)| (t - s) * (t - s))
                .sum())
        };
        let search = SearchBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let mut hits = 0;
        for seed in 0..100 {
            let cfg = GaConfig::new(40, 30, 40 * 30, seed);
            let result = ga_minimize(&cost, &search, &cfg).unwrap();
            let dist: f64 = result
                .best
                .theta
                .iter()
                .zip(&target)
                .map(|(t, s)| (t - s) * (t - s))
                .sum::<f64>()
                .sqrt();
            if dist < 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 seeds converged");
    }

    #[test]
    fn elitism_monotone_and_budget_respected() {
        let cost = |theta: &[f64]| -> Result<f64> {
            Ok((theta[0] - 0.2).powi(2) + (theta[1] + 0.4).powi(2) + theta[2].abs())
        };
        let search = SearchBox::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        let cfg = GaConfig::new(24, 12, 120, 7);
        let result = ga_minimize(&cost, &search, &cfg).unwrap();
        for w in result.history.windows(2) {
            assert!(w[1].best_cost <= w[0].best_cost);
        }
        assert!(result.exact_evaluations <= 120);
        assert_eq!(result.best.kind, EvalKind::Exact);
        assert!(search.contains(&result.best.theta));
        // final best agrees with the database optimum
        let (_, db_best) = result.database.best().unwrap();
        assert_eq!(result.best.cost, db_best);
    }

    #[test]
    fn determinism_bit_for_bit() {
        let cost = |theta: &[f64]| -> Result<f64> { Ok(theta.iter().map(|t| t * t).sum()) };
        let search = SearchBox::new(vec![-2.0; 2], vec![2.0; 2]).unwrap();
        let cfg = GaConfig::new(16, 8, 64, 99);
        let a = ga_minimize(&cost, &search, &cfg).unwrap();
        let b = ga_minimize(&cost, &search, &cfg).unwrap();
        assert_eq!(a.exact_evaluations, b.exact_evaluations);
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.best_cost.to_bits(), rb.best_cost.to_bits());
            for (x, y) in ra.best_theta.iter().zip(&rb.best_theta) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn mask_projection_keeps_candidates_admissible() {
        let mask = AdmissibleSet {
            points: vec![vec![0.25, 0.25], vec![0.75, 0.75], vec![0.25, 0.75]],
        };
        let search = SearchBox::new(vec![0.0, 0.0], vec![1.0, 1.0])
            .unwrap()
            .with_mask(mask.clone());
        let cost = |theta: &[f64]| -> Result<f64> {
            Ok((theta[0] - 0.75).powi(2) + (theta[1] - 0.75).powi(2))
        };
        let cfg = GaConfig::new(10, 6, 60, 3);
        let result = ga_minimize(&cost, &search, &cfg).unwrap();
        assert_eq!(result.best.theta, vec![0.75, 0.75]);
        // every database point is one of the admissible points
        for theta in result.database.thetas() {
            assert!(mask.points.iter().any(|p| p == theta));
        }
    }

    #[test]
    fn database_deduplicates() {
        let mut db = EvalDatabase::new();
        db.insert(&[1.0, 2.0], 5.0);
        let reused = db.insert(&[1.0 + 1e-13, 2.0], 9.0);
        assert_eq!(reused, 5.0);
        assert_eq!(db.len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn schedule_totals_and_shape(
                np in 2usize..60,
                ng in 1usize..25,
                frac in 0.0f64..1.0,
            ) {
                let max = np * ng;
                let nex = np + ((max - np) as f64 * frac) as usize;
                let cfg = GaConfig::new(np, ng, nex, 0);
                let s = budget_schedule(&cfg).unwrap();
                prop_assert_eq!(s.len(), ng);
                prop_assert_eq!(s.iter().sum::<usize>(), nex);
                prop_assert_eq!(s[0], np);
                prop_assert!(s.iter().all(|&e| e <= np));
                for w in s.windows(2) {
                    prop_assert!(w[1] <= w[0]);
                }
            }
        }
    }
}
