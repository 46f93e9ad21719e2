//! (mu/mu_w, lambda) CMA-ES minimizer with box constraints.
//!
//! The search runs in coordinates normalized to the unit box, so the initial step size
//! is a fraction of each dimension's width. Learning rates and recombination weights
//! follow the standard defaults from Hansen's tutorial. Out-of-box samples are redrawn
//! a few times and then clamped.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 10;
/// Generations of identical fitness values before declaring stagnation.
const FLAT_GENERATIONS: usize = 10;
/// Step size (in unit-box coordinates) below which the search has collapsed.
const TOL_X: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmaConfig {
    /// Population size; `None` selects `4 + floor(3 ln n)`.
    pub lambda: Option<usize>,
    /// Initial step size as a fraction of each box dimension.
    pub sigma0: f64,
    pub max_evals: usize,
    pub seed: u64,
    /// Per-dimension `[lo, hi]`; left empty when the caller supplies bounds.
    pub bounds: Vec<(f64, f64)>,
    /// Evaluate each generation's candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            sigma0: 0.3,
            max_evals: 300,
            seed: 0,
            bounds: Vec::new(),
            parallel: false,
        }
    }
}

impl CmaConfig {
    pub fn default_lambda(n: usize) -> usize {
        4 + (3.0 * (n as f64).ln()).floor() as usize
    }

    pub fn population(&self, n: usize) -> usize {
        self.lambda.unwrap_or_else(|| Self::default_lambda(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    EvaluationBudget,
    /// Fitness values stopped changing.
    Stagnation,
    /// Step size collapsed.
    TolX,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub generation: usize,
    pub evals: usize,
    pub best_value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaResult {
    pub best_x: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

impl CmaResult {
    /// Writes the per-generation trace as `generation,evals,best_value,sigma`.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generation", "evals", "best_value", "sigma"])?;
        for r in &self.trace {
            w.write_record([
                r.generation.to_string(),
                r.evals.to_string(),
                format!("{:e}", r.best_value),
                format!("{:e}", r.sigma),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Params {
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Params {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (0..mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// Minimizes `f` from `x0` inside the box `cfg.bounds`.
pub fn minimize<F>(f: F, x0: &[f64], cfg: &CmaConfig) -> Result<CmaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidParameter("CMA-ES needs at least one dimension".into()));
    }
    let bounds = &cfg.bounds;
    if bounds.len() != n {
        return Err(Error::InvalidParameter(format!("expected {n} bounds, got {}", bounds.len())));
    }
    if let Some((i, _)) = bounds.iter().enumerate().find(|(_, (lo, hi))| !(lo < hi)) {
        return Err(Error::InvalidParameter(format!("bound {i} is empty")));
    }
    if let Some(i) = (0..n).find(|&i| !(bounds[i].0..=bounds[i].1).contains(&x0[i])) {
        return Err(Error::InvalidParameter(format!("x0[{i}] = {} lies outside its bounds", x0[i])));
    }
    let lambda = cfg.population(n);
    if lambda < 4 {
        return Err(Error::InvalidParameter(format!("population must be at least 4, got {lambda}")));
    }
    if cfg.max_evals < lambda {
        return Err(Error::InvalidParameter(format!(
            "evaluation budget {} is smaller than the population {lambda}",
            cfg.max_evals
        )));
    }
    if !(cfg.sigma0 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma0 must be positive, got {}", cfg.sigma0)));
    }

    let to_unit = |x: &[f64]| -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|i| (x[i] - bounds[i].0) / (bounds[i].1 - bounds[i].0)))
    };
    let from_unit = |u: &DVector<f64>| -> Vec<f64> {
        (0..n)
            .map(|i| (bounds[i].0 + u[i] * (bounds[i].1 - bounds[i].0)).clamp(bounds[i].0, bounds[i].1))
            .collect()
    };

    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::InvalidParameter(format!("objective at x0 is not finite ({f0})")));
    }
    let mut best_x = x0.to_vec();
    let mut best_value = f0;
    let mut evals = 1;

    let p = Params::new(n, lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mean = to_unit(x0);
    let mut sigma = cfg.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut p_sigma = DVector::<f64>::zeros(n);
    let mut p_c = DVector::<f64>::zeros(n);
    let mut trace = Vec::new();
    let mut flat_run = 0;
    let mut generation = 0;

    let termination = loop {
        if evals + lambda > cfg.max_evals {
            break Termination::EvaluationBudget;
        }

        let mut candidates: Vec<DVector<f64>> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let mut u = mean.clone();
            for attempt in 0..=MAX_RESAMPLES {
                let z = DVector::<f64>::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
                u = &mean + sigma * (&basis * scales.component_mul(&z));
                if attempt == MAX_RESAMPLES || u.iter().all(|&v| (0.0..=1.0).contains(&v)) {
                    break;
                }
            }
            u.apply(|v| *v = v.clamp(0.0, 1.0));
            candidates.push(u);
        }
        let points: Vec<Vec<f64>> = candidates.iter().map(&from_unit).collect();
        let values: Vec<f64> = if cfg.parallel {
            points.par_iter().map(|x| sanitize(f(x))).collect()
        } else {
            points.iter().map(|x| sanitize(f(x))).collect()
        };
        evals += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        if values[order[0]] < best_value {
            best_value = values[order[0]];
            best_x = points[order[0]].clone();
        }

        let old_mean = mean.clone();
        mean = DVector::zeros(n);
        for (w, &i) in p.weights.iter().zip(&order[..p.mu]) {
            mean += *w * &candidates[i];
        }
        let y_w = (&mean - &old_mean) / sigma;

        // C^{-1/2} y_w through the eigenbasis
        let inv_sqrt_y = &basis * (basis.transpose() * &y_w).component_div(&scales);
        p_sigma = (1.0 - p.c_sigma) * &p_sigma + (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt() * inv_sqrt_y;
        let ps_norm = p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - p.c_sigma).powi(2 * (generation as i32 + 1))).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        p_c = (1.0 - p.c_c) * &p_c + h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &i) in p.weights.iter().zip(&order[..p.mu]) {
            let y = (&candidates[i] - &old_mean) / sigma;
            rank_mu += *w * &y * y.transpose();
        }
        cov = (1.0 - p.c_1 - p.c_mu) * &cov
            + p.c_1 * (&p_c * p_c.transpose() + (1.0 - h) * p.c_c * (2.0 - p.c_c) * &cov)
            + p.c_mu * rank_mu;
        cov = (&cov + cov.transpose()) * 0.5;

        sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();

        let eig = SymmetricEigen::new(cov.clone());
        basis = eig.eigenvectors;
        scales = eig.eigenvalues.map(|v| v.max(1e-20).sqrt());

        generation += 1;
        trace.push(TraceRow {
            generation,
            evals,
            best_value,
            sigma,
        });

        let spread = values[order[lambda - 1]] - values[order[0]];
        flat_run = if spread == 0.0 { flat_run + 1 } else { 0 };
        if flat_run >= FLAT_GENERATIONS {
            break Termination::Stagnation;
        }
        if sigma * scales.max() < TOL_X {
            break Termination::TolX;
        }
    };

    Ok(CmaResult {
        best_x,
        best_value,
        evaluations: evals,
        termination,
        trace,
    })
}

/// NaN objective values rank last.
fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}
