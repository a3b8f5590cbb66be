use rand::Rng as _;
use serde::Serialize;

use super::AnalysisError;
use crate::rng;

pub const EM_MAX_ITERS: usize = 500;
pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_RESTARTS: usize = 5;

/// One-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub var_floor: f64,
    pub log_likelihood: f64,
    /// Log-likelihood after every E-step of the winning restart.
    pub ll_trace: Vec<f64>,
    /// Smallest effective sample count `n * p_i` over components.
    pub min_support: f64,
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.means.len()
    }

    /// Total log-likelihood of `xs` under the mixture.
    pub fn log_likelihood_of(&self, xs: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.means.len()];
        xs.iter().map(|&x| log_sum_exp(self.log_joint(x, &mut buf))).sum()
    }

    fn log_joint<'b>(&self, x: f64, buf: &'b mut [f64]) -> &'b [f64] {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = self.weights[k].ln() + log_normal(x, self.means[k], self.variances[k]);
        }
        buf
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

/// `1e-6` of the sample variance, with an absolute floor for constant data.
pub fn var_floor(samples: &[f64]) -> f64 {
    (1e-6 * mean_var(samples).1).max(1e-10)
}

fn kmeans_pp(xs: &[f64], c: usize, r: &mut rng::Rng) -> Vec<f64> {
    let mut centers = vec![xs[r.gen_range(0..xs.len())]];
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - centers[0]).powi(2)).collect();
    while centers.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = r.gen::<f64>() * total;
            let mut pick = xs.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            xs[pick]
        } else {
            xs[r.gen_range(0..xs.len())]
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(xs) {
            *d = d.min((x - next).powi(2));
        }
    }
    centers
}

fn em(xs: &[f64], init_means: Vec<f64>, floor: f64) -> GmmModel {
    let (c, n) = (init_means.len(), xs.len() as f64);
    let v0 = mean_var(xs).1.max(floor);
    let mut m = GmmModel {
        weights: vec![1.0 / c as f64; c],
        means: init_means,
        variances: vec![v0; c],
        var_floor: floor,
        log_likelihood: f64::NEG_INFINITY,
        ll_trace: Vec::new(),
        min_support: n / c as f64,
    };
    let mut resp = vec![0.0; xs.len() * c];
    let mut buf = vec![0.0; c];
    let mut converged = false;
    let mut reseeds = MAX_RESEEDS;
    for _ in 0..EM_MAX_ITERS {
        // E-step.
        let mut ll = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let lj = m.log_joint(x, &mut buf);
            let lse = log_sum_exp(lj);
            ll += lse;
            for k in 0..c {
                resp[i * c + k] = (lj[k] - lse).exp();
            }
        }
        let gain = ll - m.log_likelihood;
        m.log_likelihood = ll;
        m.ll_trace.push(ll);
        if gain < EM_TOLERANCE {
            converged = true;
            break;
        }
        // M-step; an empty component keeps its mean and variance.
        for k in 0..c {
            let nk: f64 = (0..xs.len()).map(|i| resp[i * c + k]).sum();
            m.weights[k] = nk / n;
            if nk > 0.0 {
                let mu = xs.iter().enumerate().map(|(i, x)| resp[i * c + k] * x).sum::<f64>() / nk;
                let var = xs.iter().enumerate().map(|(i, x)| resp[i * c + k] * (x - mu) * (x - mu)).sum::<f64>() / nk;
                m.means[k] = mu;
                m.variances[k] = var.max(floor);
            }
        }
        // A component shrinking onto a handful of samples is moved into the
        // heaviest component, which is split in two along its spread.
        while reseeds > 0 {
            let Some(k) = (0..c).find(|&k| m.weights[k] * n < MIN_SUPPORT) else { break };
            let j = (0..c).fold(0, |b, i| if m.weights[i] > m.weights[b] { i } else { b });
            if j == k || m.weights[j] * n < 2.0 * MIN_SUPPORT {
                break;
            }
            reseeds -= 1;
            let half = 0.5 * m.variances[j].sqrt();
            let w = 0.5 * (m.weights[j] + m.weights[k]);
            m.means[k] = m.means[j] + half;
            m.means[j] -= half;
            m.variances[k] = m.variances[j];
            m.weights[k] = w;
            m.weights[j] = w;
            // The likelihood may drop; restart the convergence test.
            m.log_likelihood = f64::NEG_INFINITY;
        }
    }
    if !converged {
        // The last M-step moved the parameters past the stored likelihood.
        m.log_likelihood = m.log_likelihood_of(xs);
    }
    m.min_support = m.weights.iter().map(|w| w * n).fold(f64::INFINITY, f64::min);
    m
}

/// Components carrying less mass than this collapse onto single samples.
pub const MIN_SUPPORT: f64 = 2.0;

/// Re-seeds of collapsing components allowed per EM run.
pub const MAX_RESEEDS: usize = 10;

/// EM fit with k-means++ seeding; best of `EM_RESTARTS` seeded restarts.
///
/// Restarts that end with a component supported by fewer than
/// `MIN_SUPPORT` samples sit on a likelihood singularity and only win when
/// every restart does.
pub fn fit_gmm(samples: &[f64], c: usize, seed: u64) -> Result<GmmModel, AnalysisError> {
    if c == 0 || samples.len() < c {
        return Err(AnalysisError::TooFewSamples { have: samples.len(), need: c.max(1) });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite sample".into()));
    }
    let floor = var_floor(samples);
    let key = |m: &GmmModel| (m.min_support >= MIN_SUPPORT, m.log_likelihood);
    let mut best: Option<GmmModel> = None;
    for restart in 0..EM_RESTARTS {
        let mut r = rng::stream(seed, &format!("gmm/c{c}/r{restart}"));
        let m = em(samples, kmeans_pp(samples, c, &mut r), floor);
        if best.as_ref().map_or(true, |b| key(&m) > key(b)) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// `2k - 2 ln L` with `k = 3C - 1`.
pub fn aic(model: &GmmModel) -> f64 {
    let k = 3 * model.n_components() - 1;
    2.0 * k as f64 - 2.0 * model.log_likelihood
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AicPoint {
    pub c: usize,
    pub aic: f64,
    pub aic_per_sample: f64,
    pub log_likelihood: f64,
}

/// Fits every `C` in `c_min..=c_max` and returns the AIC minimizer (smaller
/// `C` on ties) together with the whole curve.
pub fn select_clusters(
    samples: &[f64],
    c_min: usize,
    c_max: usize,
    seed: u64,
) -> Result<(usize, Vec<AicPoint>), AnalysisError> {
    if c_min == 0 || c_min > c_max {
        return Err(AnalysisError::InvalidInput(format!("bad cluster range {c_min}..={c_max}")));
    }
    let n = samples.len() as f64;
    let mut curve = Vec::new();
    let mut best = (c_min, f64::INFINITY);
    for c in c_min..=c_max {
        let m = fit_gmm(samples, c, seed)?;
        let a = aic(&m);
        if a < best.1 {
            best = (c, a);
        }
        curve.push(AicPoint { c, aic: a, aic_per_sample: a / n, log_likelihood: m.log_likelihood });
    }
    Ok((best.0, curve))
}

/// Samples from a mixture, for synthetic checks.
pub fn sample_mixture(weights: &[f64], means: &[f64], sds: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, "synthetic-mixture");
    let total: f64 = weights.iter().sum();
    (0..n)
        .map(|_| {
            let mut u = r.gen::<f64>() * total;
            let mut k = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    k = i;
                    break;
                }
                u -= w;
            }
            // Box-Muller.
            let (u1, u2): (f64, f64) = (1.0 - r.gen::<f64>(), r.gen());
            means[k] + sds[k] * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}
