//! Charge-state statistics: three-component Poisson mixtures of photon
//! counts, post-selection thresholds and the DEER asymmetry diagnostic.
//!
//! Components are ordered by mean rate: index 0 is (NV⁰, NV⁰), 1 is the
//! single-NV⁻ pair, 2 is (NV⁻, NV⁻).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fit::{minimize_residuals, Bounds, FitOptions, FitResult};

/// Relative λ separation below which two components count as collapsed.
pub const COLLAPSE_TOLERANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonHistogram {
    /// counts[n] = shots with n photons.
    pub counts: Vec<u64>,
    pub total_shots: u64,
    /// Gating window, ms.
    pub window_ms: f64,
}

impl PhotonHistogram {
    pub fn new(counts: Vec<u64>, window_ms: f64) -> Result<Self> {
        let h = Self { total_shots: counts.iter().sum(), counts, window_ms };
        h.validate()?;
        Ok(h)
    }

    pub fn from_samples(samples: &[u32], window_ms: f64) -> Result<Self> {
        let max = samples.iter().copied().max().unwrap_or(0) as usize;
        let mut counts = vec![0u64; max + 1];
        for &s in samples {
            counts[s as usize] += 1;
        }
        Self::new(counts, window_ms)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.iter().sum::<u64>() != self.total_shots {
            return Err(Error::InvalidState("histogram bins do not sum to total_shots".into()));
        }
        if self.total_shots == 0 {
            return Err(Error::InvalidState("empty photon histogram".into()));
        }
        if !(self.window_ms > 0.0) {
            return Err(Error::InvalidParameter(format!("gating window {} ms must be positive", self.window_ms)));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().enumerate().map(|(n, &c)| n as f64 * c as f64).sum::<f64>() / self.total_shots as f64
    }

    /// Smallest n with at least fraction `q` of the shots at or below it.
    pub fn quantile(&self, q: f64) -> usize {
        let target = q * self.total_shots as f64;
        let mut acc = 0.0;
        for (n, &c) in self.counts.iter().enumerate() {
            acc += c as f64;
            if acc >= target {
                return n;
            }
        }
        self.counts.len() - 1
    }

    /// Drop bins above `n_max`.
    pub fn truncated(&self, n_max: usize) -> Result<Self> {
        Self::new(self.counts[..=n_max.min(self.counts.len() - 1)].to_vec(), self.window_ms)
    }
}

fn ln_poisson(n: usize, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * lambda.ln() - lambda - ln_gamma(n as f64 + 1.0)
}

pub fn poisson_pmf(n: usize, lambda: f64) -> f64 {
    ln_poisson(n, lambda).exp()
}

/// P(N ≥ n) for N ~ Poisson(λ).
pub fn poisson_sf(n: usize, lambda: f64) -> f64 {
    1.0 - (0..n).map(|k| poisson_pmf(k, lambda)).sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureObjective {
    /// Poisson maximum likelihood on raw bins (EM).
    MaxLikelihood,
    /// Least squares on normalized bins, seeded from the likelihood fit.
    LeastSquares,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonMixtureFit {
    /// Ascending mean rates (00, −0, −−).
    pub lambdas: [f64; 3],
    pub weights: [f64; 3],
    pub lambda_sigmas: [f64; 3],
    pub weight_sigmas: [f64; 3],
    pub log_likelihood: f64,
    pub objective: MixtureObjective,
    /// Two components fell within [`COLLAPSE_TOLERANCE`] and were merged.
    pub degenerate: bool,
}

impl PoissonMixtureFit {
    pub fn pmf(&self, n: usize) -> f64 {
        mixture_pmf(n, &self.lambdas, &self.weights)
    }
}

fn mixture_pmf(n: usize, lambdas: &[f64; 3], weights: &[f64; 3]) -> f64 {
    (0..3).map(|i| weights[i] * poisson_pmf(n, lambdas[i])).sum()
}

fn log_likelihood(h: &PhotonHistogram, lambdas: &[f64; 3], weights: &[f64; 3]) -> f64 {
    h.counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(n, &c)| c as f64 * mixture_pmf(n, lambdas, weights).max(f64::MIN_POSITIVE).ln())
        .sum()
}

/// Component responsibilities for bin n, computed in log space.
fn responsibilities(n: usize, lambdas: &[f64; 3], weights: &[f64; 3]) -> [f64; 3] {
    let l: Vec<f64> = (0..3)
        .map(|i| if weights[i] > 0.0 { weights[i].ln() + ln_poisson(n, lambdas[i]) } else { f64::NEG_INFINITY })
        .collect();
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return [1.0 / 3.0; 3];
    }
    let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s]
}

/// EM iterations; `fit_lambdas = false` only updates weights.
fn em(h: &PhotonHistogram, mut lambdas: [f64; 3], mut weights: [f64; 3], fit_lambdas: bool) -> ([f64; 3], [f64; 3], f64) {
    let total = h.total_shots as f64;
    let mut ll = log_likelihood(h, &lambdas, &weights);
    for _ in 0..50_000 {
        let mut sw = [0.0; 3];
        let mut sn = [0.0; 3];
        for (n, &c) in h.counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let r = responsibilities(n, &lambdas, &weights);
            for i in 0..3 {
                sw[i] += c as f64 * r[i];
                sn[i] += c as f64 * r[i] * n as f64;
            }
        }
        for i in 0..3 {
            weights[i] = sw[i] / total;
            if fit_lambdas && sw[i] > 0.0 {
                lambdas[i] = sn[i] / sw[i];
            }
        }
        let next = log_likelihood(h, &lambdas, &weights);
        let done = (next - ll).abs() <= 1e-13 * ll.abs().max(1.0);
        ll = next;
        if done {
            break;
        }
    }
    (lambdas, weights, ll)
}

/// Sort by λ and merge components closer than the collapse tolerance; the
/// merged weight sits in the upper slot.
fn order_and_merge(lambdas: [f64; 3], weights: [f64; 3]) -> ([f64; 3], [f64; 3], bool) {
    let mut idx = [0, 1, 2];
    idx.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]));
    let mut l = idx.map(|i| lambdas[i]);
    let mut w = idx.map(|i| weights[i]);
    let mut degenerate = false;
    for i in 0..2 {
        if w[i] > 0.0 && w[i + 1] > 0.0 && (l[i + 1] - l[i]) <= COLLAPSE_TOLERANCE * l[i + 1] {
            let m = w[i] + w[i + 1];
            let lm = (w[i] * l[i] + w[i + 1] * l[i + 1]) / m;
            l[i] = lm;
            l[i + 1] = lm;
            w[i] = 0.0;
            w[i + 1] = m;
            degenerate = true;
        }
    }
    (l, w, degenerate)
}

/// Covariance of (λ0, λ1, λ2, A0, A1) from the expected Fisher information,
/// with A2 = 1 − A0 − A1. Infinite where singular.
fn mixture_sigmas(h: &PhotonHistogram, lambdas: &[f64; 3], weights: &[f64; 3], fit_lambdas: bool) -> ([f64; 3], [f64; 3]) {
    let total = h.total_shots as f64;
    let n_max = h.counts.len().max((lambdas[2] + 10.0 * lambdas[2].sqrt() + 10.0) as usize);
    let dim = 5;
    let mut info = DMatrix::<f64>::zeros(dim, dim);
    for n in 0..=n_max {
        let p = mixture_pmf(n, lambdas, weights);
        if p <= 1e-300 {
            continue;
        }
        let pk: Vec<f64> = (0..3).map(|i| poisson_pmf(n, lambdas[i])).collect();
        let mut s = DVector::<f64>::zeros(dim);
        for i in 0..3 {
            s[i] = if fit_lambdas && lambdas[i] > 0.0 { weights[i] * pk[i] * (n as f64 / lambdas[i] - 1.0) / p } else { 0.0 };
        }
        s[3] = (pk[0] - pk[2]) / p;
        s[4] = (pk[1] - pk[2]) / p;
        info += &s * s.transpose() * (total * p);
    }
    // fixed λ: pin their rows so the weight block inverts on its own
    for i in 0..3 {
        if !fit_lambdas || weights[i] == 0.0 {
            info[(i, i)] += 1.0;
        }
    }
    let inf = [f64::INFINITY; 3];
    let Some(cov) = info.try_inverse() else { return (inf, inf) };
    let var = |i: usize| if cov[(i, i)] >= 0.0 { cov[(i, i)].sqrt() } else { f64::INFINITY };
    let mut ls = [var(0), var(1), var(2)];
    if !fit_lambdas {
        ls = [0.0; 3];
    }
    let w2 = cov[(3, 3)] + cov[(4, 4)] + 2.0 * cov[(3, 4)];
    (ls, [var(3), var(4), if w2 >= 0.0 { w2.sqrt() } else { f64::INFINITY }])
}

/// Fit p(n) = Σ Aᵢ·Poisson(n; λᵢ) with three components.
pub fn fit_poisson_mixture(h: &PhotonHistogram, objective: MixtureObjective) -> Result<PoissonMixtureFit> {
    h.validate()?;
    if h.total_shots < 100 {
        return Err(Error::InvalidParameter(format!("{} shots are too few for a three-component fit", h.total_shots)));
    }
    let mean = h.mean();
    let q = |x: f64| (h.quantile(x) as f64).max(0.1);
    let starts = [
        [q(1.0 / 6.0), q(0.5), q(5.0 / 6.0)],
        [q(0.05), q(0.5), q(0.95)],
        [0.4 * mean + 0.1, mean + 0.2, 1.6 * mean + 0.3],
    ];
    let mut best: Option<([f64; 3], [f64; 3], f64)> = None;
    for s in starts {
        let mut init = s;
        // separate coincident quantiles
        for i in 1..3 {
            if init[i] <= init[i - 1] {
                init[i] = init[i - 1] * 1.3 + 0.5;
            }
        }
        let r = em(h, init, [1.0 / 3.0; 3], true);
        if best.as_ref().map_or(true, |b| r.2 > b.2) {
            best = Some(r);
        }
    }
    let (mut lambdas, mut weights, _) = best.unwrap();
    if objective == MixtureObjective::LeastSquares {
        let total = h.total_shots as f64;
        let ys: Vec<f64> = h.counts.iter().map(|&c| c as f64 / total).collect();
        let res = |p: &[f64]| -> Vec<f64> {
            let l = [p[0], p[1], p[2]];
            let w = [p[3], p[4], 1.0 - p[3] - p[4]];
            ys.iter().enumerate().map(|(n, y)| mixture_pmf(n, &l, &w) - y).collect()
        };
        let hi = h.counts.len() as f64 + 10.0;
        let bounds = Bounds { lower: vec![0.0, 0.0, 0.0, 0.0, 0.0], upper: vec![hi, hi, hi, 1.0, 1.0] };
        let f = minimize_residuals(res, &[lambdas[0], lambdas[1], lambdas[2], weights[0], weights[1]], Some(&bounds), &FitOptions::default())?;
        lambdas = [f.params[0], f.params[1], f.params[2]];
        weights = [f.params[3], f.params[4], (1.0 - f.params[3] - f.params[4]).max(0.0)];
        let s: f64 = weights.iter().sum();
        weights = weights.map(|w| w / s);
    }
    let (lambdas, weights, degenerate) = order_and_merge(lambdas, weights);
    let (lambda_sigmas, weight_sigmas) = if degenerate {
        ([f64::INFINITY; 3], [f64::INFINITY; 3])
    } else {
        mixture_sigmas(h, &lambdas, &weights, true)
    };
    Ok(PoissonMixtureFit {
        log_likelihood: log_likelihood(h, &lambdas, &weights),
        lambdas,
        weights,
        lambda_sigmas,
        weight_sigmas,
        objective,
        degenerate,
    })
}

/// Maximum-likelihood weights with the rates held fixed (ascending).
pub fn fit_weights_fixed_rates(h: &PhotonHistogram, lambdas: [f64; 3]) -> Result<PoissonMixtureFit> {
    h.validate()?;
    if lambdas.windows(2).any(|w| w[1] < w[0]) || lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidParameter(format!("rates {lambdas:?} must be non-negative and ascending")));
    }
    let (lambdas, weights, ll) = em(h, lambdas, [1.0 / 3.0; 3], false);
    let (lambda_sigmas, weight_sigmas) = mixture_sigmas(h, &lambdas, &weights, false);
    Ok(PoissonMixtureFit {
        lambdas,
        weights,
        lambda_sigmas,
        weight_sigmas,
        log_likelihood: ll,
        objective: MixtureObjective::MaxLikelihood,
        degenerate: false,
    })
}

// ------------------------------------------------------------ synthetic data

/// Generative model of the initialization and readout photon counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeStatsModel {
    /// (00, −0, −−) probabilities.
    pub weights: [f64; 3],
    /// Mean photons in the initialization window.
    pub lambda_init: [f64; 3],
    /// Mean photons in the readout window.
    pub lambda_read: [f64; 3],
    pub init_window_ms: f64,
    pub read_window_ms: f64,
}

impl ChargeStatsModel {
    /// 3.5 ms initialization and 2.9 ms readout windows with rates placing a
    /// threshold of 9 photons near 0.8 post-selected (NV⁻, NV⁻) fidelity.
    pub fn typical() -> Self {
        let init = [2.0, 6.0, 12.0];
        let scale = 2.9 / 3.5;
        Self {
            weights: [0.12, 0.49, 0.39],
            lambda_init: init,
            lambda_read: init.map(|l| l * scale),
            init_window_ms: 3.5,
            read_window_ms: 2.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("weights {:?} are not a distribution", self.weights)));
        }
        if self.lambda_init.iter().chain(&self.lambda_read).any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidParameter("rates must be positive".into()));
        }
        Ok(())
    }

    /// Draw (n_init, n_read) pairs; the charge configuration is shared
    /// within a shot.
    pub fn sample_shots(&self, shots: usize, seed: u64) -> Result<Vec<(u32, u32)>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick = rand_distr::weighted::WeightedIndex::new(self.weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let dists = |l: [f64; 3]| -> Result<Vec<Poisson<f64>>> {
            l.iter().map(|&x| Poisson::new(x).map_err(|e| Error::InvalidParameter(e.to_string()))).collect()
        };
        let (di, dr) = (dists(self.lambda_init)?, dists(self.lambda_read)?);
        Ok((0..shots)
            .map(|_| {
                let c = pick.sample(&mut rng);
                (di[c].sample(&mut rng) as u32, dr[c].sample(&mut rng) as u32)
            })
            .collect())
    }

    /// Initialization-window histogram of `shots` draws.
    pub fn sample_histogram(&self, shots: usize, seed: u64) -> Result<PhotonHistogram> {
        let s: Vec<u32> = self.sample_shots(shots, seed)?.into_iter().map(|(a, _)| a).collect();
        PhotonHistogram::from_samples(&s, self.init_window_ms)
    }
}

// ---------------------------------------------------------- post-selection

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    /// Shots with at least this many initialization photons are kept.
    pub n_thresh: u32,
    /// Post-selected (NV⁻, NV⁻) weight.
    pub fidelity: f64,
    pub fidelity_sigma: f64,
    pub kept_fraction: f64,
    /// √(readout photons without selection / with selection).
    pub noise_ratio: f64,
}

/// Expected trade-off of the generative model.
pub fn threshold_tradeoff_model(m: &ChargeStatsModel, thresholds: &[u32]) -> Result<Vec<ThresholdPoint>> {
    m.validate()?;
    let photons_all: f64 = (0..3).map(|i| m.weights[i] * m.lambda_read[i]).sum();
    thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<f64> = (0..3).map(|i| m.weights[i] * poisson_sf(t as usize, m.lambda_init[i])).collect();
            let k: f64 = kept.iter().sum();
            if k <= 0.0 {
                return Err(Error::InvalidState(format!("threshold {t} keeps no shots")));
            }
            let photons: f64 = (0..3).map(|i| kept[i] * m.lambda_read[i]).sum();
            Ok(ThresholdPoint {
                n_thresh: t,
                fidelity: kept[2] / k,
                fidelity_sigma: 0.0,
                kept_fraction: k,
                noise_ratio: (photons_all / photons).sqrt(),
            })
        })
        .collect()
}

/// Trade-off from joint (n_init, n_read) shots: the readout histogram of the
/// kept shots is fitted with the readout rates fixed.
pub fn threshold_tradeoff_shots(shots: &[(u32, u32)], read_rates: [f64; 3], read_window_ms: f64, thresholds: &[u32]) -> Result<Vec<ThresholdPoint>> {
    if shots.is_empty() {
        return Err(Error::InvalidState("no shots".into()));
    }
    let photons_all: u64 = shots.iter().map(|s| s.1 as u64).sum();
    thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<u32> = shots.iter().filter(|s| s.0 >= t).map(|s| s.1).collect();
            if kept.is_empty() {
                return Err(Error::InvalidState(format!("threshold {t} keeps no shots")));
            }
            let photons: u64 = kept.iter().map(|&n| n as u64).sum();
            let fit = fit_weights_fixed_rates(&PhotonHistogram::from_samples(&kept, read_window_ms)?, read_rates)?;
            Ok(ThresholdPoint {
                n_thresh: t,
                fidelity: fit.weights[2],
                fidelity_sigma: fit.weight_sigmas[2],
                kept_fraction: kept.len() as f64 / shots.len() as f64,
                noise_ratio: if photons > 0 { (photons_all as f64 / photons as f64).sqrt() } else { f64::INFINITY },
            })
        })
        .collect()
}

/// |y0|/|A| of a σy DEER sine fit (params A, f, φ, y0); 0 for a charge-pure pair.
pub fn deer_asymmetry(fit: &FitResult) -> Result<f64> {
    if fit.params.len() != 4 {
        return Err(Error::Fit(format!("expected a 4-parameter sine fit, got {}", fit.params.len())));
    }
    if !fit.converged {
        return Err(Error::Fit("sine fit did not converge".into()));
    }
    let a = fit.params[0].abs();
    if a < 1e-9 {
        return Err(Error::Fit("sine amplitude vanishes, asymmetry undefined".into()));
    }
    Ok(fit.params[3].abs() / a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(weights: [f64; 3], lambdas: [f64; 3]) -> ChargeStatsModel {
        ChargeStatsModel { weights, lambda_init: lambdas, lambda_read: lambdas, init_window_ms: 3.5, read_window_ms: 2.9 }
    }

    #[test]
    fn recovers_mixture_weights() {
        let m = model([0.09, 0.42, 0.49], [2.0, 8.0, 18.0]);
        let h = m.sample_histogram(100_000, 11).unwrap();
        for obj in [MixtureObjective::MaxLikelihood, MixtureObjective::LeastSquares] {
            let f = fit_poisson_mixture(&h, obj).unwrap();
            for i in 0..3 {
                assert!((f.weights[i] - m.weights[i]).abs() < 0.02, "{obj:?} {f:?}");
                assert!((f.lambdas[i] / m.lambda_init[i] - 1.0).abs() < 0.05, "{obj:?} {f:?}");
            }
            assert!(!f.degenerate);
            assert!((f.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(f.weight_sigmas.iter().all(|s| s.is_finite() && *s > 0.0 && *s < 0.02), "{f:?}");
        }
    }

    #[test]
    fn pure_poisson_collapses() {
        let m = model([0.0, 0.0, 1.0], [1.0, 2.0, 7.0]);
        let f = fit_poisson_mixture(&m.sample_histogram(50_000, 3).unwrap(), MixtureObjective::MaxLikelihood).unwrap();
        let top = f.weights.iter().cloned().fold(0.0, f64::max);
        assert!(top > 0.97, "{f:?}");
        let l = (0..3).map(|i| f.weights[i] * f.lambdas[i]).sum::<f64>();
        assert!((l - 7.0).abs() < 0.05, "{f:?}");
    }

    #[test]
    fn fixed_rate_fit_matches_generator() {
        let m = model([0.2, 0.3, 0.5], [1.5, 6.0, 14.0]);
        let h = m.sample_histogram(40_000, 5).unwrap();
        let f = fit_weights_fixed_rates(&h, m.lambda_init).unwrap();
        for i in 0..3 {
            assert!((f.weights[i] - m.weights[i]).abs() < 3.0 * f.weight_sigmas[i] + 1e-3, "{f:?}");
        }
        assert!(fit_weights_fixed_rates(&h, [3.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn histogram_invariants() {
        assert!(PhotonHistogram::new(vec![0, 0], 1.0).is_err());
        let h = PhotonHistogram::new(vec![1, 2, 3], 1.0).unwrap();
        assert_eq!(h.total_shots, 6);
        assert!((h.mean() - 8.0 / 6.0).abs() < 1e-12);
        let bad = PhotonHistogram { counts: vec![1, 2], total_shots: 4, window_ms: 1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn model_tradeoff_is_monotone() {
        let m = ChargeStatsModel::typical();
        let th: Vec<u32> = (0..=20).collect();
        let pts = threshold_tradeoff_model(&m, &th).unwrap();
        assert!((pts[0].fidelity - m.weights[2]).abs() < 1e-12);
        assert!((pts[0].noise_ratio - 1.0).abs() < 1e-12);
        for w in pts.windows(2) {
            assert!(w[1].fidelity >= w[0].fidelity - 1e-12);
            assert!(w[1].noise_ratio >= w[0].noise_ratio - 1e-12);
        }
        assert!(pts.iter().any(|p| p.fidelity >= 0.80 && p.noise_ratio < 3.0));
        // the published post-selection at 9 photons, 0.83 ± 0.06
        assert!((pts[9].fidelity - 0.83).abs() < 0.06, "{:?}", pts[9]);
    }

    #[test]
    fn shot_tradeoff_threshold_zero_is_identity() {
        let m = ChargeStatsModel::typical();
        let shots = m.sample_shots(30_000, 9).unwrap();
        let pts = threshold_tradeoff_shots(&shots, m.lambda_read, m.read_window_ms, &[0, 9]).unwrap();
        let all: Vec<u32> = shots.iter().map(|s| s.1).collect();
        let f = fit_weights_fixed_rates(&PhotonHistogram::from_samples(&all, 2.9).unwrap(), m.lambda_read).unwrap();
        assert_eq!(pts[0].fidelity, f.weights[2]);
        assert_eq!(pts[0].noise_ratio, 1.0);
        assert_eq!(pts[0].kept_fraction, 1.0);
        let expect = threshold_tradeoff_model(&m, &[9]).unwrap()[0].fidelity;
        assert!((pts[1].fidelity - expect).abs() < 0.05, "{} {expect}", pts[1].fidelity);
        assert!(threshold_tradeoff_shots(&shots, m.lambda_read, 2.9, &[1000]).is_err());
    }

    #[test]
    fn asymmetry_metric() {
        let mk = |a: f64, y0: f64| FitResult { params: vec![a, 1.0, 0.0, y0], sigmas: vec![0.0; 4], residual: 0.0, converged: true, singular: false, iterations: 1 };
        assert_eq!(deer_asymmetry(&mk(0.5, 0.0)).unwrap(), 0.0);
        assert!((deer_asymmetry(&mk(-0.5, -0.25)).unwrap() - 0.5).abs() < 1e-12);
        assert!(deer_asymmetry(&mk(0.0, 0.1)).is_err());
    }

    #[test]
    fn truncation_keeps_rates() {
        let m = model([0.09, 0.42, 0.49], [2.0, 8.0, 18.0]);
        let h = m.sample_histogram(100_000, 21).unwrap();
        let a = fit_poisson_mixture(&h, MixtureObjective::MaxLikelihood).unwrap();
        let b = fit_poisson_mixture(&h.truncated(h.quantile(0.999)).unwrap(), MixtureObjective::MaxLikelihood).unwrap();
        for i in 0..3 {
            assert!((a.lambdas[i] / b.lambdas[i] - 1.0).abs() < 0.02, "{a:?} {b:?}");
        }
    }
}
