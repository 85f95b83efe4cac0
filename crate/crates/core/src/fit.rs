//! Damped Gauss-Newton (Levenberg-Marquardt) least squares with a
//! finite-difference Jacobian, plus the model families used downstream.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    /// 1σ uncertainties; infinite when the normal equations are singular.
    pub sigmas: Vec<f64>,
    /// Sum of squared residuals.
    pub residual: f64,
    pub converged: bool,
    pub singular: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    fn clamp(&self, p: &mut [f64]) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Parameters held at their initial value.
    pub fixed: Vec<bool>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, tolerance: 1e-15, fixed: Vec::new() }
    }
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimize Σ r_i(p)² starting at `init`.
pub fn minimize_residuals<F>(residuals: F, init: &[f64], bounds: Option<&Bounds>, opts: &FitOptions) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = init.len();
    let free: Vec<usize> = (0..n).filter(|&i| !opts.fixed.get(i).copied().unwrap_or(false)).collect();
    let nf = free.len();
    let mut p = init.to_vec();
    if let Some(b) = bounds {
        if b.lower.len() != n || b.upper.len() != n {
            return Err(Error::Fit("bounds length differs from parameter count".into()));
        }
        b.clamp(&mut p);
    }
    let mut r = residuals(&p);
    let m = r.len();
    if m < nf {
        return Err(Error::Fit(format!("{m} residuals for {nf} free parameters")));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite residual at initial point".into()));
    }
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    let jacobian = |p: &[f64], r: &[f64]| -> DMatrix<f64> {
        let mut j = DMatrix::<f64>::zeros(m, nf);
        for (col, &k) in free.iter().enumerate() {
            let h = 1e-6 * p[k].abs().max(1.0);
            let mut q = p.to_vec();
            q[k] += h;
            let rq = residuals(&q);
            for row in 0..m {
                j[(row, col)] = (rq[row] - r[row]) / h;
            }
        }
        j
    };

    while iterations < opts.max_iterations {
        iterations += 1;
        let j = jacobian(&p, &r);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() <= 1e-300 {
            converged = true;
            break;
        }
        let mut improved = false;
        let mut step_small = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for d in 0..nf {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut q = p.clone();
            for (col, &k) in free.iter().enumerate() {
                q[k] += delta[col];
            }
            if let Some(b) = bounds {
                b.clamp(&mut q);
            }
            let rq = residuals(&q);
            let cq = cost(&rq);
            if cq.is_finite() && cq <= c {
                let rel = (c - cq) / c.max(1e-300);
                let pnorm: f64 = free.iter().map(|&k| p[k] * p[k]).sum::<f64>().sqrt();
                step_small = delta.norm() <= 1e-13 * (pnorm + 1e-13);
                p = q;
                r = rq;
                let done = rel < opts.tolerance || cq < 1e-30;
                c = cq;
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if done {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
        }
        if !improved {
            // no descent direction left: at a local minimum to working precision
            converged = true;
            break;
        }
        if converged || step_small {
            converged = true;
            break;
        }
    }

    let j = jacobian(&p, &r);
    let jtj = j.transpose() * &j;
    let dof = m.saturating_sub(nf);
    let s2 = if dof > 0 { c / dof as f64 } else { 0.0 };
    let mut sigmas = vec![0.0; n];
    let mut singular = false;
    match jtj.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => {
            for (col, &k) in free.iter().enumerate() {
                sigmas[k] = (inv[(col, col)].max(0.0) * s2).sqrt();
            }
        }
        _ => {
            singular = true;
            for &k in &free {
                sigmas[k] = f64::INFINITY;
            }
        }
    }
    Ok(FitResult { params: p, sigmas, residual: c, converged, singular, iterations })
}

/// Fit y = model(x, p) to data.
pub fn least_squares_fit<M>(model: M, xs: &[f64], ys: &[f64], init: &[f64], bounds: Option<&Bounds>) -> Result<FitResult>
where
    M: Fn(f64, &[f64]) -> f64,
{
    least_squares_fit_with(model, xs, ys, init, bounds, &FitOptions::default())
}

pub fn least_squares_fit_with<M>(
    model: M,
    xs: &[f64],
    ys: &[f64],
    init: &[f64],
    bounds: Option<&Bounds>,
    opts: &FitOptions,
) -> Result<FitResult>
where
    M: Fn(f64, &[f64]) -> f64,
{
    if xs.len() != ys.len() {
        return Err(Error::Fit(format!("{} x values vs {} y values", xs.len(), ys.len())));
    }
    let res = |p: &[f64]| xs.iter().zip(ys).map(|(&x, &y)| model(x, p) - y).collect::<Vec<_>>();
    minimize_residuals(res, init, bounds, opts)
}

/// y = A·sin(2π f x + φ) + y0 with params (A, f, φ, y0).
pub fn sine_model(x: f64, p: &[f64]) -> f64 {
    p[0] * (2.0 * std::f64::consts::PI * p[1] * x + p[2]).sin() + p[3]
}

/// Dominant frequency of (x, y) from a zero-padded discrete spectrum that
/// tolerates non-uniform sampling.
pub fn spectral_peak(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = xmax - xmin;
    if span <= 0.0 {
        return None;
    }
    let oversample = 16.0;
    let df = 1.0 / (oversample * span);
    let fmax = 0.5 * (n as f64 - 1.0) / span;
    let mut best = (0.0, -1.0, 0.0);
    let mut f = df;
    while f <= fmax {
        let (mut re, mut im) = (0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let th = 2.0 * std::f64::consts::PI * f * (x - xmin);
            re += (y - mean) * th.cos();
            im -= (y - mean) * th.sin();
        }
        let pw = re * re + im * im;
        if pw > best.1 {
            best = (f, pw, im.atan2(re));
        }
        f += df;
    }
    if best.1 <= 0.0 {
        return None;
    }
    let amp = 2.0 * best.1.sqrt() / n as f64;
    // Σ y e^{-iθ} ≈ (N A / 2i) e^{iφ'}  →  φ' = arg(S) + π/2, referenced to xmin
    let phase_at_min = best.2 + std::f64::consts::FRAC_PI_2;
    let phase = phase_at_min - 2.0 * std::f64::consts::PI * best.0 * xmin;
    Some((best.0, amp, phase))
}

/// Sine fit with frequency initialized at the spectral peak.
pub fn fit_sine(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    let n = xs.len();
    if n < 4 {
        return Err(Error::Fit("sine fit needs at least 4 points".into()));
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    let (f0, a0, ph0) = spectral_peak(xs, ys).ok_or_else(|| Error::Fit("flat data, no spectral peak".into()))?;
    let mut best: Option<FitResult> = None;
    for dph in [0.0, std::f64::consts::PI / 2.0, -std::f64::consts::PI / 2.0, std::f64::consts::PI] {
        let init = [a0.max(1e-12), f0, ph0 + dph, mean];
        if let Ok(fr) = least_squares_fit(sine_model, xs, ys, &init, None) {
            if best.as_ref().is_none_or(|b| fr.residual < b.residual) {
                best = Some(fr);
            }
        }
    }
    let mut fr = best.ok_or_else(|| Error::Fit("sine fit did not run".into()))?;
    // canonical form: positive amplitude and frequency, phase in (-π, π]
    if fr.params[1] < 0.0 {
        fr.params[1] = -fr.params[1];
        fr.params[2] = -fr.params[2];
        fr.params[0] = -fr.params[0];
    }
    if fr.params[0] < 0.0 {
        fr.params[0] = -fr.params[0];
        fr.params[2] += std::f64::consts::PI;
    }
    fr.params[2] = wrap_phase(fr.params[2]);
    Ok(fr)
}

pub fn wrap_phase(p: f64) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    let mut v = p.rem_euclid(tau);
    if v > std::f64::consts::PI {
        v -= tau;
    }
    v
}

/// y = y0 + a·pⁿ with params (p, a, y0).
pub fn decay_model(n: f64, q: &[f64]) -> f64 {
    q[2] + q[1] * q[0].powf(n)
}

/// Fit y = y0 + a·pⁿ; `fix_y0` freezes the offset.
pub fn fit_exponential_decay(xs: &[f64], ys: &[f64], fix_y0: Option<f64>) -> Result<FitResult> {
    if xs.len() < 3 {
        return Err(Error::Fit("decay fit needs at least 3 points".into()));
    }
    let y0 = fix_y0.unwrap_or_else(|| ys.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0));
    // log-linear initial guess on points above the offset
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(_, &y)| y - y0 > 1e-9).map(|(&x, &y)| (x, (y - y0).ln())).collect();
    let (p0, a0) = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let den = k * sxx - sx * sx;
        if den.abs() > 1e-300 {
            let slope = (k * sxy - sx * sy) / den;
            let icpt = (sy - slope * sx) / k;
            (slope.exp().clamp(1e-6, 1.0), icpt.exp())
        } else {
            (0.99, ys[0] - y0)
        }
    } else {
        (0.99, ys[0] - y0)
    };
    let opts = FitOptions { fixed: vec![false, false, fix_y0.is_some()], ..FitOptions::default() };
    let bounds = Bounds { lower: vec![0.0, -10.0, -10.0], upper: vec![1.5, 10.0, 10.0] };
    least_squares_fit_with(decay_model, xs, ys, &[p0, a0, y0], Some(&bounds), &opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let fr = least_squares_fit(|x, p| p[0] * x + p[1], &xs, &ys, &[0.0, 0.0], None).unwrap();
        assert!(fr.converged);
        assert!((fr.params[0] - 2.0).abs() < 1e-8 && (fr.params[1] - 1.0).abs() < 1e-8);
        assert!(fr.residual < 1e-10);
    }

    #[test]
    fn decay_fit_fixed_offset() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&n| 0.5 * 0.97f64.powf(n)).collect();
        let fr = fit_exponential_decay(&xs, &ys, Some(0.0)).unwrap();
        assert!((fr.params[0] - 0.97).abs() < 1e-6, "{:?}", fr);
        assert!((fr.params[1] - 0.5).abs() < 1e-6);
        assert_eq!(fr.params[2], 0.0);
    }

    #[test]
    fn decay_fit_free_offset() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&n| 0.1 + 0.8 * 0.92f64.powf(n)).collect();
        let fr = fit_exponential_decay(&xs, &ys, None).unwrap();
        assert!((fr.params[0] - 0.92).abs() < 1e-6, "{:?}", fr);
        assert!((fr.params[2] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn sine_fit_two_periods() {
        let f = 0.11289;
        let xs: Vec<f64> = (0..60).map(|i| i as f64 * (2.0 / f) / 59.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| (2.0 * std::f64::consts::PI * f * t).sin()).collect();
        let fr = fit_sine(&xs, &ys).unwrap();
        assert!((fr.params[1] - f).abs() < 1e-4 * f, "{:?}", fr);
        assert!((fr.params[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sine_fit_offset_and_phase() {
        let xs: Vec<f64> = (0..80).map(|i| -5.0 + i as f64 * 0.25).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| 0.4 * (2.0 * std::f64::consts::PI * 0.13 * t + 2.0).sin() - 0.3).collect();
        let fr = fit_sine(&xs, &ys).unwrap();
        assert!((fr.params[1] - 0.13).abs() < 1e-8);
        assert!((fr.params[0] - 0.4).abs() < 1e-8);
        assert!((fr.params[2] - 2.0).abs() < 1e-6);
        assert!((fr.params[3] + 0.3).abs() < 1e-8);
    }

    #[test]
    fn singular_normal_equations_flagged() {
        // second parameter has no influence
        let xs = [0.0, 1.0, 2.0];
        let ys = [1.0, 3.0, 5.0];
        let fr = least_squares_fit(|x, p| p[0] * x + 1.0 + 0.0 * p[1], &xs, &ys, &[0.0, 0.0], None).unwrap();
        assert!(fr.singular);
        assert!((fr.params[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn too_few_points() {
        assert!(least_squares_fit(|x, p| p[0] * x + p[1], &[1.0], &[1.0], &[0.0, 0.0], None).is_err());
    }
}
