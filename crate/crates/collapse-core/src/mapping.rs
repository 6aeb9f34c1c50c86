//! One stochastic mapping step: enhancement factors, the per-step
//! sign-configuration distribution, exact samplers, and the density-matrix
//! update in both second-order and exact-product form.
//!
//! The probability-facing functions take raw `&[f64]` slices for the diagonal
//! and the couplings so they can sit inside hot loops; the validated types in
//! [`crate::state`] feed them at the boundaries.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::Neumaier;
use crate::state::{DensityMatrix, EpsilonDraw, UpdateMode};

/// Dimension cap for operations that enumerate all `2^n` sign patterns.
pub const MAX_ENUMERATED_CHANNELS: usize = 20;

/// Below this value an update denominator counts as degenerate. Unreachable
/// when the couplings respect the schedule budget.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Single-step enhancement factor
/// `B_j = prod_l (1 + eta_l (2 delta_lj - 1) eps_l)`.
pub fn enhancement_factor(j: usize, epsilon: &EpsilonDraw, eta: &[f64]) -> f64 {
    assert_eq!(epsilon.len(), eta.len(), "signs and couplings must align");
    assert!(j < eta.len(), "channel index out of range");
    let mut b = 1.0;
    for l in 0..eta.len() {
        let delta = if l == j { 1.0 } else { -1.0 };
        b *= 1.0 + eta[l] * delta * epsilon.sign(l);
    }
    b
}

/// Probability of drawing `epsilon` at one step, conditioned on the current
/// diagonal `p`.
///
/// Second-order form: `2^-n (1 + sum_l (2 p_l - 1) eta_l eps_l)`.
/// Exact-product form: `2^-n sum_j p_j B_j(eps)`.
/// Both normalize to one over the `2^n` patterns.
pub fn step_probability(p: &[f64], eta: &[f64], epsilon: &EpsilonDraw, mode: UpdateMode) -> f64 {
    let n = p.len();
    assert_eq!(eta.len(), n, "couplings must match the diagonal");
    assert_eq!(epsilon.len(), n, "signs must match the diagonal");
    let scale = 0.5f64.powi(n as i32);
    match mode {
        UpdateMode::SecondOrder => {
            let mut s = 0.0;
            for l in 0..n {
                s += (2.0 * p[l] - 1.0) * eta[l] * epsilon.sign(l);
            }
            scale * (1.0 + s)
        }
        UpdateMode::ExactProduct => {
            let mut s = 0.0;
            for j in 0..n {
                s += p[j] * enhancement_factor(j, epsilon, eta);
            }
            scale * s
        }
    }
}

/// Draws one sign configuration exactly from [`step_probability`].
///
/// Second-order: the joint is affine in the signs, so sequential conditional
/// sampling is exact in `O(n)`. Exact-product: the joint is the `p`-mixture
/// of per-channel product distributions, so drawing the mixture component
/// first is exact in `O(n)` as well.
pub fn sample_step<R: Rng + ?Sized>(
    p: &[f64],
    eta: &[f64],
    mode: UpdateMode,
    rng: &mut R,
) -> EpsilonDraw {
    let mut draw = EpsilonDraw::plus(p.len());
    sample_step_into(p, eta, mode, rng, &mut draw);
    draw
}

/// Allocation-free variant of [`sample_step`] writing into `draw`.
pub(crate) fn sample_step_into<R: Rng + ?Sized>(
    p: &[f64],
    eta: &[f64],
    mode: UpdateMode,
    rng: &mut R,
    draw: &mut EpsilonDraw,
) {
    let n = p.len();
    assert_eq!(eta.len(), n, "couplings must match the diagonal");
    assert_eq!(draw.len(), n, "draw buffer must match the diagonal");
    match mode {
        UpdateMode::SecondOrder => {
            // Partial sums S_k = sum_{l<=k} c_l eps_l give the exact chain
            // P(eps_k = +1 | earlier) = (1 + S_{k-1} + c_k) / (2 (1 + S_{k-1})).
            let mut running = 0.0;
            for l in 0..n {
                let c = (2.0 * p[l] - 1.0) * eta[l];
                let p_plus = 0.5 * (1.0 + running + c) / (1.0 + running);
                let sign = if rng.random::<f64>() < p_plus { 1 } else { -1 };
                draw.set(l, sign);
                running += c * f64::from(sign);
            }
        }
        UpdateMode::ExactProduct => {
            // Component j of the mixture flips channel j towards +1 and the
            // rest towards -1: P_j(eps_l = +1) = (1 + eta_l (2 delta_lj - 1)) / 2.
            let u = rng.random::<f64>();
            let mut acc = 0.0;
            let mut component = n - 1;
            for (j, &pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    component = j;
                    break;
                }
            }
            for l in 0..n {
                let delta = if l == component { 1.0 } else { -1.0 };
                let p_plus = 0.5 * (1.0 + eta[l] * delta);
                let sign = if rng.random::<f64>() < p_plus { 1 } else { -1 };
                draw.set(l, sign);
            }
        }
    }
}

/// Applies one mapping step to the full density matrix.
///
/// Second-order:
/// `rho'_jk = rho_jk (1 + eta_j eps_j + eta_k eps_k - sum_l eta_l eps_l)
///            (1 - (1 - delta_jk)(eta_j^2 + eta_k^2)/2) / D`
/// with `D = 1 + sum_l (2 p_l - 1) eta_l eps_l`.
///
/// Exact-product: `rho'_jk = sqrt(B_j B_k) rho_jk / sum_l B_l p_l`.
///
/// Hermiticity and unit trace of the output hold exactly in both modes. The
/// exact-product output stays positive semidefinite; the second-order output
/// can dip below zero by `O((sum_l eta_l)^2)`, which is the truncation error
/// of that form.
pub fn apply_step(
    rho: &DensityMatrix,
    epsilon: &EpsilonDraw,
    eta: &[f64],
    mode: UpdateMode,
) -> Result<DensityMatrix> {
    let n = rho.dim();
    if epsilon.len() != n {
        return Err(Error::LengthMismatch {
            what: "sign configuration",
            expected: n,
            got: epsilon.len(),
        });
    }
    if eta.len() != n {
        return Err(Error::LengthMismatch {
            what: "couplings",
            expected: n,
            got: eta.len(),
        });
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    apply_step_into(rho.entries(), n, rho.is_real(), epsilon, eta, mode, &mut out)?;
    Ok(DensityMatrix::from_entries_unchecked(n, out))
}

/// Kernel behind [`apply_step`]; reusable buffers for the walkers.
pub(crate) fn apply_step_into(
    entries: &[Complex64],
    n: usize,
    real: bool,
    epsilon: &EpsilonDraw,
    eta: &[f64],
    mode: UpdateMode,
    out: &mut [Complex64],
) -> Result<()> {
    match mode {
        UpdateMode::SecondOrder => {
            let mut sign_sum = 0.0;
            let mut denom = 1.0;
            for l in 0..n {
                let es = eta[l] * epsilon.sign(l);
                sign_sum += es;
                denom += (2.0 * entries[l * n + l].re - 1.0) * es;
            }
            if denom <= DENOMINATOR_FLOOR {
                return Err(Error::DegenerateDenominator { denominator: denom });
            }
            for j in 0..n {
                let ej = eta[j] * epsilon.sign(j);
                for k in 0..n {
                    let ek = eta[k] * epsilon.sign(k);
                    let linear = 1.0 + ej + ek - sign_sum;
                    let damping = if j == k {
                        1.0
                    } else {
                        1.0 - 0.5 * (eta[j] * eta[j] + eta[k] * eta[k])
                    };
                    let factor = linear * damping / denom;
                    let idx = j * n + k;
                    out[idx] = if real {
                        Complex64::new(entries[idx].re * factor, 0.0)
                    } else {
                        entries[idx].scale(factor)
                    };
                }
            }
        }
        UpdateMode::ExactProduct => {
            let mut b = Vec::with_capacity(n);
            let mut denom = 0.0;
            for j in 0..n {
                let bj = enhancement_factor(j, epsilon, eta);
                denom += bj * entries[j * n + j].re;
                b.push(bj);
            }
            if denom <= DENOMINATOR_FLOOR {
                return Err(Error::DegenerateDenominator { denominator: denom });
            }
            let roots: Vec<f64> = b.iter().map(|&x| x.sqrt()).collect();
            for j in 0..n {
                for k in 0..n {
                    let factor = roots[j] * roots[k] / denom;
                    let idx = j * n + k;
                    out[idx] = if real {
                        Complex64::new(entries[idx].re * factor, 0.0)
                    } else {
                        entries[idx].scale(factor)
                    };
                }
            }
        }
    }
    Ok(())
}

/// Diagonal-only kernel: updates Born weights without touching off-diagonals.
/// Writes the new diagonal into `out`.
pub(crate) fn diagonal_step_into(
    p: &[f64],
    epsilon: &EpsilonDraw,
    eta: &[f64],
    mode: UpdateMode,
    out: &mut [f64],
) -> Result<()> {
    // The arithmetic mirrors `apply_step_into` operation for operation so a
    // diagonal-only walk reproduces the full-matrix diagonal bit for bit.
    let n = p.len();
    match mode {
        UpdateMode::SecondOrder => {
            let mut sign_sum = 0.0;
            let mut denom = 1.0;
            for l in 0..n {
                let es = eta[l] * epsilon.sign(l);
                sign_sum += es;
                denom += (2.0 * p[l] - 1.0) * es;
            }
            if denom <= DENOMINATOR_FLOOR {
                return Err(Error::DegenerateDenominator { denominator: denom });
            }
            for j in 0..n {
                let ej = eta[j] * epsilon.sign(j);
                let linear = 1.0 + ej + ej - sign_sum;
                out[j] = p[j] * (linear * 1.0 / denom);
            }
        }
        UpdateMode::ExactProduct => {
            let mut denom = 0.0;
            for j in 0..n {
                let b = enhancement_factor(j, epsilon, eta);
                denom += b * p[j];
                out[j] = b;
            }
            if denom <= DENOMINATOR_FLOOR {
                return Err(Error::DegenerateDenominator { denominator: denom });
            }
            for (j, v) in out.iter_mut().enumerate() {
                let root = v.sqrt();
                *v = p[j] * (root * root / denom);
            }
        }
    }
    Ok(())
}

/// One sampled mapping step bundled with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub epsilon: EpsilonDraw,
    pub rho_after: DensityMatrix,
    pub probability: f64,
}

/// Samples a sign configuration and applies it to `rho`.
pub fn step<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    eta: &[f64],
    mode: UpdateMode,
    rng: &mut R,
) -> Result<StepOutcome> {
    let p = rho.diagonal_raw();
    let epsilon = sample_step(&p, eta, mode, rng);
    let rho_after = apply_step(rho, &epsilon, eta, mode)?;
    let probability = step_probability(&p, eta, &epsilon, mode);
    Ok(StepOutcome {
        epsilon,
        rho_after,
        probability,
    })
}

/// Exact one-step moments over all `2^n` sign patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepMoments {
    dim: usize,
    /// Probability-weighted mean of `rho' - rho`, row-major.
    pub mean_delta: Vec<Complex64>,
    /// Probability-weighted second moments of the diagonal changes,
    /// `<dp_j dp_k>`, row-major. Equals the covariance because the diagonal
    /// drift vanishes identically.
    pub diagonal_covariance: Vec<f64>,
    /// Sum of pattern probabilities, a unit-normalization diagnostic.
    pub total_probability: f64,
}

impl OneStepMoments {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean_delta_at(&self, row: usize, col: usize) -> Complex64 {
        self.mean_delta[row * self.dim + col]
    }

    pub fn covariance_at(&self, row: usize, col: usize) -> f64 {
        self.diagonal_covariance[row * self.dim + col]
    }
}

/// Enumerates every sign pattern once and accumulates the exact
/// probability-weighted moments of the one-step change.
pub fn one_step_expectation(
    rho: &DensityMatrix,
    eta: &[f64],
    mode: UpdateMode,
) -> Result<OneStepMoments> {
    let n = rho.dim();
    if eta.len() != n {
        return Err(Error::LengthMismatch {
            what: "couplings",
            expected: n,
            got: eta.len(),
        });
    }
    if n > MAX_ENUMERATED_CHANNELS {
        return Err(Error::DimensionTooLarge {
            size: n as u64,
            limit: MAX_ENUMERATED_CHANNELS as u64,
        });
    }
    let p = rho.diagonal_raw();
    let mut mean_re = vec![Neumaier::new(); n * n];
    let mut mean_im = vec![Neumaier::new(); n * n];
    let mut cov = vec![Neumaier::new(); n * n];
    let mut total = Neumaier::new();
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    let mut dp = vec![0.0; n];
    for mask in 0u32..(1 << n) {
        let epsilon = EpsilonDraw::from_mask(mask, n);
        let prob = step_probability(&p, eta, &epsilon, mode);
        apply_step_into(rho.entries(), n, rho.is_real(), &epsilon, eta, mode, &mut out)?;
        total.add(prob);
        for j in 0..n {
            dp[j] = out[j * n + j].re - p[j];
            for k in 0..n {
                let idx = j * n + k;
                let delta = out[idx] - rho.entries()[idx];
                mean_re[idx].add(prob * delta.re);
                mean_im[idx].add(prob * delta.im);
            }
        }
        for j in 0..n {
            for k in 0..n {
                cov[j * n + k].add(prob * dp[j] * dp[k]);
            }
        }
    }
    Ok(OneStepMoments {
        dim: n,
        mean_delta: mean_re
            .iter()
            .zip(&mean_im)
            .map(|(r, i)| Complex64::new(r.value(), i.value()))
            .collect(),
        diagonal_covariance: cov.iter().map(Neumaier::value).collect(),
        total_probability: total.value(),
    })
}
