//! Exhaustive enumeration over all `2^(n X)` sign configurations.
//!
//! The enumeration walks the configuration tree depth-first, carrying the
//! running density matrix and chain probability along each prefix, so memory
//! stays proportional to the depth. It is the ground truth the samplers and
//! walkers are checked against.

use itertools::Itertools;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mapping::{apply_step_into, step_probability};
use crate::numeric::Neumaier;
use crate::state::{entropy_of, DensityMatrix, EpsilonDraw, NoiseSchedule, StateVector, UpdateMode};

/// Cap on `n * X`; keeps a full enumeration under ~3e7 leaves.
pub const MAX_ENUMERATED_BITS: u64 = 24;

/// Permutation-sum cap for [`soft_photon_identity`].
pub const MAX_PHOTONS: usize = 8;

/// Outcome of one fully specified sign table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationOutcome {
    /// One sign draw per step.
    pub signs: Vec<EpsilonDraw>,
    /// Chain probability of this configuration.
    pub probability: f64,
    /// Density matrix after the final step.
    pub rho: DensityMatrix,
}

/// Exact ensemble aggregates over every sign configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationReport {
    /// Per-configuration outcomes, in depth-first order with `+` before `-`
    /// within each step. Empty when produced by [`enumerate_summary`].
    pub configurations: Vec<ConfigurationOutcome>,
    /// Probability-weighted mean density matrix after step `x`, for
    /// `x = 0..=X`.
    pub average_rho_by_step: Vec<DensityMatrix>,
    /// Probability-weighted mean diagonal entropy after step `x`.
    pub mean_entropy_by_step: Vec<f64>,
    /// Sum of all configuration probabilities; equals one up to rounding.
    pub total_probability: f64,
}

impl EnumerationReport {
    /// Mean density matrix after the final step.
    pub fn average_rho(&self) -> &DensityMatrix {
        self.average_rho_by_step
            .last()
            .expect("report always covers step zero")
    }

    /// Diagonal of the final mean density matrix.
    pub fn average_diagonal(&self) -> Vec<f64> {
        let rho = self.average_rho();
        (0..rho.dim()).map(|j| rho.entry(j, j).re).collect()
    }
}

struct DfsAccumulator {
    dim: usize,
    steps: usize,
    total: Neumaier,
    avg_re: Vec<Vec<Neumaier>>,
    avg_im: Vec<Vec<Neumaier>>,
    entropy: Vec<Neumaier>,
}

impl DfsAccumulator {
    fn new(dim: usize, steps: usize) -> Self {
        Self {
            dim,
            steps,
            total: Neumaier::new(),
            avg_re: vec![vec![Neumaier::new(); dim * dim]; steps + 1],
            avg_im: vec![vec![Neumaier::new(); dim * dim]; steps + 1],
            entropy: vec![Neumaier::new(); steps + 1],
        }
    }

    fn visit_node(&mut self, depth: usize, prob: f64, entries: &[Complex64]) {
        let re = &mut self.avg_re[depth];
        let im = &mut self.avg_im[depth];
        for (idx, e) in entries.iter().enumerate() {
            re[idx].add(prob * e.re);
            im[idx].add(prob * e.im);
        }
        let p: Vec<f64> = (0..self.dim).map(|j| entries[j * self.dim + j].re).collect();
        self.entropy[depth].add(prob * entropy_of(&p));
        if depth == self.steps {
            self.total.add(prob);
        }
    }

    fn finish(self) -> (Vec<DensityMatrix>, Vec<f64>, f64) {
        let rho_by_step = self
            .avg_re
            .iter()
            .zip(&self.avg_im)
            .map(|(re, im)| {
                let entries = re
                    .iter()
                    .zip(im)
                    .map(|(r, i)| Complex64::new(r.value(), i.value()))
                    .collect();
                DensityMatrix::from_entries_unchecked(self.dim, entries)
            })
            .collect();
        let entropy = self.entropy.iter().map(Neumaier::value).collect();
        (rho_by_step, entropy, self.total.value())
    }
}

fn check_size(channels: usize, steps: u32) -> Result<()> {
    let bits = channels as u64 * u64::from(steps);
    if bits > MAX_ENUMERATED_BITS {
        return Err(Error::DimensionTooLarge {
            size: bits,
            limit: MAX_ENUMERATED_BITS,
        });
    }
    Ok(())
}

/// Enumerates every configuration, streaming each leaf to `on_leaf` as
/// `(signs, probability, final rho)` and returning the exact aggregates.
pub fn enumerate_with<F>(
    psi: &StateVector,
    eta: &NoiseSchedule,
    steps: u32,
    mode: UpdateMode,
    mut on_leaf: F,
) -> Result<EnumerationReport>
where
    F: FnMut(&[EpsilonDraw], f64, &DensityMatrix),
{
    let n = psi.dim();
    if eta.channels() != n {
        return Err(Error::LengthMismatch {
            what: "schedule channels",
            expected: n,
            got: eta.channels(),
        });
    }
    if let Some(defined) = eta.defined_steps() {
        if u64::from(steps) > defined {
            return Err(Error::ScheduleExhausted {
                step: u64::from(steps),
                defined_steps: defined,
            });
        }
    }
    check_size(n, steps)?;

    let steps = steps as usize;
    let mut acc = DfsAccumulator::new(n, steps);
    let rho0 = DensityMatrix::from_state(psi);
    let real = rho0.is_real();
    // One sign buffer per depth, mutated in place along the path.
    let mut path: Vec<EpsilonDraw> = (0..steps).map(|_| EpsilonDraw::plus(n)).collect();
    // Density matrices along the current path, step 0 at index 0.
    let mut stack: Vec<Vec<Complex64>> = vec![rho0.entries().to_vec(); steps + 1];

    // Explicit iterative DFS: frame = (depth, next sign mask to expand).
    acc.visit_node(0, 1.0, &stack[0]);
    if steps == 0 {
        on_leaf(&path, 1.0, &rho0);
        let (avg, entropy, total) = acc.finish();
        return Ok(EnumerationReport {
            configurations: Vec::new(),
            average_rho_by_step: avg,
            mean_entropy_by_step: entropy,
            total_probability: total,
        });
    }

    let patterns = 1u32 << n;
    let mut masks = vec![0u32; steps];
    let mut probs = vec![1.0f64; steps + 1];
    let mut depth = 0usize;
    let mut scratch = vec![0.0f64; n];
    loop {
        if masks[depth] < patterns {
            let mask = masks[depth];
            masks[depth] += 1;
            // Lexicographic expansion with + before -, channel 0 leading.
            for l in 0..n {
                path[depth].set(l, if mask & (1 << (n - 1 - l)) == 0 { 1 } else { -1 });
            }
            let column = eta.column(depth as u64)?;
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = stack[depth][j * n + j].re;
            }
            let p_step = step_probability(&scratch, column, &path[depth], mode);
            let prob = probs[depth] * p_step;
            let (current, rest) = stack.split_at_mut(depth + 1);
            apply_step_into(
                &current[depth],
                n,
                real,
                &path[depth],
                column,
                mode,
                &mut rest[0],
            )?;
            probs[depth + 1] = prob;
            acc.visit_node(depth + 1, prob, &stack[depth + 1]);
            if depth + 1 == steps {
                let rho = DensityMatrix::from_entries_unchecked(n, stack[steps].clone());
                on_leaf(&path, prob, &rho);
            } else {
                depth += 1;
            }
        } else {
            masks[depth] = 0;
            if depth == 0 {
                break;
            }
            depth -= 1;
        }
    }

    let (avg, entropy, total) = acc.finish();
    Ok(EnumerationReport {
        configurations: Vec::new(),
        average_rho_by_step: avg,
        mean_entropy_by_step: entropy,
        total_probability: total,
    })
}

/// Full enumeration with every configuration collected into the report.
pub fn enumerate(
    psi: &StateVector,
    eta: &NoiseSchedule,
    steps: u32,
    mode: UpdateMode,
) -> Result<EnumerationReport> {
    let mut configurations = Vec::new();
    let mut report = enumerate_with(psi, eta, steps, mode, |signs, probability, rho| {
        configurations.push(ConfigurationOutcome {
            signs: signs.to_vec(),
            probability,
            rho: rho.clone(),
        });
    })?;
    report.configurations = configurations;
    Ok(report)
}

/// Aggregates-only enumeration; skips the per-configuration list.
pub fn enumerate_summary(
    psi: &StateVector,
    eta: &NoiseSchedule,
    steps: u32,
    mode: UpdateMode,
) -> Result<EnumerationReport> {
    enumerate_with(psi, eta, steps, mode, |_, _, _| {})
}

/// Predicted mean off-diagonal attenuation after `steps` steps in the
/// second-order mode: `prod_x (1 - eta_jx^2/2 - eta_kx^2/2)`.
pub fn decoherence_factor(eta: &NoiseSchedule, j: usize, k: usize, steps: u32) -> Result<f64> {
    if j == k {
        return Err(Error::InvalidParameter {
            name: "channels",
            reason: "decoherence factor needs two distinct channels".into(),
        });
    }
    let n = eta.channels();
    if j >= n || k >= n {
        return Err(Error::LengthMismatch {
            what: "channel index",
            expected: n,
            got: j.max(k) + 1,
        });
    }
    let mut factor = 1.0;
    for x in 0..u64::from(steps) {
        let column = eta.column(x)?;
        factor *= 1.0 - 0.5 * column[j] * column[j] - 0.5 * column[k] * column[k];
    }
    Ok(factor)
}

/// Both sides of the soft-photon denominator identity
/// `sum over permutations of 1/(a_{i1}(a_{i1}+a_{i2})...) = 1/(a_1...a_m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftPhotonCheck {
    /// Explicit sum over all `m!` orderings.
    pub permutation_sum: f64,
    /// Closed form `1/(a_1 a_2 ... a_m)`.
    pub product_inverse: f64,
}

impl SoftPhotonCheck {
    pub fn relative_difference(&self) -> f64 {
        (self.permutation_sum - self.product_inverse).abs() / self.product_inverse
    }
}

/// Evaluates the identity by explicit permutation enumeration (`m <= 8`).
pub fn soft_photon_identity(a: &[f64]) -> Result<SoftPhotonCheck> {
    if a.is_empty() || a.len() > MAX_PHOTONS {
        return Err(Error::DimensionTooLarge {
            size: a.len() as u64,
            limit: MAX_PHOTONS as u64,
        });
    }
    for (i, &v) in a.iter().enumerate() {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::NonPositiveInput { index: i, value: v });
        }
    }
    let mut lhs = Neumaier::new();
    for perm in a.iter().permutations(a.len()) {
        let mut partial = 0.0;
        let mut denom = 1.0;
        for &v in perm {
            partial += v;
            denom *= partial;
        }
        lhs.add(1.0 / denom);
    }
    let product: f64 = a.iter().product();
    Ok(SoftPhotonCheck {
        permutation_sum: lhs.value(),
        product_inverse: 1.0 / product,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn two_state() -> StateVector {
        StateVector::from_real(&[0.6, 0.8]).unwrap()
    }

    #[test]
    fn one_step_probabilities_match_hand_enumeration() {
        let psi = two_state();
        let eta = NoiseSchedule::uniform(0.1, 2).unwrap();
        let report = enumerate(&psi, &eta, 1, UpdateMode::ExactProduct).unwrap();
        let probs: Vec<f64> = report.configurations.iter().map(|c| c.probability).collect();
        let labels: Vec<String> = report
            .configurations
            .iter()
            .map(|c| c.signs[0].to_string())
            .collect();
        assert_eq!(labels, ["++", "+-", "-+", "--"]);
        let expected = [0.2475, 0.2385, 0.2665, 0.2475];
        for (got, want) in probs.iter().zip(expected) {
            assert_relative_eq!(got, &want, epsilon = 1e-15);
        }
        assert_relative_eq!(report.total_probability, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn average_diagonal_is_martingale() {
        let psi = two_state();
        let eta = NoiseSchedule::uniform(0.1, 2).unwrap();
        for mode in UpdateMode::ALL {
            let report = enumerate_summary(&psi, &eta, 5, mode).unwrap();
            let diag = report.average_diagonal();
            assert_abs_diff_eq!(diag[0], 0.36, epsilon = 1e-13);
            assert_abs_diff_eq!(diag[1], 0.64, epsilon = 1e-13);
        }
    }

    #[test]
    fn average_offdiagonal_matches_decoherence_factor() {
        let psi = two_state();
        let eta = NoiseSchedule::uniform(0.1, 2).unwrap();
        let report = enumerate_summary(&psi, &eta, 3, UpdateMode::SecondOrder).unwrap();
        let factor = decoherence_factor(&eta, 0, 1, 3).unwrap();
        assert_relative_eq!(factor, 0.970299, epsilon = 1e-12);
        assert_abs_diff_eq!(
            report.average_rho().entry(0, 1).re,
            0.48 * factor,
            epsilon = 1e-12
        );
        // Exact-product at n=2 decays with sqrt((1-eta_1^2)(1-eta_2^2)) per step.
        let report = enumerate_summary(&psi, &eta, 3, UpdateMode::ExactProduct).unwrap();
        let per_step = ((1.0 - 0.01f64) * (1.0 - 0.01)).sqrt();
        assert_abs_diff_eq!(
            report.average_rho().entry(0, 1).re,
            0.48 * per_step.powi(3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn per_step_averages_track_the_closed_form() {
        let psi = two_state();
        let eta = NoiseSchedule::uniform(0.1, 2).unwrap();
        let report = enumerate_summary(&psi, &eta, 4, UpdateMode::SecondOrder).unwrap();
        for (x, rho) in report.average_rho_by_step.iter().enumerate() {
            assert_abs_diff_eq!(
                rho.entry(0, 1).re,
                0.48 * 0.99f64.powi(x as i32),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn mean_entropy_decreases_step_by_step() {
        let psi = two_state();
        let eta = NoiseSchedule::uniform(0.1, 2).unwrap();
        let report = enumerate_summary(&psi, &eta, 6, UpdateMode::SecondOrder).unwrap();
        // Frozen from direct enumeration of the recursion.
        let expected = [
            0.6534181947937017,
            0.6441348483039055,
            0.6350224549904724,
            0.6260758871755121,
            0.6172902888198134,
            0.6086610588939266,
            0.6001838329738628,
        ];
        assert_eq!(report.mean_entropy_by_step.len(), expected.len());
        for (got, want) in report.mean_entropy_by_step.iter().zip(expected) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
        }
        for pair in report.mean_entropy_by_step.windows(2) {
            assert!(pair[1] < pair[0], "mean entropy must decrease strictly");
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let psi = two_state();
        let eta = NoiseSchedule::uniform(0.1, 2).unwrap();
        let report = enumerate(&psi, &eta, 0, UpdateMode::SecondOrder).unwrap();
        assert_eq!(report.configurations.len(), 1);
        assert_relative_eq!(report.total_probability, 1.0, epsilon = 1e-15);
        assert_eq!(report.average_rho_by_step.len(), 1);
        assert_relative_eq!(report.average_rho().entry(0, 1).re, 0.48, epsilon = 1e-15);
    }

    #[test]
    fn enumeration_cap_enforced() {
        let psi = StateVector::from_probabilities(&[0.25; 4]).unwrap();
        let eta = NoiseSchedule::uniform(0.05, 4).unwrap();
        let err = enumerate_summary(&psi, &eta, 7, UpdateMode::SecondOrder).unwrap_err();
        assert!(matches!(err, Error::DimensionTooLarge { size: 28, .. }));
    }

    #[test]
    fn table_schedule_is_respected() {
        let psi = two_state();
        let eta = NoiseSchedule::table(vec![vec![0.1, 0.1], vec![0.2, 0.05]]).unwrap();
        let report = enumerate_summary(&psi, &eta, 2, UpdateMode::SecondOrder).unwrap();
        let factor = (1.0 - 0.01) * (1.0 - 0.5 * (0.04 + 0.0025));
        assert_abs_diff_eq!(report.average_rho().entry(0, 1).re, 0.48 * factor, epsilon = 1e-12);
        assert_relative_eq!(
            decoherence_factor(&eta, 0, 1, 2).unwrap(),
            factor,
            epsilon = 1e-15
        );
        assert!(enumerate_summary(&psi, &eta, 3, UpdateMode::SecondOrder).is_err());
    }

    #[test]
    fn decoherence_factor_edge_cases() {
        let eta = NoiseSchedule::uniform(0.3, 2).unwrap();
        assert_eq!(decoherence_factor(&eta, 0, 1, 0).unwrap(), 1.0);
        assert!(decoherence_factor(&eta, 1, 1, 3).is_err());
        assert!(decoherence_factor(&eta, 0, 2, 3).is_err());
    }

    #[test]
    fn soft_photon_identity_small_cases() {
        let one = soft_photon_identity(&[3.0]).unwrap();
        assert_eq!(one.permutation_sum, one.product_inverse);
        assert_relative_eq!(one.product_inverse, 1.0 / 3.0, epsilon = 1e-15);

        // 1/(a(a+b)) + 1/(b(a+b)) = 1/(ab)
        let two = soft_photon_identity(&[2.0, 5.0]).unwrap();
        assert!(two.relative_difference() < 1e-14);

        let five = soft_photon_identity(&[0.5, 1.5, 2.5, 7.0, 9.0]).unwrap();
        assert!(five.relative_difference() < 1e-10);
    }

    #[test]
    fn soft_photon_identity_rejects_bad_input() {
        assert!(matches!(
            soft_photon_identity(&[1.0, -2.0]).unwrap_err(),
            Error::NonPositiveInput { index: 1, .. }
        ));
        assert!(soft_photon_identity(&[]).is_err());
        assert!(soft_photon_identity(&[1.0; 9]).is_err());
    }
}
