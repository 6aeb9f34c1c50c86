//! Quantum-state and simplex data types shared by every other module.
//!
//! All types validate on construction and are immutable afterwards, so they
//! can be shared freely between threads.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numeric::sum_compensated;

/// Tolerance for user-supplied normalization (state norms, traces, simplex sums).
pub const INPUT_TOL: f64 = 1e-9;
/// Tolerance for identities that are exact up to floating-point rounding.
pub const EXACT_TOL: f64 = 1e-12;
/// A density matrix is accepted as positive semidefinite when its smallest
/// eigenvalue is at least `-PSD_TOL`.
pub const PSD_TOL: f64 = 1e-9;
/// Per-step budget on the summed channel couplings. Keeping
/// `sum_l eta_lx <= 0.9` makes every sign pattern's probability and every
/// update denominator strictly positive.
pub const ETA_STEP_BUDGET: f64 = 0.9;

/// Which update law a stochastic mapping step uses.
///
/// `SecondOrder` is the recursion truncated at second order in the couplings;
/// its one-step moment identities (martingale diagonal, off-diagonal decay
/// factor `1 - (eta_j^2 + eta_k^2)/2`) hold exactly. `ExactProduct` reweights
/// with the exact per-channel product factors and keeps pure states pure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateMode {
    #[default]
    SecondOrder,
    ExactProduct,
}

impl UpdateMode {
    pub const ALL: [UpdateMode; 2] = [UpdateMode::SecondOrder, UpdateMode::ExactProduct];
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "second-order" => Ok(UpdateMode::SecondOrder),
            "exact-product" => Ok(UpdateMode::ExactProduct),
            other => Err(Error::InvalidParameter {
                name: "mode",
                reason: format!("expected \"second-order\" or \"exact-product\", got \"{other}\""),
            }),
        }
    }
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateMode::SecondOrder => "second-order",
            UpdateMode::ExactProduct => "exact-product",
        })
    }
}

/// Normalized complex amplitudes of the microsystem out-state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Validates and wraps a list of amplitudes.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::TooShort {
                len: amplitudes.len(),
            });
        }
        if amplitudes.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::NonFinite {
                context: "state vector amplitude",
            });
        }
        let norm_sq = sum_compensated(amplitudes.iter().map(|a| a.norm_sqr()));
        if (norm_sq - 1.0).abs() > INPUT_TOL {
            return Err(Error::NotNormalized { norm_sq });
        }
        Ok(Self { amplitudes })
    }

    /// Convenience constructor for real amplitudes.
    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Builds the state with amplitudes `sqrt(p_j)` from Born weights.
    pub fn from_probabilities(p: &[f64]) -> Result<Self> {
        Self::new(p.iter().map(|&v| Complex64::new(v.sqrt(), 0.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// Born weights `|psi_j|^2` as a validated simplex point.
    pub fn probabilities(&self) -> SimplexPoint {
        let p: Vec<f64> = self.amplitudes.iter().map(|a| a.norm_sqr()).collect();
        SimplexPoint::new(p).expect("squared amplitudes of a valid state lie on the simplex")
    }

    pub fn is_real(&self) -> bool {
        self.amplitudes.iter().all(|a| a.im == 0.0)
    }
}

/// Hermitian, unit-trace, positive-semidefinite matrix for the microsystem.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    /// Validates a row-major `dim x dim` matrix: Hermitian to 1e-12
    /// entrywise, trace within 1e-9 of one, smallest eigenvalue >= -1e-9.
    pub fn new(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::TooShort { len: dim });
        }
        if entries.len() != dim * dim {
            return Err(Error::LengthMismatch {
                what: "density matrix entries",
                expected: dim * dim,
                got: entries.len(),
            });
        }
        let m = Self { dim, entries };
        m.validate()?;
        Ok(m)
    }

    /// Builds the matrix from nested rows.
    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let dim = rows.len();
        for row in &rows {
            if row.len() != dim {
                return Err(Error::LengthMismatch {
                    what: "density matrix row",
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        Self::new(dim, rows.into_iter().flatten().collect())
    }

    /// Rank-one projector `rho_jk = psi_j conj(psi_k)` onto a pure state.
    pub fn from_state(psi: &StateVector) -> Self {
        let n = psi.dim();
        let a = psi.amplitudes();
        let mut entries = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                entries.push(a[j] * a[k].conj());
            }
        }
        let rho = Self { dim: n, entries };
        debug_assert!(rho.validate().is_ok());
        rho
    }

    /// Wraps entries produced by an update law without re-running the full
    /// eigenvalue check. Hermiticity and unit trace still hold exactly for
    /// those updates; positivity is the caller's contract.
    pub(crate) fn from_entries_unchecked(dim: usize, entries: Vec<Complex64>) -> Self {
        debug_assert_eq!(entries.len(), dim * dim);
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    /// Full validation against the type invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        if self
            .entries
            .iter()
            .any(|e| !e.re.is_finite() || !e.im.is_finite())
        {
            return Err(Error::NonFinite {
                context: "density matrix entry",
            });
        }
        for j in 0..n {
            for k in j..n {
                let delta = (self.entry(j, k) - self.entry(k, j).conj()).norm();
                if delta > EXACT_TOL {
                    return Err(Error::NotHermitian {
                        row: j,
                        col: k,
                        delta,
                    });
                }
            }
        }
        let trace = sum_compensated((0..n).map(|j| self.entry(j, j).re));
        if (trace - 1.0).abs() > INPUT_TOL {
            return Err(Error::TraceNotOne { trace });
        }
        let min = self.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min,
            });
        }
        Ok(())
    }

    /// Smallest eigenvalue, computed through the real symmetric embedding
    /// `[[Re, -Im], [Im, Re]]` whose spectrum doubles the Hermitian one.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim;
        let mut m = nalgebra::DMatrix::<f64>::zeros(2 * n, 2 * n);
        for j in 0..n {
            for k in 0..n {
                let e = self.entry(j, k);
                m[(j, k)] = e.re;
                m[(j + n, k + n)] = e.re;
                m[(j, k + n)] = -e.im;
                m[(j + n, k)] = e.im;
            }
        }
        m.symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Diagonal as a simplex point; imaginary parts up to 1e-12 are dropped.
    pub fn diagonal(&self) -> Result<SimplexPoint> {
        let mut p = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            let e = self.entry(j, j);
            if e.im.abs() > EXACT_TOL {
                return Err(Error::NonRealDiagonal {
                    index: j,
                    imaginary: e.im,
                });
            }
            p.push(e.re);
        }
        SimplexPoint::new(p)
    }

    /// Raw real diagonal without simplex validation.
    pub(crate) fn diagonal_raw(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.entry(j, j).re).collect()
    }

    /// Frobenius norm of the off-diagonal part.
    pub fn offdiag_frobenius(&self) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.dim {
            for k in 0..self.dim {
                if j != k {
                    acc += self.entry(j, k).norm_sqr();
                }
            }
        }
        acc.sqrt()
    }

    pub fn is_real(&self) -> bool {
        self.entries.iter().all(|e| e.im == 0.0)
    }
}

/// Point on the probability simplex: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint {
    probabilities: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() < 2 {
            return Err(Error::TooShort {
                len: probabilities.len(),
            });
        }
        for (i, &p) in probabilities.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    context: "simplex coordinate",
                });
            }
            if p < 0.0 {
                return Err(Error::NegativeProbability { index: i, value: p });
            }
        }
        let sum = sum_compensated(probabilities.iter().copied());
        if (sum - 1.0).abs() > INPUT_TOL {
            return Err(Error::SimplexSumNotOne { sum });
        }
        Ok(Self { probabilities })
    }

    pub fn dim(&self) -> usize {
        self.probabilities.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probabilities
    }

    /// Shannon entropy `-sum p_j ln p_j` with the convention `0 ln 0 = 0`.
    pub fn entropy(&self) -> f64 {
        entropy_of(&self.probabilities)
    }
}

/// Entropy of a raw probability slice with `0 ln 0 = 0`.
pub fn entropy_of(p: &[f64]) -> f64 {
    sum_compensated(p.iter().map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 }))
}

/// Per-channel, per-step coupling strengths `eta_lx`.
///
/// Uniform and per-channel schedules are stationary in the step index; a
/// table schedule defines a finite number of steps and refuses to be read
/// past its end.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    channels: usize,
    kind: ScheduleKind,
}

#[derive(Debug, Clone, PartialEq)]
enum ScheduleKind {
    /// One column reused at every step (uniform or per-channel values).
    Stationary(Vec<f64>),
    /// Explicit per-step columns, indexed from step 0.
    Table(Vec<Vec<f64>>),
}

fn validate_column(column: &[f64]) -> Result<()> {
    if column.len() < 2 {
        return Err(Error::TooShort { len: column.len() });
    }
    for (l, &eta) in column.iter().enumerate() {
        if !eta.is_finite() || eta <= 0.0 || eta >= 1.0 {
            return Err(Error::EtaOutOfRange {
                channel: l,
                value: eta,
            });
        }
    }
    let sum: f64 = column.iter().sum();
    if sum > ETA_STEP_BUDGET {
        return Err(Error::EtaBudgetExceeded {
            sum,
            budget: ETA_STEP_BUDGET,
        });
    }
    Ok(())
}

impl NoiseSchedule {
    /// Same coupling on every channel and step.
    pub fn uniform(eta: f64, channels: usize) -> Result<Self> {
        Self::per_channel(vec![eta; channels])
    }

    /// One coupling per channel, constant across steps.
    pub fn per_channel(etas: Vec<f64>) -> Result<Self> {
        validate_column(&etas)?;
        Ok(Self {
            channels: etas.len(),
            kind: ScheduleKind::Stationary(etas),
        })
    }

    /// Explicit table of rows `rows[x][l] = eta at step x, channel l`.
    pub fn table(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter {
                name: "eta table",
                reason: "must define at least one step".into(),
            });
        }
        let channels = rows[0].len();
        for row in &rows {
            if row.len() != channels {
                return Err(Error::LengthMismatch {
                    what: "eta table row",
                    expected: channels,
                    got: row.len(),
                });
            }
            validate_column(row)?;
        }
        Ok(Self {
            channels,
            kind: ScheduleKind::Table(rows),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of steps the schedule defines, if finite.
    pub fn defined_steps(&self) -> Option<u64> {
        match &self.kind {
            ScheduleKind::Stationary(_) => None,
            ScheduleKind::Table(rows) => Some(rows.len() as u64),
        }
    }

    /// Column of couplings applied at (zero-based) step `step`.
    pub fn column(&self, step: u64) -> Result<&[f64]> {
        match &self.kind {
            ScheduleKind::Stationary(col) => Ok(col),
            ScheduleKind::Table(rows) => rows
                .get(usize::try_from(step).unwrap_or(usize::MAX))
                .map(Vec::as_slice)
                .ok_or(Error::ScheduleExhausted {
                    step,
                    defined_steps: rows.len() as u64,
                }),
        }
    }
}

/// One step's stochastic sign configuration, entries in {-1, +1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpsilonDraw {
    signs: Vec<i8>,
}

impl EpsilonDraw {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        for (i, &s) in signs.iter().enumerate() {
            if s != 1 && s != -1 {
                return Err(Error::InvalidSign { index: i, value: s });
            }
        }
        Ok(Self { signs })
    }

    /// All-plus draw of the given width, used as a sampling buffer.
    pub(crate) fn plus(n: usize) -> Self {
        Self { signs: vec![1; n] }
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub(crate) fn set(&mut self, index: usize, sign: i8) {
        debug_assert!(sign == 1 || sign == -1);
        self.signs[index] = sign;
    }

    /// Sign at channel `l` as a float factor.
    pub fn sign(&self, l: usize) -> f64 {
        f64::from(self.signs[l])
    }

    /// Signs encoded so that counting masks upward walks the patterns in
    /// lexicographic order with `+` before `-`: channel `l` reads bit
    /// `n - 1 - l`, clear meaning +1.
    pub(crate) fn from_mask(mask: u32, n: usize) -> Self {
        let signs = (0..n)
            .map(|l| if mask & (1 << (n - 1 - l)) == 0 { 1 } else { -1 })
            .collect();
        Self { signs }
    }
}

impl std::fmt::Display for EpsilonDraw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &s in &self.signs {
            f.write_str(if s == 1 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basis_state_is_valid() {
        let psi = StateVector::from_real(&[1.0, 0.0]).unwrap();
        assert_eq!(psi.probabilities().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn point_six_point_eight_is_valid() {
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let p = psi.probabilities();
        assert_relative_eq!(p.as_slice()[0], 0.36, max_relative = 1e-15);
        assert_relative_eq!(p.as_slice()[1], 0.64, max_relative = 1e-15);
    }

    #[test]
    fn unnormalized_state_rejected() {
        let err = StateVector::from_real(&[0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { .. }));
    }

    #[test]
    fn single_amplitude_rejected() {
        let err = StateVector::from_real(&[1.0]).unwrap_err();
        assert!(matches!(err, Error::TooShort { len: 1 }));
    }

    #[test]
    fn nan_amplitude_rejected() {
        let err = StateVector::from_real(&[f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn density_from_basis_state() {
        let psi = StateVector::from_real(&[1.0, 0.0]).unwrap();
        let rho = DensityMatrix::from_state(&psi);
        assert_eq!(rho.entry(0, 0), Complex64::new(1.0, 0.0));
        assert_eq!(rho.entry(0, 1), Complex64::new(0.0, 0.0));
        assert_eq!(rho.entry(1, 1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn density_outer_product_real() {
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let rho = DensityMatrix::from_state(&psi);
        assert_relative_eq!(rho.entry(0, 0).re, 0.36, max_relative = 1e-15);
        assert_relative_eq!(rho.entry(0, 1).re, 0.48, max_relative = 1e-15);
        assert_relative_eq!(rho.entry(1, 1).re, 0.64, max_relative = 1e-15);
        rho.validate().unwrap();
    }

    #[test]
    fn density_outer_product_complex() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = StateVector::new(vec![Complex64::new(s, 0.0), Complex64::new(0.0, s)]).unwrap();
        let rho = DensityMatrix::from_state(&psi);
        assert_relative_eq!(rho.entry(0, 0).re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(rho.entry(0, 1).im, -0.5, epsilon = 1e-15);
        assert_relative_eq!(rho.entry(1, 0).im, 0.5, epsilon = 1e-15);
        assert_relative_eq!(rho.entry(1, 1).re, 0.5, epsilon = 1e-15);
        rho.validate().unwrap();
    }

    #[test]
    fn negative_eigenvalue_rejected() {
        // Hermitian, trace one, but indefinite.
        let entries = vec![
            Complex64::new(0.5, 0.0),
            Complex64::new(0.9, 0.0),
            Complex64::new(0.9, 0.0),
            Complex64::new(0.5, 0.0),
        ];
        let err = DensityMatrix::new(2, entries).unwrap_err();
        assert!(matches!(err, Error::NotPositiveSemidefinite { .. }));
    }

    #[test]
    fn non_hermitian_rejected() {
        let entries = vec![
            Complex64::new(0.5, 0.0),
            Complex64::new(0.1, 0.2),
            Complex64::new(0.1, 0.2),
            Complex64::new(0.5, 0.0),
        ];
        let err = DensityMatrix::new(2, entries).unwrap_err();
        assert!(matches!(err, Error::NotHermitian { .. }));
    }

    #[test]
    fn diagonal_of_projectors() {
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let rho = DensityMatrix::from_state(&psi);
        let p = rho.diagonal().unwrap();
        assert_relative_eq!(p.as_slice()[0], 0.36, max_relative = 1e-15);

        let quarter = DensityMatrix::new(
            4,
            (0..16)
                .map(|i| {
                    if i % 5 == 0 {
                        Complex64::new(0.25, 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect(),
        )
        .unwrap();
        assert_eq!(quarter.diagonal().unwrap().as_slice(), &[0.25; 4]);
    }

    #[test]
    fn entropy_values() {
        let corner = SimplexPoint::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(corner.entropy(), 0.0);

        let uniform = SimplexPoint::new(vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(uniform.entropy(), std::f64::consts::LN_2, epsilon = 1e-15);

        // Direct evaluation of -sum p ln p.
        let skew = SimplexPoint::new(vec![0.36, 0.64]).unwrap();
        assert_relative_eq!(skew.entropy(), 0.6534181947937018, epsilon = 1e-12);
    }

    #[test]
    fn entropy_bounded_by_ln_n() {
        let p = SimplexPoint::new(vec![0.2, 0.3, 0.5]).unwrap();
        let s = p.entropy();
        assert!(s >= 0.0 && s <= (3.0f64).ln() + 1e-15);
    }

    #[test]
    fn simplex_rejects_bad_input() {
        assert!(matches!(
            SimplexPoint::new(vec![0.7, 0.4]).unwrap_err(),
            Error::SimplexSumNotOne { .. }
        ));
        assert!(matches!(
            SimplexPoint::new(vec![-0.1, 1.1]).unwrap_err(),
            Error::NegativeProbability { .. }
        ));
    }

    #[test]
    fn revalidation_is_idempotent() {
        let psi = StateVector::from_real(&[0.6, 0.8]).unwrap();
        let rho = DensityMatrix::from_state(&psi);
        rho.validate().unwrap();
        rho.validate().unwrap();
        let again = StateVector::new(psi.amplitudes().to_vec()).unwrap();
        assert_eq!(again, psi);
    }

    #[test]
    fn schedule_bounds() {
        assert!(NoiseSchedule::uniform(0.05, 3).is_ok());
        assert!(matches!(
            NoiseSchedule::uniform(0.6, 2).unwrap_err(),
            Error::EtaBudgetExceeded { .. }
        ));
        assert!(matches!(
            NoiseSchedule::uniform(0.0, 2).unwrap_err(),
            Error::EtaOutOfRange { .. }
        ));
        assert!(matches!(
            NoiseSchedule::per_channel(vec![0.1, 1.0]).unwrap_err(),
            Error::EtaOutOfRange { .. }
        ));
    }

    #[test]
    fn table_schedule_is_finite() {
        let sched = NoiseSchedule::table(vec![vec![0.1, 0.2], vec![0.3, 0.05]]).unwrap();
        assert_eq!(sched.defined_steps(), Some(2));
        assert_eq!(sched.column(1).unwrap(), &[0.3, 0.05]);
        assert!(matches!(
            sched.column(2).unwrap_err(),
            Error::ScheduleExhausted { .. }
        ));
    }

    #[test]
    fn epsilon_draw_validates_signs() {
        assert!(EpsilonDraw::new(vec![1, -1, 1]).is_ok());
        assert!(matches!(
            EpsilonDraw::new(vec![1, 0]).unwrap_err(),
            Error::InvalidSign { .. }
        ));
        let patterns: Vec<String> = (0..4u32)
            .map(|m| EpsilonDraw::from_mask(m, 2).to_string())
            .collect();
        assert_eq!(patterns, ["++", "+-", "-+", "--"]);
    }

    #[test]
    fn mode_parses_round_trip() {
        use std::str::FromStr;
        for mode in UpdateMode::ALL {
            assert_eq!(UpdateMode::from_str(&mode.to_string()).unwrap(), mode);
        }
        assert!(UpdateMode::from_str("other").is_err());
    }
}
