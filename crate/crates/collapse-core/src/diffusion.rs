//! Continuum-limit toolkit: the per-step drift/covariance fields, the
//! leading-order entropy production, a zero-drift SDE sampler on the simplex,
//! and a discrete-vs-continuum comparison harness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::Neumaier;
use crate::state::{entropy_of, NoiseSchedule, SimplexPoint, StateVector, UpdateMode};
use crate::walker::{self, MeanSe, WalkConfig};

/// Raw coordinates outside `[-SAFETY_MARGIN, 1 + SAFETY_MARGIN]` abort an
/// SDE step instead of being clipped.
pub const SAFETY_MARGIN: f64 = 0.1;

/// Domain tag separating continuum-path seeds from discrete-walk seeds.
const SDE_SEED_DOMAIN: u64 = 0x5DE5_7EB5_0000_0001;

/// Per-step drift and covariance of the diagonal random walk,
/// `C_jk = 4 p_j p_k (delta_jk eta_j^2 - p_j eta_j^2 - p_k eta_k^2
///         + sum_l p_l^2 eta_l^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCovariance {
    dim: usize,
    /// Identically zero: the diagonal is a martingale.
    pub drift: Vec<f64>,
    /// Row-major covariance matrix; rows sum to zero.
    pub covariance: Vec<f64>,
}

impl DriftCovariance {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariance_at(&self, row: usize, col: usize) -> f64 {
        self.covariance[row * self.dim + col]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                let mut acc = Neumaier::new();
                for k in 0..self.dim {
                    acc.add(self.covariance_at(j, k));
                }
                acc.value()
            })
            .collect()
    }
}

/// Evaluates the covariance field at a simplex point. Corners give the zero
/// matrix, making them absorbing for the continuum process as well.
pub fn drift_covariance(p: &SimplexPoint, eta: &[f64]) -> Result<DriftCovariance> {
    let n = p.dim();
    if eta.len() != n {
        return Err(Error::LengthMismatch {
            what: "couplings",
            expected: n,
            got: eta.len(),
        });
    }
    let ps = p.as_slice();
    let mixed: f64 = (0..n).map(|l| ps[l] * ps[l] * eta[l] * eta[l]).sum();
    let mut covariance = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let kronecker = if j == k { eta[j] * eta[j] } else { 0.0 };
            covariance[j * n + k] = 4.0
                * ps[j]
                * ps[k]
                * (kronecker - ps[j] * eta[j] * eta[j] - ps[k] * eta[k] * eta[k] + mixed);
        }
    }
    Ok(DriftCovariance {
        dim: n,
        drift: vec![0.0; n],
        covariance,
    })
}

/// Leading-order mean entropy change per step,
/// `-2 sum_j eta_j^2 p_j (1 - p_j)`.
///
/// This is the rate implied by the covariance field: contracting it with the
/// entropy Hessian gives `-(1/2) sum_j C_jj / p_j = -2 sum_j eta_j^2 p_j (1 - p_j)`,
/// and exact one-step enumeration confirms it to `O(eta^3)`. It is negative
/// everywhere except at the corners, where it vanishes.
pub fn entropy_production(p: &SimplexPoint, eta: &[f64]) -> Result<f64> {
    let n = p.dim();
    if eta.len() != n {
        return Err(Error::LengthMismatch {
            what: "couplings",
            expected: n,
            got: eta.len(),
        });
    }
    let ps = p.as_slice();
    let mut acc = Neumaier::new();
    for j in 0..n {
        acc.add(eta[j] * eta[j] * ps[j] * (1.0 - ps[j]));
    }
    Ok(-2.0 * acc.value())
}

/// Analytic tangent-space factor `L` with `L L^T = C`:
/// `L_jl = 2 p_j (delta_jl - p_l) eta_l`. Row-major `n x n`.
///
/// The covariance is the second moment of `dp = L eps` with unit-variance
/// signs, so this factorization is exact; no eigendecomposition is needed
/// and the image automatically lies in the simplex tangent space.
pub fn tangent_factor(p: &[f64], eta: &[f64]) -> Vec<f64> {
    let n = p.len();
    assert_eq!(eta.len(), n, "couplings must match the point");
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for l in 0..n {
            let kronecker = if j == l { 1.0 } else { 0.0 };
            out[j * n + l] = 2.0 * p[j] * (kronecker - p[l]) * eta[l];
        }
    }
    out
}

/// One Euler-Maruyama step `p' = p + sqrt(dX) L xi` with standard-normal
/// `xi`, clipped to the simplex and renormalized.
///
/// Raw coordinates beyond `[-0.1, 1.1]` return [`Error::StepTooLarge`]; the
/// caller should shrink `d_x`.
pub fn sde_step<R: rand::Rng + ?Sized>(
    p: &SimplexPoint,
    eta: &[f64],
    d_x: f64,
    rng: &mut R,
) -> Result<SimplexPoint> {
    let n = p.dim();
    if eta.len() != n {
        return Err(Error::LengthMismatch {
            what: "couplings",
            expected: n,
            got: eta.len(),
        });
    }
    if !(d_x > 0.0) {
        return Err(Error::InvalidParameter {
            name: "d_x",
            reason: format!("step size must be positive, got {d_x}"),
        });
    }
    let mut raw = p.as_slice().to_vec();
    sde_step_raw(&mut raw, eta, d_x, rng)?;
    Ok(SimplexPoint::new(raw).expect("clipped and renormalized step stays on the simplex"))
}

/// In-place kernel behind [`sde_step`].
fn sde_step_raw<R: rand::Rng + ?Sized>(
    p: &mut [f64],
    eta: &[f64],
    d_x: f64,
    rng: &mut R,
) -> Result<()> {
    let n = p.len();
    let factor = tangent_factor(p, eta);
    let sqrt_dx = d_x.sqrt();
    let noise: Vec<f64> = (0..n)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let mut raw = vec![0.0; n];
    for j in 0..n {
        let mut kick = 0.0;
        for l in 0..n {
            kick += factor[j * n + l] * noise[l];
        }
        raw[j] = p[j] + sqrt_dx * kick;
        if raw[j] < -SAFETY_MARGIN || raw[j] > 1.0 + SAFETY_MARGIN {
            return Err(Error::StepTooLarge {
                coordinate: j,
                value: raw[j],
            });
        }
    }
    // Clip into the simplex and renormalize the surviving mass.
    let mut total = 0.0;
    for v in raw.iter_mut() {
        *v = v.clamp(0.0, 1.0);
        total += *v;
    }
    for (dst, v) in p.iter_mut().zip(raw) {
        *dst = v / total;
    }
    Ok(())
}

/// Mean-entropy curves and corner frequencies of matched discrete and
/// continuum ensembles.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub checkpoints: Vec<u64>,
    pub discrete_entropy: Vec<MeanSe>,
    pub continuum_entropy: Vec<MeanSe>,
    pub discrete_corner_frequencies: Vec<f64>,
    pub continuum_corner_frequencies: Vec<f64>,
    pub discrete_unresolved: u64,
    pub continuum_unresolved: u64,
    /// Largest absolute gap between the two corner-frequency estimates.
    pub corner_distance: f64,
    /// Largest relative gap between the entropy curves over the checkpoints.
    pub max_relative_entropy_gap: f64,
}

/// Runs a discrete-walk ensemble and an SDE ensemble from the same state on
/// matched step grids (one SDE unit per mapping step) and compares them.
pub fn compare_discrete_continuum(
    psi: &StateVector,
    eta: f64,
    x_max: u64,
    walks: u64,
    master_seed: u64,
    checkpoints: &[u64],
) -> Result<ComparisonReport> {
    let n = psi.dim();
    if !(2..=3).contains(&n) {
        return Err(Error::DimensionTooLarge {
            size: n as u64,
            limit: 3,
        });
    }
    let schedule = NoiseSchedule::uniform(eta, n)?;
    let config = WalkConfig::new(psi.clone(), schedule, x_max)?
        .with_mode(UpdateMode::SecondOrder)
        .with_checkpoints(checkpoints.to_vec());
    config.validate()?;

    let discrete = walker::run_ensemble(&config, walks, master_seed)?;
    let continuum = run_sde_ensemble(&config, eta, walks, master_seed ^ SDE_SEED_DOMAIN)?;

    let discrete_entropy: Vec<MeanSe> =
        discrete.checkpoints.iter().map(|c| c.entropy).collect();
    let continuum_entropy: Vec<MeanSe> =
        continuum.checkpoints.iter().map(|c| c.entropy).collect();
    let max_relative_entropy_gap = discrete_entropy
        .iter()
        .zip(&continuum_entropy)
        .map(|(d, c)| {
            let denom = d.mean.abs().max(c.mean.abs());
            if denom == 0.0 {
                0.0
            } else {
                (d.mean - c.mean).abs() / denom
            }
        })
        .fold(0.0, f64::max);
    let corner_distance = discrete
        .corner_frequencies()
        .iter()
        .zip(continuum.corner_frequencies())
        .map(|(d, c)| (d - c).abs())
        .fold(0.0, f64::max);

    Ok(ComparisonReport {
        checkpoints: checkpoints.to_vec(),
        discrete_entropy,
        continuum_entropy,
        discrete_corner_frequencies: discrete.corner_frequencies(),
        continuum_corner_frequencies: continuum.corner_frequencies(),
        discrete_unresolved: discrete.unresolved,
        continuum_unresolved: continuum.unresolved,
        corner_distance,
        max_relative_entropy_gap,
    })
}

/// Runs an absorbing SDE ensemble under the walker's configuration grid.
/// Reuses the walker aggregation semantics: frozen paths keep reporting
/// their absorbed state at later checkpoints.
pub fn run_sde_ensemble(
    config: &WalkConfig,
    eta: f64,
    paths: u64,
    master_seed: u64,
) -> Result<walker::EnsembleStats> {
    config.validate()?;
    if paths == 0 {
        return Err(Error::InvalidParameter {
            name: "paths",
            reason: "must run at least one path".into(),
        });
    }
    let n = config.psi.dim();
    let etas = vec![eta; n];
    let run_path = |seed: u64| -> Result<walker::WalkResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = config.psi.probabilities().as_slice().to_vec();
        let mut trajectory = Vec::with_capacity(config.checkpoints.len());
        let mut next_checkpoint = config.checkpoints.iter().copied().peekable();
        let mut corner = corner_of(&p, config.collapse_tol);
        let mut step = 0u64;
        let record = |p: &[f64], at: u64, traj: &mut Vec<walker::TrajectoryPoint>| {
            traj.push(walker::TrajectoryPoint {
                step: at,
                point: SimplexPoint::new(p.to_vec())
                    .expect("sde steps keep the point on the simplex"),
                entropy: entropy_of(p),
                offdiag_frobenius: None,
            });
        };
        while next_checkpoint.peek() == Some(&step) {
            next_checkpoint.next();
            record(&p, step, &mut trajectory);
        }
        while corner.is_none() && step < config.max_steps {
            substep(&mut p, &etas, 1.0, &mut rng, 0)?;
            step += 1;
            corner = corner_of(&p, config.collapse_tol);
            while next_checkpoint.peek() == Some(&step) {
                next_checkpoint.next();
                record(&p, step, &mut trajectory);
            }
        }
        for at in next_checkpoint {
            record(&p, at, &mut trajectory);
        }
        Ok(walker::WalkResult {
            final_corner: corner,
            steps_taken: step,
            trajectory,
        })
    };

    // Same batched, id-ordered reduction as the discrete ensemble.
    let mut acc = SdeAccumulator::new(config);
    let batch_size = 1024u64;
    let mut start = 0u64;
    while start < paths {
        let end = (start + batch_size).min(paths);
        let batch: Vec<Result<walker::WalkResult>> = (start..end)
            .into_par_iter()
            .map(|id| run_path(walker::derive_walk_seed(master_seed, id)))
            .collect();
        for result in batch {
            acc.add(&result?);
        }
        start = end;
    }
    Ok(acc.finish(paths, master_seed))
}

/// Halve the step recursively when a draw would leave the safety box. The
/// couplings here keep kicks at the percent scale, so this almost never
/// recurses; it exists so pathological draws shrink instead of aborting.
fn substep<R: rand::Rng + ?Sized>(
    p: &mut [f64],
    eta: &[f64],
    d_x: f64,
    rng: &mut R,
    depth: u8,
) -> Result<()> {
    match sde_step_raw(p, eta, d_x, rng) {
        Err(Error::StepTooLarge { coordinate, value }) if depth < 8 => {
            let _ = (coordinate, value);
            substep(p, eta, 0.5 * d_x, rng, depth + 1)?;
            substep(p, eta, 0.5 * d_x, rng, depth + 1)
        }
        other => other,
    }
}

fn corner_of(p: &[f64], tol: f64) -> Option<usize> {
    p.iter().position(|&v| v >= 1.0 - tol)
}

struct SdeAccumulator {
    dim: usize,
    checkpoints: Vec<u64>,
    corner_counts: Vec<u64>,
    unresolved: u64,
    p_sums: Vec<Vec<Neumaier>>,
    p_sq: Vec<Vec<Neumaier>>,
    s_sums: Vec<Neumaier>,
    s_sq: Vec<Neumaier>,
}

impl SdeAccumulator {
    fn new(config: &WalkConfig) -> Self {
        let dim = config.psi.dim();
        let m = config.checkpoints.len();
        Self {
            dim,
            checkpoints: config.checkpoints.clone(),
            corner_counts: vec![0; dim],
            unresolved: 0,
            p_sums: vec![vec![Neumaier::new(); dim]; m],
            p_sq: vec![vec![Neumaier::new(); dim]; m],
            s_sums: vec![Neumaier::new(); m],
            s_sq: vec![Neumaier::new(); m],
        }
    }

    fn add(&mut self, result: &walker::WalkResult) {
        match result.final_corner {
            Some(m) => self.corner_counts[m] += 1,
            None => self.unresolved += 1,
        }
        for (i, point) in result.trajectory.iter().enumerate() {
            for j in 0..self.dim {
                let v = point.point.as_slice()[j];
                self.p_sums[i][j].add(v);
                self.p_sq[i][j].add(v * v);
            }
            self.s_sums[i].add(point.entropy);
            self.s_sq[i].add(point.entropy * point.entropy);
        }
    }

    fn finish(self, paths: u64, master_seed: u64) -> walker::EnsembleStats {
        let nf = paths as f64;
        let mean_se = |sum: &Neumaier, sq: &Neumaier| -> MeanSe {
            let mean = sum.value() / nf;
            let se = if paths > 1 {
                let var = ((sq.value() - sum.value() * sum.value() / nf) / (nf - 1.0)).max(0.0);
                (var / nf).sqrt()
            } else {
                0.0
            };
            MeanSe { mean, se }
        };
        let checkpoints = self
            .checkpoints
            .iter()
            .enumerate()
            .map(|(i, &step)| {
                let stats: Vec<MeanSe> = (0..self.dim)
                    .map(|j| mean_se(&self.p_sums[i][j], &self.p_sq[i][j]))
                    .collect();
                walker::CheckpointStats {
                    step,
                    mean_p: stats.iter().map(|m| m.mean).collect(),
                    se_p: stats.iter().map(|m| m.se).collect(),
                    entropy: mean_se(&self.s_sums[i], &self.s_sq[i]),
                    offdiag: None,
                }
            })
            .collect();
        walker::EnsembleStats {
            walks: paths,
            master_seed,
            corner_counts: self.corner_counts,
            unresolved: self.unresolved,
            checkpoints,
        }
    }
}
