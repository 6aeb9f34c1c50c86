//! Correlations between two sign variables coupled to the same microsystem,
//! and the two-pointer (two-detector) continuum profile whose pointer signs
//! become totally correlated in the large-width limit.

use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::numeric::{simpson_uniform, trapezoid_weight, Neumaier};
use crate::two_state::{gaussian_mass, PointerGrid, GRID_MASS_TOL};

/// Exact joint distribution of two one-step signs with equal couplings:
/// `P(e1, e2) = (1 + eta d (e1 + e2) + eta^2 e1 e2) / 4` with
/// `d = |psi_1|^2 - |psi_2|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDistribution {
    /// Probabilities in the order (++, +-, -+, --).
    pub probabilities: [f64; 4],
    /// `<e1>`, computed from the four probabilities.
    pub marginal_first: f64,
    /// `<e2>`.
    pub marginal_second: f64,
    /// `<e1 e2>`; equals `eta^2` identically.
    pub correlation: f64,
}

pub fn pair_distribution(initial_p1: f64, eta: f64) -> Result<PairDistribution> {
    if !initial_p1.is_finite() || initial_p1 <= 0.0 || initial_p1 >= 1.0 {
        return Err(Error::InvalidParameter {
            name: "initial_p1",
            reason: format!("must lie strictly inside (0,1), got {initial_p1}"),
        });
    }
    if !eta.is_finite() || eta <= 0.0 || eta >= 1.0 {
        return Err(Error::EtaOutOfRange {
            channel: 0,
            value: eta,
        });
    }
    let d = initial_p1 - (1.0 - initial_p1);
    let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
    let mut probabilities = [0.0; 4];
    for (slot, (e1, e2)) in probabilities.iter_mut().zip(signs) {
        *slot = 0.25 * (1.0 + eta * d * (e1 + e2) + eta * eta * e1 * e2);
    }
    let moment = |f: fn(f64, f64) -> f64| -> f64 {
        let mut acc = Neumaier::new();
        for (p, (e1, e2)) in probabilities.iter().zip(signs) {
            acc.add(p * f(e1, e2));
        }
        acc.value()
    };
    Ok(PairDistribution {
        probabilities,
        marginal_first: moment(|e1, _| e1),
        marginal_second: moment(|_, e2| e2),
        correlation: moment(|e1, e2| e1 * e2),
    })
}

/// Continuum profile of two pointer variables attached to independent parts
/// of the apparatus: a two-component product-Gaussian mixture on `(z, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPointerProfile {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    /// Row-major over `(z_i, u_j)`.
    pub q: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub sharpness_z: f64,
    pub sharpness_u: f64,
    /// Born weight of the component centered at `(+1/2, +1/2)`.
    pub weight_one: f64,
}

/// Builds the profile. Component one sits at `(+1/2, +1/2)` with weight
/// `initial_p1`, component two at `(-1/2, -1/2)`.
pub fn two_pointer_profile(
    initial_p1: f64,
    sharpness_z: f64,
    sharpness_u: f64,
    z_grid: &PointerGrid,
    u_grid: &PointerGrid,
) -> Result<TwoPointerProfile> {
    if !(0.0..=1.0).contains(&initial_p1) || !initial_p1.is_finite() {
        return Err(Error::InvalidParameter {
            name: "initial_p1",
            reason: format!("must lie in [0,1], got {initial_p1}"),
        });
    }
    for (name, s) in [("sharpness_z", sharpness_z), ("sharpness_u", sharpness_u)] {
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("must be positive, got {s}"),
            });
        }
    }
    z_grid.validate()?;
    u_grid.validate()?;

    let w1 = initial_p1;
    let w2 = 1.0 - w1;
    let inside = |c: f64| {
        gaussian_mass(c, sharpness_z, z_grid.min, z_grid.max)
            * gaussian_mass(c, sharpness_u, u_grid.min, u_grid.max)
    };
    let missing = 1.0 - w1 * inside(0.5) - w2 * inside(-0.5);
    if missing > GRID_MASS_TOL {
        return Err(Error::GridTooNarrow {
            missing_mass: missing,
        });
    }

    let z = z_grid.values();
    let u = u_grid.values();
    let norm = (sharpness_z * sharpness_u).sqrt() / std::f64::consts::PI;
    let len = z.len() * u.len();
    let mut q1 = Vec::with_capacity(len);
    let mut q2 = Vec::with_capacity(len);
    let mut q = Vec::with_capacity(len);
    let mut p1 = Vec::with_capacity(len);
    let mut p2 = Vec::with_capacity(len);
    for &zi in &z {
        let gz1 = (-sharpness_z * (zi - 0.5) * (zi - 0.5)).exp();
        let gz2 = (-sharpness_z * (zi + 0.5) * (zi + 0.5)).exp();
        for &uj in &u {
            let gu1 = (-sharpness_u * (uj - 0.5) * (uj - 0.5)).exp();
            let gu2 = (-sharpness_u * (uj + 0.5) * (uj + 0.5)).exp();
            let a = norm * w1 * gz1 * gu1;
            let b = norm * w2 * gz2 * gu2;
            let total = a + b;
            q1.push(a);
            q2.push(b);
            q.push(total);
            if total > 0.0 {
                p1.push(a / total);
                p2.push(b / total);
            } else {
                let near_one = zi + uj >= 0.0;
                p1.push(if near_one { 1.0 } else { 0.0 });
                p2.push(if near_one { 0.0 } else { 1.0 });
            }
        }
    }
    Ok(TwoPointerProfile {
        z,
        u,
        q,
        q1,
        q2,
        p1,
        p2,
        sharpness_z,
        sharpness_u,
        weight_one: w1,
    })
}

impl TwoPointerProfile {
    fn spacing_z(&self) -> f64 {
        self.z[1] - self.z[0]
    }

    fn spacing_u(&self) -> f64 {
        self.u[1] - self.u[0]
    }

    /// 2-D trapezoidal mass of `q` over the grid.
    pub fn total_mass(&self) -> f64 {
        self.weighted_sum(|_, _| 1.0)
    }

    /// Exact mass of the quadrant selected by the signs of `z` and `u`,
    /// through Gaussian error functions.
    pub fn quadrant_mass(&self, z_positive: bool, u_positive: bool) -> f64 {
        let half = |positive: bool, c: f64, s: f64| {
            if positive {
                gaussian_mass(c, s, 0.0, f64::INFINITY)
            } else {
                gaussian_mass(c, s, f64::NEG_INFINITY, 0.0)
            }
        };
        self.weight_one
            * half(z_positive, 0.5, self.sharpness_z)
            * half(u_positive, 0.5, self.sharpness_u)
            + (1.0 - self.weight_one)
                * half(z_positive, -0.5, self.sharpness_z)
                * half(u_positive, -0.5, self.sharpness_u)
    }

    /// Grid-quadrature counterpart of [`Self::quadrant_mass`]: nested
    /// composite Simpson over the sub-grid on the selected side of each
    /// axis. Fourth-order accurate when the grids contain the origin.
    pub fn quadrant_mass_quadrature(&self, z_positive: bool, u_positive: bool) -> f64 {
        let hz = self.spacing_z();
        let hu = self.spacing_u();
        let nu = self.u.len();
        let z_range = half_range(&self.z, z_positive);
        let u_range = half_range(&self.u, u_positive);
        let rows: Vec<f64> = z_range
            .clone()
            .map(|i| simpson_uniform(hu, &self.q[i * nu..][u_range.clone()]))
            .collect();
        simpson_uniform(hz, &rows)
    }

    /// Trapezoid marginal of `q` over `u`, evaluated at every `z` node.
    pub fn marginal_z(&self) -> Vec<f64> {
        let hu = self.spacing_u();
        let nu = self.u.len();
        self.z
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut acc = Neumaier::new();
                for j in 0..nu {
                    acc.add(trapezoid_weight(hu, j, nu) * self.q[i * nu + j]);
                }
                acc.value()
            })
            .collect()
    }

    fn weighted_sum<F: Fn(f64, f64) -> f64>(&self, f: F) -> f64 {
        let hz = self.spacing_z();
        let hu = self.spacing_u();
        let (nz, nu) = (self.z.len(), self.u.len());
        let mut acc = Neumaier::new();
        for i in 0..nz {
            let wz = trapezoid_weight(hz, i, nz);
            for j in 0..nu {
                let wu = trapezoid_weight(hu, j, nu);
                acc.add(wz * wu * f(self.z[i], self.u[j]) * self.q[i * nu + j]);
            }
        }
        acc.value()
    }
}

/// `<sign(z) sign(u)>` under the profile, evaluated in closed form:
/// both mixture components contribute `erf(sqrt(Z)/2) erf(sqrt(U)/2)`.
pub fn pointer_sign_correlation(profile: &TwoPointerProfile) -> f64 {
    let mz = erf(0.5 * profile.sharpness_z.sqrt());
    let mu = erf(0.5 * profile.sharpness_u.sqrt());
    // Component means are (+1/2,+1/2) and (-1/2,-1/2); the sign products of
    // their factors coincide, so the weights drop out.
    mz * mu
}

/// Grid-quadrature counterpart of [`pointer_sign_correlation`], assembled
/// from the four quadrant masses so the sign function never has to be
/// sampled on its measure-zero zero lines.
pub fn pointer_sign_correlation_quadrature(profile: &TwoPointerProfile) -> f64 {
    profile.quadrant_mass_quadrature(true, true) + profile.quadrant_mass_quadrature(false, false)
        - profile.quadrant_mass_quadrature(true, false)
        - profile.quadrant_mass_quadrature(false, true)
}

/// Index range of the grid nodes on one side of the origin. The first
/// nonnegative node serves as the shared integration boundary, so grids
/// that contain the origin split exactly there.
fn half_range(grid: &[f64], positive: bool) -> std::ops::Range<usize> {
    let split = grid.partition_point(|&v| v < 0.0);
    if positive {
        split..grid.len()
    } else {
        0..(split + 1).min(grid.len())
    }
}
