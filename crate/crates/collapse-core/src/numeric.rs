//! Small numeric helpers: compensated summation, quadrature, seed mixing.

/// Neumaier-compensated accumulator. Keeps long reductions accurate to a few
/// ulps so the 1e-12/1e-13 identities survive 2^16-term enumerations.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn sum_compensated<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = Neumaier::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Trapezoidal rule on a uniform grid, compensated.
pub fn trapezoid_uniform(h: f64, ys: &[f64]) -> f64 {
    if ys.len() < 2 {
        return 0.0;
    }
    let mut acc = Neumaier::new();
    acc.add(0.5 * ys[0]);
    for &y in &ys[1..ys.len() - 1] {
        acc.add(y);
    }
    acc.add(0.5 * ys[ys.len() - 1]);
    h * acc.value()
}

/// Trapezoid weight of grid node `i` on a uniform grid of `len` nodes.
pub fn trapezoid_weight(h: f64, i: usize, len: usize) -> f64 {
    if i == 0 || i + 1 == len {
        0.5 * h
    } else {
        h
    }
}

/// Composite Simpson rule on a uniform grid; odd cell counts finish with a
/// Simpson 3/8 tail so the whole rule stays fourth order.
pub fn simpson_uniform(h: f64, ys: &[f64]) -> f64 {
    let cells = ys.len().saturating_sub(1);
    match cells {
        0 => 0.0,
        1 => 0.5 * h * (ys[0] + ys[1]),
        2 => h / 3.0 * (ys[0] + 4.0 * ys[1] + ys[2]),
        3 => 3.0 * h / 8.0 * (ys[0] + 3.0 * ys[1] + 3.0 * ys[2] + ys[3]),
        _ => {
            let (head, tail_start) = if cells % 2 == 0 {
                (ys, None)
            } else {
                (&ys[..ys.len() - 3], Some(ys.len() - 4))
            };
            let mut acc = Neumaier::new();
            acc.add(head[0]);
            for (i, &y) in head.iter().enumerate().skip(1).take(head.len() - 2) {
                acc.add(if i % 2 == 1 { 4.0 * y } else { 2.0 * y });
            }
            acc.add(head[head.len() - 1]);
            let mut total = h / 3.0 * acc.value();
            if let Some(s) = tail_start {
                total += 3.0 * h / 8.0 * (ys[s] + 3.0 * ys[s + 1] + 3.0 * ys[s + 2] + ys[s + 3]);
            }
            total
        }
    }
}

/// SplitMix64 finalizer; full-avalanche mixing for seed derivation.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_handles_cancellation() {
        let mut acc = Neumaier::new();
        acc.add(1e16);
        acc.add(1.0);
        acc.add(-1e16);
        assert_eq!(acc.value(), 1.0);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let ys: Vec<f64> = (0..101).map(|i| 2.0 * (i as f64) * 0.01 + 1.0).collect();
        let v = trapezoid_uniform(0.01, &ys);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        // x^3 on [0, 1]; both even and odd cell counts.
        for points in [5usize, 6, 101, 102] {
            let h = 1.0 / (points - 1) as f64;
            let ys: Vec<f64> = (0..points).map(|i| (i as f64 * h).powi(3)).collect();
            let v = simpson_uniform(h, &ys);
            assert!((v - 0.25).abs() < 1e-13, "points {points}: {v}");
        }
    }

    #[test]
    fn splitmix_differs_on_adjacent_inputs() {
        assert_ne!(splitmix64(1), splitmix64(2));
        assert_ne!(splitmix64(0), 0);
    }
}
