//! Cubic regression spline bases in value parameterization.
//!
//! A spline is parameterized by its values γ_j at k knots. The second
//! derivatives m at the knots follow from the C² interpolation conditions
//! as the solution of a banded system `B m = D γ`, which makes both
//! evaluation and the curvature penalty linear in γ:
//!
//! * design row at x: Hermite blend of the two bracketing knot values and
//!   their second derivatives, with `m = B⁻¹ D γ` substituted in;
//! * penalty: `∫ f''(x)² dx = γᵀ Dᵀ B⁻¹ D γ`, symmetric positive
//!   semi-definite with constants (and, for the natural basis, linear
//!   functions) in its null space.
//!
//! Two boundary behaviours are provided. The cyclic basis wraps the domain
//! so value, first and second derivatives match across the period boundary
//! — the right construction for a month-of-year smooth. The natural basis
//! sets the boundary second derivatives to zero and extrapolates linearly,
//! used for optional predictor smooths.

use thiserror::Error;

use crate::linalg::{LdlFactor, Mat};

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("basis dimension must be at least 4, got {0}")]
    TooFewKnots(usize),
    #[error("knot domain is degenerate: [{lo}, {hi}]")]
    DegenerateDomain { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplineKind {
    /// Periodic over `period`, knots cover one cycle.
    Cyclic { period: f64 },
    /// Zero second derivative at the boundary knots, linear extrapolation
    /// outside them.
    Natural,
}

#[derive(Debug, Clone)]
pub struct SplineBasis {
    pub kind: SplineKind,
    /// Ascending knot positions, length k.
    pub knots: Vec<f64>,
    /// k×k map from knot values γ to knot second derivatives m.
    value_to_curvature: Mat,
    /// k×k curvature penalty `Dᵀ B⁻¹ D`.
    pub penalty: Mat,
}

impl SplineBasis {
    /// Cyclic basis with k equally spaced knots starting at `domain_start`,
    /// wrapping after `period`.
    pub fn cyclic(domain_start: f64, period: f64, k: usize) -> Result<Self, SplineError> {
        if k < 4 {
            return Err(SplineError::TooFewKnots(k));
        }
        if !(period > 0.0) {
            return Err(SplineError::DegenerateDomain {
                lo: domain_start,
                hi: domain_start + period,
            });
        }
        let h = period / k as f64;
        let knots: Vec<f64> = (0..k).map(|j| domain_start + h * j as f64).collect();

        // B m = D γ with wrap-around interpolation conditions at every knot.
        let mut b = Mat::zeros(k, k);
        let mut d = Mat::zeros(k, k);
        for j in 0..k {
            let prev = (j + k - 1) % k;
            let next = (j + 1) % k;
            b[(j, prev)] += h / 6.0;
            b[(j, j)] += 2.0 * h / 3.0;
            b[(j, next)] += h / 6.0;
            d[(j, prev)] += 1.0 / h;
            d[(j, j)] -= 2.0 / h;
            d[(j, next)] += 1.0 / h;
        }
        Self::assemble(SplineKind::Cyclic { period }, knots, &b, &d)
    }

    /// Natural basis with k equally spaced knots over `[lo, hi]`.
    pub fn natural(lo: f64, hi: f64, k: usize) -> Result<Self, SplineError> {
        if k < 4 {
            return Err(SplineError::TooFewKnots(k));
        }
        if !(hi > lo) {
            return Err(SplineError::DegenerateDomain { lo, hi });
        }
        let h = (hi - lo) / (k - 1) as f64;
        let knots: Vec<f64> = (0..k).map(|j| lo + h * j as f64).collect();

        // Interior interpolation conditions only; m_0 = m_{k-1} = 0.
        let interior = k - 2;
        let mut b = Mat::zeros(interior, interior);
        let mut d = Mat::zeros(interior, k);
        for p in 0..interior {
            let j = p + 1;
            if p > 0 {
                b[(p, p - 1)] = h / 6.0;
            }
            b[(p, p)] = 2.0 * h / 3.0;
            if p + 1 < interior {
                b[(p, p + 1)] = h / 6.0;
            }
            d[(p, j - 1)] = 1.0 / h;
            d[(p, j)] = -2.0 / h;
            d[(p, j + 1)] = 1.0 / h;
        }
        Self::assemble(SplineKind::Natural, knots, &b, &d)
    }

    fn assemble(
        kind: SplineKind,
        knots: Vec<f64>,
        b: &Mat,
        d: &Mat,
    ) -> Result<Self, SplineError> {
        let factor = LdlFactor::new(b).expect("interpolation system is SPD by construction");
        let b_inv_d = factor.solve_mat(d);
        let penalty = d.transpose_matmul(&b_inv_d);

        let k = knots.len();
        let value_to_curvature = match kind {
            SplineKind::Cyclic { .. } => b_inv_d,
            SplineKind::Natural => {
                // Pad with zero first/last rows: boundary curvature is zero.
                let mut full = Mat::zeros(k, k);
                for p in 0..k - 2 {
                    full.row_mut(p + 1).copy_from_slice(b_inv_d.row(p));
                }
                full
            }
        };

        Ok(Self {
            kind,
            knots,
            value_to_curvature,
            penalty,
        })
    }

    pub fn k(&self) -> usize {
        self.knots.len()
    }

    fn spacing(&self) -> f64 {
        self.knots[1] - self.knots[0]
    }

    /// Design row: coefficients of γ reproducing f(x).
    pub fn basis_row(&self, x: f64) -> Vec<f64> {
        let k = self.k();
        let h = self.spacing();
        let t0 = self.knots[0];
        let mut row = vec![0.0; k];

        match self.kind {
            SplineKind::Cyclic { period } => {
                let wrapped = t0 + (x - t0).rem_euclid(period);
                let mut seg = ((wrapped - t0) / h).floor() as usize;
                if seg >= k {
                    seg = k - 1;
                }
                let left = t0 + h * seg as f64;
                let next = (seg + 1) % k;
                self.hermite_into(&mut row, seg, next, wrapped - left, h);
            }
            SplineKind::Natural => {
                let last = k - 1;
                if x < self.knots[0] {
                    row[0] = 1.0;
                    self.add_knot_derivative(&mut row, 0, x - self.knots[0]);
                } else if x >= self.knots[last] {
                    row[last] = 1.0;
                    self.add_knot_derivative(&mut row, last, x - self.knots[last]);
                } else {
                    let seg = (((x - t0) / h).floor() as usize).min(k - 2);
                    let left = self.knots[seg];
                    self.hermite_into(&mut row, seg, seg + 1, x - left, h);
                }
            }
        }
        row
    }

    /// Hermite blend on the segment with left knot value index `j`, right
    /// value index `jn`, at offset `dx` from the left knot.
    fn hermite_into(&self, row: &mut [f64], j: usize, jn: usize, dx: f64, h: f64) {
        let a_plus = dx / h;
        let a_minus = 1.0 - a_plus;
        let c_minus = (a_minus * a_minus * a_minus - a_minus) * h * h / 6.0;
        let c_plus = (a_plus * a_plus * a_plus - a_plus) * h * h / 6.0;
        row[j] += a_minus;
        row[jn] += a_plus;
        for (slot, m) in row.iter_mut().zip(self.value_to_curvature.row(j)) {
            *slot += c_minus * m;
        }
        for (slot, m) in row.iter_mut().zip(self.value_to_curvature.row(jn)) {
            *slot += c_plus * m;
        }
    }

    /// Add `dx · f'(knot)` to the row — linear extrapolation beyond a
    /// boundary knot of the natural basis.
    fn add_knot_derivative(&self, row: &mut [f64], knot: usize, dx: f64) {
        let h = self.spacing();
        let k = self.k();
        if knot == 0 {
            // f'(t_0) = (γ_1 − γ_0)/h − h (2 m_0 + m_1)/6, with m_0 = 0.
            row[0] -= dx / h;
            row[1] += dx / h;
            for (slot, m) in row.iter_mut().zip(self.value_to_curvature.row(1)) {
                *slot -= dx * h / 6.0 * m;
            }
        } else {
            // f'(t_last) = (γ_last − γ_prev)/h + h (m_prev + 2 m_last)/6,
            // with m_last = 0.
            row[k - 1] += dx / h;
            row[k - 2] -= dx / h;
            for (slot, m) in row.iter_mut().zip(self.value_to_curvature.row(k - 2)) {
                *slot += dx * h / 6.0 * m;
            }
        }
    }

    /// N×k design matrix over the given inputs.
    pub fn design(&self, xs: &[f64]) -> Mat {
        let mut out = Mat::zeros(xs.len(), self.k());
        for (i, &x) in xs.iter().enumerate() {
            out.row_mut(i).copy_from_slice(&self.basis_row(x));
        }
        out
    }

    /// Evaluate the spline with coefficient vector γ at x.
    pub fn evaluate(&self, gamma: &[f64], x: f64) -> f64 {
        crate::linalg::dot(&self.basis_row(x), gamma)
    }
}

/// Orthonormal basis of the sum-to-zero subspace: a k×(k−1) matrix Z with
/// `1ᵀZ = 0` and `ZᵀZ = I`. Reparameterizing γ = Zδ pins the smooth's mean
/// level to the intercept.
pub fn sum_to_zero_basis(k: usize) -> Mat {
    let mut z = Mat::zeros(k, k - 1);
    for j in 1..k {
        let scale = 1.0 / ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            z[(i, j - 1)] = scale;
        }
        z[(j, j - 1)] = -(j as f64) * scale;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_gamma(k: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect()
    }

    #[test]
    fn rejects_degenerate_configurations() {
        assert!(SplineBasis::cyclic(1.0, 12.0, 3).is_err());
        assert!(SplineBasis::cyclic(1.0, 0.0, 12).is_err());
        assert!(SplineBasis::natural(2.0, 2.0, 10).is_err());
    }

    #[test]
    fn knots_are_one_hot_and_periodic() {
        let basis = SplineBasis::cyclic(1.0, 12.0, 12).unwrap();
        for (j, &knot) in basis.knots.iter().enumerate() {
            let row = basis.basis_row(knot);
            let shifted = basis.basis_row(knot + 12.0);
            for (i, (&a, &b)) in row.iter().zip(&shifted).enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((a - expected).abs() < 1e-12, "knot {j} col {i}: {a}");
                assert_eq!(a.to_bits(), b.to_bits(), "wrap changed the row");
            }
        }
    }

    #[test]
    fn cyclic_evaluation_wraps_below_domain() {
        let basis = SplineBasis::cyclic(1.0, 12.0, 12).unwrap();
        let gamma = random_gamma(12, 7);
        let below = basis.evaluate(&gamma, 0.999);
        let wrapped = basis.evaluate(&gamma, 12.999);
        assert!((below - wrapped).abs() < 1e-12);
    }

    #[test]
    fn constant_coefficients_have_zero_penalty() {
        for basis in [
            SplineBasis::cyclic(1.0, 12.0, 12).unwrap(),
            SplineBasis::natural(0.0, 1.0, 10).unwrap(),
        ] {
            let ones = vec![1.0; basis.k()];
            let quad = crate::linalg::dot(&basis.penalty.matvec(&ones), &ones);
            assert!(quad.abs() < 1e-10, "constant penalized: {quad}");
        }
    }

    #[test]
    fn natural_penalty_ignores_linear_trends() {
        let basis = SplineBasis::natural(0.0, 9.0, 10).unwrap();
        let gamma: Vec<f64> = basis.knots.iter().map(|t| 3.0 - 0.5 * t).collect();
        let quad = crate::linalg::dot(&basis.penalty.matvec(&gamma), &gamma);
        assert!(quad.abs() < 1e-9, "linear penalized: {quad}");
        // And the spline reproduces the line everywhere, including beyond
        // the boundary knots.
        for x in [-3.0, 0.4, 4.77, 8.99, 12.5] {
            let expected = 3.0 - 0.5 * x;
            assert!((basis.evaluate(&gamma, x) - expected).abs() < 1e-9, "at {x}");
        }
    }

    #[test]
    fn penalty_is_positive_semidefinite() {
        for basis in [
            SplineBasis::cyclic(1.0, 12.0, 12).unwrap(),
            SplineBasis::natural(0.0, 1.0, 10).unwrap(),
        ] {
            for seed in 0..20 {
                let gamma = random_gamma(basis.k(), seed);
                let quad = crate::linalg::dot(&basis.penalty.matvec(&gamma), &gamma);
                assert!(quad > -1e-10, "negative quadratic form: {quad}");
            }
        }
    }

    /// Independent oracle: the quadratic form must equal the numerically
    /// integrated squared second derivative of the interpolant.
    #[test]
    fn penalty_matches_quadrature_of_curvature() {
        for (basis, lo, hi) in [
            (SplineBasis::cyclic(1.0, 12.0, 12).unwrap(), 1.0, 13.0),
            (SplineBasis::natural(0.0, 9.0, 10).unwrap(), 0.0, 9.0),
        ] {
            let k = basis.k();
            let gamma = random_gamma(k, 99);
            let m = basis.value_to_curvature.matvec(&gamma);

            // f'' is piecewise linear between knot curvatures; integrate
            // its square with a fine trapezoid rule.
            let steps = 20_000usize;
            let dx = (hi - lo) / steps as f64;
            let h = basis.spacing();
            let curvature = |x: f64| -> f64 {
                let pos = (x - basis.knots[0]) / h;
                let seg = (pos.floor() as usize).min(k - 1);
                let frac = pos - seg as f64;
                let right = if seg + 1 < k {
                    m[seg + 1]
                } else {
                    match basis.kind {
                        SplineKind::Cyclic { .. } => m[0],
                        SplineKind::Natural => return 0.0,
                    }
                };
                m[seg] * (1.0 - frac) + right * frac
            };
            let mut integral = 0.0;
            for i in 0..steps {
                let a = curvature(lo + dx * i as f64);
                let b = curvature(lo + dx * (i + 1) as f64);
                integral += 0.5 * (a * a + b * b) * dx;
            }

            let quad = crate::linalg::dot(&basis.penalty.matvec(&gamma), &gamma);
            assert!(
                (quad - integral).abs() < 1e-4 * integral.max(1e-6),
                "{:?}: quadratic form {quad} vs quadrature {integral}",
                basis.kind
            );
        }
    }

    #[test]
    fn cyclic_derivatives_are_continuous_across_the_wrap() {
        let basis = SplineBasis::cyclic(1.0, 12.0, 12).unwrap();
        let gamma = random_gamma(12, 3);
        let f = |x: f64| basis.evaluate(&gamma, x);
        let eps = 1e-5;

        // First derivative from both sides of the wrap knot at 1.0 == 13.0.
        let right = (f(1.0 + eps) - f(1.0)) / eps;
        let left = (f(13.0) - f(13.0 - eps)) / eps;
        assert!((right - left).abs() < 1e-3, "f' jump: {right} vs {left}");

        // Second derivative via central differences straddling the wrap.
        let second = |x: f64| (f(x + eps) - 2.0 * f(x) + f(x - eps)) / (eps * eps);
        assert!(
            (second(1.0 + 2.0 * eps) - second(13.0 - 2.0 * eps)).abs() < 1e-2,
            "f'' jump across wrap"
        );
    }

    #[test]
    fn sum_to_zero_basis_properties() {
        for k in [4usize, 10, 12] {
            let z = sum_to_zero_basis(k);
            assert_eq!((z.rows, z.cols), (k, k - 1));
            for j in 0..k - 1 {
                let col_sum: f64 = (0..k).map(|i| z[(i, j)]).sum();
                assert!(col_sum.abs() < 1e-12);
                for j2 in 0..k - 1 {
                    let ip: f64 = (0..k).map(|i| z[(i, j)] * z[(i, j2)]).sum();
                    let expected = if j == j2 { 1.0 } else { 0.0 };
                    assert!((ip - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn interpolation_recovers_a_sine_between_knots() {
        // 12 knots over one period interpolating sine values: between knots
        // the cubic should track the sine to well under 1%.
        let basis = SplineBasis::cyclic(0.0, std::f64::consts::TAU, 12).unwrap();
        let gamma: Vec<f64> = basis.knots.iter().map(|t| t.sin()).collect();
        for i in 0..100 {
            let x = std::f64::consts::TAU * i as f64 / 100.0;
            assert!((basis.evaluate(&gamma, x) - x.sin()).abs() < 5e-3, "at {x}");
        }
    }
}
