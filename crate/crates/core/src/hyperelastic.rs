//! Compressible Neo-Hookean law in plane strain.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub mu: f64,
    pub lambda: f64,
}

impl MaterialParams {
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite() && lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Lamé parameters need mu > 0 and lambda >= 0, got ({mu}, {lambda})"
            )));
        }
        Ok(Self { mu, lambda })
    }
}

/// Lamé parameters from Young's modulus and Poisson's ratio.
pub fn lame_from_youngs(e: f64, nu: f64) -> Result<MaterialParams> {
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::InvalidArgument(format!("Young's modulus must be positive, got {e}")));
    }
    if !(nu > -1.0 && nu < 0.5) {
        return Err(Error::InvalidArgument(format!("Poisson ratio must lie in (-1, 0.5), got {nu}")));
    }
    let mu = e / (2.0 * (1.0 + nu));
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    Ok(MaterialParams { mu, lambda })
}

fn jacobian(f: &Matrix2<f64>) -> Result<f64> {
    let j = f.determinant();
    if !(j > 0.0 && j.is_finite()) {
        return Err(Error::InvalidArgument(format!("det F must be positive, got {j}")));
    }
    Ok(j)
}

/// `W = μ/2 (I₁ − 3 − 2 ln J) + λ/2 (ln J)²` with `I₁ = tr(FᵀF) + 1`.
pub fn neo_hookean_energy(f: &Matrix2<f64>, mat: &MaterialParams) -> Result<f64> {
    let ln_j = jacobian(f)?.ln();
    let i1 = f.norm_squared() + 1.0;
    Ok(0.5 * mat.mu * (i1 - 3.0 - 2.0 * ln_j) + 0.5 * mat.lambda * ln_j * ln_j)
}

/// First Piola–Kirchhoff stress `P = ∂W/∂F = μF − μF⁻ᵀ + λ ln J F⁻ᵀ`.
pub fn first_piola(f: &Matrix2<f64>, mat: &MaterialParams) -> Result<Matrix2<f64>> {
    let ln_j = jacobian(f)?.ln();
    let f_inv_t = f
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("deformation gradient is singular".into()))?
        .transpose();
    Ok(f * mat.mu + f_inv_t * (mat.lambda * ln_j - mat.mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lame_examples() {
        let m = lame_from_youngs(1.0, 0.0).unwrap();
        assert_eq!((m.mu, m.lambda), (0.5, 0.0));
        let m = lame_from_youngs(0.97, 0.3).unwrap();
        assert!((m.mu - 0.3730769).abs() < 5e-8);
        assert!((m.lambda - 0.5596154).abs() < 5e-8);
        let m2 = lame_from_youngs(1.94, 0.3).unwrap();
        assert!((m2.mu - 2.0 * m.mu).abs() < 1e-15 && (m2.lambda - 2.0 * m.lambda).abs() < 1e-15);
        assert!(lame_from_youngs(1.0, 0.5).is_err());
        assert!(lame_from_youngs(1.0, -1.0).is_err());
        assert!(lame_from_youngs(0.0, 0.3).is_err());
        assert!(MaterialParams::new(0.0, 1.0).is_err());
        assert!(MaterialParams::new(1.0, -1.0).is_err());
    }

    #[test]
    fn energy_and_stress_examples() {
        let mat = MaterialParams::new(1.0, 0.0).unwrap();
        let id = Matrix2::identity();
        assert_eq!(neo_hookean_energy(&id, &mat).unwrap(), 0.0);
        let stiff = MaterialParams::new(0.7, 3.0).unwrap();
        assert_eq!(first_piola(&id, &stiff).unwrap(), Matrix2::zeros());

        let f = Matrix2::new(2.0, 0.0, 0.0, 1.0);
        let w = neo_hookean_energy(&f, &mat).unwrap();
        assert!((w - 0.5 * (3.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        let p = first_piola(&f, &mat).unwrap();
        assert!((p - Matrix2::new(1.5, 0.0, 0.0, 0.0)).abs().max() < 1e-15);
    }

    #[test]
    fn rejects_inverted_elements() {
        let mat = MaterialParams::new(1.0, 1.0).unwrap();
        let flip = Matrix2::new(-1.0, 0.0, 0.0, 1.0);
        assert!(neo_hookean_energy(&flip, &mat).is_err());
        assert!(first_piola(&flip, &mat).is_err());
        assert!(first_piola(&Matrix2::zeros(), &mat).is_err());
    }

    fn near_identity() -> impl Strategy<Value = Matrix2<f64>> {
        prop::array::uniform4(-0.15f64..0.15).prop_map(|a| Matrix2::new(1.0 + a[0], a[1], a[2], 1.0 + a[3]))
    }

    proptest! {
        #[test]
        fn energy_nonnegative_near_identity(f in near_identity(), mu in 0.1f64..2.0, lambda in 0.0f64..2.0) {
            let mat = MaterialParams::new(mu, lambda).unwrap();
            prop_assert!(neo_hookean_energy(&f, &mat).unwrap() >= 0.0);
        }

        #[test]
        fn stress_matches_finite_differences(f in near_identity(), mu in 0.1f64..2.0, lambda in 0.0f64..2.0) {
            let mat = MaterialParams::new(mu, lambda).unwrap();
            let p = first_piola(&f, &mat).unwrap();
            let step = 1e-6;
            let mut fd = Matrix2::zeros();
            for i in 0..2 {
                for j in 0..2 {
                    let (mut fp, mut fm) = (f, f);
                    fp[(i, j)] += step;
                    fm[(i, j)] -= step;
                    fd[(i, j)] = (neo_hookean_energy(&fp, &mat).unwrap() - neo_hookean_energy(&fm, &mat).unwrap()) / (2.0 * step);
                }
            }
            let rel = (p - fd).norm() / p.norm().max(1e-3);
            prop_assert!(rel <= 1e-6, "rel {rel}");
        }

        #[test]
        fn energy_is_objective(f in near_identity(), angle in 0.0f64..std::f64::consts::TAU) {
            let mat = MaterialParams::new(0.37, 0.56).unwrap();
            let (s, c) = angle.sin_cos();
            let r = Matrix2::new(c, -s, s, c);
            let a = neo_hookean_energy(&f, &mat).unwrap();
            let b = neo_hookean_energy(&(r * f), &mat).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
