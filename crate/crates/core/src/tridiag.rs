//! Tridiagonal systems: assembly helpers, Thomas elimination and a
//! partial-pivoting LU fallback.

use crate::error::{Error, Result};

/// Tridiagonal matrix stored by diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct Tridiagonal {
    /// Sub-diagonal, `lower[i]` sits in row `i + 1`.
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    /// Super-diagonal, `upper[i]` sits in row `i`.
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `out = A·x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.upper[i] * x[i + 1];
            }
            out[i] = v;
        }
    }

    /// Every row satisfies `|a_ii| > Σ_{j≠i} |a_ij|`.
    pub fn strictly_diagonally_dominant(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| {
            let mut off = 0.0;
            if i > 0 {
                off += self.lower[i - 1].abs();
            }
            if i + 1 < n {
                off += self.upper[i].abs();
            }
            self.diag[i].abs() > off
        })
    }

    /// Factor with Thomas elimination when diagonally dominant, else with pivoting.
    pub fn factor(&self) -> Result<Factorization> {
        if self.strictly_diagonally_dominant() {
            self.factor_thomas()
        } else {
            self.factor_pivoted()
        }
    }

    fn factor_thomas(&self) -> Result<Factorization> {
        let n = self.len();
        let mut upper = vec![0.0; n.saturating_sub(1)];
        let mut inv = vec![0.0; n];
        let mut denom = self.diag[0];
        for i in 0..n {
            if i > 0 {
                denom = self.diag[i] - self.lower[i - 1] * upper[i - 1];
            }
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::Singular { step: 0 });
            }
            inv[i] = 1.0 / denom;
            if i + 1 < n {
                upper[i] = self.upper[i] * inv[i];
            }
        }
        Ok(Factorization::Thomas {
            lower: self.lower.clone(),
            upper,
            inv,
        })
    }

    fn factor_pivoted(&self) -> Result<Factorization> {
        let n = self.len();
        let mut dl = self.lower.clone();
        let mut d = self.diag.clone();
        let mut du = self.upper.clone();
        let mut du2 = vec![0.0; n.saturating_sub(2)];
        let mut swapped = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return Err(Error::Singular { step: 0 });
                }
                let fact = dl[i] / d[i];
                dl[i] = fact;
                d[i + 1] -= fact * du[i];
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swapped[i] = true;
            }
        }
        if d.iter().any(|&v| v == 0.0 || !v.is_finite()) {
            return Err(Error::Singular { step: 0 });
        }
        Ok(Factorization::Pivoted {
            dl,
            d,
            du,
            du2,
            swapped,
        })
    }
}

/// Factored tridiagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Factorization {
    Thomas {
        lower: Vec<f64>,
        upper: Vec<f64>,
        inv: Vec<f64>,
    },
    Pivoted {
        dl: Vec<f64>,
        d: Vec<f64>,
        du: Vec<f64>,
        du2: Vec<f64>,
        swapped: Vec<bool>,
    },
}

impl Factorization {
    /// Overwrite `b` with `A⁻¹b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            Factorization::Thomas { lower, upper, inv } => {
                let n = b.len();
                b[0] *= inv[0];
                for i in 1..n {
                    b[i] = (b[i] - lower[i - 1] * b[i - 1]) * inv[i];
                }
                for i in (0..n - 1).rev() {
                    b[i] -= upper[i] * b[i + 1];
                }
            }
            Factorization::Pivoted {
                dl,
                d,
                du,
                du2,
                swapped,
            } => {
                let n = b.len();
                for i in 0..n - 1 {
                    if swapped[i] {
                        let temp = b[i];
                        b[i] = b[i + 1];
                        b[i + 1] = temp - dl[i] * b[i];
                    } else {
                        b[i + 1] -= dl[i] * b[i];
                    }
                }
                b[n - 1] /= d[n - 1];
                if n > 1 {
                    b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
                }
                for i in (0..n.saturating_sub(2)).rev() {
                    b[i] = (b[i] - du[i] * b[i + 1] - du2[i] * b[i + 2]) / d[i];
                }
            }
        }
    }

    pub fn is_pivoted(&self) -> bool {
        matches!(self, Factorization::Pivoted { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Lcg64;

    fn residual(a: &Tridiagonal, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; x.len()];
        a.apply(x, &mut ax);
        ax.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn thomas_solves_dominant_system() {
        let mut rng = Lcg64::new(3);
        let n = 12;
        let a = Tridiagonal {
            lower: rng.symmetric_vec(n - 1),
            diag: (0..n).map(|_| 3.0 + rng.uniform()).collect(),
            upper: rng.symmetric_vec(n - 1),
        };
        let f = a.factor().unwrap();
        assert!(!f.is_pivoted());
        let b = rng.symmetric_vec(n);
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        assert!(residual(&a, &x, &b) < 1e-14);
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut rng = Lcg64::new(5);
        let n = 9;
        let mut a = Tridiagonal {
            lower: (0..n - 1).map(|_| 1.0 + rng.uniform()).collect(),
            diag: rng.symmetric_vec(n),
            upper: (0..n - 1).map(|_| 1.0 + rng.uniform()).collect(),
        };
        a.diag[0] = 0.0;
        a.diag[4] = 0.0;
        let f = a.factor().unwrap();
        assert!(f.is_pivoted());
        let b = rng.symmetric_vec(n);
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        assert!(residual(&a, &x, &b) < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Tridiagonal {
            lower: vec![1.0],
            diag: vec![1.0, 1.0],
            upper: vec![1.0],
        };
        assert!(matches!(a.factor(), Err(Error::Singular { .. })));
    }
}
