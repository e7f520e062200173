//! The five matrix norms used to measure perturbation size, as values and
//! as differentiable tape nodes.
//!
//! | norm      | definition                           | cost     |
//! |-----------|--------------------------------------|----------|
//! | 1-norm    | max column absolute sum              | O(mn)    |
//! | 2-norm    | sqrt(lambda_max(M^T M))              | O(m^3)   |
//! | inf-norm  | max row absolute sum                 | O(mn)    |
//! | nuclear   | tr(sqrt(M^T M)), sum of sing. values | O(mn^2)  |
//! | Frobenius | sqrt of sum of squares               | O(mn)    |
//!
//! Subgradient conventions: 1/inf route the gradient to the maximizing
//! column/row (lowest index on ties) with `sign(m_ij)`; 2/nuclear use the
//! singular vectors, `u1 v1^T` and `sum u_i v_i^T`; Frobenius uses
//! `M / ||M||_F`, which is taken as 0 at the origin.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{CgcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    One,
    Two,
    Inf,
    Nuclear,
    #[serde(rename = "fro")]
    Frobenius,
}

impl NormKind {
    /// All kinds in the order they are tabulated.
    pub const ALL: [NormKind; 5] = [
        NormKind::One,
        NormKind::Two,
        NormKind::Inf,
        NormKind::Nuclear,
        NormKind::Frobenius,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::One => "one",
            NormKind::Two => "two",
            NormKind::Inf => "inf",
            NormKind::Nuclear => "nuclear",
            NormKind::Frobenius => "fro",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = CgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "one" | "1" => Ok(NormKind::One),
            "two" | "2" => Ok(NormKind::Two),
            "inf" => Ok(NormKind::Inf),
            "nuclear" | "nuc" => Ok(NormKind::Nuclear),
            "fro" | "frobenius" | "f" => Ok(NormKind::Frobenius),
            other => Err(CgcError::Config(format!("unknown norm {other:?}"))),
        }
    }
}

/// Thin singular value decomposition `M = U diag(s) V^T`, singular values
/// in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// One-sided (Hestenes) Jacobi SVD.
pub fn jacobi_svd(m: &Array2<f64>) -> Svd {
    if m.nrows() < m.ncols() {
        let t = jacobi_svd(&m.t().to_owned());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut u = m.clone();
    let mut v = Array2::<f64>::eye(cols);
    let eps = f64::EPSILON;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let (up, uq) = (u[[i, p]], u[[i, q]]);
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (up, uq) = (u[[i, p]], u[[i, q]]);
                    u[[i, p]] = c * up - s * uq;
                    u[[i, q]] = s * up + c * uq;
                }
                for i in 0..cols {
                    let (vp, vq) = (v[[i, p]], v[[i, q]]);
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = (0..cols).map(|j| u.column(j).dot(&u.column(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut u_out = Array2::zeros((rows, cols));
    let mut v_out = Array2::zeros((cols, cols));
    let mut s_out = Array1::zeros(cols);
    for (k, &j) in order.iter().enumerate() {
        s_out[k] = norms[j];
        if norms[j] > 0.0 {
            u_out.column_mut(k).assign(&(&u.column(j) / norms[j]));
        }
        v_out.column_mut(k).assign(&v.column(j));
    }
    Svd {
        u: u_out,
        s: s_out,
        v: v_out,
    }
}

fn check_non_empty(m: &Array2<f64>) -> Result<()> {
    if m.is_empty() {
        return Err(CgcError::Shape("norm of an empty matrix".into()));
    }
    Ok(())
}

fn abs_sum_argmax(sums: Array1<f64>) -> (usize, f64) {
    // first maximum wins ties
    sums.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Relative cut-off below which singular values count as zero in the
/// nuclear-norm subgradient.
const RANK_TOL: f64 = 1e-12;

/// Norm value together with a (sub)gradient with respect to `m`.
pub fn norm_with_subgradient(m: &Array2<f64>, kind: NormKind) -> Result<(f64, Array2<f64>)> {
    check_non_empty(m)?;
    let mut grad = Array2::zeros(m.raw_dim());
    let value = match kind {
        NormKind::One => {
            let (j, v) = abs_sum_argmax(m.mapv(f64::abs).sum_axis(Axis(0)));
            for i in 0..m.nrows() {
                grad[[i, j]] = sign(m[[i, j]]);
            }
            v
        }
        NormKind::Inf => {
            let (i, v) = abs_sum_argmax(m.mapv(f64::abs).sum_axis(Axis(1)));
            for j in 0..m.ncols() {
                grad[[i, j]] = sign(m[[i, j]]);
            }
            v
        }
        NormKind::Frobenius => {
            let v = m.iter().map(|x| x * x).sum::<f64>().sqrt();
            if v > 0.0 {
                grad = m / v;
            }
            v
        }
        NormKind::Two => {
            let svd = jacobi_svd(m);
            let v = svd.s[0];
            if v > 0.0 {
                grad = outer(&svd.u.column(0).to_owned(), &svd.v.column(0).to_owned());
            }
            v
        }
        NormKind::Nuclear => {
            let svd = jacobi_svd(m);
            let cutoff = svd.s[0] * RANK_TOL;
            for k in 0..svd.s.len() {
                if svd.s[k] > cutoff && svd.s[k] > 0.0 {
                    grad += &outer(&svd.u.column(k).to_owned(), &svd.v.column(k).to_owned());
                }
            }
            svd.s.sum()
        }
    };
    Ok((value, grad))
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Norm of a plain matrix.
pub fn norm_value(m: &Array2<f64>, kind: NormKind) -> Result<f64> {
    check_non_empty(m)?;
    Ok(match kind {
        NormKind::One => abs_sum_argmax(m.mapv(f64::abs).sum_axis(Axis(0))).1,
        NormKind::Inf => abs_sum_argmax(m.mapv(f64::abs).sum_axis(Axis(1))).1,
        NormKind::Frobenius => m.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormKind::Two => jacobi_svd(m).s[0],
        NormKind::Nuclear => jacobi_svd(m).s.sum(),
    })
}

/// Norm of a tape node as a scalar node.
pub fn norm(tape: &mut Tape, m: Var, kind: NormKind) -> Result<Var> {
    let (value, grad) = norm_with_subgradient(tape.value(m), kind)?;
    tape.scalar_with_gradient(m, value, grad)
}

const POWER_SEED: u64 = 0x5eed_0f_5ec7;

/// Largest singular value by power iteration on `M^T M`.
pub fn spectral_norm_power_iteration(m: &Array2<f64>, iters: usize, tol: f64) -> f64 {
    let iters = iters.max(1);
    let n = m.ncols();
    if n == 0 || m.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v: Array1<f64> = Array1::from_shape_fn(n, |_| rng.random_range(0.5..1.5));
    v /= v.dot(&v).sqrt();
    let mut sigma = 0.0;
    for _ in 0..iters {
        let mv = m.dot(&v);
        let mut w = m.t().dot(&mv);
        let wn = w.dot(&w).sqrt();
        if wn == 0.0 {
            return 0.0;
        }
        w /= wn;
        let next = m.dot(&w);
        let next_sigma = next.dot(&next).sqrt();
        let done = (next_sigma - sigma).abs() <= tol * next_sigma.max(f64::MIN_POSITIVE);
        sigma = next_sigma;
        v = w;
        if done {
            break;
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn identity_norms() {
        let i2 = Array2::<f64>::eye(2);
        assert!(close(norm_value(&i2, NormKind::Frobenius).unwrap(), 2f64.sqrt(), 1e-15));
        assert!(close(norm_value(&i2, NormKind::Two).unwrap(), 1.0, 1e-15));
        assert!(close(norm_value(&i2, NormKind::Nuclear).unwrap(), 2.0, 1e-15));
    }

    #[test]
    fn diagonal_norms() {
        let d = array![[3.0, 0.0], [0.0, 4.0]];
        assert!(close(norm_value(&d, NormKind::Two).unwrap(), 4.0, 1e-14));
        assert!(close(norm_value(&d, NormKind::Nuclear).unwrap(), 7.0, 1e-14));
        assert!(close(norm_value(&d, NormKind::Frobenius).unwrap(), 5.0, 1e-14));
        assert_eq!(norm_value(&d, NormKind::One).unwrap(), 4.0);
        assert_eq!(norm_value(&d, NormKind::Inf).unwrap(), 4.0);
    }

    #[test]
    fn empty_matrix_is_shape_error() {
        let e = Array2::<f64>::zeros((0, 3));
        for kind in NormKind::ALL {
            assert!(matches!(norm_value(&e, kind), Err(CgcError::Shape(_))));
        }
    }

    #[test]
    fn one_norm_ties_pick_lowest_column() {
        let m = array![[1.0, -1.0], [-2.0, 2.0]];
        let (v, g) = norm_with_subgradient(&m, NormKind::One).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(g, array![[1.0, 0.0], [-1.0, 0.0]]);
        let (v, g) = norm_with_subgradient(&m.t().to_owned(), NormKind::Inf).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(g, array![[1.0, -1.0], [0.0, 0.0]]);
    }

    #[test]
    fn one_norm_hand_column_sums() {
        // column abs sums: 2, 3, 1
        let d = array![[1.0, -1.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 2.0, 0.0]];
        assert_eq!(norm_value(&d, NormKind::One).unwrap(), 3.0);
        // row abs sums: 2, 2, 2
        assert_eq!(norm_value(&d, NormKind::Inf).unwrap(), 2.0);
    }

    #[test]
    fn frobenius_subgradient_zero_at_origin() {
        let (v, g) = norm_with_subgradient(&Array2::zeros((2, 2)), NormKind::Frobenius).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn svd_reconstructs_wide_and_tall() {
        let m = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]];
        for mat in [m.clone(), m.t().to_owned()] {
            let svd = jacobi_svd(&mat);
            let rebuilt = svd.u.dot(&Array2::from_diag(&svd.s)).dot(&svd.v.t());
            for (a, b) in rebuilt.iter().zip(mat.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(svd.s[0] >= svd.s[1]);
        }
    }

    #[test]
    fn power_iteration_examples() {
        assert_eq!(spectral_norm_power_iteration(&Array2::zeros((3, 3)), 50, 1e-12), 0.0);
        let d = array![[2.0, 0.0], [0.0, 1.0]];
        assert!((spectral_norm_power_iteration(&d, 200, 1e-14) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn parse_kinds() {
        for k in NormKind::ALL {
            assert_eq!(k.as_str().parse::<NormKind>().unwrap(), k);
        }
        assert!("l3".parse::<NormKind>().is_err());
    }
}
