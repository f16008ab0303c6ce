//! Tridiagonal operators: O(M) mat-vec and the Thomas algorithm.

use crate::error::{check_len, Error, Result};

/// Square tridiagonal matrix stored by diagonals.
///
/// Row `i` reads `sub[i-1] x[i-1] + diag[i] x[i] + sup[i] x[i+1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TridiagonalOperator {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl TridiagonalOperator {
    pub fn new(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Result<Self> {
        let m = diag.len();
        if m == 0 {
            return Err(Error::InvalidArgument("empty tridiagonal operator".into()));
        }
        check_len(m - 1, sub.len())?;
        check_len(m - 1, sup.len())?;
        Ok(Self { sub, diag, sup })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            sub: vec![0.0; m.saturating_sub(1)],
            diag: vec![1.0; m],
            sup: vec![0.0; m.saturating_sub(1)],
        }
    }

    /// Symmetric operator with the given off-diagonal and diagonal.
    pub fn symmetric(off: Vec<f64>, diag: Vec<f64>) -> Result<Self> {
        Self::new(off.clone(), diag, off)
    }

    pub fn size(&self) -> usize {
        self.diag.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.sub == self.sup
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: &[f64]| v.iter().map(|x| x * factor).collect();
        Self {
            sub: s(&self.sub),
            diag: s(&self.diag),
            sup: s(&self.sup),
        }
    }

    /// `a·I + b·self`.
    pub fn shifted(&self, a: f64, b: f64) -> Self {
        let mut out = self.scaled(b);
        out.diag.iter_mut().for_each(|d| *d += a);
        out
    }

    /// Elementwise sum of two operators of equal size.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_len(self.size(), other.size())?;
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(Self {
            sub: zip(&self.sub, &other.sub),
            diag: zip(&self.diag, &other.diag),
            sup: zip(&self.sup, &other.sup),
        })
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let mut s = self.diag[i];
        if i > 0 {
            s += self.sub[i - 1];
        }
        if i + 1 < self.size() {
            s += self.sup[i];
        }
        s
    }

    /// Strict row diagonal dominance, the no-pivoting condition for Thomas.
    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        (0..self.size()).all(|i| {
            let mut off = 0.0;
            if i > 0 {
                off += self.sub[i - 1].abs();
            }
            if i + 1 < self.size() {
                off += self.sup[i].abs();
            }
            self.diag[i].abs() > off
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let m = self.size();
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            a[i][i] = self.diag[i];
            if i + 1 < m {
                a[i][i + 1] = self.sup[i];
                a[i + 1][i] = self.sub[i];
            }
        }
        a
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), v.len())?;
        let mut out = vec![0.0; v.len()];
        self.matvec_into(v, &mut out);
        Ok(out)
    }

    /// `out = self · v` without allocation; lengths must match.
    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        let m = self.size();
        debug_assert!(v.len() == m && out.len() == m);
        if m == 1 {
            out[0] = self.diag[0] * v[0];
            return;
        }
        out[0] = self.diag[0] * v[0] + self.sup[0] * v[1];
        for i in 1..m - 1 {
            out[i] = self.sub[i - 1] * v[i - 1] + self.diag[i] * v[i] + self.sup[i] * v[i + 1];
        }
        out[m - 1] = self.sub[m - 2] * v[m - 2] + self.diag[m - 1] * v[m - 1];
    }

    /// Solve `self · x = rhs` by the Thomas algorithm (no pivoting).
    pub fn thomas_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.size(), rhs.len())?;
        let mut x = rhs.to_vec();
        let mut scratch = vec![0.0; self.size()];
        self.thomas_solve_in_place(&mut x, &mut scratch)?;
        Ok(x)
    }

    /// In-place Thomas solve: `x` holds the right-hand side on entry and the
    /// solution on exit; `scratch` must have length `size()`.
    pub fn thomas_solve_in_place(&self, x: &mut [f64], scratch: &mut [f64]) -> Result<()> {
        let m = self.size();
        debug_assert!(x.len() == m && scratch.len() == m);
        let mut pivot = self.diag[0];
        if pivot == 0.0 {
            return Err(Error::Singular(0));
        }
        x[0] /= pivot;
        for i in 1..m {
            scratch[i] = self.sup[i - 1] / pivot;
            pivot = self.diag[i] - self.sub[i - 1] * scratch[i];
            if pivot == 0.0 {
                return Err(Error::Singular(i));
            }
            x[i] = (x[i] - self.sub[i - 1] * x[i - 1]) / pivot;
        }
        for i in (0..m - 1).rev() {
            x[i] -= scratch[i + 1] * x[i + 1];
        }
        Ok(())
    }
}
