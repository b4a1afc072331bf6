//! Small dense linear algebra: just enough for resolvent solves and the
//! matrix exponential used by the residual diagnostics.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

/// Dense square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn scale(&self, s: f64) -> Self {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        SquareMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        SquareMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.data[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                let row_k = &other.data[k * n..(k + 1) * n];
                let row_out = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    row_out[j] += aik * row_k[j];
                }
            }
        }
        out
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.n, x.len());
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        let n = self.n;
        let mut best = 0.0;
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += fmath::abs(self.data[i * n + j]);
            }
            if s > best {
                best = s;
            }
        }
        best
    }

    /// Solves `self * x = b` by LU with partial pivoting. Returns `None` when
    /// the matrix is numerically singular.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        self.solve_columns(b, 1)
    }

    /// Solves `self * X = B` where `B` has `ncols` columns in row-major
    /// layout (n x ncols).
    fn solve_columns(&self, b: &[f64], ncols: usize) -> Option<Vec<f64>> {
        let n = self.n;
        debug_assert_eq!(b.len(), n * ncols);
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for col in 0..n {
            // pivot
            let mut p = col;
            let mut best = fmath::abs(lu[perm[col] * n + col]);
            for r in (col + 1)..n {
                let v = fmath::abs(lu[perm[r] * n + col]);
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return None;
            }
            perm.swap(col, p);
            let piv = lu[perm[col] * n + col];
            for r in (col + 1)..n {
                let factor = lu[perm[r] * n + col] / piv;
                lu[perm[r] * n + col] = factor;
                for c in (col + 1)..n {
                    lu[perm[r] * n + c] -= factor * lu[perm[col] * n + c];
                }
            }
        }

        let mut x = vec![0.0; n * ncols];
        for rhs_col in 0..ncols {
            // forward
            let mut y = vec![0.0; n];
            for i in 0..n {
                let mut acc = b[perm[i] * ncols + rhs_col];
                for j in 0..i {
                    acc -= lu[perm[i] * n + j] * y[j];
                }
                y[i] = acc;
            }
            // backward
            for i in (0..n).rev() {
                let mut acc = y[i];
                for j in (i + 1)..n {
                    acc -= lu[perm[i] * n + j] * x[j * ncols + rhs_col];
                }
                x[i * ncols + rhs_col] = acc / lu[perm[i] * n + i];
            }
        }
        Some(x)
    }

    /// Solves `self * X = B` for a square matrix `B`.
    pub fn solve_matrix(&self, b: &SquareMatrix) -> Option<SquareMatrix> {
        debug_assert_eq!(self.n, b.n);
        let data = self.solve_columns(&b.data, self.n)?;
        Some(SquareMatrix { n: self.n, data })
    }
}

// Pade coefficients and 1-norm thresholds of the scaling-and-squaring method
// (Higham 2005). Backward error stays near unit roundoff, well inside the
// 1e-12 budget the residual tests assume.
const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539398330063230e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn pade_low(a: &SquareMatrix, b: &[f64]) -> (SquareMatrix, SquareMatrix) {
    let n = a.dim();
    let a2 = a.matmul(a);
    // even/odd polynomial split: U = A * sum b[2j+1] A^(2j), V = sum b[2j] A^(2j)
    let mut u_poly = SquareMatrix::identity(n).scale(b[1]);
    let mut v_poly = SquareMatrix::identity(n).scale(b[0]);
    let mut power = SquareMatrix::identity(n);
    let degree = b.len() - 1;
    for j in 1..=(degree / 2) {
        power = power.matmul(&a2);
        u_poly = u_poly.add(&power.scale(b[2 * j + 1]));
        v_poly = v_poly.add(&power.scale(b[2 * j]));
    }
    (a.matmul(&u_poly), v_poly)
}

fn pade_13(a: &SquareMatrix) -> (SquareMatrix, SquareMatrix) {
    let n = a.dim();
    let b = &B13;
    let a2 = a.matmul(a);
    let a4 = a2.matmul(&a2);
    let a6 = a2.matmul(&a4);
    let i = SquareMatrix::identity(n);

    let u_hi = a6
        .scale(b[13])
        .add(&a4.scale(b[11]))
        .add(&a2.scale(b[9]));
    let u_lo = a6
        .scale(b[7])
        .add(&a4.scale(b[5]))
        .add(&a2.scale(b[3]))
        .add(&i.scale(b[1]));
    let u = a.matmul(&a6.matmul(&u_hi).add(&u_lo));

    let v_hi = a6
        .scale(b[12])
        .add(&a4.scale(b[10]))
        .add(&a2.scale(b[8]));
    let v = a6
        .matmul(&v_hi)
        .add(&a6.scale(b[6]))
        .add(&a4.scale(b[4]))
        .add(&a2.scale(b[2]))
        .add(&i.scale(b[0]));
    (u, v)
}

/// Matrix exponential by scaling and squaring with Pade approximants.
pub fn expm(a: &SquareMatrix) -> SquareMatrix {
    let norm = a.one_norm();
    let (u, v, squarings) = if norm <= THETA_3 {
        let (u, v) = pade_low(a, &B3);
        (u, v, 0)
    } else if norm <= THETA_5 {
        let (u, v) = pade_low(a, &B5);
        (u, v, 0)
    } else if norm <= THETA_7 {
        let (u, v) = pade_low(a, &B7);
        (u, v, 0)
    } else if norm <= THETA_9 {
        let (u, v) = pade_low(a, &B9);
        (u, v, 0)
    } else {
        let log2_excess = fmath::ln(norm / THETA_13) / core::f64::consts::LN_2;
        let s = fmath::ceil(log2_excess).max(0.0) as u32;
        let scaled = a.scale(fmath::powi(0.5, s as i32));
        let (u, v) = pade_13(&scaled);
        (u, v, s)
    };

    // r = (V - U)^{-1} (V + U)
    let mut r = v
        .sub(&u)
        .solve_matrix(&v.add(&u))
        .expect("Pade denominator is nonsingular for scaled matrices");
    for _ in 0..squarings {
        r = r.matmul(&r);
    }
    r
}
