//! LSQR (Paige & Saunders) for real least-squares problems `min ‖Ax − b‖`.

/// A real matrix available only through products.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `x = Aᵀ y`.
    fn apply_transpose(&self, y: &[f64], x: &mut [f64]);
}

/// Dense column-major matrix operator.
#[derive(Clone, Debug)]
pub struct DenseOperator<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl LinearOperator for DenseOperator<'_> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                let col = &self.data[j * self.rows..(j + 1) * self.rows];
                for (yi, a) in y.iter_mut().zip(col) {
                    *yi += a * xj;
                }
            }
        }
    }

    fn apply_transpose(&self, y: &[f64], x: &mut [f64]) {
        for (j, xj) in x.iter_mut().enumerate() {
            let col = &self.data[j * self.rows..(j + 1) * self.rows];
            *xj = col.iter().zip(y).map(|(a, b)| a * b).sum();
        }
    }
}

/// Diagonal operator `diag(d)`.
#[derive(Clone, Debug)]
pub struct DiagonalOperator<'a>(pub &'a [f64]);

impl LinearOperator for DiagonalOperator<'_> {
    fn rows(&self) -> usize {
        self.0.len()
    }

    fn cols(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, d), xi) in y.iter_mut().zip(self.0).zip(x) {
            *yi = d * xi;
        }
    }

    fn apply_transpose(&self, y: &[f64], x: &mut [f64]) {
        self.apply(y, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LsqrOptions {
    pub atol: f64,
    pub btol: f64,
    pub max_iter: usize,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        LsqrOptions {
            atol: 1e-14,
            btol: 1e-14,
            max_iter: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsqrStop {
    /// `b = 0`, so `x = 0` is exact.
    ZeroRhs,
    /// `‖r‖ ≤ btol‖b‖ + atol‖A‖‖x‖`.
    Consistent,
    /// `‖Aᵀr‖ ≤ atol‖A‖‖r‖`.
    LeastSquares,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub struct LsqrSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Recurrence estimate of `‖b − Ax‖`.
    pub residual_estimate: f64,
    pub stop: LsqrStop,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scale(v: &mut [f64], s: f64) {
    v.iter_mut().for_each(|x| *x *= s);
}

pub fn lsqr(op: &impl LinearOperator, b: &[f64], opts: &LsqrOptions) -> LsqrSolution {
    let (m, n) = (op.rows(), op.cols());
    assert_eq!(b.len(), m, "right-hand side length");
    let mut x = vec![0.0; n];
    let mut u = b.to_vec();
    let bnorm = norm(&u);
    let mut beta = bnorm;
    if beta == 0.0 {
        return LsqrSolution {
            x,
            iterations: 0,
            residual_estimate: 0.0,
            stop: LsqrStop::ZeroRhs,
        };
    }
    scale(&mut u, 1.0 / beta);
    let mut v = vec![0.0; n];
    op.apply_transpose(&u, &mut v);
    let mut alpha = norm(&v);
    if alpha == 0.0 {
        return LsqrSolution {
            x,
            iterations: 0,
            residual_estimate: bnorm,
            stop: LsqrStop::LeastSquares,
        };
    }
    scale(&mut v, 1.0 / alpha);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm2 = 0.0;
    let mut av = vec![0.0; m];
    let mut atu = vec![0.0; n];
    let mut stop = LsqrStop::IterationLimit;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        op.apply(&v, &mut av);
        for (ui, a) in u.iter_mut().zip(&av) {
            *ui = a - alpha * *ui;
        }
        beta = norm(&u);
        anorm2 += alpha * alpha + beta * beta;
        if beta > 0.0 {
            scale(&mut u, 1.0 / beta);
            op.apply_transpose(&u, &mut atu);
            for (vi, a) in v.iter_mut().zip(&atu) {
                *vi = a - beta * *vi;
            }
            alpha = norm(&v);
            if alpha > 0.0 {
                scale(&mut v, 1.0 / alpha);
            }
        } else {
            alpha = 0.0;
        }

        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        let t1 = phi / rho;
        let t2 = -theta / rho;
        for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
            *xi += t1 * *wi;
            *wi = vi + t2 * *wi;
        }
        let xnorm = norm(&x);
        let anorm = anorm2.sqrt();
        let rnorm = phibar;
        let arnorm = alpha * (c * phibar).abs();
        if rnorm <= opts.btol * bnorm + opts.atol * anorm * xnorm {
            stop = LsqrStop::Consistent;
            break;
        }
        if rnorm == 0.0 || arnorm <= opts.atol * anorm * rnorm {
            stop = LsqrStop::LeastSquares;
            break;
        }
        if alpha == 0.0 || beta == 0.0 {
            stop = LsqrStop::LeastSquares;
            break;
        }
    }
    LsqrSolution {
        x,
        iterations,
        residual_estimate: phibar,
        stop,
    }
}
