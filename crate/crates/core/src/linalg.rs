//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Exponential of `m * t` together with the weighted integrals
/// `∫₀ᵗ e^{m u} du`, `∫₀ᵗ e^{m u} (t-u) du` and `∫₀ᵗ e^{m u} (t-u)²/2 du`,
/// read off one block-triangular exponential.
pub struct ExpIntegrals {
    pub exp: DMatrix<f64>,
    pub int0: DMatrix<f64>,
    pub int1: DMatrix<f64>,
    pub int2: DMatrix<f64>,
}

pub fn exp_integrals(m: &DMatrix<f64>, t: f64) -> ExpIntegrals {
    let n = m.nrows();
    let mut big = DMatrix::zeros(4 * n, 4 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&(m * t));
    for b in 0..3 {
        for i in 0..n {
            big[(b * n + i, (b + 1) * n + i)] = t;
        }
    }
    let e = big.exp();
    // blocks carry powers of t from the scaling of the nilpotent chain
    ExpIntegrals {
        exp: e.view((0, 0), (n, n)).into_owned(),
        int0: e.view((0, n), (n, n)).into_owned(),
        int1: e.view((0, 2 * n), (n, n)).into_owned(),
        int2: e.view((0, 3 * n), (n, n)).into_owned(),
    }
}

/// `e^{m t}` and `∫₀ᵗ e^{m u} du` only.
pub fn exp_and_integral(m: &DMatrix<f64>, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&(m * t));
    for i in 0..n {
        big[(i, n + i)] = t;
    }
    let e = big.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
    )
}
