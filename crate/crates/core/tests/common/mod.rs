//! Independent oracles for the acceptance suite. Nothing here calls into the
//! assembly or trace code of the library.

use num_complex::Complex64 as C;

const I: C = C::new(0.0, 1.0);

/// Dense system for two `E^1` elements on `[0, 1]` with constant `f = f0`,
/// written out from closed-form exponential integrals and the trace
/// formulas. Unknowns per element: `u_+, u_-, q_+, q_-` (coefficients of
/// `e^{+iks}`, `e^{-iks}`). Rows: first equation tested with each member,
/// then the second.
pub struct DenseTwoElement {
    pub matrix: Vec<Vec<C>>,
    pub rhs: Vec<C>,
}

pub fn two_element_e1(f0: f64, eps: f64, alpha: f64, beta: f64, gamma: f64) -> DenseTwoElement {
    let h = 0.5;
    let k = f0.sqrt() / eps;
    let sf = f0.sqrt();
    let sigma = [1.0, -1.0];
    let n = 8;

    // ∫_{-h/2}^{h/2} e^{i kappa s} ds
    let int_exp = |kappa: f64| -> f64 {
        if kappa == 0.0 {
            h
        } else {
            2.0 * (kappa * h / 2.0).sin() / kappa
        }
    };
    // M[m][n] = ∫ φ_n conj(φ_m)
    let mass = |m: usize, nn: usize| C::new(int_exp((sigma[nn] - sigma[m]) * k), 0.0);
    // D[m][n] = ∫ φ_n conj(φ_m') = -i sigma_m k M[m][n]
    let deriv = |m: usize, nn: usize| -I * sigma[m] * k * mass(m, nn);
    // endpoint values, s = -h/2 (left) and +h/2 (right)
    let at_left = |m: usize| C::from_polar(1.0, -sigma[m] * k * h / 2.0);
    let at_right = |m: usize| C::from_polar(1.0, sigma[m] * k * h / 2.0);

    let u_idx = |e: usize, m: usize| 4 * e + m;
    let q_idx = |e: usize, m: usize| 4 * e + 2 + m;

    // A linear functional of the unknowns plus a constant.
    #[derive(Clone)]
    struct Affine {
        c: Vec<C>,
        k: C,
    }
    let zero = || Affine { c: vec![C::new(0.0, 0.0); n], k: C::new(0.0, 0.0) };
    let value = |e: usize, var_q: bool, right: bool| {
        let mut a = zero();
        for m in 0..2 {
            let idx = if var_q { q_idx(e, m) } else { u_idx(e, m) };
            a.c[idx] = if right { at_right(m) } else { at_left(m) };
        }
        a
    };
    let comb = |terms: &[(C, &Affine)], constant: C| {
        let mut a = zero();
        for (w, t) in terms {
            for i in 0..n {
                a.c[i] += w * t.c[i];
            }
            a.k += w * t.k;
        }
        a.k += constant;
        a
    };
    let one = C::new(1.0, 0.0);

    // x = 0: inside value from element 0 at its left end
    let (u0, q0) = (value(0, false, false), value(0, true, false));
    let uhat_a = comb(&[(one * (1.0 - gamma), &u0), (I * gamma / sf, &q0)], C::new(2.0 * gamma, 0.0));
    let qhat_a = comb(
        &[(one * gamma, &q0), (-I * (1.0 - gamma) * sf, &u0)],
        I * 2.0 * (1.0 - gamma) * sf,
    );
    // x = 1/2: minus side is element 0 at its right end
    let (um, up) = (value(0, false, true), value(1, false, false));
    let (qm, qp) = (value(0, true, true), value(1, true, false));
    let uhat_mid = comb(&[(one, &um), (-I * beta, &qm), (I * beta, &qp)], C::new(0.0, 0.0));
    let qhat_mid = comb(&[(one, &qp), (I * alpha, &um), (-I * alpha, &up)], C::new(0.0, 0.0));
    // x = 1
    let (u1, q1) = (value(1, false, true), value(1, true, true));
    let uhat_b = comb(&[(one * (1.0 - gamma), &u1), (-I * gamma / sf, &q1)], C::new(0.0, 0.0));
    let qhat_b = comb(&[(one * gamma, &q1), (I * (1.0 - gamma) * sf, &u1)], C::new(0.0, 0.0));

    let traces = [
        (&uhat_a, &qhat_a, &uhat_mid, &qhat_mid),
        (&uhat_mid, &qhat_mid, &uhat_b, &qhat_b),
    ];

    let mut matrix = vec![vec![C::new(0.0, 0.0); n]; n];
    let mut rhs = vec![C::new(0.0, 0.0); n];
    for e in 0..2 {
        let (uh_l, qh_l, uh_r, qh_r) = traces[e];
        for m in 0..2 {
            // ∫ q w̄ + eps ∫ u w̄' - eps û w̄ |_R + eps û w̄ |_L = 0
            let row = 4 * e + m;
            for nn in 0..2 {
                matrix[row][q_idx(e, nn)] += mass(m, nn);
                matrix[row][u_idx(e, nn)] += eps * deriv(m, nn);
            }
            let wr = -eps * at_right(m).conj();
            let wl = eps * at_left(m).conj();
            for i in 0..n {
                matrix[row][i] += wr * uh_r.c[i] + wl * uh_l.c[i];
            }
            rhs[row] -= wr * uh_r.k + wl * uh_l.k;

            // eps ∫ q v̄' - eps q̂ v̄ |_R + eps q̂ v̄ |_L - ∫ f u v̄ = 0
            let row = 4 * e + 2 + m;
            for nn in 0..2 {
                matrix[row][q_idx(e, nn)] += eps * deriv(m, nn);
                matrix[row][u_idx(e, nn)] -= f0 * mass(m, nn);
            }
            for i in 0..n {
                matrix[row][i] += wr * qh_r.c[i] + wl * qh_l.c[i];
            }
            rhs[row] -= wr * qh_r.k + wl * qh_l.k;
        }
    }
    DenseTwoElement { matrix, rhs }
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<C>], b: &[C]) -> Vec<C> {
    let n = b.len();
    let mut m: Vec<Vec<C>> = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm()))
            .unwrap();
        m.swap(col, p);
        x.swap(col, p);
        let piv = m[col][col];
        assert!(piv.norm() > 0.0, "singular dense system");
        for r in col + 1..n {
            let factor = m[r][col] / piv;
            if factor.norm() == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m[col][c];
                m[r][c] -= factor * v;
            }
            let v = x[col];
            x[r] -= factor * v;
        }
    }
    for row in (0..n).rev() {
        let mut s = x[row];
        for c in row + 1..n {
            s -= m[row][c] * x[c];
        }
        x[row] = s / m[row][row];
    }
    x
}
