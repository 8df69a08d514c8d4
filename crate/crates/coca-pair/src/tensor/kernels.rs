//! Raw numeric kernels shared by forward and backward passes.

use super::Element;

/// C[m,n] += A[m,k] * B[k,n]
pub fn matmul_nn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// C[m,n] += A[m,k] * B[n,k]^T  (rows of B are dotted against rows of A)
pub fn matmul_nt<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            *o = acc + *o;
        }
    }
}

/// C[m,n] += A[k,m]^T * B[k,n]
pub fn matmul_tn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize, out: &mut [E]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out[r] += sum over columns of g (column-wise reduction to a row vector).
pub fn col_sum_into<E: Element>(g: &[E], rows: usize, cols: usize, out: &mut [E]) {
    debug_assert_eq!(g.len(), rows * cols);
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let grow = &g[r * cols..(r + 1) * cols];
        for (o, &gv) in out.iter_mut().zip(grow) {
            *o = *o + gv;
        }
    }
}

/// GELU (tanh approximation), forward.
pub fn gelu<E: Element>(x: E) -> E {
    let c = E::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (E::one() + inner.tanh())
}

/// Derivative of the tanh-approximated GELU.
pub fn gelu_grad<E: Element>(x: E) -> E {
    let c = E::from_f64((2.0 / std::f64::consts::PI).sqrt());
    let k = E::from_f64(0.044715);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let sech2 = E::one() - t * t;
    let dinner = c * (E::one() + three * k * x * x);
    half * (E::one() + t) + half * x * sech2 * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        // A 2x3, B 3x2; check nn against nt/tn with pre-transposed inputs.
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.5f64, -1.0, 2.0, 0.25, -0.5, 3.0];
        let mut c_nn = vec![0.0; 4];
        matmul_nn(&a, &b, 2, 3, 2, &mut c_nn);

        // bt is B^T (2x3)
        let bt = [0.5f64, 2.0, -0.5, -1.0, 0.25, 3.0];
        let mut c_nt = vec![0.0; 4];
        matmul_nt(&a, &bt, 2, 3, 2, &mut c_nt);
        assert_eq!(c_nn, c_nt);

        // at is A^T (3x2)
        let at = [1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c_tn = vec![0.0; 4];
        matmul_tn(&at, &b, 2, 3, 2, &mut c_tn);
        assert_eq!(c_nn, c_tn);
    }

    #[test]
    fn gelu_matches_finite_difference() {
        let h = 1e-6f64;
        for &x in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - num).abs() < 1e-8, "x={x}");
        }
    }
}
