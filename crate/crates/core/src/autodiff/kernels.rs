//! Accumulating matrix kernels on row-major slices.

/// `c[p×r] += a[p×q] · b[q×r]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let c_row = &mut c[i * r..(i + 1) * r];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[k * r..(k + 1) * r];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// `c[p×q] += a[p×r] · b[q×r]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], p: usize, r: usize, q: usize) {
    for i in 0..p {
        let a_row = &a[i * r..(i + 1) * r];
        for k in 0..q {
            let b_row = &b[k * r..(k + 1) * r];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * q + k] += acc;
        }
    }
}

/// `c[q×r] += a[p×q]ᵀ · b[p×r]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let b_row = &b[i * r..(i + 1) * r];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let c_row = &mut c[k * r..(k + 1) * r];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_definition() {
        // a 2×3, b 3×2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        gemm_nn(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // a·aᵀ for a 2×3
        let mut g = [0.0; 4];
        gemm_nt(&a, &a, &mut g, 2, 3, 2);
        assert_eq!(g, [14.0, 32.0, 32.0, 77.0]);

        // aᵀ·a for a 2×3
        let mut h = [0.0; 9];
        gemm_tn(&a, &a, &mut h, 2, 3, 3);
        assert_eq!(h, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }
}
