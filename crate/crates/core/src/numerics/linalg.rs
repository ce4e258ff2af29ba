//! Row-major matrix kernels backing the tensor ops.
//!
//! Convolutions are lowered to matrix products over im2col buffers, so these
//! three accumulate kernels carry nearly all of the training compute. Loop
//! orders are chosen so the innermost loop walks contiguous memory.

/// C[m x n] += A[m x k] * B[k x n]
pub(crate) fn matmul_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let scale = a[i * k + p];
            if scale == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += scale * bv;
            }
        }
    }
}

/// C[m x n] += A[m x k] * B[n x k]^T
pub(crate) fn matmul_abt_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// C[k x n] += A[m x k]^T * B[m x n]
pub(crate) fn matmul_atb_acc(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for j in 0..k {
            let scale = a[i * k + j];
            if scale == 0.0 {
                continue;
            }
            let c_row = &mut c[j * n..(j + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += scale * bv;
            }
        }
    }
}

/// Unfold one sample [C, L] into a [C*K, L_out] patch matrix with implicit
/// zero padding on both sides of the time axis.
pub(crate) fn im2col(
    x: &[f64],
    channels: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
    col: &mut [f64],
) {
    debug_assert_eq!(col.len(), channels * kernel * l_out);
    col.fill(0.0);
    for c in 0..channels {
        let row = &x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let dst = &mut col[(c * kernel + k) * l_out..(c * kernel + k + 1) * l_out];
            for (t, d) in dst.iter_mut().enumerate() {
                let src = t * stride + k;
                if src >= padding && src - padding < len {
                    *d = row[src - padding];
                }
            }
        }
    }
}

/// Scatter a patch-matrix gradient back onto the input sample, accumulating.
pub(crate) fn col2im_acc(
    col: &[f64],
    channels: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
    x_grad: &mut [f64],
) {
    debug_assert_eq!(col.len(), channels * kernel * l_out);
    debug_assert_eq!(x_grad.len(), channels * len);
    for c in 0..channels {
        let dst = &mut x_grad[c * len..(c + 1) * len];
        for k in 0..kernel {
            let src_row = &col[(c * kernel + k) * l_out..(c * kernel + k + 1) * l_out];
            for (t, s) in src_row.iter().enumerate() {
                let idx = t * stride + k;
                if idx >= padding && idx - padding < len {
                    dst[idx - padding] += s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_product() {
        // [[1,2],[3,4]] * [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        matmul_acc(&mut c, &a, &b, 2, 2, 2);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_kernels_agree_with_plain_matmul() {
        let a = [1.0, -2.0, 0.5, 3.0, 4.0, -1.0]; // 2x3
        let b = [2.0, 0.0, 1.0, -1.0, 0.5, 2.0]; // 3x2
        let mut c = [0.0; 4];
        matmul_acc(&mut c, &a, &b, 2, 3, 2);

        // A * (B^T)^T via abt on the transpose of B.
        let bt = [2.0, 1.0, 0.5, 0.0, -1.0, 2.0]; // 2x3 = B^T
        let mut c2 = [0.0; 4];
        matmul_abt_acc(&mut c2, &a, &bt, 2, 3, 2);
        assert_eq!(c, c2);

        // (A^T)^T * B via atb on the transpose of A.
        let at = [1.0, 3.0, -2.0, 4.0, 0.5, -1.0]; // 3x2 = A^T
        let mut c3 = [0.0; 4];
        matmul_atb_acc(&mut c3, &at, &b, 3, 2, 2);
        assert_eq!(c, c3);
    }

    #[test]
    fn im2col_col2im_round_trip_counts_uses() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let l_out = 3; // K=2, stride=1, pad=0
        let mut col = vec![0.0; 2 * 3];
        im2col(&x, 1, 4, 2, 1, 0, l_out, &mut col);
        assert_eq!(col, vec![1.0, 2.0, 3.0, 2.0, 3.0, 4.0]);

        // Scattering ones back counts how often each input position is read.
        let ones = vec![1.0; col.len()];
        let mut g = vec![0.0; 4];
        col2im_acc(&ones, 1, 4, 2, 1, 0, l_out, &mut g);
        assert_eq!(g, vec![1.0, 2.0, 2.0, 1.0]);
    }

    #[test]
    fn im2col_zero_pads_outside() {
        let x = [5.0];
        let mut col = vec![0.0; 3];
        // K=3, stride=1, pad=1 on a length-1 signal -> single window [0,5,0]
        im2col(&x, 1, 1, 3, 1, 1, 1, &mut col);
        assert_eq!(col, vec![0.0, 5.0, 0.0]);
    }
}
