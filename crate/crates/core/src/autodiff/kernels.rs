//! Dense row-major kernels shared by the forward and backward passes.
//! Every kernel accumulates into `out`.

/// out[m×n] += a[m×k] · b[k×n]
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub(crate) fn mm_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * n + j] += dot;
        }
    }
}

/// out[m×n] += a[k×m]ᵀ · b[k×n]
pub(crate) fn mm_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Largest `f64` strictly below one.
pub(crate) const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function kept inside the open interval (0, 1): saturated results are
/// pinned to the nearest representable interior value.
pub(crate) fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_variants_agree_with_plain_product() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut plain = [0.0; 4];
        mm(&a, &b, 2, 3, 2, &mut plain);
        assert_eq!(plain, [58.0, 64.0, 139.0, 154.0]);

        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut via_bt = [0.0; 4];
        mm_bt(&a, &bt, 2, 3, 2, &mut via_bt);
        assert_eq!(via_bt, plain);

        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut via_at = [0.0; 4];
        mm_at(&at, &b, 2, 3, 2, &mut via_at);
        assert_eq!(via_at, plain);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) > 0.0);
        assert!(sigmoid(1000.0) < 1.0);
        assert!(sigmoid(f64::MAX).is_finite());
    }
}
