//! Small dense kernels on slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// y += alpha * x
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Inner product normalized by the vector length, `<a,b>_n = sum a_i b_i / n`.
#[inline]
pub fn dot_n(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / a.len() as f64
}

#[inline]
pub fn sq_norm_n(a: &[f64]) -> f64 {
    sq_norm(a) / a.len() as f64
}

/// Index of the maximum of `f` over `0..len`, smallest index on ties.
pub fn argmax_by<F: FnMut(usize) -> Option<f64>>(len: usize, mut f: F) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..len {
        if let Some(v) = f(i) {
            match best {
                Some((_, b)) if v <= b => {}
                _ => best = Some((i, v)),
            }
        }
    }
    best.map(|(i, _)| i)
}
