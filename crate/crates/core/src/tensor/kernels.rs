// Raw slice kernels behind the taped ops. All arrays are row-major.
// Loop orders keep the innermost loop over a contiguous time/column axis.

/// out[c,s] = bias[c] + sum_{c',i} w[c,c',i] * x[c', s - d*i], zero history.
pub(crate) fn conv1d_forward(
    x: &[f64],
    w: &[f64],
    bias: &[f64],
    c_in: usize,
    c_out: usize,
    k: usize,
    t: usize,
    dilation: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * t];
    for co in 0..c_out {
        let row = &mut out[co * t..(co + 1) * t];
        row.fill(bias[co]);
        for ci in 0..c_in {
            let xrow = &x[ci * t..(ci + 1) * t];
            let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
            for (i, &wv) in wrow.iter().enumerate() {
                let shift = dilation * i;
                if shift >= t {
                    break;
                }
                for (o, &xv) in row[shift..].iter_mut().zip(&xrow[..t - shift]) {
                    *o += wv * xv;
                }
            }
        }
    }
    out
}

/// Returns (dx, dw, dbias) for `conv1d_forward`.
pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    c_in: usize,
    c_out: usize,
    k: usize,
    t: usize,
    dilation: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; c_in * t];
    let mut dw = vec![0.0; c_out * c_in * k];
    let mut db = vec![0.0; c_out];
    for co in 0..c_out {
        let grow = &dout[co * t..(co + 1) * t];
        db[co] = grow.iter().sum();
        for ci in 0..c_in {
            let xrow = &x[ci * t..(ci + 1) * t];
            let base = (co * c_in + ci) * k;
            for i in 0..k {
                let shift = dilation * i;
                if shift >= t {
                    break;
                }
                let g = &grow[shift..];
                let xs = &xrow[..t - shift];
                dw[base + i] = dot(g, xs);
                let wv = w[base + i];
                for (d, &gv) in dx[ci * t..ci * t + t - shift].iter_mut().zip(g) {
                    *d += wv * gv;
                }
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for j in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * j + l] * b[4 * j + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// C[m×n] = A[m×k] · B[k×n]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// C[m×n] = A[m×k] · B[n×k]ᵀ
pub(crate) fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// C[k×n] = A[m×k]ᵀ · B[m×n]
pub(crate) fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (cv, &bv) in c[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

pub(crate) fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let src = &x[r * cols..(r + 1) * cols];
        let dst = &mut out[r * cols..(r + 1) * cols];
        softmax_into(src, dst);
    }
    out
}

pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

/// dx = y ⊙ (dy − rowsum(dy ⊙ y))
pub(crate) fn softmax_rows_backward(y: &[f64], dy: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * cols];
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &dy[r * cols..(r + 1) * cols];
        let inner = dot(yr, gr);
        for ((d, &yv), &gv) in dx[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - inner);
        }
    }
    dx
}
