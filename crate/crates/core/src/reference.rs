//! Slow, obviously-correct implementations used to cross-check the fast
//! operators. Plain nested loops over `f64` slices, no shared code with
//! [`crate::tensor`].

/// Direct-summation cross-correlation.
///
/// `input` is `[cin, h, w]`, `kernels` `[cout, cin, kh, kw]`; returns the
/// `[cout, oh, ow]` output and its dimensions.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &[f64],
    (cin, h, w): (usize, usize, usize),
    kernels: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    bias: &[f64],
    padding: usize,
    stride: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for c in 0..cin {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (y * stride + dy) as isize - padding as isize;
                            let ix = (x * stride + dx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let v = input[(c * h + iy as usize) * w + ix as usize];
                            acc += v * kernels[((o * cin + c) * kh + dy) * kw + dx];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    (out, (cout, oh, ow))
}

/// Window maximum over a `[c, h, w]` input.
pub fn maxpool2d(input: &[f64], (c, h, w): (usize, usize, usize), window: usize, stride: usize) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        m = m.max(input[(ch * h + y * stride + dy) * w + x * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    (out, (c, oh, ow))
}

/// `A * B` for row-major `[n, k]` and `[k, m]` matrices.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * m + j];
            }
            out[i * m + j] = acc;
        }
    }
    out
}

/// One message-passing layer `relu(A X W)` with `A: [s, s]`, `X: [s, d]`, `W: [d, f]`.
pub fn gnn_layer(adjacency: &[f64], x: &[f64], w: &[f64], s: usize, d: usize, f: usize) -> Vec<f64> {
    let ax = matmul(adjacency, x, s, s, d);
    matmul(&ax, w, s, d, f).into_iter().map(|v| v.max(0.0)).collect()
}

/// `D^-1/2 (A + I) D^-1/2` from a dense 0/1 adjacency.
pub fn normalized_adjacency(adjacency: &[f64], s: usize) -> Vec<f64> {
    let mut a = adjacency.to_vec();
    for i in 0..s {
        a[i * s + i] += 1.0;
    }
    let deg: Vec<f64> = (0..s).map(|i| (0..s).map(|j| a[i * s + j]).sum()).collect();
    let mut out = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            out[i * s + j] = a[i * s + j] / (deg[i] * deg[j]).sqrt();
        }
    }
    out
}
