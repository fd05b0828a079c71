//! Shared forward kernels.
//!
//! Both the inference path and the autograd tape call into these functions,
//! so the two paths produce bit-identical outputs for the same parameters.

/// y[b] = W x[b] + bias, row-major W of shape (out, inp).
pub fn linear(x: &[f64], batch: usize, inp: usize, w: &[f64], bias: &[f64], out: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), batch * inp);
    debug_assert_eq!(w.len(), out * inp);
    debug_assert_eq!(bias.len(), out);
    let mut y = vec![0.0; batch * out];
    for b in 0..batch {
        let xb = &x[b * inp..(b + 1) * inp];
        let yb = &mut y[b * out..(b + 1) * out];
        for o in 0..out {
            let wrow = &w[o * inp..(o + 1) * inp];
            let mut acc = bias[o];
            for i in 0..inp {
                acc += wrow[i] * xb[i];
            }
            yb[o] = acc;
        }
    }
    y
}

pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut y = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..cols {
            let e = (row[c] - m).exp();
            y[r * cols + c] = e;
            sum += e;
        }
        for c in 0..cols {
            y[r * cols + c] /= sum;
        }
    }
    y
}

/// 3x3 convolution, stride 1, zero padding 1, NCHW layout.
/// Weights are (cout, cin, 3, 3), one bias per output channel.
pub fn conv3x3(
    x: &[f64],
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    debug_assert_eq!(x.len(), batch * cin * h * w);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    let mut y = vec![0.0; batch * cout * h * w];
    for b in 0..batch {
        for co in 0..cout {
            let wbase = co * cin * 9;
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        let xbase = (b * cin + ci) * h * w;
                        let kbase = wbase + ci * 9;
                        for ky in 0..3usize {
                            let iy = oy as isize + ky as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3usize {
                                let ix = ox as isize + kx as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += weight[kbase + ky * 3 + kx]
                                    * x[xbase + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    y[(b * cout + co) * h * w + oy * w + ox] = acc;
                }
            }
        }
    }
    y
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns pooled values and the flat input index of each selected element.
pub fn maxpool2x2(
    x: &[f64],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let ho = h / 2;
    let wo = w / 2;
    let mut y = vec![0.0; batch * c * ho * wo];
    let mut arg = vec![0usize; batch * c * ho * wo];
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = base + (oy * 2 + dy) * w + (ox * 2 + dx);
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (b * c + ch) * ho * wo + oy * wo + ox;
                    y[o] = best;
                    arg[o] = best_i;
                }
            }
        }
    }
    (y, arg, ho, wo)
}

/// Per-channel affine normalization.
///
/// In frozen mode (the default) the running statistics are the identity, so
/// y = gain[c] * x + bias[c]. With `batch_stats` the mean and variance are
/// taken over the batch and spatial positions of each channel.
pub fn channel_norm(
    x: &[f64],
    batch: usize,
    c: usize,
    hw: usize,
    gain: &[f64],
    bias: &[f64],
    batch_stats: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    const EPS: f64 = 1e-5;
    let mut mean = vec![0.0; c];
    let mut var = vec![1.0; c];
    if batch_stats {
        let n = (batch * hw) as f64;
        for ch in 0..c {
            let mut s = 0.0;
            for b in 0..batch {
                let base = (b * c + ch) * hw;
                for i in 0..hw {
                    s += x[base + i];
                }
            }
            mean[ch] = s / n;
            let mut v = 0.0;
            for b in 0..batch {
                let base = (b * c + ch) * hw;
                for i in 0..hw {
                    let d = x[base + i] - mean[ch];
                    v += d * d;
                }
            }
            var[ch] = v / n;
        }
    }
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            let inv = 1.0 / (var[ch] + EPS).sqrt();
            let (m, g, bi) = if batch_stats {
                (mean[ch], gain[ch] * inv, bias[ch])
            } else {
                (0.0, gain[ch], bias[ch])
            };
            for i in 0..hw {
                y[base + i] = g * (x[base + i] - m) + bi;
            }
        }
    }
    (y, mean, var)
}
