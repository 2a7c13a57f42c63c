//! Dense kernels on single-sample activations laid out `[channels, d, h, w]`.

use serde::{Deserialize, Serialize};

/// `c = a · b + beta · c`, where `a` is `m × k` (or its transpose stored `k × m`)
/// and `b` is `k × n` (or its transpose stored `n × k`). All buffers row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold `x` (`[cin, d, h, w]`) into `[cin·kd·kh·kw, d·h·w]` columns for a
/// stride-1 convolution with zero "same" padding.
pub fn im2col(x: &[f64], cin: usize, dims: [usize; 3], kernel: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let [kd, kh, kw] = kernel;
    let (pd, ph, pw) = (kd / 2, kh / 2, kw / 2);
    let p = d * h * w;
    let mut cols = vec![0.0; cin * kd * kh * kw * p];
    let mut row = 0;
    for c in 0..cin {
        let xc = &x[c * p..(c + 1) * p];
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let out = &mut cols[row * p..(row + 1) * p];
                    for z in 0..d {
                        let sz = z as isize + dz as isize - pd as isize;
                        if sz < 0 || sz >= d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + dy as isize - ph as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src = (sz as usize * h + sy as usize) * w;
                            let dst = (z * h + y) * w;
                            let x0 = pw.saturating_sub(dx);
                            let x1 = (w + pw).saturating_sub(dx).min(w);
                            for xo in x0..x1 {
                                out[dst + xo] = xc[src + xo + dx - pw];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an input-shaped buffer.
pub fn col2im(cols: &[f64], cin: usize, dims: [usize; 3], kernel: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let [kd, kh, kw] = kernel;
    let (pd, ph, pw) = (kd / 2, kh / 2, kw / 2);
    let p = d * h * w;
    let mut x = vec![0.0; cin * p];
    let mut row = 0;
    for c in 0..cin {
        let xc = &mut x[c * p..(c + 1) * p];
        for dz in 0..kd {
            for dy in 0..kh {
                for dx in 0..kw {
                    let col = &cols[row * p..(row + 1) * p];
                    for z in 0..d {
                        let sz = z as isize + dz as isize - pd as isize;
                        if sz < 0 || sz >= d as isize {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + dy as isize - ph as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src = (sz as usize * h + sy as usize) * w;
                            let dst = (z * h + y) * w;
                            let x0 = pw.saturating_sub(dx);
                            let x1 = (w + pw).saturating_sub(dx).min(w);
                            for xo in x0..x1 {
                                xc[src + xo + dx - pw] += col[dst + xo];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    x
}

/// Mean over non-overlapping `factor` blocks.
pub fn avg_pool(x: &[f64], channels: usize, dims: [usize; 3], factor: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let [fd, fh, fw] = factor;
    let (od, oh, ow) = (d / fd, h / fh, w / fw);
    let scale = 1.0 / (fd * fh * fw) as f64;
    let mut out = vec![0.0; channels * od * oh * ow];
    for c in 0..channels {
        for z in 0..d {
            for y in 0..h {
                let src = ((c * d + z) * h + y) * w;
                let dst = ((c * od + z / fd) * oh + y / fh) * ow;
                for xx in 0..w {
                    out[dst + xx / fw] += x[src + xx] * scale;
                }
            }
        }
    }
    out
}

/// Adjoint of [`avg_pool`]; `dims` are the input (fine) dims.
pub fn avg_pool_backward(dout: &[f64], channels: usize, dims: [usize; 3], factor: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let [fd, fh, fw] = factor;
    let (od, oh, ow) = (d / fd, h / fh, w / fw);
    let scale = 1.0 / (fd * fh * fw) as f64;
    let mut dx = vec![0.0; channels * d * h * w];
    for c in 0..channels {
        for z in 0..d {
            for y in 0..h {
                let dst = ((c * d + z) * h + y) * w;
                let src = ((c * od + z / fd) * oh + y / fh) * ow;
                for xx in 0..w {
                    dx[dst + xx] = dout[src + xx / fw] * scale;
                }
            }
        }
    }
    dx
}

/// Nearest-neighbour upsampling; `dims` are the output (fine) dims.
pub fn upsample(x: &[f64], channels: usize, dims: [usize; 3], factor: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let [fd, fh, fw] = factor;
    let (id, ih, iw) = (d / fd, h / fh, w / fw);
    let mut out = vec![0.0; channels * d * h * w];
    for c in 0..channels {
        for z in 0..d {
            for y in 0..h {
                let dst = ((c * d + z) * h + y) * w;
                let src = ((c * id + z / fd) * ih + y / fh) * iw;
                for xx in 0..w {
                    out[dst + xx] = x[src + xx / fw];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample`]: sums each block; `dims` are the output (fine) dims.
pub fn upsample_backward(dout: &[f64], channels: usize, dims: [usize; 3], factor: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let [fd, fh, fw] = factor;
    let (id, ih, iw) = (d / fd, h / fh, w / fw);
    let mut dx = vec![0.0; channels * id * ih * iw];
    for c in 0..channels {
        for z in 0..d {
            for y in 0..h {
                let src = ((c * d + z) * h + y) * w;
                let dst = ((c * id + z / fd) * ih + y / fh) * iw;
                for xx in 0..w {
                    dx[dst + xx / fw] += dout[src + xx];
                }
            }
        }
    }
    dx
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Leaky ReLU with slope 0.01.
    #[default]
    LeakyRelu,
    /// `x · sigmoid(x)`; smooth everywhere.
    Silu,
}

const LEAK: f64 = 0.01;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAK * x
                }
            }
            Activation::Silu => x * sigmoid(x),
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAK
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 12.9898).sin() * 43758.5453 % 1.0).collect()
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let (cin, dims, kernel) = (2, [1, 4, 5], [1, 3, 3]);
        let x = pseudo(cin * 20, 0.3);
        let wts = pseudo(cin * 9, 1.7);
        let cols = im2col(&x, cin, dims, kernel);
        let mut out = vec![0.0; 20];
        gemm(1, cin * 9, 20, &wts, false, &cols, false, 0.0, &mut out);
        for y in 0..4isize {
            for xx in 0..5isize {
                let mut acc = 0.0;
                for c in 0..cin {
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let (sy, sx) = (y + ky - 1, xx + kx - 1);
                            if (0..4).contains(&sy) && (0..5).contains(&sx) {
                                acc += wts[c * 9 + (ky * 3 + kx) as usize]
                                    * x[c * 20 + (sy * 5 + sx) as usize];
                            }
                        }
                    }
                }
                assert!((out[(y * 5 + xx) as usize] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_pairs() {
        // <A x, y> == <x, A^T y> for each linear op and its backward.
        let dims = [2, 4, 6];
        let x = pseudo(3 * 48, 0.1);
        let cols = im2col(&x, 3, dims, [3, 3, 3]);
        let y = pseudo(cols.len(), 0.9);
        assert!((dot(&cols, &y) - dot(&x, &col2im(&y, 3, dims, [3, 3, 3]))).abs() < 1e-9);

        let f = [2, 2, 2];
        let pooled = avg_pool(&x, 3, dims, f);
        let y = pseudo(pooled.len(), 2.2);
        assert!((dot(&pooled, &y) - dot(&x, &avg_pool_backward(&y, 3, dims, f))).abs() < 1e-12);

        let small = pseudo(3 * 6, 0.4);
        let up = upsample(&small, 3, dims, f);
        let y = pseudo(up.len(), 3.3);
        assert!((dot(&up, &y) - dot(&small, &upsample_backward(&y, 3, dims, f))).abs() < 1e-12);
    }

    #[test]
    fn activation_derivatives() {
        for act in [Activation::LeakyRelu, Activation::Silu] {
            for &x in &[-2.3, -0.4, 0.7, 3.1] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-8);
            }
        }
        assert!((sigmoid(-800.0)).abs() < 1e-300 && sigmoid(800.0) == 1.0);
    }
}
