//! Separable Gaussian filtering with reflected boundaries.

use crate::volume::dims3;

/// Normalized Gaussian kernel truncated at `ceil(3 sigma)`. `sigma <= 0` gives `[1.0]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Half-sample symmetric reflection: `... b a | a b c ... | c b ...`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Convolve along one axis of a `[d, h, w]` buffer.
fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let strides = [dims[1] * dims[2], dims[2], 1];
    let n = dims[axis];
    let stride = strides[axis];
    let mut out = vec![0.0; data.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let pos = (idx / stride) % n;
        let base = idx - pos * stride;
        let mut acc = 0.0;
        for (t, &w) in kernel.iter().enumerate() {
            let src = reflect_index(pos as isize + t as isize - radius, n);
            acc += w * data[base + src * stride];
        }
        *o = acc;
    }
    out
}

/// Gaussian blur over every spatial axis of a rank-2 or rank-3 buffer.
pub fn gaussian_blur(data: &[f64], shape: &[usize], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let dims = dims3(shape);
    let first_axis = 3 - shape.len();
    let mut buf = data.to_vec();
    for axis in first_axis..3 {
        buf = convolve_axis(&buf, dims, axis, &kernel);
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(k[i], k[6 - i]);
        }
    }

    #[test]
    fn reflection() {
        let got: Vec<usize> = (-3..6).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 2, 1, 0]);
        assert_eq!(reflect_index(-1, 1), 0);
    }

    #[test]
    fn blur_preserves_constant() {
        let out = gaussian_blur(&[2.5; 30], &[5, 6], 1.7);
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }
}
