//! Minimal 2-D DFT used by the kernel simulator.
//!
//! Power-of-two lengths use an iterative radix-2 transform; other lengths
//! fall back to a direct O(n^2) DFT.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::math;

fn unit(a: f64) -> Complex64 {
    let (c, s) = math::cis(a);
    Complex64::new(c, s)
}

fn fft_1d(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if !n.is_power_of_two() {
        dft_1d(buf, inverse);
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = unit(ang * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn dft_1d(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let out: Vec<Complex64> = (0..n)
        .map(|k| {
            buf.iter()
                .enumerate()
                .map(|(j, x)| {
                    let ang = sign * 2.0 * PI * ((j * k) % n) as f64 / n as f64;
                    x * unit(ang)
                })
                .sum()
        })
        .collect();
    buf.copy_from_slice(&out);
}

/// In-place 2-D transform of a row-major `height x width` grid. The inverse
/// includes the `1 / (height * width)` normalization.
pub fn fft_2d(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    debug_assert_eq!(data.len(), height * width);
    for row in data.chunks_mut(width) {
        fft_1d(row, inverse);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            col[r] = data[r * width + c];
        }
        fft_1d(&mut col, inverse);
        for r in 0..height {
            data[r * width + c] = col[r];
        }
    }
    if inverse {
        let scale = 1.0 / (height * width) as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Signed frequency of DFT bin `k` of an `n`-point transform, in cycles per
/// sample.
#[inline]
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// Multiply the spectrum of a real grid by `response(fr, fc)`, where the
/// arguments are signed frequencies in cycles per sample along rows and
/// columns, and return the real part of the result.
pub fn filter_real(
    values: &[f64],
    height: usize,
    width: usize,
    response: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let mut spec: Vec<Complex64> = values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft_2d(&mut spec, height, width, false);
    for r in 0..height {
        let fr = bin_frequency(r, height);
        for c in 0..width {
            let fc = bin_frequency(c, width);
            spec[r * width + c] *= response(fr, fc);
        }
    }
    fft_2d(&mut spec, height, width, true);
    spec.iter().map(|z| z.re).collect()
}
