//! Discrete Fourier transforms on complex buffers.
//!
//! Power-of-two lengths use an iterative radix-2 transform; other lengths
//! fall back to the direct O(n²) sum. Forward transforms are unscaled and
//! inverse transforms divide by `n`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        }
    }
}

pub fn fft(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf, dir);
    } else {
        direct(buf, dir);
    }
    if dir == Direction::Inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
}

fn radix2(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = dir.sign() * 2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                // Twiddles computed directly rather than by recurrence to
                // keep round-off at machine level for long transforms.
                let w = Complex64::from_polar(1.0, ang * k as f64);
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn direct(buf: &mut [Complex64], dir: Direction) {
    let n = buf.len();
    let input: Vec<Complex64> = buf.to_vec();
    for (k, out) in buf.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, x) in input.iter().enumerate() {
            let ang = dir.sign() * 2.0 * PI * ((k * j) % n) as f64 / n as f64;
            acc += x * Complex64::from_polar(1.0, ang);
        }
        *out = acc;
    }
}

/// 2-D transform of a row-major `ny × nx` buffer (rows along x).
pub fn fft2(buf: &mut [Complex64], nx: usize, ny: usize, dir: Direction) {
    assert_eq!(buf.len(), nx * ny);
    for row in buf.chunks_mut(nx) {
        fft(row, dir);
    }
    let mut column = Vec::with_capacity(ny);
    for x in 0..nx {
        column.clear();
        column.extend((0..ny).map(|y| buf[y * nx + x]));
        fft(&mut column, dir);
        for (y, v) in column.iter().enumerate() {
            buf[y * nx + x] = *v;
        }
    }
}

/// Signed integer frequency of bin `i` in an `n`-point transform:
/// `0, 1, …, ⌈n/2⌉−1, −⌊n/2⌋, …, −1`.
pub fn signed_frequency(i: usize, n: usize) -> i64 {
    if i < n.div_ceil(2) {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn assert_close(a: &[Complex64], b: &[Complex64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).norm() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn radix2_matches_direct() {
        let data: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new(libm::sin(i as f64 * 0.7), libm::cos(i as f64 * 1.3)))
            .collect();
        let mut a = data.clone();
        let mut b = data.clone();
        radix2(&mut a, Direction::Forward);
        direct(&mut b, Direction::Forward);
        assert_close(&a, &b, 1e-10);
    }

    #[test]
    fn round_trip_any_length() {
        for n in [1usize, 2, 5, 12, 32] {
            let data: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
            let mut buf = data.clone();
            fft(&mut buf, Direction::Forward);
            fft(&mut buf, Direction::Inverse);
            assert_close(&buf, &data, 1e-10);
        }
    }

    #[test]
    fn frequencies_follow_fftfreq_order() {
        let f: Vec<i64> = (0..5).map(|i| signed_frequency(i, 5)).collect();
        assert_eq!(f, vec![0, 1, 2, -2, -1]);
        let f: Vec<i64> = (0..4).map(|i| signed_frequency(i, 4)).collect();
        assert_eq!(f, vec![0, 1, -2, -1]);
    }
}
