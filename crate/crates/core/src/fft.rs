//! Unnormalized multidimensional FFTs over interleaved spinor arrays.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};

/// In-place `d`-dimensional DFT of an array laid out as
/// `index = site·nu + component`, with sites in row-major order (axis 0
/// slowest) and `n` points per axis. No normalization in either direction.
pub(crate) fn fft_nd(data: &mut [Complex64], d: usize, n: usize, nu: usize, direction: FftDirection) {
    debug_assert_eq!(data.len(), n.pow(d as u32) * nu);
    let fft = FftPlanner::new().plan_fft(n, direction);
    let sites = n.pow(d as u32);
    for axis in 0..d {
        // Stride between consecutive points of one line, in array elements.
        let stride = n.pow((d - 1 - axis) as u32) * nu;
        let line_starts: Vec<usize> = (0..sites * nu)
            .filter(|&idx| (idx / stride).is_multiple_of(n))
            .collect();
        let lines: Vec<Vec<Complex64>> = line_starts
            .par_iter()
            .map_init(
                || vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()],
                |scratch, &start| {
                    let mut line: Vec<Complex64> = (0..n).map(|k| data[start + k * stride]).collect();
                    fft.process_with_scratch(&mut line, scratch);
                    line
                },
            )
            .collect();
        for (start, line) in line_starts.iter().zip(lines) {
            for (k, v) in line.into_iter().enumerate() {
                data[start + k * stride] = v;
            }
        }
    }
}
