//! Multi-dimensional FFT over the padded row-major layout, built from
//! `rustfft` line transforms. Plans are cached process-wide.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

type Plan = Arc<dyn Fft<f64>>;

fn plan(n: usize, forward: bool) -> Plan {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Plan>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft plan cache poisoned");
    map.entry((n, forward))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if forward {
                planner.plan_fft_forward(n)
            } else {
                planner.plan_fft_inverse(n)
            }
        })
        .clone()
}

/// Unnormalized in-place transform along every axis of `grid`.
fn transform(grid: &Grid, data: &mut [Complex64], forward: bool) {
    let shape = grid.shape();
    debug_assert_eq!(data.len(), grid.len());
    let mut buffer = Vec::new();
    let mut scratch = Vec::new();
    for axis in 0..grid.dim() {
        let n = shape[axis];
        let fft = plan(n, forward);
        let need = fft.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        if inner == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        let block = n * inner;
        buffer.resize(block, Complex64::new(0.0, 0.0));
        for chunk in data.chunks_exact_mut(block) {
            // transpose (n x inner) -> (inner x n)
            for i in 0..n {
                for j in 0..inner {
                    buffer[j * n + i] = chunk[i * inner + j];
                }
            }
            fft.process_with_scratch(&mut buffer, &mut scratch);
            for i in 0..n {
                for j in 0..inner {
                    chunk[i * inner + j] = buffer[j * n + i];
                }
            }
        }
    }
}

/// Physical samples to unitary Fourier coefficients:
/// `c_k = sqrt(V)/N * sum_j f_j exp(-i k x_j)`, so that `sum |c_k|^2`
/// equals the trapezoid `L^2` norm squared.
pub fn forward(grid: &Grid, data: &mut [Complex64]) {
    transform(grid, data, true);
    let scale = grid.volume().sqrt() / grid.len() as f64;
    data.iter_mut().for_each(|c| *c *= scale);
}

/// Inverse of [`forward`].
pub fn inverse(grid: &Grid, data: &mut [Complex64]) {
    transform(grid, data, false);
    let scale = 1.0 / grid.volume().sqrt();
    data.iter_mut().for_each(|c| *c *= scale);
}
