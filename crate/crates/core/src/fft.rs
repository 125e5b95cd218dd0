//! Two-dimensional FFTs and optical transfer functions.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::image::{Kernel, Plane};

/// Frequency-domain array, same shape as the spatial grid it came from.
pub type Spectrum = Array2<Complex64>;

/// Planned forward/inverse transforms for one grid size.
///
/// Plans are immutable once built and can be shared between threads; every
/// call allocates its own scratch space.
#[derive(Clone)]
pub struct Fft2d {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2d {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn transform(&self, data: &mut Spectrum, row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.dim(), (self.rows, self.cols), "grid size mismatch");
        let scratch_len = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::default(); scratch_len];
        {
            let flat = data
                .as_slice_mut()
                .expect("spectra are stored in standard layout");
            for line in flat.chunks_exact_mut(self.cols) {
                row.process_with_scratch(line, &mut scratch);
            }
        }
        let mut column = vec![Complex64::default(); self.rows];
        for j in 0..self.cols {
            for i in 0..self.rows {
                column[i] = data[[i, j]];
            }
            col.process_with_scratch(&mut column, &mut scratch);
            for i in 0..self.rows {
                data[[i, j]] = column[i];
            }
        }
    }

    pub fn forward(&self, x: &Plane) -> Spectrum {
        let mut data = x.mapv(|v| Complex64::new(v, 0.0));
        self.transform(&mut data, &self.row_fwd, &self.col_fwd);
        data
    }

    pub fn forward_complex(&self, mut data: Spectrum) -> Spectrum {
        self.transform(&mut data, &self.row_fwd, &self.col_fwd);
        data
    }

    /// Unnormalized inverse transform followed by the `1/(mn)` scaling.
    pub fn inverse_complex(&self, mut data: Spectrum) -> Spectrum {
        self.transform(&mut data, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        data.mapv_inplace(|c| c * scale);
        data
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, data: Spectrum) -> Plane {
        self.inverse_complex(data).mapv(|c| c.re)
    }
}

/// Zero-pads `k` to `rows x cols`, rotates its centre to `(0, 0)` and
/// transforms it, so that `F^-1(otf * F(x))` is the circular convolution of
/// `x` with `k`.
pub fn psf_to_otf(k: &Kernel, fft: &Fft2d) -> Spectrum {
    let (rows, cols) = fft.shape();
    assert!(
        k.height() <= rows && k.width() <= cols,
        "kernel larger than the transform grid"
    );
    let mut padded = Array2::<f64>::zeros((rows, cols));
    let (ch, cw) = (k.half_height(), k.half_width());
    for ((i, j), &v) in k.data().indexed_iter() {
        let r = (i + rows - ch) % rows;
        let c = (j + cols - cw) % cols;
        padded[[r, c]] += v;
    }
    fft.forward(&padded)
}

/// Transfer functions of the circular forward differences used throughout:
/// `gh(i,j) = x(i,j+1) - x(i,j)` and `gv(i,j) = x(i+1,j) - x(i,j)`.
pub fn difference_otfs(fft: &Fft2d) -> (Spectrum, Spectrum) {
    let (rows, cols) = fft.shape();
    let mut dh = Array2::<f64>::zeros((rows, cols));
    dh[[0, 0]] -= 1.0;
    dh[[0, (cols - 1) % cols]] += 1.0;
    let mut dv = Array2::<f64>::zeros((rows, cols));
    dv[[0, 0]] -= 1.0;
    dv[[(rows - 1) % rows, 0]] += 1.0;
    (fft.forward(&dh), fft.forward(&dv))
}
