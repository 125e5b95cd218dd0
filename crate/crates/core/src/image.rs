//! Image and kernel containers.
//!
//! Solvers work on single-channel [`Plane`]s. [`Image`] carries one or
//! three planes and is what the I/O layer produces and consumes.

use ndarray::Array2;

use crate::error::{DeblurError, Result};

/// A single-channel intensity plane, indexed `[row, col]`.
pub type Plane = Array2<f64>;

const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A one- or three-channel image with intensities nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    planes: Vec<Plane>,
}

impl Image {
    pub fn gray(plane: Plane) -> Result<Self> {
        Self::from_planes(vec![plane])
    }

    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        if planes.len() != 1 && planes.len() != 3 {
            return Err(DeblurError::InvalidArgument(format!(
                "images have 1 or 3 channels, got {}",
                planes.len()
            )));
        }
        let dim = planes[0].dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(DeblurError::ImageTooSmall("image has a zero dimension".into()));
        }
        if planes.iter().any(|p| p.dim() != dim) {
            return Err(DeblurError::DimensionMismatch(
                "all channels must share one shape".into(),
            ));
        }
        if planes.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(DeblurError::NonFinite("image"));
        }
        Ok(Self { planes })
    }

    pub fn height(&self) -> usize {
        self.planes[0].nrows()
    }

    pub fn width(&self) -> usize {
        self.planes[0].ncols()
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    pub fn plane(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    /// Single-channel view of the image: the plane itself for gray input,
    /// the luminance for RGB.
    pub fn luminance(&self) -> Plane {
        if self.channels() == 1 {
            self.planes[0].clone()
        } else {
            luminance_of(&self.planes)
        }
    }

    /// Per-pixel minimum over channels.
    pub fn channel_min(&self) -> Plane {
        let mut out = self.planes[0].clone();
        for p in &self.planes[1..] {
            out.zip_mut_with(p, |a, &b| *a = a.min(b));
        }
        out
    }

    pub fn map_planes<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Plane) -> Result<Plane>,
    {
        let planes = self.planes.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        Self::from_planes(planes)
    }

    pub fn clamped(&self) -> Self {
        Self {
            planes: self.planes.iter().map(clamp_unit).collect(),
        }
    }
}

fn luminance_of(planes: &[Plane]) -> Plane {
    let mut out = &planes[0] * LUMA_WEIGHTS[0];
    out.scaled_add(LUMA_WEIGHTS[1], &planes[1]);
    out.scaled_add(LUMA_WEIGHTS[2], &planes[2]);
    out
}

/// Converts a three-channel image to luminance with Rec. 601 weights.
pub fn to_luminance(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(DeblurError::InvalidArgument(format!(
            "luminance conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    Image::gray(luminance_of(img.planes()))
}

pub fn clamp_unit(p: &Plane) -> Plane {
    p.mapv(|v| v.clamp(0.0, 1.0))
}

/// A blur kernel with odd side lengths.
///
/// Kernels coming out of refinement are also non-negative and sum to one;
/// [`Kernel::new`] only enforces the shape, so raw solver output can be
/// carried in the same type before it is refined.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    data: Array2<f64>,
}

impl Kernel {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (kh, kw) = data.dim();
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(DeblurError::EvenKernel(kh, kw));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DeblurError::NonFinite("kernel"));
        }
        Ok(Self { data })
    }

    /// Square kernel with all mass at the centre.
    pub fn delta(size: usize) -> Result<Self> {
        let mut data = Array2::zeros((size, size));
        if size > 0 {
            data[[size / 2, size / 2]] = 1.0;
        }
        Self::new(data)
    }

    pub fn uniform(size: usize) -> Result<Self> {
        let v = 1.0 / (size * size) as f64;
        Self::new(Array2::from_elem((size, size), v))
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn half_height(&self) -> usize {
        self.data.nrows() / 2
    }

    pub fn half_width(&self) -> usize {
        self.data.ncols() / 2
    }

    pub fn sum(&self) -> f64 {
        self.data.sum()
    }

    pub fn center_mass(&self) -> f64 {
        self.data[[self.half_height(), self.half_width()]]
    }

    /// True when every entry is non-negative and the entries sum to one.
    pub fn is_normalized(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0) && (self.sum() - 1.0).abs() <= 1e-10
    }

    /// Embeds the kernel at the centre of a larger odd square, zero padded.
    pub fn padded_to(&self, size: usize) -> Result<Self> {
        if size < self.height() || size < self.width() {
            return Err(DeblurError::InvalidArgument(format!(
                "cannot pad {}x{} kernel to {size}",
                self.height(),
                self.width()
            )));
        }
        let mut data = Array2::zeros((size, size));
        let oy = size / 2 - self.half_height();
        let ox = size / 2 - self.half_width();
        for ((i, j), &v) in self.data.indexed_iter() {
            data[[oy + i, ox + j]] = v;
        }
        Self::new(data)
    }

    /// Integer translation that brings the centre of mass closest to the
    /// middle entry. Mass pushed off the support is dropped and the rest
    /// renormalized.
    pub fn centred(&self) -> Result<Self> {
        let (m, n) = self.data.dim();
        let total = self.sum();
        if !(total > 0.0) {
            return Err(DeblurError::KernelCollapsed);
        }
        let (mut cy, mut cx) = (0.0, 0.0);
        for ((i, j), &v) in self.data.indexed_iter() {
            cy += i as f64 * v;
            cx += j as f64 * v;
        }
        let dy = (m / 2) as isize - (cy / total).round() as isize;
        let dx = (n / 2) as isize - (cx / total).round() as isize;
        if dy == 0 && dx == 0 {
            return Ok(self.clone());
        }
        let mut out = Array2::zeros((m, n));
        for ((i, j), &v) in self.data.indexed_iter() {
            let (ti, tj) = (i as isize + dy, j as isize + dx);
            if ti >= 0 && tj >= 0 && (ti as usize) < m && (tj as usize) < n {
                out[[ti as usize, tj as usize]] = v;
            }
        }
        let kept = out.sum();
        if !(kept > 0.0) {
            return Err(DeblurError::KernelCollapsed);
        }
        Self::new(out / kept * total)
    }

    /// Sum of squared differences to another kernel of the same shape.
    pub fn ssd(&self, other: &Kernel) -> Result<f64> {
        if self.data.dim() != other.data.dim() {
            return Err(DeblurError::DimensionMismatch(format!(
                "kernel {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum())
    }
}
