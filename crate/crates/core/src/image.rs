//! Validated RGB images in `[0,1]` and batch helpers.
//!
//! Pixels are stored channel-first, `3 × H × W`, which is the layout the
//! network layers consume. Batches are `N × 3 × H × W`.

use ndarray::{s, Array3, Array4, ArrayView3, Axis};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Smallest side accepted for images entering block or crop operations.
pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pixels: Array3<T>,
}

impl<T: Scalar> Image<T> {
    /// Wraps a `3 × H × W` array after checking the pixel range.
    pub fn new(pixels: Array3<T>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c != 3 {
            return Err(invalid(format!("expected 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(invalid(format!("empty image {h}x{w}")));
        }
        if let Some(v) = pixels.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(invalid(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self { pixels })
    }

    /// Clamps into `[0,1]` (non-finite values become 0) and wraps.
    pub fn from_clamped(mut pixels: Array3<T>) -> Result<Self> {
        pixels.mapv_inplace(clamp01);
        Self::new(pixels)
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> T) -> Result<Self> {
        Self::new(Array3::from_shape_fn((3, height, width), |(c, y, x)| f(c, y, x)))
    }

    pub fn constant(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Array3::from_elem((3, height, width), value))
    }

    pub(crate) fn from_raw(pixels: Array3<T>) -> Self {
        debug_assert!(pixels.iter().all(|v| *v >= T::zero() && *v <= T::one()));
        Self { pixels }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn pixels(&self) -> &Array3<T> {
        &self.pixels
    }

    pub fn view(&self) -> ArrayView3<'_, T> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array3<T> {
        self.pixels
    }

    pub fn ensure_min_side(&self) -> Result<()> {
        let (h, w) = self.dims();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(invalid(format!("image {h}x{w} is smaller than {MIN_SIDE}x{MIN_SIDE}")));
        }
        Ok(())
    }

    /// `max |self - other|` over all pixels.
    pub fn linf_distance(&self, other: &Self) -> Result<T> {
        if self.pixels.dim() != other.pixels.dim() {
            return Err(invalid("image shapes differ"));
        }
        Ok(self
            .pixels
            .iter()
            .zip(other.pixels.iter())
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image { pixels: self.pixels.mapv(|v| U::of(v.f64())) }
    }
}

#[inline]
pub(crate) fn clamp01<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}

/// Stacks equally sized images into an `N × 3 × H × W` batch.
pub fn stack<T: Scalar>(images: &[Image<T>]) -> Result<Array4<T>> {
    let first = images.first().ok_or_else(|| invalid("empty image list"))?;
    let (h, w) = first.dims();
    let mut batch = Array4::zeros((images.len(), 3, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.dims() != (h, w) {
            return Err(invalid(format!("image {i} is {:?}, expected {:?}", img.dims(), (h, w))));
        }
        batch.slice_mut(s![i, .., .., ..]).assign(img.pixels());
    }
    Ok(batch)
}

/// Splits a batch into validated images.
pub fn unstack<T: Scalar>(batch: &Array4<T>) -> Result<Vec<Image<T>>> {
    batch.axis_iter(Axis(0)).map(|v| Image::new(v.to_owned())).collect()
}
