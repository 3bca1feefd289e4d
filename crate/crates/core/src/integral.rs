//! Summed-area tables of intensities and squared intensities.

use crate::error::{MatchError, Result};
use crate::image::GrayImage;
use crate::segmentation::Segment;

/// Running sums `s(u, v)` and `s2(u, v)` over a source image.
///
/// Stored with a leading zero row and column so that lookups at index -1
/// read 0 and every rectangle sum is a plain four-corner expression.
#[derive(Clone, Debug)]
pub struct SumTables {
    width: usize,
    height: usize,
    // (width + 1) * (height + 1), row-major, zero border at row 0 / col 0.
    sum: Vec<u64>,
    sum_sq: Vec<u64>,
}

impl SumTables {
    pub fn build(f: &GrayImage) -> Self {
        let (width, height) = (f.width(), f.height());
        let stride = width + 1;
        let mut sum = vec![0u64; stride * (height + 1)];
        let mut sum_sq = vec![0u64; stride * (height + 1)];
        for y in 0..height {
            let (above, here) = sum.split_at_mut((y + 1) * stride);
            let (above_sq, here_sq) = sum_sq.split_at_mut((y + 1) * stride);
            let above = &above[y * stride + 1..];
            let above_sq = &above_sq[y * stride + 1..];
            let (mut row_sum, mut row_sq) = (0u64, 0u64);
            let cells = here[1..stride].iter_mut().zip(&mut here_sq[1..stride]);
            for (((cell, cell_sq), (&up, &up_sq)), &p) in cells.zip(above.iter().zip(above_sq)).zip(f.row(y)) {
                let p = p as u64;
                row_sum += p;
                row_sq += p * p;
                *cell = up + row_sum;
                *cell_sq = up_sq + row_sq;
            }
        }
        Self {
            width,
            height,
            sum,
            sum_sq,
        }
    }

    pub(crate) fn stride(&self) -> usize {
        self.width + 1
    }

    /// Raw intensity table including the zero border.
    pub(crate) fn raw_sums(&self) -> &[u64] {
        &self.sum
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `s(u, v)`: sum of `f(x, y)` over `x <= u, y <= v`. Negative indices read 0.
    pub fn s(&self, u: isize, v: isize) -> u64 {
        self.sum[self.index(u, v)]
    }

    /// `s2(u, v)`: same as [`SumTables::s`] for squared intensities.
    pub fn s2(&self, u: isize, v: isize) -> u64 {
        self.sum_sq[self.index(u, v)]
    }

    fn index(&self, u: isize, v: isize) -> usize {
        assert!(
            (-1..self.width as isize).contains(&u) && (-1..self.height as isize).contains(&v),
            "sum table lookup ({u}, {v}) outside {}x{}",
            self.width,
            self.height
        );
        (v + 1) as usize * (self.width + 1) + (u + 1) as usize
    }

    fn check(&self, x: usize, y: usize, w: usize, h: usize) -> Result<()> {
        let fits = w >= 1
            && h >= 1
            && x.checked_add(w).is_some_and(|r| r <= self.width)
            && y.checked_add(h).is_some_and(|b| b <= self.height);
        if fits {
            Ok(())
        } else {
            Err(MatchError::OutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            })
        }
    }

    /// Unchecked `(sum, sum of squares)` of a rectangle; callers guarantee bounds.
    #[inline]
    pub(crate) fn rect_sums_unchecked(&self, x: usize, y: usize, w: usize, h: usize) -> (u64, u64) {
        let stride = self.width + 1;
        let top = y * stride;
        let bottom = (y + h) * stride;
        let (l, r) = (x, x + w);
        let s = self.sum[bottom + r] + self.sum[top + l] - self.sum[bottom + l] - self.sum[top + r];
        let s2 = self.sum_sq[bottom + r] + self.sum_sq[top + l]
            - self.sum_sq[bottom + l]
            - self.sum_sq[top + r];
        (s, s2)
    }

    #[inline]
    pub(crate) fn rect_sum_unchecked(&self, x: usize, y: usize, w: usize, h: usize) -> u64 {
        let stride = self.width + 1;
        let top = y * stride;
        let bottom = (y + h) * stride;
        self.sum[bottom + x + w] + self.sum[top + x] - self.sum[bottom + x] - self.sum[top + x + w]
    }

    /// `(Σf, Σf²)` over the `w`x`h` window at `(u, v)`.
    pub fn window_sums(&self, u: usize, v: usize, w: usize, h: usize) -> Result<(u64, u64)> {
        self.check(u, v, w, h)?;
        Ok(self.rect_sums_unchecked(u, v, w, h))
    }

    /// Σf over `seg` translated by the template placement `(u, v)`.
    pub fn region_sum(&self, u: usize, v: usize, seg: &Segment) -> Result<u64> {
        let (x, y) = (u + seg.x, v + seg.y);
        self.check(x, y, seg.w, seg.h)?;
        Ok(self.rect_sum_unchecked(x, y, seg.w, seg.h))
    }
}

pub fn build_sum_tables(f: &GrayImage) -> SumTables {
    SumTables::build(f)
}
