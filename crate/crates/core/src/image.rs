//! Raster images over any pipeline scalar.
//!
//! Layout is row-major, channel-interleaved (HWC). Images flow through the
//! differentiable path, so every operation here is defined for any [`Real`].

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<S> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<S>,
}

impl<S: Real> Image<S> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![S::zero(); height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> S,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::input(format!(
                "image data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> &S {
        &self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: S) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn map<U: Real>(&self, f: impl FnMut(&S) -> U) -> Image<U> {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn to_f64(&self) -> Image<f64> {
        self.map(|v| v.to_f64())
    }

    pub fn lift_from(src: &Image<f64>) -> Image<S> {
        src.map(|&v| S::from_f64(v))
    }

    /// Collapse to one channel with standard luma weights; single-channel
    /// images pass through unchanged.
    pub fn to_single_channel(&self) -> Image<S> {
        match self.channels {
            1 => self.clone(),
            3 => Image::from_fn(self.height, self.width, 1, |y, x, _| {
                self.get(y, x, 0).clone() * S::from_f64(0.299)
                    + self.get(y, x, 1).clone() * S::from_f64(0.587)
                    + self.get(y, x, 2).clone() * S::from_f64(0.114)
            }),
            c => {
                // Plain mean for unusual channel counts.
                let inv = S::from_f64(1.0 / c as f64);
                Image::from_fn(self.height, self.width, 1, |y, x, _| {
                    let mut acc = S::zero();
                    for ch in 0..c {
                        acc = acc + self.get(y, x, ch).clone();
                    }
                    acc * inv.clone()
                })
            }
        }
    }

    /// Replicate a single channel out to `n` channels.
    pub fn replicate_channels(&self, n: usize) -> Image<S> {
        assert_eq!(self.channels, 1, "replicate_channels expects 1 channel");
        Image::from_fn(self.height, self.width, n, |y, x, _| self.get(y, x, 0).clone())
    }

    /// Bilinear resize with half-pixel center alignment. Same-size calls are
    /// exact pass-throughs.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image<S> {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Image::from_fn(height, width, self.channels, |y, x, c| {
            let fy = (y as f64 + 0.5) * sy - 0.5;
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let y0 = fy.floor();
            let x0 = fx.floor();
            let wy = fy - y0;
            let wx = fx - x0;
            let y0i = clamp_idx(y0, self.height);
            let y1i = clamp_idx(y0 + 1.0, self.height);
            let x0i = clamp_idx(x0, self.width);
            let x1i = clamp_idx(x0 + 1.0, self.width);
            let w00 = S::from_f64((1.0 - wy) * (1.0 - wx));
            let w01 = S::from_f64((1.0 - wy) * wx);
            let w10 = S::from_f64(wy * (1.0 - wx));
            let w11 = S::from_f64(wy * wx);
            self.get(y0i, x0i, c).clone() * w00
                + self.get(y0i, x1i, c).clone() * w01
                + self.get(y1i, x0i, c).clone() * w10
                + self.get(y1i, x1i, c).clone() * w11
        })
    }

    /// Separable bicubic resize (Catmull-Rom kernel, a = -0.5): the
    /// high-quality resampling used on the evaluation path.
    pub fn resize_bicubic(&self, height: usize, width: usize) -> Image<S> {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let horizontal = resample_axis(self, width, Axis::X);
        resample_axis(&horizontal, height, Axis::Y)
    }
}

fn clamp_idx(v: f64, len: usize) -> usize {
    if v <= 0.0 {
        0
    } else if v >= (len - 1) as f64 {
        len - 1
    } else {
        v as usize
    }
}

enum Axis {
    X,
    Y,
}

fn cubic_weight(t: f64) -> f64 {
    // Keys kernel with a = -0.5.
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

fn resample_axis<S: Real>(src: &Image<S>, new_len: usize, axis: Axis) -> Image<S> {
    let (out_h, out_w, src_len) = match axis {
        Axis::X => (src.height, new_len, src.width),
        Axis::Y => (new_len, src.width, src.height),
    };
    let scale = src_len as f64 / new_len as f64;
    Image::from_fn(out_h, out_w, src.channels, |y, x, c| {
        let pos = match axis {
            Axis::X => x,
            Axis::Y => y,
        };
        let center = (pos as f64 + 0.5) * scale - 0.5;
        let base = center.floor() as i64;
        let mut acc = S::zero();
        let mut wsum = 0.0;
        for k in -1..=2i64 {
            let idx = base + k;
            let w = cubic_weight(center - idx as f64);
            if w == 0.0 {
                continue;
            }
            let clamped = idx.clamp(0, src_len as i64 - 1) as usize;
            let v = match axis {
                Axis::X => src.get(y, clamped, c),
                Axis::Y => src.get(clamped, x, c),
            };
            acc = acc + v.clone() * S::from_f64(w);
            wsum += w;
        }
        // Kernel weights sum to 1 in the interior; renormalize at borders.
        if (wsum - 1.0).abs() > 1e-12 {
            acc * S::from_f64(1.0 / wsum)
        } else {
            acc
        }
    })
}
