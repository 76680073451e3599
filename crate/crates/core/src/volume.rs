//! Dense 3D and 2D scalar grids.
//!
//! Axis order is `(d, h, w)` with `w` fastest in memory. Physical vectors
//! elsewhere in the crate are `(x, y, z)` and map onto `(w, h, d)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DensityVolume {
    dims: [usize; 3],
    data: Vec<f32>,
    /// Ångström per voxel.
    pub voxel_size: f32,
    /// Position of voxel `(0, 0, 0)` in Ångström, `(x, y, z)`.
    pub origin: [f32; 3],
}

impl DensityVolume {
    pub fn zeros(dims: [usize; 3], voxel_size: f32) -> Self {
        assert!(dims.iter().all(|&n| n >= 1), "volume dimensions must be >= 1");
        Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
            voxel_size,
            origin: [0.0; 3],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f32>, voxel_size: f32) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::Shape(format!(
                "{} values supplied for a {}x{}x{} grid",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        if !(voxel_size > 0.0) {
            return Err(Error::Config(format!("voxel size must be positive, got {voxel_size}")));
        }
        Ok(Self {
            dims,
            data,
            voxel_size,
            origin: [0.0; 3],
        })
    }

    /// Builds a volume by evaluating `f(d, h, w)` at every voxel.
    pub fn from_fn(dims: [usize; 3], voxel_size: f32, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut vol = Self::zeros(dims, voxel_size);
        let [nd, nh, nw] = dims;
        let mut i = 0;
        for d in 0..nd {
            for h in 0..nh {
                for w in 0..nw {
                    vol.data[i] = f(d, h, w);
                    i += 1;
                }
            }
        }
        vol
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(d, h, w)]
    }

    #[inline]
    pub fn set(&mut self, d: usize, h: usize, w: usize, v: f32) {
        let i = self.index(d, h, w);
        self.data[i] = v;
    }

    /// Geometric center in voxel coordinates, `(x, y, z)`.
    pub fn center_xyz(&self) -> [f64; 3] {
        [
            (self.dims[2] as f64 - 1.0) / 2.0,
            (self.dims[1] as f64 - 1.0) / 2.0,
            (self.dims[0] as f64 - 1.0) / 2.0,
        ]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Population variance over every voxel.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.data
            .iter()
            .map(|&v| {
                let e = v as f64 - mean;
                e * e
            })
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Trilinear sample at continuous `(x, y, z)` voxel coordinates; zero
    /// outside the grid. Coordinates within 1e-9 of an integer snap to it so
    /// that integer-aligned resampling is exact.
    pub fn sample_trilinear(&self, x: f64, y: f64, z: f64) -> f64 {
        let [nd, nh, nw] = self.dims;
        let (x0, fx) = split_coord(x);
        let (y0, fy) = split_coord(y);
        let (z0, fz) = split_coord(z);
        let mut acc = 0.0;
        for (dz, wz) in [(0i64, 1.0 - fz), (1, fz)] {
            if wz == 0.0 {
                continue;
            }
            let zi = z0 + dz;
            if zi < 0 || zi >= nd as i64 {
                continue;
            }
            for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
                if wy == 0.0 {
                    continue;
                }
                let yi = y0 + dy;
                if yi < 0 || yi >= nh as i64 {
                    continue;
                }
                for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
                    if wx == 0.0 {
                        continue;
                    }
                    let xi = x0 + dx;
                    if xi < 0 || xi >= nw as i64 {
                        continue;
                    }
                    acc += wz * wy * wx * self.get(zi as usize, yi as usize, xi as usize) as f64;
                }
            }
        }
        acc
    }

    /// Copies the box starting at `start` (d, h, w) with extent `dims`.
    pub fn crop(&self, start: [usize; 3], dims: [usize; 3]) -> Result<DensityVolume> {
        for a in 0..3 {
            if start[a] + dims[a] > self.dims[a] {
                return Err(Error::Shape(format!(
                    "crop {start:?}+{dims:?} exceeds volume {:?}",
                    self.dims
                )));
            }
        }
        let mut out = DensityVolume::zeros(dims, self.voxel_size);
        for d in 0..dims[0] {
            for h in 0..dims[1] {
                let src = self.index(start[0] + d, start[1] + h, start[2]);
                let dst = out.index(d, h, 0);
                out.data[dst..dst + dims[2]].copy_from_slice(&self.data[src..src + dims[2]]);
            }
        }
        out.origin = [
            self.origin[0] + start[2] as f32 * self.voxel_size,
            self.origin[1] + start[1] as f32 * self.voxel_size,
            self.origin[2] + start[0] as f32 * self.voxel_size,
        ];
        Ok(out)
    }

    /// Periodic shift: `out[i] = self[i - shift]` on each axis.
    pub fn circshift(&self, shift: [i64; 3]) -> DensityVolume {
        let [nd, nh, nw] = self.dims;
        let mut out = self.clone();
        for d in 0..nd {
            let sd = (d as i64 - shift[0]).rem_euclid(nd as i64) as usize;
            for h in 0..nh {
                let sh = (h as i64 - shift[1]).rem_euclid(nh as i64) as usize;
                for w in 0..nw {
                    let sw = (w as i64 - shift[2]).rem_euclid(nw as i64) as usize;
                    out.data[(d * nh + h) * nw + w] = self.data[(sd * nh + sh) * nw + sw];
                }
            }
        }
        out
    }
}

#[inline]
fn split_coord(v: f64) -> (i64, f64) {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        return (r as i64, 0.0);
    }
    let f = v.floor();
    (f as i64, v - f)
}

/// Row-major 2D image, `(row = y, col = x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2 {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image2 {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values supplied for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Periodic integer shift: `out[y][x] = self[y - dy][x - dx]`.
    pub fn circshift(&self, dy: i64, dx: i64) -> Image2 {
        Image2::from_fn(self.height, self.width, |y, x| {
            let sy = (y as i64 - dy).rem_euclid(self.height as i64) as usize;
            let sx = (x as i64 - dx).rem_euclid(self.width as i64) as usize;
            self.get(sy, sx)
        })
    }

    pub fn scaled(&self, a: f64) -> Image2 {
        Image2 {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }
}

/// Pearson correlation of two equally sized sample sets.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    sab / (saa * sbb).sqrt()
}
