use crate::error::{Error, Result};
use crate::model::geometry::ConeBeamGeometry;

/// Dense 3D attenuation map (1/mm), x fastest, z slowest.
///
/// The grid is centered on the rotation axis and its axial midplane lies
/// at the detector center row.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    voxel_size: f64,
    data: Vec<f32>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], voxel_size: f64) -> Self {
        Volume { dims, voxel_size, data: vec![0.0; dims.iter().product()] }
    }

    pub fn filled(dims: [usize; 3], voxel_size: f64, value: f32) -> Self {
        Volume { dims, voxel_size, data: vec![value; dims.iter().product()] }
    }

    pub fn from_data(dims: [usize; 3], voxel_size: f64, data: Vec<f32>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "volume {:?} needs {} values, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite voxel value at index {i}")));
        }
        Ok(Volume { dims, voxel_size, data })
    }

    /// Zero volume on the grid described by `g`.
    pub fn for_geometry(g: &ConeBeamGeometry) -> Self {
        Volume::zeros(g.vol_dims, g.voxel_size)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
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
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    /// Physical position (mm) of a voxel center.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        let c = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) * 0.5) * self.voxel_size;
        [c(x, self.dims[0]), c(y, self.dims[1]), c(z, self.dims[2])]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Axial slice `z` as a 2D image.
    pub fn slice(&self, z: usize) -> Slice {
        let n = self.slice_len();
        Slice { width: self.dims[0], height: self.dims[1], data: self.data[z * n..(z + 1) * n].to_vec() }
    }

    pub fn set_slice(&mut self, z: usize, s: &Slice) -> Result<()> {
        if s.width != self.dims[0] || s.height != self.dims[1] {
            return Err(Error::Dimension(format!(
                "slice {}x{} does not fit volume {:?}",
                s.width, s.height, self.dims
            )));
        }
        let n = self.slice_len();
        self.data[z * n..(z + 1) * n].copy_from_slice(&s.data);
        Ok(())
    }

    /// Copy of slices `[z0, z0 + nz)`.
    pub fn slab(&self, z0: usize, nz: usize) -> Volume {
        let n = self.slice_len();
        Volume {
            dims: [self.dims[0], self.dims[1], nz],
            voxel_size: self.voxel_size,
            data: self.data[z0 * n..(z0 + nz) * n].to_vec(),
        }
    }

    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Dimension(format!("volume is {:?}, expected {:?}", self.dims, dims)));
        }
        Ok(())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn from_f64(dims: [usize; 3], voxel_size: f64, data: &[f64]) -> Result<Self> {
        Volume::from_data(dims, voxel_size, data.iter().map(|&v| v as f32).collect())
    }
}

/// Log-normalized line integrals, `[view][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    n_views: usize,
    det_rows: usize,
    det_cols: usize,
    angles: Vec<f64>,
    data: Vec<f32>,
}

impl ProjectionSet {
    pub fn zeros(angles: Vec<f64>, det_rows: usize, det_cols: usize) -> Self {
        let n_views = angles.len();
        ProjectionSet { n_views, det_rows, det_cols, angles, data: vec![0.0; n_views * det_rows * det_cols] }
    }

    pub fn for_geometry(g: &ConeBeamGeometry) -> Self {
        ProjectionSet::zeros(g.angles.clone(), g.det_rows, g.det_cols)
    }

    pub fn from_data(angles: Vec<f64>, det_rows: usize, det_cols: usize, data: Vec<f32>) -> Result<Self> {
        let n_views = angles.len();
        let expected = n_views * det_rows * det_cols;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "projection set {}x{}x{} needs {} values, got {}",
                n_views,
                det_rows,
                det_cols,
                expected,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite projection value at index {i}")));
        }
        Ok(ProjectionSet { n_views, det_rows, det_cols, angles, data })
    }

    pub fn from_f64(g: &ConeBeamGeometry, data: &[f64]) -> Result<Self> {
        ProjectionSet::from_data(g.angles.clone(), g.det_rows, g.det_cols, data.iter().map(|&v| v as f32).collect())
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn det_rows(&self) -> usize {
        self.det_rows
    }

    pub fn det_cols(&self) -> usize {
        self.det_cols
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, view: usize, row: usize, col: usize) -> usize {
        (view * self.det_rows + row) * self.det_cols + col
    }

    #[inline]
    pub fn get(&self, view: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(view, row, col)]
    }

    /// One view as a `det_cols x det_rows` image.
    pub fn view(&self, v: usize) -> &[f32] {
        let n = self.det_rows * self.det_cols;
        &self.data[v * n..(v + 1) * n]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Views at indices `0, step, 2*step, ...`.
    pub fn subsample_views(&self, step: usize) -> ProjectionSet {
        let step = step.max(1);
        let n = self.det_rows * self.det_cols;
        let keep: Vec<usize> = (0..self.n_views).step_by(step).collect();
        let mut data = Vec::with_capacity(keep.len() * n);
        for &v in &keep {
            data.extend_from_slice(self.view(v));
        }
        ProjectionSet {
            n_views: keep.len(),
            det_rows: self.det_rows,
            det_cols: self.det_cols,
            angles: keep.iter().map(|&v| self.angles[v]).collect(),
            data,
        }
    }

    /// Checks that the set was acquired with `g`.
    pub fn check_geometry(&self, g: &ConeBeamGeometry) -> Result<()> {
        if self.n_views != g.n_views() || self.det_rows != g.det_rows || self.det_cols != g.det_cols {
            return Err(Error::Dimension(format!(
                "projections are {}x{}x{}, geometry expects {}x{}x{}",
                self.n_views,
                self.det_rows,
                self.det_cols,
                g.n_views(),
                g.det_rows,
                g.det_cols
            )));
        }
        if self.angles != g.angles {
            return Err(Error::Dimension("projection angles differ from geometry angles".into()));
        }
        Ok(())
    }

    pub(crate) fn map_values(&self, f: impl Fn(f32) -> f32) -> ProjectionSet {
        ProjectionSet { data: self.data.iter().map(|&v| f(v)).collect(), angles: self.angles.clone(), ..*self }
    }
}

/// A single 2D image, row-major with `width` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Slice {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "slice {}x{} needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Slice { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Slice { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_x_fastest() {
        let mut v = Volume::zeros([3, 4, 5], 1.0);
        let i = v.index(2, 1, 3);
        assert_eq!(i, (3 * 4 + 1) * 3 + 2);
        v.data_mut()[i] = 7.0;
        assert_eq!(v.slice(3).get(2, 1), 7.0);
        assert_eq!(v.slab(3, 1).get(2, 1, 0), 7.0);
    }

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(Volume::from_data([2, 2, 2], 1.0, vec![0.0; 7]).is_err());
        let mut d = vec![0.0; 8];
        d[3] = f32::NAN;
        assert!(matches!(Volume::from_data([2, 2, 2], 1.0, d), Err(Error::Numerical(_))));
        assert!(ProjectionSet::from_data(vec![0.0, 1.0], 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn voxel_centers_are_symmetric() {
        let v = Volume::zeros([4, 4, 3], 0.5);
        assert_eq!(v.voxel_center(0, 3, 1), [-0.75, 0.75, 0.0]);
    }

    #[test]
    fn projection_subsampling() {
        let mut p = ProjectionSet::zeros(vec![0.0, 1.0, 2.0, 3.0, 4.0], 1, 2);
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v = i as f32;
        }
        let s = p.subsample_views(2);
        assert_eq!(s.angles(), &[0.0, 2.0, 4.0]);
        assert_eq!(s.data(), &[0.0, 1.0, 4.0, 5.0, 8.0, 9.0]);
    }
}
