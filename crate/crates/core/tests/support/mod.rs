//! Independent reference implementations shared by the test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use xct_core::fdk::WeightTable;
use xct_core::linalg::DenseOperator;
use xct_core::ConeBeamGeometry;

/// Joseph projector written directly in world coordinates, one matrix row
/// per detector pixel.
pub fn dense_oracle(g: &ConeBeamGeometry) -> Vec<Vec<f64>> {
    let [nx, ny, nz] = g.vol_dims;
    let vs = g.voxel_size;
    let idx_of = |p: f64, n: usize| p / vs + (n as f64 - 1.0) / 2.0;
    let mut rows = Vec::new();
    for &theta in &g.angles {
        let (s, c) = theta.sin_cos();
        let src = [-g.sod * c, -g.sod * s, 0.0];
        for r in 0..g.det_rows {
            for col in 0..g.det_cols {
                let u = (col as f64 - (g.det_cols as f64 - 1.0) / 2.0) * g.pixel_pitch;
                let v = (r as f64 - (g.det_rows as f64 - 1.0) / 2.0) * g.pixel_pitch;
                let det = [(g.sdd - g.sod) * c - u * s, (g.sdd - g.sod) * s + u * c, v];
                let d = [det[0] - src[0], det[1] - src[1], det[2] - src[2]];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let mut row = vec![0.0; nx * ny * nz];
                let along_x = d[0].abs() >= d[1].abs();
                let (na, a) = if along_x { (nx, 0) } else { (ny, 1) };
                let step = vs * len / d[a].abs();
                for i in 0..na {
                    let plane = (i as f64 - (na as f64 - 1.0) / 2.0) * vs;
                    let t = (plane - src[a]) / d[a];
                    let p = [src[0] + t * d[0], src[1] + t * d[1], src[2] + t * d[2]];
                    let (bi, bn) = if along_x { (idx_of(p[1], ny), ny) } else { (idx_of(p[0], nx), nx) };
                    let zi = idx_of(p[2], nz);
                    for (zz, wz) in [(zi.floor(), 1.0 - (zi - zi.floor())), (zi.floor() + 1.0, (zi - zi.floor()))] {
                        for (bb, wb) in [(bi.floor(), 1.0 - (bi - bi.floor())), (bi.floor() + 1.0, (bi - bi.floor()))] {
                            if zz < 0.0 || bb < 0.0 || zz >= nz as f64 || bb >= bn as f64 {
                                continue;
                            }
                            let (x, y) = if along_x { (i, bb as usize) } else { (bb as usize, i) };
                            row[(zz as usize * ny + y) * nx + x] += step * wz * wb;
                        }
                    }
                }
                rows.push(row);
            }
        }
    }
    rows
}

/// Solves `(A^T A + beta I) x = A^T y + beta z` with an LU factorization.
pub fn direct_solve(a: &DenseOperator, y: &[f64], z: &[f64], beta: f64) -> Vec<f64> {
    let m = DMatrix::from_row_slice(a.rows, a.cols, &a.data);
    let lhs = m.transpose() * &m + DMatrix::identity(a.cols, a.cols) * beta;
    let rhs = m.transpose() * DVector::from_column_slice(y) + DVector::from_column_slice(z) * beta;
    lhs.lu().solve(&rhs).expect("regular system").as_slice().to_vec()
}

/// Weight at an arbitrary scan offset, linearly interpolated between views.
pub fn weight_at(t: &WeightTable, g: &ConeBeamGeometry, offset: f64, col: usize) -> f64 {
    let a = &g.angles;
    let beta = a[0] + offset;
    if beta < a[0] || beta > a[a.len() - 1] {
        return 0.0;
    }
    let step = (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64;
    let f = (beta - a[0]) / step;
    let i = (f.floor() as usize).min(a.len() - 2);
    let w = f - i as f64;
    (1.0 - w) * t.get(i, col) + w * t.get(i + 1, col)
}
