//! Discrete operators `H`, `H⊥`, `𝒫` and the incidence matrices `D`, `L`.
//!
//! `H = (ħ²/2m) D S″ (l′)⁻¹ Dᵀ + V″ diag(U)` and `H⊥ = (ħ²/2m) L (n̂·) S″_b`.
//! Stepping uses the matrix-free stencils; the assembled sparse forms exist for
//! spectral checks on small grids and for debugging dumps.

use std::io::Write;

use rayon::prelude::*;
use sprs::{CsMat, TriMat};

use crate::constants::PhysicalConstants;
use crate::error::{check_len, Error, Result};
use crate::grid::{Axis, Face, Metrics, RegionGrid};

/// Largest node count for which explicit sparse assembly is allowed.
pub const ASSEMBLY_LIMIT: usize = 200_000;

#[derive(Debug, Clone)]
pub struct Operators {
    grid: RegionGrid,
    constants: PhysicalConstants,
    potential: Vec<f64>,
    metrics: Metrics,
    /// `V″ U` per node.
    vu: Vec<f64>,
    /// `(ħ²/2m) S″/l′` for the x, y and z edge families, indexed by the
    /// transverse node pair of the edge: x by `(j, k)`, y by `(i, k)`, z by `(i, j)`.
    wx: Vec<f64>,
    wy: Vec<f64>,
    wz: Vec<f64>,
    /// `(ħ²/2m)(n̂·)S″_b` per hanging variable.
    hbot_coef: Vec<f64>,
    hang_node: Vec<usize>,
}

impl Operators {
    pub fn new(grid: RegionGrid, constants: PhysicalConstants, potential: Vec<f64>) -> Result<Self> {
        check_len(grid.node_count(), potential.len())?;
        if let Some(p) = potential.iter().position(|u| !u.is_finite()) {
            return Err(Error::InvalidInput(format!("potential is not finite at node offset {p}")));
        }
        let metrics = grid.metrics();
        let c = constants.kinetic_prefactor();
        let vu = metrics.volume.iter().zip(&potential).map(|(v, u)| v * u).collect();
        let [mx, my, mz] = grid.node_dims();
        let mut wx = vec![0.0; my * mz];
        let mut wy = vec![0.0; mx * mz];
        let mut wz = vec![0.0; mx * my];
        for k in 0..mz {
            for j in 0..my {
                wx[j + my * k] = c * grid.edge_area(Axis::X, 0, j, k) / grid.dx;
            }
            for i in 0..mx {
                wy[i + mx * k] = c * grid.edge_area(Axis::Y, i, 0, k) / grid.dy;
            }
        }
        for j in 0..my {
            for i in 0..mx {
                wz[i + mx * j] = c * grid.edge_area(Axis::Z, i, j, 0) / grid.dz;
            }
        }
        let hbot_coef = metrics.boundary_area.iter().zip(&metrics.normal_sign).map(|(a, s)| c * s * a).collect();
        let mut hang_node = Vec::with_capacity(grid.hanging_count());
        for face in Face::ALL {
            hang_node.extend(grid.face_nodes(face));
        }
        Ok(Self { grid, constants, potential, metrics, vu, wx, wy, wz, hbot_coef, hang_node })
    }

    /// Zero potential.
    pub fn free(grid: RegionGrid, constants: PhysicalConstants) -> Result<Self> {
        let n = grid.node_count();
        Self::new(grid, constants, vec![0.0; n])
    }

    pub fn grid(&self) -> &RegionGrid {
        &self.grid
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// Diagonal of `V″`.
    pub fn volume(&self) -> &[f64] {
        &self.metrics.volume
    }

    pub fn node_count(&self) -> usize {
        self.grid.node_count()
    }

    pub fn hanging_count(&self) -> usize {
        self.hang_node.len()
    }

    /// `(ħ²/2m)(n̂·)S″_b` for each hanging variable.
    pub fn hbot_coefficients(&self) -> &[f64] {
        &self.hbot_coef
    }

    /// Storage offset of the node collocated with each hanging variable.
    pub fn hanging_nodes(&self) -> &[usize] {
        &self.hang_node
    }

    pub fn max_abs_potential(&self) -> f64 {
        self.potential.iter().fold(0.0, |m, u| m.max(u.abs()))
    }

    pub fn min_potential(&self) -> f64 {
        self.potential.iter().fold(f64::INFINITY, |m, &u| m.min(u))
    }

    /// `(Hψ)` at a single node given by 0-based `(i, j, k)`.
    #[inline]
    pub(crate) fn apply_h_node(&self, psi: &[f64], i: usize, j: usize, k: usize) -> f64 {
        let g = &self.grid;
        let [mx, my, _] = g.node_dims();
        let sx = 1;
        let sy = mx;
        let sz = mx * my;
        let p = i + mx * (j + my * k);
        let v = psi[p];
        let mut acc = 0.0;
        let w = self.wx[j + my * k];
        if i > 0 {
            acc += w * (v - psi[p - sx]);
        }
        if i < g.nx {
            acc += w * (v - psi[p + sx]);
        }
        let w = self.wy[i + mx * k];
        if j > 0 {
            acc += w * (v - psi[p - sy]);
        }
        if j < g.ny {
            acc += w * (v - psi[p + sy]);
        }
        let w = self.wz[i + mx * j];
        if k > 0 {
            acc += w * (v - psi[p - sz]);
        }
        if k < g.nz {
            acc += w * (v - psi[p + sz]);
        }
        acc + self.vu[p] * v
    }

    /// Matrix-free `out = Hψ`. Each output row is written by one worker, so
    /// the result does not depend on the thread count.
    pub fn apply_h_into(&self, psi: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.node_count(), psi.len())?;
        check_len(self.node_count(), out.len())?;
        let mx = self.grid.nx + 1;
        let my = self.grid.ny + 1;
        out.par_chunks_mut(mx).enumerate().for_each(|(row, chunk)| {
            let (j, k) = (row % my, row / my);
            for (i, o) in chunk.iter_mut().enumerate() {
                *o = self.apply_h_node(psi, i, j, k);
            }
        });
        Ok(())
    }

    pub fn apply_h(&self, psi: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.node_count()];
        self.apply_h_into(psi, &mut out)?;
        Ok(out)
    }

    /// `H⊥ g` scattered onto the collocated boundary nodes.
    pub fn apply_hbot(&self, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.hanging_count(), g.len())?;
        let mut out = vec![0.0; self.node_count()];
        for (h, &val) in g.iter().enumerate() {
            out[self.hang_node[h]] += self.hbot_coef[h] * val;
        }
        Ok(out)
    }

    /// `H⊥ᵀ ψ`: one value per hanging variable.
    pub fn transpose_apply_hbot(&self, psi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.node_count(), psi.len())?;
        Ok(self.hang_node.iter().zip(&self.hbot_coef).map(|(&p, c)| c * psi[p]).collect())
    }

    /// `Σv = (1/ħ) V″^(−½) H V″^(−½) v`.
    pub fn apply_sigma(&self, v: &[f64]) -> Result<Vec<f64>> {
        let scaled: Vec<f64> = v.iter().zip(&self.metrics.volume).map(|(x, vol)| x / vol.sqrt()).collect();
        let mut out = self.apply_h(&scaled)?;
        let hbar = self.constants.hbar;
        out.par_iter_mut().zip(self.metrics.volume.par_iter()).for_each(|(o, vol)| *o /= vol.sqrt() * hbar);
        Ok(out)
    }

    fn check_assembly(&self) -> Result<()> {
        let n = self.node_count();
        if n > ASSEMBLY_LIMIT {
            Err(Error::TooLarge { nodes: n, limit: ASSEMBLY_LIMIT })
        } else {
            Ok(())
        }
    }

    /// Incidence matrix `D` (nodes × edges): +1 at the tail, −1 at the head.
    pub fn assemble_d(&self) -> Result<CsMat<f64>> {
        self.check_assembly()?;
        let ends = self.grid.edge_endpoints();
        let mut t = TriMat::new((self.node_count(), ends.len()));
        for (e, &(tail, head)) in ends.iter().enumerate() {
            t.add_triplet(tail, e, 1.0);
            t.add_triplet(head, e, -1.0);
        }
        Ok(t.to_csc())
    }

    /// Boundary matrix `L` (nodes × hanging variables).
    pub fn assemble_l(&self) -> Result<CsMat<f64>> {
        self.check_assembly()?;
        let mut t = TriMat::new((self.node_count(), self.hanging_count()));
        for (h, &p) in self.hang_node.iter().enumerate() {
            t.add_triplet(p, h, 1.0);
        }
        Ok(t.to_csc())
    }

    /// Sparse symmetric `H`. Off-diagonal entries come from a single edge each,
    /// so the assembled matrix is exactly symmetric.
    pub fn assemble_h(&self) -> Result<CsMat<f64>> {
        self.check_assembly()?;
        let n = self.node_count();
        let c = self.constants.kinetic_prefactor();
        let ends = self.grid.edge_endpoints();
        let mut diag = self.vu.clone();
        let mut t = TriMat::with_capacity((n, n), n + 2 * ends.len());
        for (e, &(tail, head)) in ends.iter().enumerate() {
            let w = c * self.metrics.area[e] / self.metrics.length[e];
            diag[tail] += w;
            diag[head] += w;
            t.add_triplet(tail, head, -w);
            t.add_triplet(head, tail, -w);
        }
        for (p, d) in diag.into_iter().enumerate() {
            t.add_triplet(p, p, d);
        }
        Ok(t.to_csr())
    }

    /// Sparse `H⊥` (nodes × hanging variables), one nonzero per column.
    pub fn assemble_hbot(&self) -> Result<CsMat<f64>> {
        self.check_assembly()?;
        let mut t = TriMat::new((self.node_count(), self.hanging_count()));
        for (h, (&p, &c)) in self.hang_node.iter().zip(&self.hbot_coef).enumerate() {
            t.add_triplet(p, h, c);
        }
        Ok(t.to_csr())
    }

    /// `𝒫 = [[V″, −(Δt/2ħ)H], [−(Δt/2ħ)H, V″]]`.
    pub fn assemble_p(&self, dt: f64) -> Result<CsMat<f64>> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let h = self.assemble_h()?;
        let n = self.node_count();
        let s = -dt / (2.0 * self.constants.hbar);
        let mut t = TriMat::with_capacity((2 * n, 2 * n), 2 * n + 2 * h.nnz());
        for (p, &v) in self.metrics.volume.iter().enumerate() {
            t.add_triplet(p, p, v);
            t.add_triplet(n + p, n + p, v);
        }
        for (val, (r, c)) in h.iter() {
            t.add_triplet(r, n + c, s * val);
            t.add_triplet(n + r, c, s * val);
        }
        Ok(t.to_csr())
    }

    /// Operators of one primary cell with the potential restricted to its
    /// eight corners. Cell `(i, j, k)` is 0-based by its lowest corner.
    pub fn cell_operators(&self, i: usize, j: usize, k: usize) -> Result<Operators> {
        let nodes = self.grid.cell_nodes(i, j, k);
        let pot = nodes.iter().map(|&p| self.potential[p]).collect();
        Operators::new(self.grid.cell_grid(i, j, k), self.constants, pot)
    }
}

/// Dense copy of a sparse matrix.
pub fn to_dense(m: &CsMat<f64>) -> nalgebra::DMatrix<f64> {
    let mut d = nalgebra::DMatrix::zeros(m.rows(), m.cols());
    for (v, (r, c)) in m.iter() {
        d[(r, c)] += *v;
    }
    d
}

/// Sparse matrix-vector product `m · x`.
pub fn spmv(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.rows()];
    for (v, (r, c)) in m.iter() {
        y[r] += v * x[c];
    }
    y
}

/// Write a sparse matrix as `row col value` lines (1-based, 17 significant digits).
pub fn write_coo<W: Write>(m: &CsMat<f64>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "% {} {} {}", m.rows(), m.cols(), m.nnz())?;
    let mut entries: Vec<(usize, usize, f64)> = m.iter().map(|(v, (r, c))| (r, c, *v)).collect();
    entries.sort_by_key(|&(r, c, _)| (r, c));
    for (r, c, v) in entries {
        writeln!(w, "{} {} {:.16e}", r + 1, c + 1, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ops(cells: [usize; 3], u_scale: f64, seed: u64) -> Operators {
        let g = RegionGrid::new(cells, [1e-9, 2e-9, 1.5e-9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = (0..g.node_count()).map(|_| u_scale * rng.gen_range(-1.0..1.0)).collect();
        Operators::new(g, PhysicalConstants::electron(), u).unwrap()
    }

    #[test]
    fn rejects_non_finite_potential() {
        let g = RegionGrid::new([1, 1, 1], [1.0; 3]).unwrap();
        let mut u = vec![0.0; 8];
        u[3] = f64::NAN;
        assert!(Operators::new(g, PhysicalConstants::electron(), u).is_err());
    }

    #[test]
    fn incidence_columns_sum_to_zero() {
        let o = ops([1, 1, 1], 0.0, 0);
        let d = o.assemble_d().unwrap();
        assert_eq!((d.rows(), d.cols()), (8, 12));
        let dd = to_dense(&d);
        for c in 0..12 {
            assert_eq!(dd.column(c).sum(), 0.0);
            assert_eq!(dd.column(c).iter().filter(|v| **v != 0.0).count(), 2);
        }
    }

    #[test]
    fn x_edge_column_signs() {
        let o = ops([2, 1, 1], 0.0, 0);
        let dd = to_dense(&o.assemble_d().unwrap());
        assert_eq!(dd[(o.grid().offset(0, 0, 0), 0)], 1.0);
        assert_eq!(dd[(o.grid().offset(1, 0, 0), 0)], -1.0);
    }

    #[test]
    fn boundary_matrix_shape_and_corner() {
        let o = ops([1, 1, 1], 0.0, 0);
        let l = to_dense(&o.assemble_l().unwrap());
        assert_eq!((l.nrows(), l.ncols()), (8, 24));
        assert_eq!(l.row(0).sum(), 3.0);
    }

    #[test]
    fn h_matches_factored_definition() {
        let o = ops([2, 3, 2], 1e-20, 3);
        let d = o.assemble_d().unwrap();
        let m = o.metrics();
        let c = o.constants().kinetic_prefactor();
        let w: Vec<f64> = m.area.iter().zip(&m.length).map(|(a, l)| c * a / l).collect();
        let mut diag_w = TriMat::new((w.len(), w.len()));
        for (e, &x) in w.iter().enumerate() {
            diag_w.add_triplet(e, e, x);
        }
        let dw: CsMat<f64> = &d * &diag_w.to_csc::<usize>();
        let dt = d.transpose_view().to_csc();
        let k = to_dense(&(&dw * &dt));
        let mut expected = k;
        for p in 0..o.node_count() {
            expected[(p, p)] += m.volume[p] * o.potential()[p];
        }
        let h = to_dense(&o.assemble_h().unwrap());
        let scale = h.amax();
        assert!((h.clone() - expected).amax() <= 1e-15 * scale);
        assert_eq!(h.clone(), h.transpose());
    }

    #[test]
    fn matrix_free_h_matches_assembled() {
        let o = ops([3, 2, 4], 1e-20, 7);
        let h = o.assemble_h().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let v: Vec<f64> = (0..o.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = o.apply_h(&v).unwrap();
            let b = spmv(&h, &v);
            let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(diff <= 1e-14 * scale, "diff {diff:e} scale {scale:e}");
        }
    }

    #[test]
    fn constants_are_in_the_kernel_for_zero_potential() {
        let o = ops([3, 3, 2], 0.0, 0);
        let out = o.apply_h(&vec![2.5; o.node_count()]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn interior_impulse_has_seven_point_footprint() {
        let o = ops([4, 4, 4], 0.0, 0);
        let g = o.grid().clone();
        let mut v = vec![0.0; g.node_count()];
        let p = g.offset(2, 2, 2);
        v[p] = 1.0;
        let out = o.apply_h(&v).unwrap();
        let c = o.constants().kinetic_prefactor();
        let (dx, dy, dz) = (g.dx, g.dy, g.dz);
        assert!((out[p] - 2.0 * c * (dy * dz / dx + dx * dz / dy + dx * dy / dz)).abs() <= 1e-15 * out[p].abs());
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b.abs();
        assert!(close(out[g.offset(3, 2, 2)], -c * dy * dz / dx));
        assert!(close(out[g.offset(2, 1, 2)], -c * dx * dz / dy));
        assert!(close(out[g.offset(2, 2, 3)], -c * dx * dy / dz));
        assert_eq!(out.iter().filter(|x| **x != 0.0).count(), 7);
    }

    #[test]
    fn hbot_scatter_signs_and_weights() {
        let o = ops([2, 2, 2], 0.0, 0);
        let g = o.grid().clone();
        let c = o.constants().kinetic_prefactor();
        let mut gv = vec![0.0; o.hanging_count()];
        let h = g.hanging_index(Face::West, 2, 2).unwrap() - 1;
        gv[h] = 1.0;
        let out = o.apply_hbot(&gv).unwrap();
        assert_eq!(out[g.offset(0, 1, 1)], -c * g.dy * g.dz);
        gv[h] = 0.0;
        let h = g.hanging_index(Face::West, 1, 1).unwrap() - 1;
        gv[h] = 1.0;
        let out = o.apply_hbot(&gv).unwrap();
        assert_eq!(out[g.offset(0, 0, 0)], -c * g.dy * g.dz / 4.0);
        let m = to_dense(&o.assemble_hbot().unwrap());
        for col in 0..m.ncols() {
            assert_eq!(m.column(col).iter().filter(|x| **x != 0.0).count(), 1);
        }
    }

    #[test]
    fn probability_matrix_blocks() {
        let o = ops([1, 1, 2], 1e-21, 5);
        let dt = 1e-16;
        let p = to_dense(&o.assemble_p(dt).unwrap());
        let h = to_dense(&o.assemble_h().unwrap());
        let n = o.node_count();
        let s = -dt / (2.0 * o.constants().hbar);
        for r in 0..n {
            assert_eq!(p[(r, r)], o.volume()[r]);
            for c in 0..n {
                assert_eq!(p[(r, n + c)], s * h[(r, c)]);
                assert_eq!(p[(n + r, c)], s * h[(r, c)]);
            }
        }
        assert_eq!(p.clone(), p.transpose());
    }

    #[test]
    fn coo_dump_round_trips_values() {
        let o = ops([1, 1, 1], 1e-21, 2);
        let h = o.assemble_h().unwrap();
        let mut buf = Vec::new();
        write_coo(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let dense = to_dense(&h);
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split_whitespace().collect();
            let (r, c): (usize, usize) = (f[0].parse().unwrap(), f[1].parse().unwrap());
            let v: f64 = f[2].parse().unwrap();
            assert_eq!(v, dense[(r - 1, c - 1)]);
        }
    }
}
