//! Rectangular staggered grid: indexing and the diagonal metric matrices.
//!
//! Primary nodes `(i, j, k)` run from `(1, 1, 1)` to `(nx+1, ny+1, nz+1)` and sit
//! at `origin + ((i-1)Δx, (j-1)Δy, (k-1)Δz)`. Linear node order is `i` fastest,
//! then `j`, then `k`. Edge vectors are stacked x-block, y-block, z-block.
//! Hanging variables are stacked per face in the order W, E, S, N, B, T.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// The six boundary faces of a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Face {
    West,
    East,
    South,
    North,
    Bottom,
    Top,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::West, Face::East, Face::South, Face::North, Face::Bottom, Face::Top];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Axis normal to the face.
    pub fn axis(self) -> Axis {
        match self {
            Face::West | Face::East => Axis::X,
            Face::South | Face::North => Axis::Y,
            Face::Bottom | Face::Top => Axis::Z,
        }
    }

    /// `n̂·` along the face axis: −1 on W/S/B, +1 on E/N/T.
    pub fn normal_sign(self) -> f64 {
        if self.is_low() {
            -1.0
        } else {
            1.0
        }
    }

    pub fn is_low(self) -> bool {
        matches!(self, Face::West | Face::South | Face::Bottom)
    }

    pub fn opposite(self) -> Face {
        match self {
            Face::West => Face::East,
            Face::East => Face::West,
            Face::South => Face::North,
            Face::North => Face::South,
            Face::Bottom => Face::Top,
            Face::Top => Face::Bottom,
        }
    }

    pub fn short_name(self) -> &'static str {
        ["W", "E", "S", "N", "B", "T"][self.index()]
    }
}

/// `Ĩ_m` diagonal entry: ½ at the two ends of `0..len`, 1 elsewhere.
#[inline]
pub fn tilde(pos: usize, len: usize) -> f64 {
    if pos == 0 || pos + 1 == len {
        0.5
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Coordinates of node (1,1,1) in meters.
    pub origin: [f64; 3],
}

/// Diagonals of `V″`, `S″`, `l′`, `S″_b` and `(n̂·)` as flat vectors.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub volume: Vec<f64>,
    pub area: Vec<f64>,
    pub length: Vec<f64>,
    pub boundary_area: Vec<f64>,
    pub normal_sign: Vec<f64>,
}

impl RegionGrid {
    pub fn new(cells: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if cells.contains(&0) {
            return Err(Error::InvalidInput(format!("cell counts must be >= 1, got {cells:?}")));
        }
        if spacing.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput(format!("cell sizes must be positive, got {spacing:?}")));
        }
        Ok(Self {
            nx: cells[0],
            ny: cells[1],
            nz: cells[2],
            dx: spacing[0],
            dy: spacing[1],
            dz: spacing[2],
            origin: [0.0; 3],
        })
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn cells(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn spacing(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    /// Nodes per axis, `[nx+1, ny+1, nz+1]`.
    pub fn node_dims(&self) -> [usize; 3] {
        [self.nx + 1, self.ny + 1, self.nz + 1]
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    pub fn edge_count(&self, axis: Axis) -> usize {
        let [mx, my, mz] = self.node_dims();
        match axis {
            Axis::X => self.nx * my * mz,
            Axis::Y => mx * self.ny * mz,
            Axis::Z => mx * my * self.nz,
        }
    }

    pub fn total_edge_count(&self) -> usize {
        Axis::ALL.iter().map(|&a| self.edge_count(a)).sum()
    }

    fn edge_block_offset(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => 0,
            Axis::Y => self.edge_count(Axis::X),
            Axis::Z => self.edge_count(Axis::X) + self.edge_count(Axis::Y),
        }
    }

    /// Number of hanging variables on one face.
    pub fn face_len(&self, face: Face) -> usize {
        let [mx, my, mz] = self.node_dims();
        match face.axis() {
            Axis::X => my * mz,
            Axis::Y => mx * mz,
            Axis::Z => mx * my,
        }
    }

    /// Offset of the face's block in the stacked hanging-variable vector.
    pub fn face_offset(&self, face: Face) -> usize {
        Face::ALL[..face.index()].iter().map(|&f| self.face_len(f)).sum()
    }

    pub fn hanging_count(&self) -> usize {
        Face::ALL.iter().map(|&f| self.face_len(f)).sum()
    }

    /// 0-based storage offset of 0-based node `(i, j, k)`.
    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.nx + 1) * (j + (self.ny + 1) * k)
    }

    /// 0-based `(i, j, k)` of a storage offset.
    #[inline]
    pub fn triple(&self, offset: usize) -> (usize, usize, usize) {
        let mx = self.nx + 1;
        let my = self.ny + 1;
        (offset % mx, (offset / mx) % my, offset / (mx * my))
    }

    fn check_node(&self, i: usize, j: usize, k: usize) -> Result<()> {
        let [mx, my, mz] = self.node_dims();
        if (1..=mx).contains(&i) && (1..=my).contains(&j) && (1..=mz).contains(&k) {
            Ok(())
        } else {
            Err(Error::Index(format!("node ({i},{j},{k}) outside 1..={mx} x 1..={my} x 1..={mz}")))
        }
    }

    /// 1-based linear index of 1-based node `(i, j, k)`:
    /// `i + (j−1)(nx+1) + (k−1)(nx+1)(ny+1)`.
    pub fn node_index(&self, i: usize, j: usize, k: usize) -> Result<usize> {
        self.check_node(i, j, k)?;
        Ok(self.offset(i - 1, j - 1, k - 1) + 1)
    }

    /// Inverse of [`node_index`](Self::node_index).
    pub fn node_triple(&self, index: usize) -> Result<(usize, usize, usize)> {
        if index == 0 || index > self.node_count() {
            return Err(Error::Index(format!("node index {index} outside 1..={}", self.node_count())));
        }
        let (i, j, k) = self.triple(index - 1);
        Ok((i + 1, j + 1, k + 1))
    }

    /// 1-based global index of a primary edge in the stacked edge vector.
    ///
    /// The edge is named by its tail node: the x-edge `(i+½, j, k)` is
    /// `edge_index(Axis::X, i, j, k)`.
    pub fn edge_index(&self, axis: Axis, i: usize, j: usize, k: usize) -> Result<usize> {
        let [mx, my, mz] = self.node_dims();
        let (ex, ey, ez) = match axis {
            Axis::X => (self.nx, my, mz),
            Axis::Y => (mx, self.ny, mz),
            Axis::Z => (mx, my, self.nz),
        };
        if !((1..=ex).contains(&i) && (1..=ey).contains(&j) && (1..=ez).contains(&k)) {
            return Err(Error::Index(format!("{axis:?}-edge with tail ({i},{j},{k}) does not exist")));
        }
        let local = (i - 1) + ex * ((j - 1) + ey * (k - 1));
        Ok(self.edge_block_offset(axis) + local + 1)
    }

    /// Inverse of [`edge_index`](Self::edge_index): axis and 1-based tail node.
    pub fn edge_triple(&self, index: usize) -> Result<(Axis, usize, usize, usize)> {
        if index == 0 || index > self.total_edge_count() {
            return Err(Error::Index(format!("edge index {index} out of range")));
        }
        let mut local = index - 1;
        let [mx, my, _] = self.node_dims();
        for axis in Axis::ALL {
            let n = self.edge_count(axis);
            if local < n {
                let (ex, ey) = match axis {
                    Axis::X => (self.nx, my),
                    Axis::Y => (mx, self.ny),
                    Axis::Z => (mx, my),
                };
                return Ok((axis, local % ex + 1, (local / ex) % ey + 1, local / (ex * ey) + 1));
            }
            local -= n;
        }
        unreachable!()
    }

    /// Transverse node dimensions of a face as `(fast, slow)` lengths.
    fn face_dims(&self, face: Face) -> (usize, usize) {
        let [mx, my, mz] = self.node_dims();
        match face.axis() {
            Axis::X => (my, mz),
            Axis::Y => (mx, mz),
            Axis::Z => (mx, my),
        }
    }

    /// 1-based global hanging-variable index for 1-based transverse indices
    /// `(a, b)`: `(j, k)` on W/E, `(i, k)` on S/N, `(i, j)` on B/T.
    pub fn hanging_index(&self, face: Face, a: usize, b: usize) -> Result<usize> {
        let (fa, fb) = self.face_dims(face);
        if !((1..=fa).contains(&a) && (1..=fb).contains(&b)) {
            return Err(Error::Index(format!("hanging variable ({a},{b}) not on face {face:?}")));
        }
        Ok(self.face_offset(face) + (a - 1) + fa * (b - 1) + 1)
    }

    /// Storage offset of the node collocated with the `local`-th (0-based)
    /// hanging variable of `face`.
    #[inline]
    pub fn face_node(&self, face: Face, local: usize) -> usize {
        let (fa, _) = self.face_dims(face);
        let (a, b) = (local % fa, local / fa);
        match face {
            Face::West => self.offset(0, a, b),
            Face::East => self.offset(self.nx, a, b),
            Face::South => self.offset(a, 0, b),
            Face::North => self.offset(a, self.ny, b),
            Face::Bottom => self.offset(a, b, 0),
            Face::Top => self.offset(a, b, self.nz),
        }
    }

    /// Storage offsets of a face's nodes in hanging-variable order.
    pub fn face_nodes(&self, face: Face) -> Vec<usize> {
        (0..self.face_len(face)).map(|l| self.face_node(face, l)).collect()
    }

    /// Whether 0-based node `(i, j, k)` lies on `face`.
    #[inline]
    pub fn on_face(&self, face: Face, i: usize, j: usize, k: usize) -> bool {
        match face {
            Face::West => i == 0,
            Face::East => i == self.nx,
            Face::South => j == 0,
            Face::North => j == self.ny,
            Face::Bottom => k == 0,
            Face::Top => k == self.nz,
        }
    }

    /// Number of distinct boundary faces the node lies on (0 to 3).
    pub fn boundary_face_count(&self, offset: usize) -> usize {
        let (i, j, k) = self.triple(offset);
        Face::ALL.iter().filter(|&&f| self.on_face(f, i, j, k)).count()
    }

    /// Position of a node in meters.
    pub fn position(&self, offset: usize) -> [f64; 3] {
        let (i, j, k) = self.triple(offset);
        [self.origin[0] + i as f64 * self.dx, self.origin[1] + j as f64 * self.dy, self.origin[2] + k as f64 * self.dz]
    }

    /// Secondary-cell volume of 1-based node `(i, j, k)`.
    pub fn secondary_volume(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        self.check_node(i, j, k)?;
        Ok(self.volume_at(i - 1, j - 1, k - 1))
    }

    #[inline]
    pub(crate) fn volume_at(&self, i: usize, j: usize, k: usize) -> f64 {
        let [mx, my, mz] = self.node_dims();
        self.cell_volume() * tilde(i, mx) * tilde(j, my) * tilde(k, mz)
    }

    /// Secondary-face area pierced by an edge along `axis` whose tail is the
    /// 0-based node `(i, j, k)`.
    #[inline]
    pub(crate) fn edge_area(&self, axis: Axis, i: usize, j: usize, k: usize) -> f64 {
        let [mx, my, mz] = self.node_dims();
        match axis {
            Axis::X => self.dy * self.dz * tilde(j, my) * tilde(k, mz),
            Axis::Y => self.dx * self.dz * tilde(i, mx) * tilde(k, mz),
            Axis::Z => self.dx * self.dy * tilde(i, mx) * tilde(j, my),
        }
    }

    pub fn edge_length(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.dx,
            Axis::Y => self.dy,
            Axis::Z => self.dz,
        }
    }

    /// Area of the secondary-cell face pierced by the `local`-th hanging
    /// variable of `face`.
    pub fn hanging_area(&self, face: Face, local: usize) -> f64 {
        let (fa, fb) = self.face_dims(face);
        let (a, b) = (local % fa, local / fa);
        let w = tilde(a, fa) * tilde(b, fb);
        match face.axis() {
            Axis::X => self.dy * self.dz * w,
            Axis::Y => self.dx * self.dz * w,
            Axis::Z => self.dx * self.dy * w,
        }
    }

    pub fn metrics(&self) -> Metrics {
        let n = self.node_count();
        let volume = (0..n)
            .map(|p| {
                let (i, j, k) = self.triple(p);
                self.volume_at(i, j, k)
            })
            .collect();
        let mut area = Vec::with_capacity(self.total_edge_count());
        let mut length = Vec::with_capacity(self.total_edge_count());
        let [mx, my, mz] = self.node_dims();
        for axis in Axis::ALL {
            let (ex, ey, ez) = match axis {
                Axis::X => (self.nx, my, mz),
                Axis::Y => (mx, self.ny, mz),
                Axis::Z => (mx, my, self.nz),
            };
            for k in 0..ez {
                for j in 0..ey {
                    for i in 0..ex {
                        area.push(self.edge_area(axis, i, j, k));
                        length.push(self.edge_length(axis));
                    }
                }
            }
        }
        let mut boundary_area = Vec::with_capacity(self.hanging_count());
        let mut normal_sign = Vec::with_capacity(self.hanging_count());
        for face in Face::ALL {
            for l in 0..self.face_len(face) {
                boundary_area.push(self.hanging_area(face, l));
                normal_sign.push(face.normal_sign());
            }
        }
        Metrics { volume, area, length, boundary_area, normal_sign }
    }

    /// Tail and head storage offsets of every edge, in stacked edge order.
    pub fn edge_endpoints(&self) -> Vec<(usize, usize)> {
        let [mx, my, mz] = self.node_dims();
        let mut out = Vec::with_capacity(self.total_edge_count());
        for axis in Axis::ALL {
            let (ex, ey, ez, step) = match axis {
                Axis::X => (self.nx, my, mz, self.offset(1, 0, 0)),
                Axis::Y => (mx, self.ny, mz, self.offset(0, 1, 0)),
                Axis::Z => (mx, my, self.nz, self.offset(0, 0, 1)),
            };
            for k in 0..ez {
                for j in 0..ey {
                    for i in 0..ex {
                        let tail = self.offset(i, j, k);
                        out.push((tail, tail + step));
                    }
                }
            }
        }
        out
    }

    /// Grid of the single primary cell whose lowest corner is 0-based node
    /// `(i, j, k)`.
    pub fn cell_grid(&self, i: usize, j: usize, k: usize) -> RegionGrid {
        RegionGrid {
            nx: 1,
            ny: 1,
            nz: 1,
            dx: self.dx,
            dy: self.dy,
            dz: self.dz,
            origin: [
                self.origin[0] + i as f64 * self.dx,
                self.origin[1] + j as f64 * self.dy,
                self.origin[2] + k as f64 * self.dz,
            ],
        }
    }

    /// Storage offsets of the eight corners of cell `(i, j, k)`, in the
    /// single-cell grid's node order.
    pub fn cell_nodes(&self, i: usize, j: usize, k: usize) -> [usize; 8] {
        let mut out = [0; 8];
        for (n, slot) in out.iter_mut().enumerate() {
            *slot = self.offset(i + (n & 1), j + ((n >> 1) & 1), k + ((n >> 2) & 1));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g243() -> RegionGrid {
        RegionGrid::new([2, 4, 3], [1.0, 2.0, 3.0]).unwrap()
    }

    #[test]
    fn node_index_matches_layout_formula() {
        let g = g243();
        assert_eq!(g.node_index(1, 1, 1).unwrap(), 1);
        assert_eq!(g.node_index(2, 3, 1).unwrap(), 8);
        assert!(g.node_index(0, 1, 1).is_err());
        assert!(g.node_index(4, 1, 1).is_err());
    }

    #[test]
    fn edge_blocks_are_stacked() {
        let g = g243();
        assert_eq!(g.edge_index(Axis::X, 1, 1, 1).unwrap(), 1);
        assert_eq!(g.edge_index(Axis::Y, 1, 1, 1).unwrap(), g.edge_count(Axis::X) + 1);
        assert_eq!(g.edge_index(Axis::Z, 1, 1, 1).unwrap(), g.edge_count(Axis::X) + g.edge_count(Axis::Y) + 1);
        // x-edges: i + (j-1) nx + (k-1) nx (ny+1)
        assert_eq!(g.edge_index(Axis::X, 2, 3, 2).unwrap(), 2 + 2 * 2 + 2 * 5);
        assert!(g.edge_index(Axis::X, 3, 1, 1).is_err());
    }

    #[test]
    fn hanging_counts_and_layout() {
        let g = g243();
        assert_eq!(g.hanging_count(), 2 * 5 * 4 + 2 * 3 * 4 + 2 * 3 * 5);
        assert_eq!(g.hanging_index(Face::West, 1, 1).unwrap(), 1);
        assert_eq!(g.hanging_index(Face::East, 1, 1).unwrap(), 21);
        // S/N: i + (k-1)(nx+1)
        assert_eq!(g.hanging_index(Face::South, 2, 2).unwrap(), 40 + 2 + 3);
        let l = g.hanging_index(Face::Top, 3, 5).unwrap() - 1 - g.face_offset(Face::Top);
        assert_eq!(g.face_node(Face::Top, l), g.offset(2, 4, 3));
    }

    #[test]
    fn secondary_volumes() {
        let g = g243();
        assert_eq!(g.secondary_volume(2, 2, 2).unwrap(), 6.0);
        assert_eq!(g.secondary_volume(2, 2, 1).unwrap(), 3.0);
        assert_eq!(g.secondary_volume(3, 1, 1).unwrap(), 0.75);
    }

    #[test]
    fn single_cell_metrics() {
        let g = RegionGrid::new([1, 1, 1], [1.0, 2.0, 3.0]).unwrap();
        let m = g.metrics();
        assert!(m.volume.iter().all(|&v| v == 6.0 / 8.0));
        assert_eq!(&m.area[..4], &[6.0 / 4.0; 4]);
        assert_eq!(m.boundary_area.len(), 24);
    }

    #[test]
    fn cell_nodes_follow_single_cell_order() {
        let g = g243();
        let cell = g.cell_grid(1, 2, 0);
        let nodes = g.cell_nodes(1, 2, 0);
        for (n, &p) in nodes.iter().enumerate() {
            let (i, j, k) = cell.triple(n);
            assert_eq!(p, g.offset(1 + i, 2 + j, k));
        }
    }
}
