//! Collocated cell-centred field storage with a one-cell ghost halo.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::Face;

/// Quantities stored per cell. The last three are solver scratch space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    U,
    V,
    W,
    P,
    /// Intermediate velocity components.
    Us,
    Vs,
    Ws,
    /// Pressure right-hand side.
    Rhs,
    /// Multilevel residual.
    Res,
    /// Multilevel correction.
    Corr,
    /// Free scratch.
    Tmp,
}

impl Field {
    pub const COUNT: usize = 11;
    pub const ALL: [Field; Field::COUNT] = [
        Field::U,
        Field::V,
        Field::W,
        Field::P,
        Field::Us,
        Field::Vs,
        Field::Ws,
        Field::Rhs,
        Field::Res,
        Field::Corr,
        Field::Tmp,
    ];
    pub const VELOCITY: [Field; 3] = [Field::U, Field::V, Field::W];
    pub const INTERMEDIATE: [Field; 3] = [Field::Us, Field::Vs, Field::Ws];
    /// The quantities moved by the regular exchange cycle.
    pub const FLOW: [Field; 4] = [Field::U, Field::V, Field::W, Field::P];

    pub fn name(self) -> &'static str {
        match self {
            Field::U => "u",
            Field::V => "v",
            Field::W => "w",
            Field::P => "p",
            Field::Us => "u*",
            Field::Vs => "v*",
            Field::Ws => "w*",
            Field::Rhs => "rhs",
            Field::Res => "res",
            Field::Corr => "corr",
            Field::Tmp => "tmp",
        }
    }
}

/// Which layer next to a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// The ghost cells just outside the face.
    Ghost = 0,
    /// The interior cells adjacent to the face.
    Interior = 1,
}

pub const HALO: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    cells: [usize; 3],
    ext: [usize; 3],
    data: Vec<Vec<f64>>,
    solid: Vec<bool>,
    tables: Arc<IndexTables>,
}

/// Precomputed linear indices: ghost and interior layer of each face, and
/// the whole interior.
#[derive(Debug, Default, PartialEq)]
pub struct IndexTables {
    faces: [[Vec<usize>; 2]; 6],
    interior: Vec<usize>,
}

impl IndexTables {
    pub fn face(&self, face: Face, layer: Layer) -> &[usize] {
        &self.faces[face.index()][layer as usize]
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }
}

impl FieldSet {
    pub fn new(cells: [usize; 3]) -> Self {
        let ext = [
            cells[0] + 2 * HALO,
            cells[1] + 2 * HALO,
            cells[2] + 2 * HALO,
        ];
        let len = ext[0] * ext[1] * ext[2];
        let mut fs = Self {
            cells,
            ext,
            data: vec![vec![0.0; len]; Field::COUNT],
            solid: vec![false; len],
            tables: Arc::new(Default::default()),
        };
        let faces = Face::ALL.map(|f| {
            [Layer::Ghost, Layer::Interior].map(|layer| {
                fs.face_coords(f, layer)
                    .into_iter()
                    .map(|c| fs.idx(c[0], c[1], c[2]))
                    .collect()
            })
        });
        let interior = fs
            .interior_coords()
            .map(|c| fs.idx(c[0], c[1], c[2]))
            .collect();
        fs.tables = Arc::new(IndexTables { faces, interior });
        fs
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    /// Array extents including the halo.
    pub fn ext(&self) -> [usize; 3] {
        self.ext
    }

    pub fn len(&self) -> usize {
        self.ext[0] * self.ext[1] * self.ext[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn interior_len(&self) -> usize {
        self.cells.iter().product()
    }

    /// Linear index of halo-inclusive coordinates; interior cells are `1..=n` per axis.
    #[inline(always)]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.ext[0] * (j + self.ext[1] * k)
    }

    /// Linear offset of one step along `axis`.
    #[inline(always)]
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.ext[0],
            _ => self.ext[0] * self.ext[1],
        }
    }

    #[inline]
    pub fn get(&self, f: Field) -> &[f64] {
        &self.data[f as usize]
    }

    #[inline]
    pub fn get_mut(&mut self, f: Field) -> &mut [f64] {
        &mut self.data[f as usize]
    }

    /// Mutable access to `dst` while reading `src`.
    pub fn split_mut(&mut self, dst: Field, src: Field) -> (&mut [f64], &[f64]) {
        assert_ne!(dst, src);
        let (d, s) = (dst as usize, src as usize);
        if d < s {
            let (lo, hi) = self.data.split_at_mut(s);
            (&mut lo[d], &hi[0])
        } else {
            let (lo, hi) = self.data.split_at_mut(d);
            (&mut hi[0], &lo[s])
        }
    }

    /// Mutable access to `dst` while reading `a` and `b` (which may coincide).
    pub fn split3(&mut self, dst: Field, a: Field, b: Field) -> (&mut [f64], &[f64], &[f64]) {
        assert!(dst != a && dst != b);
        let (mut d, mut ra, mut rb) = (None, None, None);
        for (k, v) in self.data.iter_mut().enumerate() {
            if k == dst as usize {
                d = Some(&mut v[..]);
            } else if k == a as usize || k == b as usize {
                let r: &[f64] = v;
                if k == a as usize {
                    ra = Some(r);
                }
                if k == b as usize {
                    rb = Some(r);
                }
            }
        }
        (d.expect("dst"), ra.expect("a"), rb.expect("b"))
    }

    /// Copies the interior cells of `src` into `dst`.
    pub fn copy_interior(&mut self, dst: Field, src: Field) {
        let tables = Arc::clone(&self.tables);
        let (d, s) = self.split_mut(dst, src);
        for &i in &tables.interior {
            d[i] = s[i];
        }
    }

    pub fn fill(&mut self, f: Field, value: f64) {
        self.data[f as usize].iter_mut().for_each(|x| *x = value);
    }

    pub fn copy_field(&mut self, dst: Field, src: Field) {
        let (d, s) = self.split_mut(dst, src);
        d.copy_from_slice(s);
    }

    pub fn solid(&self) -> &[bool] {
        &self.solid
    }

    pub fn solid_mut(&mut self) -> &mut [bool] {
        &mut self.solid
    }

    /// Linear indices of all interior cells, x fastest.
    pub fn interior_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.tables.interior.iter().copied()
    }

    /// Shared handle on the precomputed index lists, for loops that write
    /// fields while walking them.
    pub fn index_tables(&self) -> Arc<IndexTables> {
        Arc::clone(&self.tables)
    }

    /// Shared slice form of [`FieldSet::interior_indices`].
    #[inline]
    pub fn interior(&self) -> &[usize] {
        &self.tables.interior
    }

    /// Halo-inclusive coordinates of all interior cells, x fastest.
    pub fn interior_coords(&self) -> impl Iterator<Item = [usize; 3]> {
        let [nx, ny, nz] = self.cells;
        (1..=nz).flat_map(move |k| (1..=ny).flat_map(move |j| (1..=nx).map(move |i| [i, j, k])))
    }

    /// Axes tangential to a face, ascending.
    pub fn tangential_axes(face: Face) -> [usize; 2] {
        match face.axis() {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    /// Number of cells in one face layer.
    pub fn face_len(&self, face: Face) -> usize {
        let [b, c] = Self::tangential_axes(face);
        self.cells[b] * self.cells[c]
    }

    /// Linear indices of one face layer; the lower tangential axis runs fastest.
    pub fn face_indices(&self, face: Face, layer: Layer) -> &[usize] {
        &self.tables.faces[face.index()][layer as usize]
    }

    /// Appends the values of one face layer to `out`.
    pub fn read_face(&self, f: Field, face: Face, layer: Layer, out: &mut Vec<f64>) {
        let d = &self.data[f as usize];
        out.extend(self.face_indices(face, layer).iter().map(|&i| d[i]));
    }

    pub fn write_face(&mut self, f: Field, face: Face, layer: Layer, values: &[f64]) {
        let idx = &self.tables.faces[face.index()][layer as usize];
        let d = &mut self.data[f as usize];
        for (&i, &v) in idx.iter().zip(values) {
            d[i] = v;
        }
    }

    /// Halo-inclusive coordinates matching [`FieldSet::face_indices`].
    pub fn face_coords(&self, face: Face, layer: Layer) -> Vec<[usize; 3]> {
        let a = face.axis();
        let [b, c] = Self::tangential_axes(face);
        let fixed = match (face.is_plus(), layer) {
            (false, Layer::Ghost) => 0,
            (false, Layer::Interior) => 1,
            (true, Layer::Interior) => self.cells[a],
            (true, Layer::Ghost) => self.cells[a] + 1,
        };
        let mut out = Vec::with_capacity(self.face_len(face));
        for kc in 1..=self.cells[c] {
            for kb in 1..=self.cells[b] {
                let mut ijk = [0usize; 3];
                ijk[a] = fixed;
                ijk[b] = kb;
                ijk[c] = kc;
                out.push(ijk);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_include_halo() {
        let fs = FieldSet::new([10, 10, 1]);
        assert_eq!(fs.ext(), [12, 12, 3]);
        assert_eq!(fs.len(), 12 * 12 * 3);
        assert_eq!(fs.get(Field::P).len(), fs.len());
        assert_eq!(fs.interior_indices().count(), 100);
    }

    #[test]
    fn face_layers_are_adjacent() {
        let fs = FieldSet::new([4, 3, 2]);
        for face in Face::ALL {
            let g = fs.face_indices(face, Layer::Ghost);
            let i = fs.face_indices(face, Layer::Interior);
            assert_eq!(g.len(), fs.face_len(face));
            let s = fs.stride(face.axis());
            for (gi, ii) in g.iter().zip(i) {
                if face.is_plus() {
                    assert_eq!(*gi, ii + s);
                } else {
                    assert_eq!(gi + s, *ii);
                }
            }
        }
    }

    #[test]
    fn split_mut_either_order() {
        let mut fs = FieldSet::new([2, 2, 1]);
        fs.fill(Field::U, 3.0);
        fs.copy_field(Field::Us, Field::U);
        assert!(fs.get(Field::Us).iter().all(|&x| x == 3.0));
        fs.fill(Field::Corr, 1.0);
        fs.copy_field(Field::P, Field::Corr);
        assert!(fs.get(Field::P).iter().all(|&x| x == 1.0));
    }
}
