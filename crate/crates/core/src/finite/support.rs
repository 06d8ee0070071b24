use std::fmt;

/// Set of cells of the x-by-z grid (x-states index rows).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SupportSet {
    n_x: usize,
    n_z: usize,
    mask: Vec<bool>,
}

impl SupportSet {
    pub fn empty(n_x: usize, n_z: usize) -> Self {
        Self {
            n_x,
            n_z,
            mask: vec![false; n_x * n_z],
        }
    }

    pub fn full(n_x: usize, n_z: usize) -> Self {
        Self {
            n_x,
            n_z,
            mask: vec![true; n_x * n_z],
        }
    }

    pub fn from_fn(n_x: usize, n_z: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut s = Self::empty(n_x, n_z);
        for i in 0..n_x {
            for j in 0..n_z {
                s.set(i, j, f(i, j));
            }
        }
        s
    }

    /// Parses rows of `0`/`1` characters.
    pub fn from_strings(rows: &[&str]) -> Option<Self> {
        let n_z = rows.first()?.len();
        let mut s = Self::empty(rows.len(), n_z);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_z {
                return None;
            }
            for (j, c) in r.chars().enumerate() {
                match c {
                    '0' => {}
                    '1' => s.set(i, j, true),
                    _ => return None,
                }
            }
        }
        Some(s)
    }

    /// Rows rendered as `0`/`1` strings.
    pub fn to_strings(&self) -> Vec<String> {
        (0..self.n_x)
            .map(|i| (0..self.n_z).map(|j| if self.get(i, j) { '1' } else { '0' }).collect())
            .collect()
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.n_z + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.mask[i * self.n_z + j] = v;
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Rows containing at least one cell.
    pub fn proj_x(&self) -> Vec<bool> {
        (0..self.n_x).map(|i| (0..self.n_z).any(|j| self.get(i, j))).collect()
    }

    /// Columns containing at least one cell.
    pub fn proj_z(&self) -> Vec<bool> {
        (0..self.n_z).map(|j| (0..self.n_x).any(|i| self.get(i, j))).collect()
    }

    /// Cells of row `i` (the slice at a fixed x).
    pub fn row(&self, i: usize) -> Vec<bool> {
        (0..self.n_z).map(|j| self.get(i, j)).collect()
    }

    /// Cells of column `j` (the slice at a fixed z).
    pub fn col(&self, j: usize) -> Vec<bool> {
        (0..self.n_x).map(|i| self.get(i, j)).collect()
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_x).flat_map(move |i| (0..self.n_z).filter(move |&j| self.get(i, j)).map(move |j| (i, j)))
    }

    pub fn intersect(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!((self.n_x, self.n_z), (other.n_x, other.n_z), "support shapes differ");
        Self {
            n_x: self.n_x,
            n_z: self.n_z,
            mask: self.mask.iter().zip(&other.mask).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

impl fmt::Debug for SupportSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SupportSet[{}]", self.to_strings().join("/"))
    }
}
