use crate::error::{Error, Result};

/// Binary 2D mask, row-major, values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("Mask::new", "len", height * width, data.len()));
        }
        if let Some((index, &v)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(Error::NonBinary { value: v as f64, index });
        }
        Ok(Mask { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Mask { height, width, data }
    }

    /// Accepts reals that are exactly 0 or 1.
    pub fn from_reals(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len());
        for (index, &v) in values.iter().enumerate() {
            data.push(match v {
                0.0 => 0,
                1.0 => 1,
                _ => return Err(Error::NonBinary { value: v, index }),
            });
        }
        Mask::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Foreground pixel coordinates as `(row, col)`, row-major order.
    pub fn points(&self) -> Vec<(i64, i64)> {
        let mut pts = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    pts.push((r as i64, c as i64));
                }
            }
        }
        pts
    }

    /// Foreground pixels with at least one 4-neighbour outside the mask
    /// (image border counts as outside).
    pub fn boundary_points(&self) -> Vec<(i64, i64)> {
        let mut pts = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if !self.get(r, c) {
                    continue;
                }
                let edge = r == 0
                    || c == 0
                    || r + 1 == self.height
                    || c + 1 == self.width
                    || !self.get(r - 1, c)
                    || !self.get(r + 1, c)
                    || !self.get(r, c - 1)
                    || !self.get(r, c + 1);
                if edge {
                    pts.push((r as i64, c as i64));
                }
            }
        }
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary() {
        assert!(matches!(
            Mask::new(1, 2, vec![0, 2]),
            Err(Error::NonBinary { index: 1, .. })
        ));
        assert!(Mask::from_reals(1, 2, &[0.0, 0.5]).is_err());
        assert!(Mask::new(2, 2, vec![0, 1]).is_err());
    }

    #[test]
    fn boundary_of_filled_square() {
        let m = Mask::from_fn(5, 5, |r, c| (1..4).contains(&r) && (1..4).contains(&c));
        assert_eq!(m.count(), 9);
        assert_eq!(m.boundary_points().len(), 8);
        assert!(!m.boundary_points().contains(&(2, 2)));
    }
}
