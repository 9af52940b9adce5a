//! Shape arithmetic shared by the tensor ops: row-major strides and
//! numpy-style right-aligned broadcasting.

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Right-aligned broadcast of two shapes; None when incompatible.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ad = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let bd = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if ad == bd {
            ad
        } else if ad == 1 {
            bd
        } else if bd == 1 {
            ad
        } else {
            return None;
        };
    }
    Some(out)
}

/// Maps linear indices of a broadcast output back to linear indices of one
/// input. Broadcast dimensions get an effective stride of zero.
pub struct IndexMap {
    out_strides: Vec<usize>,
    in_estrides: Vec<usize>,
    identity: bool,
}

impl IndexMap {
    pub fn new(out_shape: &[usize], in_shape: &[usize]) -> IndexMap {
        assert!(in_shape.len() <= out_shape.len(), "input rank exceeds output rank");
        let rank = out_shape.len();
        let offset = rank - in_shape.len();
        let in_strides = row_major_strides(in_shape);
        let mut estrides = vec![0; rank];
        for i in 0..in_shape.len() {
            debug_assert!(in_shape[i] == out_shape[offset + i] || in_shape[i] == 1);
            estrides[offset + i] = if in_shape[i] == 1 { 0 } else { in_strides[i] };
        }
        IndexMap {
            out_strides: row_major_strides(out_shape),
            identity: in_shape == out_shape,
            in_estrides: estrides,
        }
    }

    #[inline]
    pub fn map(&self, k: usize) -> usize {
        if self.identity {
            return k;
        }
        let mut rem = k;
        let mut idx = 0;
        for (os, es) in self.out_strides.iter().zip(&self.in_estrides) {
            idx += (rem / os) * es;
            rem %= os;
        }
        idx
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }
}
