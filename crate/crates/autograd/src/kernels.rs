//! Raw numeric kernels shared by the differentiable ops.

/// Strided view descriptor for [`gemm`]: (row stride, column stride).
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rs: isize,
    pub cs: isize,
}

impl Layout {
    /// Row-major matrix with `cols` columns.
    pub fn row_major(cols: usize) -> Layout {
        Layout {
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix that has `cols` columns.
    pub fn transposed(cols: usize) -> Layout {
        Layout {
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = a · b + beta · c` for an `m×k` times `k×n` product; `c` is row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    la: Layout,
    b: &[f32],
    lb: Layout,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    assert!(a.len() >= span(m, k, la));
    assert!(b.len() >= span(k, n, lb));
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the borrowed slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn span(rows: usize, cols: usize, l: Layout) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * l.rs as usize + (cols - 1) * l.cs as usize + 1
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the flat index of the broadcast source
/// element in a tensor of shape `src`.
pub(crate) fn broadcast_index_map(out_shape: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let src_strides = strides(src);
    let mut eff = vec![0usize; rank];
    for i in 0..src.len() {
        let oi = rank - src.len() + i;
        eff[oi] = if src[i] == 1 { 0 } else { src_strides[i] };
    }
    let n: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += eff[d];
            if idx[d] < out_shape[d] {
                break;
            }
            flat -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

/// How a broadcast operand maps onto the output.
pub(crate) enum Broadcast {
    Same,
    Scalar,
    /// Operand shape equals the trailing dims of the output.
    Suffix(usize),
    General(Vec<usize>),
}

impl Broadcast {
    pub fn plan(out_shape: &[usize], src: &[usize]) -> Broadcast {
        let n_src: usize = src.iter().product();
        if out_shape == src {
            Broadcast::Same
        } else if n_src == 1 {
            Broadcast::Scalar
        } else if src.len() <= out_shape.len()
            && out_shape[out_shape.len() - src.len()..] == *src
        {
            Broadcast::Suffix(n_src)
        } else {
            Broadcast::General(broadcast_index_map(out_shape, src))
        }
    }

    #[inline]
    pub fn index(&self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Scalar => 0,
            Broadcast::Suffix(n) => i % n,
            Broadcast::General(map) => map[i],
        }
    }

    /// Sums a full-size adjoint back onto the operand's shape.
    pub fn reduce(&self, full: Vec<f32>, src_len: usize) -> Vec<f32> {
        match self {
            Broadcast::Same => full,
            _ => {
                let mut out = vec![0.0f32; src_len];
                for (i, g) in full.iter().enumerate() {
                    out[self.index(i)] += g;
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 4]), Some(vec![2, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn index_map_column_broadcast() {
        // [2,1] source broadcast to [2,3]
        assert_eq!(broadcast_index_map(&[2, 3], &[2, 1]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_index_map(&[2, 3], &[1, 3]), vec![0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn gemm_transposed_layouts() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, Layout::row_major(2), &b, Layout::row_major(2), 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // a^T · b
        gemm(2, 2, 2, &a, Layout::transposed(2), &b, Layout::row_major(2), 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
    }
}
