use crate::tensor::{Scalar, Tensor};

/// Numpy-style broadcast of two equal-rank shapes (rank ≤ 4).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() || a.len() > 4 {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn pad4(shape: &[usize]) -> [usize; 4] {
    let mut out = [1; 4];
    let off = 4 - shape.len();
    out[off..].copy_from_slice(shape);
    out
}

/// Element strides of `shape` when read as `out`; broadcast axes get stride 0.
fn strides_for(shape: [usize; 4], out: [usize; 4]) -> [usize; 4] {
    let mut s = [0; 4];
    let mut acc = 1;
    for i in (0..4).rev() {
        s[i] = if shape[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    s
}

/// Applies `f` elementwise over the broadcast of `a` and `b`.
pub(crate) fn zip_broadcast<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    let o = pad4(&out_shape);
    let sa = strides_for(pad4(a.shape()), o);
    let sb = strides_for(pad4(b.shape()), o);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for i0 in 0..o[0] {
        for i1 in 0..o[1] {
            for i2 in 0..o[2] {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..o[3] {
                    out.push(f(ad[ba + i3 * sa[3]], bd[bb + i3 * sb[3]]));
                }
            }
        }
    }
    Tensor::new(&out_shape, out)
}

/// Sums a broadcast gradient back down to `shape`.
pub fn sum_to_shape<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let o = pad4(g.shape());
    let target = pad4(shape);
    let st = strides_for(target, o);
    let mut out = vec![T::ZERO; shape.iter().product()];
    let gd = g.data();
    let mut idx = 0;
    for i0 in 0..o[0] {
        for i1 in 0..o[1] {
            for i2 in 0..o[2] {
                let base = i0 * st[0] + i1 * st[1] + i2 * st[2];
                for i3 in 0..o[3] {
                    out[base + i3 * st[3]] += gd[idx];
                    idx += 1;
                }
            }
        }
    }
    Tensor::new(shape, out)
}
