//! Raw f64 kernels over contiguous row-major buffers.
//!
//! Nothing in here knows about autograd. Every kernel is deterministic: loops
//! run in a fixed order and no reduction is split across threads.

use std::cell::RefCell;

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
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

/// Strides of `shape` viewed inside the broadcast `out` shape (0 where broadcast).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let own = strides(shape);
    let mut s = vec![0; rank];
    for i in 0..shape.len() {
        let oi = i + rank - shape.len();
        s[oi] = if shape[i] == 1 { 0 } else { own[i] };
    }
    s
}

/// Merges adjacent dimensions that are laid out contiguously for every operand.
fn coalesce(shape: &[usize], stride_sets: &mut [Vec<usize>]) -> Vec<usize> {
    let mut dims: Vec<usize> = Vec::new();
    let mut merged: Vec<Vec<usize>> = vec![Vec::new(); stride_sets.len()];
    for (i, &d) in shape.iter().enumerate() {
        if d == 1 {
            continue;
        }
        if let Some(last) = dims.last_mut() {
            let ok = stride_sets
                .iter()
                .zip(merged.iter())
                .all(|(ss, m)| *m.last().unwrap() == ss[i] * d);
            if ok {
                *last *= d;
                for (ss, m) in stride_sets.iter().zip(merged.iter_mut()) {
                    *m.last_mut().unwrap() = ss[i];
                }
                continue;
            }
        }
        dims.push(d);
        for (ss, m) in stride_sets.iter().zip(merged.iter_mut()) {
            m.push(ss[i]);
        }
    }
    if dims.is_empty() {
        dims.push(1);
        for m in merged.iter_mut() {
            m.push(0);
        }
    }
    for (ss, m) in stride_sets.iter_mut().zip(merged) {
        *ss = m;
    }
    dims
}

/// Visits every output position, yielding the flat offsets into `a` and `b`.
fn for_each_pair(dims: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    // f(out_offset, a_offset, b_offset, inner_len, inner_sa, inner_sb)
    let rank = dims.len();
    let inner = dims[rank - 1];
    let (isa, isb) = (sa[rank - 1], sb[rank - 1]);
    let outer: usize = dims[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let (mut oa, mut ob) = (0usize, 0usize);
    for row in 0..outer {
        f(row * inner, oa, ob, inner, isa, isb);
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < dims[d] {
                break;
            }
            oa -= sa[d] * dims[d];
            ob -= sb[d] * dims[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn binary(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> (Vec<f64>, Vec<usize>) {
    if a_shape == b_shape {
        let data = a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
        return (data, a_shape.to_vec());
    }
    let out_shape = broadcast_shape(a_shape, b_shape)
        .unwrap_or_else(|| panic!("cannot broadcast {a_shape:?} with {b_shape:?}"));
    let mut sets = vec![broadcast_strides(a_shape, &out_shape), broadcast_strides(b_shape, &out_shape)];
    let dims = coalesce(&out_shape, &mut sets);
    let mut out = vec![0.0; numel(&out_shape)];
    for_each_pair(&dims, &sets[0], &sets[1], |o, oa, ob, n, isa, isb| {
        let dst = &mut out[o..o + n];
        for (k, d) in dst.iter_mut().enumerate() {
            *d = f(a[oa + k * isa], b[ob + k * isb]);
        }
    });
    (out, out_shape)
}

/// Materializes `src` broadcast to `target`.
pub(crate) fn expand(src: &[f64], shape: &[usize], target: &[usize]) -> Vec<f64> {
    if shape == target {
        return src.to_vec();
    }
    assert_eq!(
        broadcast_shape(shape, target).as_deref(),
        Some(target),
        "cannot expand {shape:?} to {target:?}"
    );
    let mut sets = vec![broadcast_strides(shape, target), strides(target)];
    let dims = coalesce(target, &mut sets);
    let mut out = vec![0.0; numel(target)];
    for_each_pair(&dims, &sets[0], &sets[1], |o, oa, _, n, isa, _| {
        for k in 0..n {
            out[o + k] = src[oa + k * isa];
        }
    });
    out
}

/// Sums `src` down to `target`, which must broadcast to `shape`.
pub(crate) fn sum_to(src: &[f64], shape: &[usize], target: &[usize]) -> Vec<f64> {
    if shape == target {
        return src.to_vec();
    }
    assert_eq!(
        broadcast_shape(target, shape).as_deref(),
        Some(shape),
        "cannot reduce {shape:?} to {target:?}"
    );
    let mut sets = vec![broadcast_strides(target, shape), strides(shape)];
    let dims = coalesce(shape, &mut sets);
    let mut out = vec![0.0; numel(target)];
    for_each_pair(&dims, &sets[0], &sets[1], |o, ot, _, n, ist, _| {
        if ist == 0 {
            let s: f64 = src[o..o + n].iter().sum();
            out[ot] += s;
        } else {
            for k in 0..n {
                out[ot + k * ist] += src[o + k];
            }
        }
    });
    out
}

/// `c = op(a) * op(b) + beta * c` for row-major matrices.
///
/// `a` is stored as `[m, k]` (or `[k, m]` when `ta`), `b` as `[k, n]` (or `[n, k]` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    // SAFETY: `c` is a live slice of at least `m * n` values.
    unsafe { gemm_raw(m, k, n, a, ta, b, tb, beta, c.as_mut_ptr()) }
}

/// [`gemm`] into raw storage. With `beta == 0` the destination is only
/// written, so it may be uninitialized.
///
/// # Safety
/// `c` must be valid for writes (and reads when `beta != 0`) of `m * n` values.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_raw(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: *mut f64) {
    assert!(a.len() >= m * k && b.len() >= k * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c, n as isize, 1);
}

/// Builds a vector of `len` values by letting `write` fill its storage through
/// `beta = 0` products. `write` must cover every element.
fn written_by(len: usize, write: impl FnOnce(*mut f64)) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::with_capacity(len);
    write(v.as_mut_ptr());
    // SAFETY: capacity is `len` and the caller contract initializes all of it.
    unsafe { v.set_len(len) };
    v
}

thread_local! {
    static SCRATCH: RefCell<Vec<f64>> = const { RefCell::new(Vec::new()) };
}

/// Runs `f` with a reusable scratch buffer of at least `len` values.
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        if s.len() < len {
            s.resize(len, 0.0);
        }
        f(&mut s[..len])
    })
}

/// Valid output columns `j` for a horizontal tap offset `shift`: `0 <= j + shift < w`.
fn tap_range(shift: isize, w: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (w as isize - shift).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfolds one `[c, h, w]` image into rows of `cols` (row `r` starts at
/// `r * stride`) so that a same-padded convolution becomes a matrix product.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut [f64], stride: usize) {
    let p = k as isize / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for a in 0..k {
            for b in 0..k {
                let row = (ci * k + a) * k + b;
                let dst = &mut cols[row * stride..row * stride + hw];
                let shift = b as isize - p;
                let (lo, hi) = tap_range(shift, w);
                for i in 0..h {
                    let si = i as isize + a as isize - p;
                    let drow = &mut dst[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &plane[si as usize * w..(si as usize + 1) * w];
                    drow[..lo].fill(0.0);
                    drow[hi..].fill(0.0);
                    drow[lo..hi].copy_from_slice(&srow[(lo as isize + shift) as usize..(hi as isize + shift) as usize]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a `[c, h, w]` image.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, x: &mut [f64], stride: usize) {
    let p = k as isize / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for a in 0..k {
            for b in 0..k {
                let row = (ci * k + a) * k + b;
                let src = &cols[row * stride..row * stride + hw];
                let shift = b as isize - p;
                let (lo, hi) = tap_range(shift, w);
                for i in 0..h {
                    let si = i as isize + a as isize - p;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[si as usize * w..(si as usize + 1) * w];
                    let srow = &src[i * w + lo..i * w + hi];
                    let dst = &mut drow[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (d, &v) in dst.iter_mut().zip(srow) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 convolution. `x: [n, c, h, w]`, `wt: [o, c, k, k]`.
pub(crate) fn conv2d(x: &[f64], xs: &[usize], wt: &[f64], ws: &[usize]) -> Vec<f64> {
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    assert_eq!(ws[1], c, "conv2d channel mismatch: input {xs:?}, weight {ws:?}");
    assert_eq!(x.len(), n * c * h * w);
    let hw = h * w;
    let ckk = c * k * k;
    with_scratch(if k == 1 { 0 } else { ckk * hw }, |cols| {
        written_by(n * o * hw, |out| {
            for ni in 0..n {
                let xn = &x[ni * c * hw..(ni + 1) * c * hw];
                // SAFETY: sample `ni` owns the disjoint range `[ni*o*hw, (ni+1)*o*hw)`.
                unsafe {
                    let yn = out.add(ni * o * hw);
                    if k == 1 {
                        gemm_raw(o, c, hw, wt, false, xn, false, 0.0, yn);
                    } else {
                        im2col(xn, c, h, w, k, cols, hw);
                        gemm_raw(o, ckk, hw, wt, false, cols, false, 0.0, yn);
                    }
                }
            }
        })
    })
}

/// Gradient of [`conv2d`] with respect to its input. `g: [n, o, h, w]`.
pub(crate) fn conv2d_input_grad(g: &[f64], gs: &[usize], wt: &[f64], ws: &[usize]) -> Vec<f64> {
    let (n, o, h, w) = (gs[0], gs[1], gs[2], gs[3]);
    let (c, k) = (ws[1], ws[2]);
    assert_eq!(ws[0], o, "conv2d grad channel mismatch: grad {gs:?}, weight {ws:?}");
    assert_eq!(g.len(), n * o * h * w);
    let hw = h * w;
    let ckk = c * k * k;
    if k == 1 {
        return written_by(n * c * hw, |out| {
            for ni in 0..n {
                // SAFETY: disjoint per-sample output ranges.
                unsafe { gemm_raw(c, o, hw, wt, true, &g[ni * o * hw..(ni + 1) * o * hw], false, 0.0, out.add(ni * c * hw)) }
            }
        });
    }
    let mut out = vec![0.0; n * c * hw];
    with_scratch(ckk * hw, |cols| {
        for ni in 0..n {
            let gn = &g[ni * o * hw..(ni + 1) * o * hw];
            gemm(ckk, o, hw, wt, true, gn, false, 0.0, cols);
            col2im(cols, c, h, w, k, &mut out[ni * c * hw..(ni + 1) * c * hw], hw);
        }
    });
    out
}

/// Gradient of [`conv2d`] with respect to its weight.
pub(crate) fn conv2d_weight_grad(x: &[f64], xs: &[usize], g: &[f64], gs: &[usize], k: usize) -> Vec<f64> {
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let o = gs[1];
    assert_eq!(gs[0], n);
    assert_eq!(&gs[2..], &xs[2..]);
    let hw = h * w;
    let ckk = c * k * k;
    let mut out = vec![0.0; o * ckk];
    with_scratch(if k == 1 { 0 } else { ckk * hw }, |cols| {
        for ni in 0..n {
            let xn = &x[ni * c * hw..(ni + 1) * c * hw];
            let gn = &g[ni * o * hw..(ni + 1) * o * hw];
            let beta = if ni == 0 { 0.0 } else { 1.0 };
            if k == 1 {
                gemm(o, hw, c, gn, false, xn, true, beta, &mut out);
            } else {
                im2col(xn, c, h, w, k, cols, hw);
                gemm(o, hw, ckk, gn, false, cols, true, beta, &mut out);
            }
        }
    });
    out
}

/// Nearest-neighbour 2x upsampling over the last two axes.
pub(crate) fn upsample2x(x: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let planes = x.len() / (h * w);
    let mut out = vec![0.0; x.len() * 4];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for i in 0..h {
            for j in 0..w {
                let v = src[i * w + j];
                let base = 2 * i * 2 * w + 2 * j;
                dst[base] = v;
                dst[base + 1] = v;
                dst[base + 2 * w] = v;
                dst[base + 2 * w + 1] = v;
            }
        }
    }
    out
}

/// Sum over non-overlapping 2x2 windows of the last two axes (adjoint of [`upsample2x`]).
pub(crate) fn sum_pool2x(x: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let (ho, wo) = (h / 2, w / 2);
    let planes = x.len() / (h * w);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                let base = 2 * i * w + 2 * j;
                dst[i * wo + j] = src[base] + src[base + 1] + src[base + w] + src[base + w + 1];
            }
        }
    }
    out
}

/// Copies `len` entries starting at `start` along `axis`.
pub(crate) fn narrow(x: &[f64], shape: &[usize], axis: usize, start: usize, len: usize) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis];
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * full + start) * inner;
        out.extend_from_slice(&x[base..base + len * inner]);
    }
    out
}

/// Places `x` at `start` along `axis` inside a zero tensor whose axis length is `full`.
pub(crate) fn embed(x: &[f64], shape: &[usize], axis: usize, start: usize, full: usize) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let len = shape[axis];
    let mut out = vec![0.0; outer * full * inner];
    for o in 0..outer {
        let dst = (o * full + start) * inner;
        let src = o * len * inner;
        out[dst..dst + len * inner].copy_from_slice(&x[src..src + len * inner]);
    }
    out
}

/// `log(1 + exp(t))` without overflow for large `|t|`.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], xs: &[usize], w: &[f64], ws: &[usize]) -> Vec<f64> {
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        let p = (k / 2) as isize;
        let mut out = vec![0.0; n * o * h * wd];
        for ni in 0..n {
            for oi in 0..o {
                for i in 0..h {
                    for j in 0..wd {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for a in 0..k {
                                for b in 0..k {
                                    let si = i as isize + a as isize - p;
                                    let sj = j as isize + b as isize - p;
                                    if si < 0 || sj < 0 || si >= h as isize || sj >= wd as isize {
                                        continue;
                                    }
                                    acc += w[((oi * c + ci) * k + a) * k + b]
                                        * x[((ni * c + ci) * h + si as usize) * wd + sj as usize];
                                }
                            }
                        }
                        out[((ni * o + oi) * h + i) * wd + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919 % 101) as f64 / 50.0 - 1.0) * scale).collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for k in [1, 3] {
            let xs = [2, 3, 5, 4];
            let ws = [4, 3, k, k];
            let x = seq(numel(&xs), 1.0);
            let w = seq(numel(&ws), 0.5);
            let fast = conv2d(&x, &xs, &w, &ws);
            let slow = naive_conv(&x, &xs, &w, &ws);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_grads_are_adjoint() {
        // <conv(x, w), g> == <x, input_grad(g, w)> == <w, weight_grad(x, g)>
        let xs = [2, 3, 6, 5];
        let ws = [4, 3, 3, 3];
        let gs = [2, 4, 6, 5];
        let x = seq(numel(&xs), 1.0);
        let w = seq(numel(&ws), 0.3);
        let g: Vec<f64> = seq(numel(&gs), 0.7).into_iter().rev().collect();
        let y = conv2d(&x, &xs, &w, &ws);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let gx = conv2d_input_grad(&g, &gs, &w, &ws);
        let mid: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let gw = conv2d_weight_grad(&x, &xs, &g, &gs, 3);
        let rhs: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - mid).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn broadcast_binary_and_reduce() {
        let a = seq(2 * 3 * 4, 1.0);
        let b = vec![1.0, 2.0, 3.0];
        let (out, shape) = binary(&a, &[2, 3, 4], &b, &[1, 3, 1], |x, y| x * y);
        assert_eq!(shape, vec![2, 3, 4]);
        for n in 0..2 {
            for c in 0..3 {
                for k in 0..4 {
                    let i = (n * 3 + c) * 4 + k;
                    assert_eq!(out[i], a[i] * b[c]);
                }
            }
        }
        let s = sum_to(&a, &[2, 3, 4], &[3, 1]);
        for c in 0..3 {
            let want: f64 = (0..2).flat_map(|n| (0..4).map(move |k| (n * 3 + c) * 4 + k)).map(|i| a[i]).sum();
            assert!((s[c] - want).abs() < 1e-12);
        }
        let e = expand(&b, &[3, 1], &[2, 3, 2]);
        assert_eq!(e, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let shape = [2, 4, 6];
        let x = seq(numel(&shape), 1.0);
        let y = seq(2 * 2 * 3, 0.4);
        let lhs: f64 = sum_pool2x(&x, &shape).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = upsample2x(&y, &[2, 2, 3]).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn narrow_embed_roundtrip() {
        let shape = [2, 5, 3];
        let x = seq(30, 1.0);
        let part = narrow(&x, &shape, 1, 1, 3);
        let back = embed(&part, &[2, 3, 3], 1, 1, 5);
        for o in 0..2 {
            for a in 0..5 {
                for i in 0..3 {
                    let idx = (o * 5 + a) * 3 + i;
                    let want = if (1..4).contains(&a) { x[idx] } else { 0.0 };
                    assert_eq!(back[idx], want);
                }
            }
        }
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus(-1000.0).is_finite() && softplus(-1000.0) >= 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
    }
}
