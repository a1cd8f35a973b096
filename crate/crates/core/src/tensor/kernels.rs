//! Slice-level kernels shared by the tape operations.

use super::Scalar;

/// Row-major matrix product `c = a * b` (or `c += a * b` when `accumulate`).
///
/// `a` is logically `m x k`; when `a_trans` it is stored as `k x m`.
/// `b` is logically `k x n`; when `b_trans` it is stored as `n x k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_trans: bool,
    b: &[S],
    b_trans: bool,
    c: &mut [S],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(S::zero());
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { S::one() } else { S::zero() };
    // SAFETY: lengths were asserted above and the strides describe exactly
    // those buffers; `c` is a distinct mutable borrow.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Non-overlapping space-time patches of a `[T, C, H, W]` array.
///
/// Returns a `[N, K]` matrix with rows ordered `(t', y', x')` and columns
/// ordered `(c, kt, ky, kx)`, matching a `[C', C, kT, kH, kW]` weight.
pub fn patches_3d<S: Scalar>(input: &[S], dims: [usize; 4], kernel: [usize; 3]) -> Vec<S> {
    let [t, c, h, w] = dims;
    let [kt, kh, kw] = kernel;
    let (to, ho, wo) = (t / kt, h / kh, w / kw);
    let k = c * kt * kh * kw;
    let mut out = vec![S::zero(); to * ho * wo * k];
    let mut row = 0;
    for t0 in 0..to {
        for y0 in 0..ho {
            for x0 in 0..wo {
                let dst = &mut out[row * k..(row + 1) * k];
                let mut col = 0;
                for ci in 0..c {
                    for dt in 0..kt {
                        let tt = t0 * kt + dt;
                        for dy in 0..kh {
                            let yy = y0 * kh + dy;
                            let base = ((tt * c + ci) * h + yy) * w + x0 * kw;
                            dst[col..col + kw].copy_from_slice(&input[base..base + kw]);
                            col += kw;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Adjoint of [`patches_3d`]; since patches do not overlap it is the inverse
/// permutation.
pub fn unpatch_3d<S: Scalar>(patches: &[S], dims: [usize; 4], kernel: [usize; 3]) -> Vec<S> {
    let [t, c, h, w] = dims;
    let [kt, kh, kw] = kernel;
    let (to, ho, wo) = (t / kt, h / kh, w / kw);
    let k = c * kt * kh * kw;
    let mut out = vec![S::zero(); t * c * h * w];
    let mut row = 0;
    for t0 in 0..to {
        for y0 in 0..ho {
            for x0 in 0..wo {
                let src = &patches[row * k..(row + 1) * k];
                let mut col = 0;
                for ci in 0..c {
                    for dt in 0..kt {
                        let tt = t0 * kt + dt;
                        for dy in 0..kh {
                            let yy = y0 * kh + dy;
                            let base = ((tt * c + ci) * h + yy) * w + x0 * kw;
                            out[base..base + kw].copy_from_slice(&src[col..col + kw]);
                            col += kw;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Zero-padded "same" im2col for a `[C, H, W]` array and odd kernel `k`.
///
/// Returns `[H*W, C*k*k]` with columns ordered `(c, ky, kx)`.
pub fn im2col_2d_same<S: Scalar>(input: &[S], dims: [usize; 3], k: usize) -> Vec<S> {
    let [c, h, w] = dims;
    let pad = (k / 2) as isize;
    let cols = c * k * k;
    let mut out = vec![S::zero(); h * w * cols];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut out[(y * w + x) * cols..(y * w + x + 1) * cols];
            let mut col = 0;
            for ci in 0..c {
                for ky in 0..k {
                    let yy = y as isize + ky as isize - pad;
                    for kx in 0..k {
                        let xx = x as isize + kx as isize - pad;
                        if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                            dst[col] = input[(ci * h + yy as usize) * w + xx as usize];
                        }
                        col += 1;
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col_2d_same`]: sums column entries back into `[C, H, W]`.
pub fn col2im_2d_same<S: Scalar>(cols: &[S], dims: [usize; 3], k: usize) -> Vec<S> {
    let [c, h, w] = dims;
    let pad = (k / 2) as isize;
    let ncols = c * k * k;
    let mut out = vec![S::zero(); c * h * w];
    for y in 0..h {
        for x in 0..w {
            let src = &cols[(y * w + x) * ncols..(y * w + x + 1) * ncols];
            let mut col = 0;
            for ci in 0..c {
                for ky in 0..k {
                    let yy = y as isize + ky as isize - pad;
                    for kx in 0..k {
                        let xx = x as isize + kx as isize - pad;
                        if yy >= 0 && yy < h as isize && xx >= 0 && xx < w as isize {
                            out[(ci * h + yy as usize) * w + xx as usize] =
                                out[(ci * h + yy as usize) * w + xx as usize] + src[col];
                        }
                        col += 1;
                    }
                }
            }
        }
    }
    out
}

/// `[r*r*C, H, W] -> [C, r*H, r*W]` with
/// `out[c, r*y+dy, r*x+dx] = in[c*r*r + dy*r + dx, y, x]`.
pub fn pixel_shuffle<S: Scalar>(input: &[S], dims: [usize; 3], r: usize) -> Vec<S> {
    let [cin, h, w] = dims;
    let c = cin / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![S::zero(); input.len()];
    for ci in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let src_c = ci * r * r + dy * r + dx;
                for y in 0..h {
                    let src = &input[(src_c * h + y) * w..(src_c * h + y + 1) * w];
                    let row = (ci * ho + r * y + dy) * wo;
                    for (x, &v) in src.iter().enumerate() {
                        out[row + r * x + dx] = v;
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle`]: `[C, r*H, r*W] -> [r*r*C, H, W]`.
pub fn pixel_unshuffle<S: Scalar>(input: &[S], dims: [usize; 3], r: usize) -> Vec<S> {
    let [c, ho, wo] = dims;
    let (h, w) = (ho / r, wo / r);
    let mut out = vec![S::zero(); input.len()];
    for ci in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                let dst_c = ci * r * r + dy * r + dx;
                for y in 0..h {
                    let row = (ci * ho + r * y + dy) * wo;
                    let dst = &mut out[(dst_c * h + y) * w..(dst_c * h + y + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        *d = input[row + r * x + dx];
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_in_all_layouts() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive_matmul(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, ta) in [(&a, false), (&at, true)] {
            for (bb, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, &mut c, false);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        let mut c = want.clone();
        gemm(m, k, n, &a, false, &b, false, &mut c, true);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - 2.0 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_shuffle_two_by_two() {
        let out = pixel_shuffle(&[1.0f32, 2.0, 3.0, 4.0], [4, 1, 1], 2);
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
        let input: Vec<f32> = (0..4 * 2 * 3).map(|i| i as f32).collect();
        let shuffled = pixel_shuffle(&input, [4, 2, 3], 2);
        assert_eq!(pixel_unshuffle(&shuffled, [1, 4, 6], 2), input);
    }

    #[test]
    fn patches_round_trip() {
        let dims = [2, 3, 4, 8];
        let input: Vec<f64> = (0..2 * 3 * 4 * 8).map(|i| i as f64).collect();
        let p = patches_3d(&input, dims, [2, 2, 4]);
        assert_eq!(p.len(), input.len());
        assert_eq!(unpatch_3d(&p, dims, [2, 2, 4]), input);
    }

    #[test]
    fn im2col_centre_column_is_the_input() {
        let dims = [2, 3, 4];
        let input: Vec<f64> = (0..24).map(|i| i as f64 + 1.0).collect();
        let cols = im2col_2d_same(&input, dims, 3);
        // column (c, 1, 1) of row (y, x) is input[c, y, x]
        for c in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    assert_eq!(cols[(y * 4 + x) * 18 + c * 9 + 4], input[(c * 3 + y) * 4 + x]);
                }
            }
        }
        // corner row has zero padding above/left
        assert_eq!(cols[0], 0.0);
    }
}
