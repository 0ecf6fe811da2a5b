//! Raw numeric kernels shared by the tape ops.
//!
//! Every loop nest runs in a fixed index order and accumulates through the
//! innermost contiguous axis only, so results are deterministic for a given
//! platform regardless of autovectorization width. Reductions that cross
//! rules (the fuzzy-rule axis) additionally use a content-canonical order so
//! that permuting rules leaves sums bitwise unchanged; see `lex_cmp_rows`.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct Conv2dDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    /// top, bottom, left, right
    pub pad: [usize; 4],
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dDims {
    pub fn compute(
        input_shape: (usize, usize, usize, usize),
        filter_shape: (usize, usize, usize, usize),
        stride: usize,
        pad: [usize; 4],
    ) -> Result<Self> {
        let (n, c, h, w) = input_shape;
        let (k, fc, kh, kw) = filter_shape;
        if stride == 0 {
            return Err(Error::config("conv2d stride must be positive"));
        }
        if fc != c {
            return Err(Error::config(format!(
                "conv2d filter channels {fc} do not match input channels {c}"
            )));
        }
        let ph = h + pad[0] + pad[1];
        let pw = w + pad[2] + pad[3];
        if kh == 0 || kw == 0 || kh > ph || kw > pw {
            return Err(Error::config(format!(
                "conv2d kernel {kh}x{kw} does not fit padded input {ph}x{pw}"
            )));
        }
        Ok(Conv2dDims {
            n,
            c,
            h,
            w,
            k,
            kh,
            kw,
            stride,
            pad,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        })
    }

    #[inline]
    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    #[inline]
    pub fn out_hw(&self) -> usize {
        self.oh * self.ow
    }
}

/// Gathers the patches of one image into patch-major columns:
/// `cols_t[j * P + p]` where `j` indexes output positions row-major and
/// `p = c*kh*kw + ki*kw + kj`. Out-of-bounds (padded) taps are zero.
fn im2col_t<F: Scalar>(img: &[F], d: &Conv2dDims, cols_t: &mut [F]) {
    let p_len = d.patch_len();
    let (h, w) = (d.h as isize, d.w as isize);
    for oy in 0..d.oh {
        for ox in 0..d.ow {
            let j = oy * d.ow + ox;
            let dst = &mut cols_t[j * p_len..(j + 1) * p_len];
            let y0 = (oy * d.stride) as isize - d.pad[0] as isize;
            let x0 = (ox * d.stride) as isize - d.pad[2] as isize;
            let mut p = 0;
            for c in 0..d.c {
                let plane = &img[c * d.h * d.w..(c + 1) * d.h * d.w];
                for ki in 0..d.kh {
                    let y = y0 + ki as isize;
                    for kj in 0..d.kw {
                        let x = x0 + kj as isize;
                        dst[p] = if y >= 0 && y < h && x >= 0 && x < w {
                            plane[(y as usize) * d.w + x as usize]
                        } else {
                            F::zero()
                        };
                        p += 1;
                    }
                }
            }
        }
    }
}

/// Scatter-adds patch-major column gradients back onto one image.
fn col2im_t<F: Scalar>(dcols_t: &[F], d: &Conv2dDims, dimg: &mut [F]) {
    let p_len = d.patch_len();
    let (h, w) = (d.h as isize, d.w as isize);
    for oy in 0..d.oh {
        for ox in 0..d.ow {
            let j = oy * d.ow + ox;
            let src = &dcols_t[j * p_len..(j + 1) * p_len];
            let y0 = (oy * d.stride) as isize - d.pad[0] as isize;
            let x0 = (ox * d.stride) as isize - d.pad[2] as isize;
            let mut p = 0;
            for c in 0..d.c {
                for ki in 0..d.kh {
                    let y = y0 + ki as isize;
                    for kj in 0..d.kw {
                        let x = x0 + kj as isize;
                        if y >= 0 && y < h && x >= 0 && x < w {
                            dimg[c * d.h * d.w + (y as usize) * d.w + x as usize] += src[p];
                        }
                        p += 1;
                    }
                }
            }
        }
    }
}

fn transpose<F: Scalar>(src: &[F], rows: usize, cols: usize, dst: &mut [F]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

#[inline]
fn axpy<F: Scalar>(a: F, x: &[F], y: &mut [F]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

pub fn conv2d_forward<F: Scalar>(
    input: &[F],
    filters: &[F],
    bias: Option<&[F]>,
    d: &Conv2dDims,
    out: &mut [F],
) {
    let p_len = d.patch_len();
    let hw = d.out_hw();
    let mut cols_t = vec![F::zero(); hw * p_len];
    let mut out_t = vec![F::zero(); hw * d.k];
    // filters are [K][P]; the GEMM wants [P][K]
    let mut w_t = vec![F::zero(); p_len * d.k];
    transpose(filters, d.k, p_len, &mut w_t);
    for item in 0..d.n {
        let img = &input[item * d.c * d.h * d.w..(item + 1) * d.c * d.h * d.w];
        im2col_t(img, d, &mut cols_t);
        for j in 0..hw {
            let row = &mut out_t[j * d.k..(j + 1) * d.k];
            match bias {
                Some(b) => row.copy_from_slice(b),
                None => row.fill(F::zero()),
            }
            let patch = &cols_t[j * p_len..(j + 1) * p_len];
            for p in 0..p_len {
                axpy(patch[p], &w_t[p * d.k..(p + 1) * d.k], row);
            }
        }
        transpose(
            &out_t,
            hw,
            d.k,
            &mut out[item * d.k * hw..(item + 1) * d.k * hw],
        );
    }
}

pub struct Conv2dGrads<'a, F> {
    pub dinput: Option<&'a mut [F]>,
    pub dfilters: Option<&'a mut [F]>,
    pub dbias: Option<&'a mut [F]>,
}

pub fn conv2d_backward<F: Scalar>(
    input: &[F],
    filters: &[F],
    gout: &[F],
    d: &Conv2dDims,
    grads: Conv2dGrads<'_, F>,
) {
    let p_len = d.patch_len();
    let hw = d.out_hw();
    let Conv2dGrads {
        dinput,
        dfilters,
        dbias,
    } = grads;
    let mut cols_t = vec![F::zero(); hw * p_len];
    let mut g_t = vec![F::zero(); hw * d.k];
    let mut dcols_t = vec![F::zero(); hw * p_len];
    // accumulated [P][K], folded into dfilters at the end
    let mut dw_t = vec![F::zero(); p_len * d.k];
    let want_dw = dfilters.is_some();
    let mut dinput = dinput;
    for item in 0..d.n {
        let g = &gout[item * d.k * hw..(item + 1) * d.k * hw];
        transpose(g, d.k, hw, &mut g_t);
        if want_dw {
            let img = &input[item * d.c * d.h * d.w..(item + 1) * d.c * d.h * d.w];
            im2col_t(img, d, &mut cols_t);
            for j in 0..hw {
                let patch = &cols_t[j * p_len..(j + 1) * p_len];
                let grow = &g_t[j * d.k..(j + 1) * d.k];
                for p in 0..p_len {
                    axpy(patch[p], grow, &mut dw_t[p * d.k..(p + 1) * d.k]);
                }
            }
        }
        if let Some(din) = dinput.as_deref_mut() {
            dcols_t.fill(F::zero());
            for j in 0..hw {
                let grow = &g_t[j * d.k..(j + 1) * d.k];
                let dpatch = &mut dcols_t[j * p_len..(j + 1) * p_len];
                for k in 0..d.k {
                    axpy(grow[k], &filters[k * p_len..(k + 1) * p_len], dpatch);
                }
            }
            col2im_t(
                &dcols_t,
                d,
                &mut din[item * d.c * d.h * d.w..(item + 1) * d.c * d.h * d.w],
            );
        }
    }
    if let Some(df) = dfilters {
        for k in 0..d.k {
            for p in 0..p_len {
                df[k * p_len + p] += dw_t[p * d.k + k];
            }
        }
    }
    if let Some(db) = dbias {
        for item in 0..d.n {
            let g = &gout[item * d.k * hw..(item + 1) * d.k * hw];
            for k in 0..d.k {
                let mut s = F::zero();
                for x in &g[k * hw..(k + 1) * hw] {
                    s += *x;
                }
                db[k] += s;
            }
        }
    }
}

/// Lexicographic comparison of two equally sized value rows under the
/// scalar's total order. Rows with identical contents compare Equal, which is
/// exactly the case where accumulation order cannot matter.
pub fn lex_cmp_rows<F: Scalar>(a: &[F], b: &[F]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_order(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Canonical rule order for one item: rule indices sorted by row content.
fn canonical_rule_order<F: Scalar>(rows: &[F], k: usize, hw: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_unstable_by(|&a, &b| {
        lex_cmp_rows(&rows[a * hw..(a + 1) * hw], &rows[b * hw..(b + 1) * hw])
    });
    order
}

/// Firing-strength normalization: out[k] = m[k] / (eps + sum_k' m[k']).
/// The denominator accumulates rules in content-sorted order, so it is
/// bitwise invariant under rule permutation. Returns the per-cell
/// denominators for the backward pass.
pub fn normalize_rules_forward<F: Scalar>(
    input: &[F],
    n: usize,
    k: usize,
    hw: usize,
    eps: F,
    out: &mut [F],
    denoms: &mut Vec<F>,
) {
    denoms.clear();
    denoms.resize(n * hw, F::zero());
    for item in 0..n {
        let rows = &input[item * k * hw..(item + 1) * k * hw];
        let denom = &mut denoms[item * hw..(item + 1) * hw];
        denom.fill(eps);
        for &r in &canonical_rule_order(rows, k, hw) {
            for (dc, mc) in denom.iter_mut().zip(&rows[r * hw..(r + 1) * hw]) {
                *dc += *mc;
            }
        }
        let orows = &mut out[item * k * hw..(item + 1) * k * hw];
        for r in 0..k {
            for c in 0..hw {
                orows[r * hw + c] = rows[r * hw + c] / denom[c];
            }
        }
    }
}

pub fn normalize_rules_backward<F: Scalar>(
    out: &[F],
    denoms: &[F],
    gout: &[F],
    n: usize,
    k: usize,
    hw: usize,
    dinput: &mut [F],
) {
    let mut u = vec![F::zero(); hw];
    for item in 0..n {
        let base = item * k * hw;
        u.fill(F::zero());
        for r in 0..k {
            for c in 0..hw {
                u[c] += gout[base + r * hw + c] * out[base + r * hw + c];
            }
        }
        let denom = &denoms[item * hw..(item + 1) * hw];
        for r in 0..k {
            for c in 0..hw {
                dinput[base + r * hw + c] += (gout[base + r * hw + c] - u[c]) / denom[c];
            }
        }
    }
}

/// 1x1 mixing of K rule maps into n output maps with bias:
/// out[i] = bias[i] + sum_k w[i,k] * in[k], accumulated per output in the
/// order sorted by (weight value, rule-row content) so the sum is bitwise
/// invariant under simultaneous permutation of rules and weight columns.
pub fn mix_rules_forward<F: Scalar>(
    input: &[F],
    weights: &[F], // [n_out][k]
    bias: &[F],
    n: usize,
    k: usize,
    n_out: usize,
    hw: usize,
    out: &mut [F],
) {
    for item in 0..n {
        let rows = &input[item * k * hw..(item + 1) * k * hw];
        let obase = item * n_out * hw;
        for i in 0..n_out {
            let wrow = &weights[i * k..(i + 1) * k];
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_unstable_by(|&a, &b| {
                wrow[a].total_order(&wrow[b]).then_with(|| {
                    lex_cmp_rows(&rows[a * hw..(a + 1) * hw], &rows[b * hw..(b + 1) * hw])
                })
            });
            let orow = &mut out[obase + i * hw..obase + (i + 1) * hw];
            orow.fill(bias[i]);
            for &r in &order {
                axpy(wrow[r], &rows[r * hw..(r + 1) * hw], orow);
            }
        }
    }
}

pub fn mix_rules_backward<F: Scalar>(
    input: &[F],
    weights: &[F],
    gout: &[F],
    n: usize,
    k: usize,
    n_out: usize,
    hw: usize,
    dinput: Option<&mut [F]>,
    dweights: &mut [F],
    dbias: &mut [F],
) {
    let mut in_t = vec![F::zero(); hw * k];
    let mut dinput = dinput;
    for item in 0..n {
        let ibase = item * k * hw;
        let obase = item * n_out * hw;
        if let Some(din) = dinput.as_deref_mut() {
            for i in 0..n_out {
                let grow = &gout[obase + i * hw..obase + (i + 1) * hw];
                for r in 0..k {
                    axpy(
                        weights[i * k + r],
                        grow,
                        &mut din[ibase + r * hw..ibase + (r + 1) * hw],
                    );
                }
            }
        }
        transpose(&input[ibase..ibase + k * hw], k, hw, &mut in_t);
        for i in 0..n_out {
            let grow = &gout[obase + i * hw..obase + (i + 1) * hw];
            let dwrow = &mut dweights[i * k..(i + 1) * k];
            let mut bsum = F::zero();
            for c in 0..hw {
                axpy(grow[c], &in_t[c * k..(c + 1) * k], dwrow);
                bsum += grow[c];
            }
            dbias[i] += bsum;
        }
    }
}

pub fn dense_forward<F: Scalar>(
    x: &[F],
    w: &[F], // [d_in][d_out]
    b: &[F],
    n: usize,
    d_in: usize,
    d_out: usize,
    out: &mut [F],
) {
    for item in 0..n {
        let row = &mut out[item * d_out..(item + 1) * d_out];
        row.copy_from_slice(b);
        let xrow = &x[item * d_in..(item + 1) * d_in];
        for d in 0..d_in {
            axpy(xrow[d], &w[d * d_out..(d + 1) * d_out], row);
        }
    }
}

pub fn dense_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    gout: &[F],
    n: usize,
    d_in: usize,
    d_out: usize,
    dx: Option<&mut [F]>,
    dw: &mut [F],
    db: &mut [F],
) {
    if let Some(dx) = dx {
        let mut w_t = vec![F::zero(); d_out * d_in];
        transpose(w, d_in, d_out, &mut w_t);
        for item in 0..n {
            let grow = &gout[item * d_out..(item + 1) * d_out];
            let dxrow = &mut dx[item * d_in..(item + 1) * d_in];
            for u in 0..d_out {
                axpy(grow[u], &w_t[u * d_in..(u + 1) * d_in], dxrow);
            }
        }
    }
    for item in 0..n {
        let grow = &gout[item * d_out..(item + 1) * d_out];
        let xrow = &x[item * d_in..(item + 1) * d_in];
        for d in 0..d_in {
            axpy(xrow[d], grow, &mut dw[d * d_out..(d + 1) * d_out]);
        }
        for u in 0..d_out {
            db[u] += grow[u];
        }
    }
}

pub fn avg_pool2d_forward<F: Scalar>(
    input: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    out: &mut [F],
) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let inv = F::one() / F::c((window * window) as f64);
    for plane in 0..n * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = F::zero();
                for ky in 0..window {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        s += src[row + kx];
                    }
                }
                dst[oy * ow + ox] = s * inv;
            }
        }
    }
}

pub fn avg_pool2d_backward<F: Scalar>(
    gout: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    dinput: &mut [F],
) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let inv = F::one() / F::c((window * window) as f64);
    for plane in 0..n * c {
        let g = &gout[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut dinput[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let share = g[oy * ow + ox] * inv;
                for ky in 0..window {
                    let row = (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        d[row + kx] += share;
                    }
                }
            }
        }
    }
}

pub fn pad2d_forward<F: Scalar>(
    input: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    pad: usize,
    out: &mut [F],
) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    out.fill(F::zero());
    for plane in 0..n * c {
        let src = &input[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * ph * pw..(plane + 1) * ph * pw];
        for y in 0..h {
            let drow = (y + pad) * pw + pad;
            dst[drow..drow + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
}

pub fn pad2d_backward<F: Scalar>(
    gout: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    pad: usize,
    dinput: &mut [F],
) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    for plane in 0..n * c {
        let g = &gout[plane * ph * pw..(plane + 1) * ph * pw];
        let d = &mut dinput[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let grow = (y + pad) * pw + pad;
            for x in 0..w {
                d[y * w + x] += g[grow + x];
            }
        }
    }
}
