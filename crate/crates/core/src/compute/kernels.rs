//! Raw forward/backward kernels on flat slices. Shapes are validated by the
//! callers in `tape`.

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn ckk(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// 1x1 convolutions with unit stride read the input directly as the
    /// column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col<S: Scalar>(input: &[S], g: &ConvGeom) -> Vec<S> {
    let p = g.positions();
    let mut cols = vec![S::zero(); g.ckk() * p];
    for ci in 0..g.c_in {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<S: Scalar>(cols: &[S], g: &ConvGeom, dinput: &mut [S]) {
    let p = g.positions();
    for ci in 0..g.c_in {
        let plane = &mut dinput[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<S: Scalar>(input: &[S], kernel: &[S], g: &ConvGeom) -> Vec<S> {
    let p = g.positions();
    let ckk = g.ckk();
    let mut out = vec![S::zero(); g.c_out * p];
    let owned;
    let cols: &[S] = if g.is_pointwise() {
        input
    } else {
        owned = im2col(input, g);
        &owned
    };
    S::gemm(
        g.c_out,
        ckk,
        p,
        kernel,
        (ckk as isize, 1),
        cols,
        (p as isize, 1),
        &mut out,
        (p as isize, 1),
        false,
    );
    out
}

/// Returns `(d_input, d_kernel)`; each is computed only when requested.
pub(crate) fn conv2d_backward<S: Scalar>(
    input: &[S],
    kernel: &[S],
    dout: &[S],
    g: &ConvGeom,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let p = g.positions();
    let ckk = g.ckk();
    let dkernel = want_kernel.then(|| {
        let owned;
        let cols: &[S] = if g.is_pointwise() {
            input
        } else {
            owned = im2col(input, g);
            &owned
        };
        let mut dk = vec![S::zero(); g.c_out * ckk];
        // dK[co, j] = sum_p dOut[co, p] * cols[j, p]
        S::gemm(
            g.c_out,
            p,
            ckk,
            dout,
            (p as isize, 1),
            cols,
            (1, p as isize),
            &mut dk,
            (ckk as isize, 1),
            false,
        );
        dk
    });
    let dinput = want_input.then(|| {
        let mut dcols = vec![S::zero(); ckk * p];
        // dCols[j, p] = sum_co K[co, j] * dOut[co, p]
        S::gemm(
            ckk,
            g.c_out,
            p,
            kernel,
            (1, ckk as isize),
            dout,
            (p as isize, 1),
            &mut dcols,
            (p as isize, 1),
            false,
        );
        if g.is_pointwise() {
            dcols
        } else {
            let mut din = vec![S::zero(); g.c_in * g.h * g.w];
            col2im_add(&dcols, g, &mut din);
            din
        }
    });
    (dinput, dkernel)
}

pub(crate) fn upsample2x<S: Scalar>(input: &[S], c: usize, h: usize, w: usize) -> Vec<S> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![S::zero(); c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            let src = &input[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = src[x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<S: Scalar>(dout: &[S], c: usize, h: usize, w: usize) -> Vec<S> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut din = vec![S::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            let src = &dout[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
            let dst = &mut din[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            for (x, &v) in src.iter().enumerate() {
                dst[x / 2] += v;
            }
        }
    }
    din
}

pub(crate) fn avgpool2x<S: Scalar>(input: &[S], c: usize, h: usize, w: usize) -> Vec<S> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = S::lit(0.25);
    let mut out = vec![S::zero(); c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            for x in 0..w2 {
                let base = ch * h * w;
                let s = input[base + 2 * y * w + 2 * x]
                    + input[base + 2 * y * w + 2 * x + 1]
                    + input[base + (2 * y + 1) * w + 2 * x]
                    + input[base + (2 * y + 1) * w + 2 * x + 1];
                out[(ch * h2 + y) * w2 + x] = s * quarter;
            }
        }
    }
    out
}

pub(crate) fn avgpool2x_backward<S: Scalar>(dout: &[S], c: usize, h: usize, w: usize) -> Vec<S> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = S::lit(0.25);
    let mut din = vec![S::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                din[(ch * h + y) * w + x] = dout[(ch * h2 + y / 2) * w2 + x / 2] * quarter;
            }
        }
    }
    din
}

pub(crate) const GROUP_NORM_EPS: f64 = 1e-5;

/// Returns `(output, per-group mean, per-group reciprocal std)`.
pub(crate) fn group_norm<S: Scalar>(
    x: &[S],
    c: usize,
    spatial: usize,
    groups: usize,
    gamma: &[S],
    beta: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let cpg = c / groups;
    let n = S::lit((cpg * spatial) as f64);
    let eps = S::lit(GROUP_NORM_EPS);
    let mut out = vec![S::zero(); x.len()];
    let mut means = Vec::with_capacity(groups);
    let mut rstds = Vec::with_capacity(groups);
    for g in 0..groups {
        let span = g * cpg * spatial..(g + 1) * cpg * spatial;
        let xs = &x[span.clone()];
        let mean = xs.iter().copied().sum::<S>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let rstd = (var + eps).sqrt().recip();
        for cl in 0..cpg {
            let ch = g * cpg + cl;
            for i in 0..spatial {
                let idx = ch * spatial + i;
                out[idx] = (x[idx] - mean) * rstd * gamma[ch] + beta[ch];
            }
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

/// Returns `(d_x, d_gamma, d_beta)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<S: Scalar>(
    x: &[S],
    dout: &[S],
    c: usize,
    spatial: usize,
    groups: usize,
    gamma: &[S],
    means: &[S],
    rstds: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let cpg = c / groups;
    let n = S::lit((cpg * spatial) as f64);
    let mut dx = vec![S::zero(); x.len()];
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    for g in 0..groups {
        let (mean, rstd) = (means[g], rstds[g]);
        let mut sum_dxhat = S::zero();
        let mut sum_dxhat_xhat = S::zero();
        for cl in 0..cpg {
            let ch = g * cpg + cl;
            for i in 0..spatial {
                let idx = ch * spatial + i;
                let xhat = (x[idx] - mean) * rstd;
                dgamma[ch] += dout[idx] * xhat;
                dbeta[ch] += dout[idx];
                let dxhat = dout[idx] * gamma[ch];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
        }
        for cl in 0..cpg {
            let ch = g * cpg + cl;
            for i in 0..spatial {
                let idx = ch * spatial + i;
                let xhat = (x[idx] - mean) * rstd;
                let dxhat = dout[idx] * gamma[ch];
                dx[idx] = rstd / n * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        k: usize,
        s: usize,
        p: usize,
    ) -> ConvGeom {
        ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride: s,
            padding: p,
            oh: (h + 2 * p - k) / s + 1,
            ow: (w + 2 * p - k) / s + 1,
        }
    }

    /// Direct nested-loop cross-correlation.
    fn naive_conv(input: &[f64], kernel: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.c_out * g.oh * g.ow];
        for co in 0..g.c_out {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += input[(ci * g.h + iy as usize) * g.w + ix as usize]
                                    * kernel[((co * g.c_in + ci) * g.k + ky) * g.k + kx];
                            }
                        }
                    }
                    out[(co * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(ci, h, w, co, k, s, p) in &[
            (2, 5, 4, 3, 3, 1, 1),
            (1, 6, 6, 2, 3, 2, 0),
            (3, 4, 4, 2, 1, 1, 0),
            (2, 7, 5, 1, 5, 2, 2),
        ] {
            let g = geom(ci, h, w, co, k, s, p);
            let input: Vec<f64> = (0..ci * h * w)
                .map(|i| ((i * 7 % 11) as f64) - 5.0)
                .collect();
            let kernel: Vec<f64> = (0..co * ci * k * k)
                .map(|i| ((i * 3 % 5) as f64) * 0.5 - 1.0)
                .collect();
            assert_eq!(
                conv2d_forward(&input, &kernel, &g),
                naive_conv(&input, &kernel, &g)
            );
        }
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint() {
        // <up(x), y> == <x, up^T(y)> for the duplication map.
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let ux = upsample2x(&x, 2, 2, 2);
        let uty = upsample2x_backward(&y, 2, 2, 2);
        let lhs: f64 = ux.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&uty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
