//! Pure compute kernels shared by the tape and the inference evaluator.
//!
//! Activations are `[B, C, H, W]` row-major. Convolutions lower to im2col +
//! one GEMM over the whole batch; backward passes reuse the same column
//! buffer layout. Gradient outputs always accumulate (`+=`) so repeated
//! backward calls add up, matching the additive-gradient contract.
//!
//! Padding rule: stride-1 convolutions zero-pad to preserve spatial size
//! (odd kernels only); strided convolutions use no padding. Transposed
//! convolutions mirror the same rule, so a stride-2 deconv exactly inverts
//! the encoder's stride-2 conv shape.

use super::real::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub hout: usize,
    pub wout: usize,
}

impl ConvDims {
    pub fn x_len(&self) -> usize {
        self.b * self.cin * self.h * self.w
    }
    pub fn y_len(&self) -> usize {
        self.b * self.cout * self.hout * self.wout
    }
    pub fn w_len(&self) -> usize {
        self.cout * self.cin * self.kh * self.kw
    }
    fn kdim(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn s_out(&self) -> usize {
        self.hout * self.wout
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_dims(
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Result<ConvDims> {
    if stride == 0 {
        return Err(Error::config("conv stride must be >= 1"));
    }
    let pad = if stride == 1 {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!(
                "stride-1 conv needs odd kernel for size-preserving padding, got {kh}x{kw}"
            )));
        }
        (kh - 1) / 2
    } else {
        0
    };
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::config(format!(
            "kernel {kh}x{kw} does not fit {h}x{w} input (stride {stride})"
        )));
    }
    let hout = (h + 2 * pad - kh) / stride + 1;
    let wout = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvDims { b, cin, h, w, cout, kh, kw, stride, pad, hout, wout })
}

/// col has layout [cin·kh·kw, b·hout·wout].
fn im2col<R: Real>(d: &ConvDims, x: &[R], col: &mut [R]) {
    let s_out = d.s_out();
    let cols = d.b * s_out;
    let plane = d.h * d.w;
    for ci in 0..d.cin {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let krow = (ci * d.kh + ki) * d.kw + kj;
                let row = &mut col[krow * cols..(krow + 1) * cols];
                for bi in 0..d.b {
                    let xb = &x[(bi * d.cin + ci) * plane..][..plane];
                    for oy in 0..d.hout {
                        let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                        let dst = &mut row[bi * s_out + oy * d.wout..][..d.wout];
                        if iy < 0 || iy >= d.h as isize {
                            dst.iter_mut().for_each(|v| *v = R::zero());
                            continue;
                        }
                        let xrow = &xb[iy as usize * d.w..][..d.w];
                        for (ox, dv) in dst.iter_mut().enumerate() {
                            let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                            *dv = if ix < 0 || ix >= d.w as isize {
                                R::zero()
                            } else {
                                xrow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column buffer back onto an input-shaped gradient.
fn col2im_acc<R: Real>(d: &ConvDims, col: &[R], dx: &mut [R]) {
    let s_out = d.s_out();
    let cols = d.b * s_out;
    let plane = d.h * d.w;
    for ci in 0..d.cin {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let krow = (ci * d.kh + ki) * d.kw + kj;
                let row = &col[krow * cols..(krow + 1) * cols];
                for bi in 0..d.b {
                    let xb = &mut dx[(bi * d.cin + ci) * plane..][..plane];
                    for oy in 0..d.hout {
                        let iy = (oy * d.stride + ki) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let src = &row[bi * s_out + oy * d.wout..][..d.wout];
                        let xrow = &mut xb[iy as usize * d.w..][..d.w];
                        for (ox, sv) in src.iter().enumerate() {
                            let ix = (ox * d.stride + kj) as isize - d.pad as isize;
                            if ix >= 0 && ix < d.w as isize {
                                xrow[ix as usize] += *sv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_fwd<R: Real>(d: &ConvDims, x: &[R], w: &[R], bias: &[R], y: &mut [R], scratch: &mut Vec<R>) {
    let kdim = d.kdim();
    let s_out = d.s_out();
    let cols = d.b * s_out;
    scratch.clear();
    scratch.resize(kdim * cols + d.cout * cols, R::zero());
    let (col, tmp) = scratch.split_at_mut(kdim * cols);
    im2col(d, x, col);
    R::gemm(
        d.cout, kdim, cols, R::one(), w, kdim as isize, 1, col, cols as isize, 1,
        R::zero(), tmp, cols as isize, 1,
    );
    // tmp is [cout, b·s]; emit y as [b, cout, s] with bias folded in
    for bi in 0..d.b {
        for co in 0..d.cout {
            let src = &tmp[co * cols + bi * s_out..][..s_out];
            let dst = &mut y[(bi * d.cout + co) * s_out..][..s_out];
            let bb = bias[co];
            for (dv, sv) in dst.iter_mut().zip(src) {
                *dv = *sv + bb;
            }
        }
    }
}

/// `dx`, `dw`, `db` all accumulate. `dx == None` skips the input gradient
/// (first layer over constant observations).
#[allow(clippy::too_many_arguments)]
pub fn conv_bwd<R: Real>(
    d: &ConvDims,
    x: &[R],
    w: &[R],
    dy: &[R],
    dx: Option<&mut [R]>,
    dw: &mut [R],
    db: &mut [R],
    scratch: &mut Vec<R>,
) {
    let kdim = d.kdim();
    let s_out = d.s_out();
    let cols = d.b * s_out;
    let want_dx = dx.is_some();
    let dcol_len = if want_dx { kdim * cols } else { 0 };
    scratch.clear();
    scratch.resize(kdim * cols + d.cout * cols + dcol_len, R::zero());
    let (col, rest) = scratch.split_at_mut(kdim * cols);
    let (dyt, dcol) = rest.split_at_mut(d.cout * cols);
    im2col(d, x, col);
    // dyt[co, b·s] = dy[b, co, s]
    for bi in 0..d.b {
        for co in 0..d.cout {
            let src = &dy[(bi * d.cout + co) * s_out..][..s_out];
            dyt[co * cols + bi * s_out..][..s_out].copy_from_slice(src);
        }
    }
    // dw += dyt · colᵀ
    R::gemm(
        d.cout, cols, kdim, R::one(), dyt, cols as isize, 1, col, 1, cols as isize,
        R::one(), dw, kdim as isize, 1,
    );
    for co in 0..d.cout {
        let mut s = R::zero();
        for v in &dyt[co * cols..(co + 1) * cols] {
            s += *v;
        }
        db[co] += s;
    }
    if let Some(dx) = dx {
        // dcol = wᵀ · dyt, then scatter back onto the input
        R::gemm(
            kdim, d.cout, cols, R::one(), w, 1, kdim as isize, dyt, cols as isize, 1,
            R::zero(), dcol, cols as isize, 1,
        );
        col2im_acc(d, dcol, dx);
    }
}

/// Option-conditional convolution: the weight bank is [n_opts, cout, cin,
/// kh, kw] and each batch sample selects one slice. Samples are grouped by
/// option so each group runs the plain batched conv path.
#[allow(clippy::too_many_arguments)]
pub fn opt_conv_fwd<R: Real>(
    d: &ConvDims,
    x: &[R],
    wbank: &[R],
    bbank: &[R],
    opts: &[u8],
    n_opts: usize,
    y: &mut [R],
    scratch: &mut Vec<R>,
    group: &mut Vec<R>,
) {
    debug_assert_eq!(opts.len(), d.b);
    let in_plane = d.cin * d.h * d.w;
    let out_plane = d.cout * d.s_out();
    let wlen = d.w_len();
    for o in 0..n_opts {
        let idxs: Vec<usize> = (0..d.b).filter(|&i| opts[i] as usize == o).collect();
        if idxs.is_empty() {
            continue;
        }
        let g = idxs.len();
        group.clear();
        group.resize(g * (in_plane + out_plane), R::zero());
        let (xg, yg) = group.split_at_mut(g * in_plane);
        for (gi, &bi) in idxs.iter().enumerate() {
            xg[gi * in_plane..][..in_plane].copy_from_slice(&x[bi * in_plane..][..in_plane]);
        }
        let dg = ConvDims { b: g, ..*d };
        conv_fwd(&dg, xg, &wbank[o * wlen..][..wlen], &bbank[o * d.cout..][..d.cout], yg, scratch);
        for (gi, &bi) in idxs.iter().enumerate() {
            y[bi * out_plane..][..out_plane].copy_from_slice(&yg[gi * out_plane..][..out_plane]);
        }
    }
}

/// Gradients land only in the selected option's weight slice; unselected
/// slices are untouched.
#[allow(clippy::too_many_arguments)]
pub fn opt_conv_bwd<R: Real>(
    d: &ConvDims,
    x: &[R],
    wbank: &[R],
    opts: &[u8],
    n_opts: usize,
    dy: &[R],
    mut dx: Option<&mut [R]>,
    dwbank: &mut [R],
    dbbank: &mut [R],
    scratch: &mut Vec<R>,
    group: &mut Vec<R>,
) {
    let in_plane = d.cin * d.h * d.w;
    let out_plane = d.cout * d.s_out();
    let wlen = d.w_len();
    for o in 0..n_opts {
        let idxs: Vec<usize> = (0..d.b).filter(|&i| opts[i] as usize == o).collect();
        if idxs.is_empty() {
            continue;
        }
        let g = idxs.len();
        let want_dx = dx.is_some();
        let dxg_len = if want_dx { g * in_plane } else { 0 };
        group.clear();
        group.resize(g * (in_plane + out_plane) + dxg_len, R::zero());
        let (xg, rest) = group.split_at_mut(g * in_plane);
        let (dyg, dxg) = rest.split_at_mut(g * out_plane);
        for (gi, &bi) in idxs.iter().enumerate() {
            xg[gi * in_plane..][..in_plane].copy_from_slice(&x[bi * in_plane..][..in_plane]);
            dyg[gi * out_plane..][..out_plane].copy_from_slice(&dy[bi * out_plane..][..out_plane]);
        }
        let dg = ConvDims { b: g, ..*d };
        conv_bwd(
            &dg,
            xg,
            &wbank[o * wlen..][..wlen],
            dyg,
            if want_dx { Some(dxg) } else { None },
            &mut dwbank[o * wlen..][..wlen],
            &mut dbbank[o * d.cout..][..d.cout],
            scratch,
        );
        if let Some(dx) = dx.as_deref_mut() {
            for (gi, &bi) in idxs.iter().enumerate() {
                let src = &dxg[gi * in_plane..][..in_plane];
                let dst = &mut dx[bi * in_plane..][..in_plane];
                for (dv, sv) in dst.iter_mut().zip(src) {
                    *dv += *sv;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DeconvDims {
    pub b: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub hout: usize,
    pub wout: usize,
}

impl DeconvDims {
    pub fn x_len(&self) -> usize {
        self.b * self.cin * self.h * self.w
    }
    pub fn y_len(&self) -> usize {
        self.b * self.cout * self.hout * self.wout
    }
    /// Weights are [cin, cout, kh, kw].
    pub fn w_len(&self) -> usize {
        self.cin * self.cout * self.kh * self.kw
    }
    fn ckk(&self) -> usize {
        self.cout * self.kh * self.kw
    }
}

#[allow(clippy::too_many_arguments)]
pub fn deconv_dims(
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Result<DeconvDims> {
    if stride == 0 {
        return Err(Error::config("deconv stride must be >= 1"));
    }
    let pad = if stride == 1 {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!(
                "stride-1 deconv needs odd kernel for size-preserving padding, got {kh}x{kw}"
            )));
        }
        (kh - 1) / 2
    } else {
        0
    };
    let hout = (h - 1) * stride + kh;
    let wout = (w - 1) * stride + kw;
    if hout < 2 * pad || wout < 2 * pad {
        return Err(Error::config("deconv output collapses under padding"));
    }
    Ok(DeconvDims { b, cin, h, w, cout, kh, kw, stride, pad, hout: hout - 2 * pad, wout: wout - 2 * pad })
}

pub fn deconv_fwd<R: Real>(
    d: &DeconvDims,
    x: &[R],
    w: &[R],
    bias: &[R],
    y: &mut [R],
    scratch: &mut Vec<R>,
) {
    let ckk = d.ckk();
    let s_in = d.h * d.w;
    let cols = d.b * s_in;
    let s_out = d.hout * d.wout;
    scratch.clear();
    scratch.resize(d.cin * cols + ckk * cols, R::zero());
    let (xt, colv) = scratch.split_at_mut(d.cin * cols);
    // xt[ci, b·s] = x[b, ci, s]
    for bi in 0..d.b {
        for ci in 0..d.cin {
            xt[ci * cols + bi * s_in..][..s_in]
                .copy_from_slice(&x[(bi * d.cin + ci) * s_in..][..s_in]);
        }
    }
    // colv = wᵀ · xt  (w is [cin, ckk])
    R::gemm(
        ckk, d.cin, cols, R::one(), w, 1, ckk as isize, xt, cols as isize, 1,
        R::zero(), colv, cols as isize, 1,
    );
    // start from bias planes, then scatter the columns out
    for bi in 0..d.b {
        for co in 0..d.cout {
            y[(bi * d.cout + co) * s_out..][..s_out].iter_mut().for_each(|v| *v = bias[co]);
        }
    }
    for co in 0..d.cout {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let krow = (co * d.kh + ki) * d.kw + kj;
                let row = &colv[krow * cols..(krow + 1) * cols];
                for bi in 0..d.b {
                    let yb = &mut y[(bi * d.cout + co) * s_out..][..s_out];
                    for iy in 0..d.h {
                        let oy = (iy * d.stride + ki) as isize - d.pad as isize;
                        if oy < 0 || oy >= d.hout as isize {
                            continue;
                        }
                        let src = &row[bi * s_in + iy * d.w..][..d.w];
                        for (ix, sv) in src.iter().enumerate() {
                            let ox = (ix * d.stride + kj) as isize - d.pad as isize;
                            if ox >= 0 && ox < d.wout as isize {
                                yb[oy as usize * d.wout + ox as usize] += *sv;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn deconv_bwd<R: Real>(
    d: &DeconvDims,
    x: &[R],
    w: &[R],
    dy: &[R],
    dx: Option<&mut [R]>,
    dw: &mut [R],
    db: &mut [R],
    scratch: &mut Vec<R>,
) {
    let ckk = d.ckk();
    let s_in = d.h * d.w;
    let cols = d.b * s_in;
    let s_out = d.hout * d.wout;
    let want_dx = dx.is_some();
    let dxt_len = if want_dx { d.cin * cols } else { 0 };
    scratch.clear();
    scratch.resize(ckk * cols + d.cin * cols + dxt_len, R::zero());
    let (dcolv, rest) = scratch.split_at_mut(ckk * cols);
    let (xt, dxt) = rest.split_at_mut(d.cin * cols);
    // gather dy into column layout (adjoint of the forward scatter)
    for co in 0..d.cout {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let krow = (co * d.kh + ki) * d.kw + kj;
                let row = &mut dcolv[krow * cols..(krow + 1) * cols];
                for bi in 0..d.b {
                    let yb = &dy[(bi * d.cout + co) * s_out..][..s_out];
                    for iy in 0..d.h {
                        let oy = (iy * d.stride + ki) as isize - d.pad as isize;
                        let dst = &mut row[bi * s_in + iy * d.w..][..d.w];
                        if oy < 0 || oy >= d.hout as isize {
                            dst.iter_mut().for_each(|v| *v = R::zero());
                            continue;
                        }
                        for (ix, dv) in dst.iter_mut().enumerate() {
                            let ox = (ix * d.stride + kj) as isize - d.pad as isize;
                            *dv = if ox >= 0 && ox < d.wout as isize {
                                yb[oy as usize * d.wout + ox as usize]
                            } else {
                                R::zero()
                            };
                        }
                    }
                }
            }
        }
    }
    for bi in 0..d.b {
        for ci in 0..d.cin {
            xt[ci * cols + bi * s_in..][..s_in]
                .copy_from_slice(&x[(bi * d.cin + ci) * s_in..][..s_in]);
        }
    }
    // dw += xt · dcolvᵀ
    R::gemm(
        d.cin, cols, ckk, R::one(), xt, cols as isize, 1, dcolv, 1, cols as isize,
        R::one(), dw, ckk as isize, 1,
    );
    for co in 0..d.cout {
        let mut s = R::zero();
        for bi in 0..d.b {
            for v in &dy[(bi * d.cout + co) * s_out..][..s_out] {
                s += *v;
            }
        }
        db[co] += s;
    }
    if let Some(dx) = dx {
        // dxt = w · dcolv
        R::gemm(
            d.cin, ckk, cols, R::one(), w, ckk as isize, 1, dcolv, cols as isize, 1,
            R::zero(), dxt, cols as isize, 1,
        );
        for bi in 0..d.b {
            for ci in 0..d.cin {
                let src = &dxt[ci * cols + bi * s_in..][..s_in];
                let dst = &mut dx[(bi * d.cin + ci) * s_in..][..s_in];
                for (dv, sv) in dst.iter_mut().zip(src) {
                    *dv += *sv;
                }
            }
        }
    }
}

/// x is [b, nin], w is [nout, nin], y is [b, nout].
pub fn fc_fwd<R: Real>(bsz: usize, nin: usize, nout: usize, x: &[R], w: &[R], bias: &[R], y: &mut [R]) {
    R::gemm(
        bsz, nin, nout, R::one(), x, nin as isize, 1, w, 1, nin as isize,
        R::zero(), y, nout as isize, 1,
    );
    for bi in 0..bsz {
        let row = &mut y[bi * nout..][..nout];
        for (v, bb) in row.iter_mut().zip(bias) {
            *v += *bb;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn fc_bwd<R: Real>(
    bsz: usize,
    nin: usize,
    nout: usize,
    x: &[R],
    w: &[R],
    dy: &[R],
    dx: Option<&mut [R]>,
    dw: &mut [R],
    db: &mut [R],
) {
    // dw += dyᵀ · x
    R::gemm(
        nout, bsz, nin, R::one(), dy, 1, nout as isize, x, nin as isize, 1,
        R::one(), dw, nin as isize, 1,
    );
    for bi in 0..bsz {
        for (d, v) in db.iter_mut().zip(&dy[bi * nout..][..nout]) {
            *d += *v;
        }
    }
    if let Some(dx) = dx {
        // dx += dy · w
        R::gemm(
            bsz, nout, nin, R::one(), dy, nout as isize, 1, w, nin as isize, 1,
            R::one(), dx, nin as isize, 1,
        );
    }
}

pub fn elu_fwd<R: Real>(x: &[R], y: &mut [R]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv = if *xv > R::zero() { *xv } else { xv.exp() - R::one() };
    }
}

/// Uses the forward output: for x <= 0, d/dx elu = e^x = y + 1.
pub fn elu_bwd<R: Real>(y: &[R], dy: &[R], dx: &mut [R]) {
    for ((dv, yv), gv) in dx.iter_mut().zip(y).zip(dy) {
        let d = if *yv > R::zero() { R::one() } else { *yv + R::one() };
        *dv += *gv * d;
    }
}

pub fn sigmoid_fwd<R: Real>(x: &[R], y: &mut [R]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv = R::one() / (R::one() + (-*xv).exp());
    }
}

pub fn sigmoid_bwd<R: Real>(y: &[R], dy: &[R], dx: &mut [R]) {
    for ((dv, yv), gv) in dx.iter_mut().zip(y).zip(dy) {
        *dv += *gv * *yv * (R::one() - *yv);
    }
}
