//! Define-by-run tape and parameter store.
//!
//! Forward code is generic over [`Exec`]: run it against a [`TapeExec`] to
//! record operations for [`Tape::backward`], or against an [`Evaluator`] for
//! inference. Both execute the same kernels on the same layouts, so outputs
//! agree bitwise. Handles ([`H`]) index tape-owned value buffers; weights are
//! always referenced by [`ParamId`], never copied onto the tape.

use std::collections::HashMap;

use super::kernels as kn;
use super::kernels::{ConvDims, DeconvDims};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub u32);

/// Named parameters plus matching gradient accumulators.
#[derive(Clone)]
pub struct ParamStore<R> {
    names: Vec<String>,
    index: HashMap<String, u32>,
    values: Vec<Tensor<R>>,
    grads: Vec<Tensor<R>>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), index: HashMap::new(), values: Vec::new(), grads: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<R>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name:?}")));
        }
        let id = self.values.len() as u32;
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.values[id.0 as usize]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.values[id.0 as usize]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<R> {
        &self.grads[id.0 as usize]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.grads[id.0 as usize]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len() as u32).map(ParamId)
    }

    /// Insertion-ordered iteration (checkpoint record order).
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<R>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(R::zero());
        }
    }

    /// Copy parameter values from another store with identical layout
    /// (target-network sync).
    pub fn copy_values_from(&mut self, other: &ParamStore<R>) {
        assert_eq!(self.names, other.names, "parameter layout mismatch");
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }

    pub fn convert<R2: Real>(&self) -> ParamStore<R2> {
        let mut out = ParamStore::new();
        for (name, value) in self.iter() {
            let conv = Tensor::from_vec(
                value.shape(),
                value.data().iter().map(|v| R2::from_f64(v.as_f64())).collect(),
            );
            out.add(name, conv).expect("names already unique");
        }
        out
    }

    fn values_and_grads_mut(&mut self) -> (&[Tensor<R>], &mut [Tensor<R>]) {
        (&self.values, &mut self.grads)
    }
}

/// Handle to a tape/evaluator value.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct H(u32);

enum Op<R> {
    Input,
    Conv { d: ConvDims, w: ParamId, b: ParamId, x: H },
    OptConv { d: ConvDims, w: ParamId, b: ParamId, x: H, opts: Vec<u8>, n_opts: usize },
    Deconv { d: DeconvDims, w: ParamId, b: ParamId, x: H },
    Fc { bsz: usize, nin: usize, nout: usize, w: ParamId, b: ParamId, x: H },
    Elu { x: H },
    Sigmoid { x: H },
    Mul { a: H, b: H },
    Add { a: H, b: H },
    Sub { a: H, b: H },
    Scale { x: H, c: R },
    Sum { x: H },
    ConcatCh { a: H, b: H, ca: usize, cb: usize, plane: usize, bsz: usize },
    Reshape { x: H },
    Narrow { x: H, offset: usize, width: usize, full: usize, bsz: usize },
    RowSelect { x: H, cols: Vec<usize>, full: usize },
    RepeatRows { x: H, times: usize, row: usize },
}

/// Shared forward-op implementations. Both executors defer here so recorded
/// and inference-only forwards are literally the same machine code.
struct Compute;

impl Compute {
    #[allow(clippy::too_many_arguments)]
    fn conv<R: Real>(
        params: &ParamStore<R>,
        x: &Tensor<R>,
        w: ParamId,
        b: ParamId,
        stride: usize,
        scratch: &mut Vec<R>,
    ) -> (ConvDims, Tensor<R>) {
        let ws = params.value(w).shape().to_vec();
        assert_eq!(x.rank(), 4, "conv input must be [B,C,H,W], got {:?}", x.shape());
        assert_eq!(ws.len(), 4, "conv weights must be [Cout,Cin,Kh,Kw]");
        let d = kn::conv_dims(x.dim(0), x.dim(1), x.dim(2), x.dim(3), ws[0], ws[2], ws[3], stride)
            .expect("conv shape validated at model build");
        assert_eq!(ws[1], d.cin, "conv weight cin mismatch");
        let mut y = Tensor::zeros(&[d.b, d.cout, d.hout, d.wout]);
        kn::conv_fwd(&d, x.data(), params.value(w).data(), params.value(b).data(), y.data_mut(), scratch);
        (d, y)
    }

    #[allow(clippy::too_many_arguments)]
    fn opt_conv<R: Real>(
        params: &ParamStore<R>,
        x: &Tensor<R>,
        w: ParamId,
        b: ParamId,
        opts: &[u8],
        stride: usize,
        scratch: &mut Vec<R>,
        group: &mut Vec<R>,
    ) -> (ConvDims, usize, Tensor<R>) {
        let ws = params.value(w).shape().to_vec();
        assert_eq!(x.rank(), 4, "opt_conv input must be [B,C,H,W]");
        assert_eq!(ws.len(), 5, "opt_conv weights must be [O,Cout,Cin,Kh,Kw]");
        assert_eq!(opts.len(), x.dim(0), "one option per batch sample");
        let n_opts = ws[0];
        assert!(opts.iter().all(|&o| (o as usize) < n_opts), "option index out of range");
        let d = kn::conv_dims(x.dim(0), x.dim(1), x.dim(2), x.dim(3), ws[1], ws[3], ws[4], stride)
            .expect("opt_conv shape validated at model build");
        let mut y = Tensor::zeros(&[d.b, d.cout, d.hout, d.wout]);
        kn::opt_conv_fwd(
            &d, x.data(), params.value(w).data(), params.value(b).data(), opts, n_opts,
            y.data_mut(), scratch, group,
        );
        (d, n_opts, y)
    }

    fn deconv<R: Real>(
        params: &ParamStore<R>,
        x: &Tensor<R>,
        w: ParamId,
        b: ParamId,
        stride: usize,
        scratch: &mut Vec<R>,
    ) -> (DeconvDims, Tensor<R>) {
        let ws = params.value(w).shape().to_vec();
        assert_eq!(x.rank(), 4, "deconv input must be [B,C,H,W]");
        assert_eq!(ws.len(), 4, "deconv weights must be [Cin,Cout,Kh,Kw]");
        let d = kn::deconv_dims(x.dim(0), x.dim(1), x.dim(2), x.dim(3), ws[1], ws[2], ws[3], stride)
            .expect("deconv shape validated at model build");
        assert_eq!(ws[0], d.cin, "deconv weight cin mismatch");
        let mut y = Tensor::zeros(&[d.b, d.cout, d.hout, d.wout]);
        kn::deconv_fwd(&d, x.data(), params.value(w).data(), params.value(b).data(), y.data_mut(), scratch);
        (d, y)
    }

    fn fc<R: Real>(
        params: &ParamStore<R>,
        x: &Tensor<R>,
        w: ParamId,
        b: ParamId,
    ) -> (usize, usize, usize, Tensor<R>) {
        let ws = params.value(w).shape().to_vec();
        assert_eq!(x.rank(), 2, "fc input must be [B,In]; reshape first");
        assert_eq!(ws.len(), 2, "fc weights must be [Out,In]");
        let (bsz, nin, nout) = (x.dim(0), x.dim(1), ws[0]);
        assert_eq!(ws[1], nin, "fc weight in-features mismatch");
        let mut y = Tensor::zeros(&[bsz, nout]);
        kn::fc_fwd(bsz, nin, nout, x.data(), params.value(w).data(), params.value(b).data(), y.data_mut());
        (bsz, nin, nout, y)
    }
}

fn binary_out_shape(a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Vec<usize> {
    if a.len() == 1 {
        b.shape().to_vec()
    } else if b.len() == 1 {
        a.shape().to_vec()
    } else {
        assert_eq!(a.shape(), b.shape(), "elementwise op on mismatched shapes");
        a.shape().to_vec()
    }
}

pub trait Exec<R: Real> {
    fn input(&mut self, t: Tensor<R>) -> H;
    fn conv(&mut self, x: H, w: ParamId, b: ParamId, stride: usize) -> H;
    fn opt_conv(&mut self, x: H, w: ParamId, b: ParamId, opts: &[u8], stride: usize) -> H;
    fn deconv(&mut self, x: H, w: ParamId, b: ParamId, stride: usize) -> H;
    fn fc(&mut self, x: H, w: ParamId, b: ParamId) -> H;
    fn elu(&mut self, x: H) -> H;
    fn sigmoid(&mut self, x: H) -> H;
    fn mul(&mut self, a: H, b: H) -> H;
    fn add(&mut self, a: H, b: H) -> H;
    fn sub(&mut self, a: H, b: H) -> H;
    fn scale(&mut self, x: H, c: R) -> H;
    fn sum(&mut self, x: H) -> H;
    /// Concatenate along the channel axis of [B,C,H,W] tensors.
    fn concat_ch(&mut self, a: H, b: H) -> H;
    fn reshape(&mut self, x: H, shape: &[usize]) -> H;
    /// Columns [offset, offset+width) of a [B,W] tensor.
    fn narrow(&mut self, x: H, offset: usize, width: usize) -> H;
    /// One column per row of a [B,W] tensor, chosen per sample.
    fn row_select(&mut self, x: H, cols: &[usize]) -> H;
    /// [B, ...] -> [B*times, ...] with each row repeated `times` times.
    fn repeat_rows(&mut self, x: H, times: usize) -> H;
    fn value(&self, h: H) -> &Tensor<R>;
}

pub struct Tape<R: Real> {
    vals: Vec<Tensor<R>>,
    ops: Vec<Op<R>>,
    scratch: Vec<R>,
    group: Vec<R>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), ops: Vec::new(), scratch: Vec::new(), group: Vec::new() }
    }

    /// Drop recorded state, keep buffer capacity.
    pub fn reset(&mut self) {
        self.vals.clear();
        self.ops.clear();
    }

    pub fn recording<'a>(&'a mut self, params: &'a ParamStore<R>) -> TapeExec<'a, R> {
        TapeExec { tape: self, params }
    }

    pub fn value(&self, h: H) -> &Tensor<R> {
        &self.vals[h.0 as usize]
    }

    fn push(&mut self, op: Op<R>, val: Tensor<R>) -> H {
        debug_assert!(val.all_finite(), "non-finite value out of op {}", self.ops.len());
        self.vals.push(val);
        self.ops.push(op);
        H(self.vals.len() as u32 - 1)
    }

    /// Reverse sweep from a scalar loss. Parameter gradients accumulate into
    /// the store (additive across calls); call `zero_grads` to clear.
    pub fn backward(&mut self, loss: H, store: &mut ParamStore<R>) {
        assert_eq!(self.vals[loss.0 as usize].len(), 1, "backward needs a scalar loss");
        assert!(!self.ops.is_empty(), "backward without a recorded forward");
        let Tape { vals, ops, scratch, group } = self;
        let n = vals.len();
        let mut grads: Vec<Option<Tensor<R>>> = (0..n).map(|_| None).collect();
        grads[loss.0 as usize] = Some(Tensor::filled(&[1], R::one()));
        let (pvals, pgrads) = store.values_and_grads_mut();

        for i in (0..n).rev() {
            let (lo, hi) = grads.split_at_mut(i);
            let gout = match hi[0].as_ref() {
                Some(g) => g,
                None => continue,
            };
            match &ops[i] {
                Op::Input => {}
                Op::Conv { d, w, b, x } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    let (gw, gb) = two_mut(pgrads, w.0 as usize, b.0 as usize);
                    kn::conv_bwd(
                        d,
                        vals[x.0 as usize].data(),
                        pvals[w.0 as usize].data(),
                        gout.data(),
                        Some(dx.data_mut()),
                        gw.data_mut(),
                        gb.data_mut(),
                        scratch,
                    );
                }
                Op::OptConv { d, w, b, x, opts, n_opts } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    let (gw, gb) = two_mut(pgrads, w.0 as usize, b.0 as usize);
                    kn::opt_conv_bwd(
                        d,
                        vals[x.0 as usize].data(),
                        pvals[w.0 as usize].data(),
                        opts,
                        *n_opts,
                        gout.data(),
                        Some(dx.data_mut()),
                        gw.data_mut(),
                        gb.data_mut(),
                        scratch,
                        group,
                    );
                }
                Op::Deconv { d, w, b, x } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    let (gw, gb) = two_mut(pgrads, w.0 as usize, b.0 as usize);
                    kn::deconv_bwd(
                        d,
                        vals[x.0 as usize].data(),
                        pvals[w.0 as usize].data(),
                        gout.data(),
                        Some(dx.data_mut()),
                        gw.data_mut(),
                        gb.data_mut(),
                        scratch,
                    );
                }
                Op::Fc { bsz, nin, nout, w, b, x } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    let (gw, gb) = two_mut(pgrads, w.0 as usize, b.0 as usize);
                    kn::fc_bwd(
                        *bsz,
                        *nin,
                        *nout,
                        vals[x.0 as usize].data(),
                        pvals[w.0 as usize].data(),
                        gout.data(),
                        Some(dx.data_mut()),
                        gw.data_mut(),
                        gb.data_mut(),
                    );
                }
                Op::Elu { x } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    kn::elu_bwd(vals[i].data(), gout.data(), dx.data_mut());
                }
                Op::Sigmoid { x } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    kn::sigmoid_bwd(vals[i].data(), gout.data(), dx.data_mut());
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let gout = hi[0].as_ref().unwrap().clone();
                    accumulate_mul(&mut lo[a.0 as usize], &gout, &vals[b.0 as usize], vals[a.0 as usize].shape());
                    accumulate_mul(&mut lo[b.0 as usize], &gout, &vals[a.0 as usize], vals[b.0 as usize].shape());
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    let gout = hi[0].as_ref().unwrap().clone();
                    accumulate_passthrough(&mut lo[a.0 as usize], &gout, vals[a.0 as usize].shape(), R::one());
                    accumulate_passthrough(&mut lo[b.0 as usize], &gout, vals[b.0 as usize].shape(), R::one());
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    let gout = hi[0].as_ref().unwrap().clone();
                    accumulate_passthrough(&mut lo[a.0 as usize], &gout, vals[a.0 as usize].shape(), R::one());
                    accumulate_passthrough(&mut lo[b.0 as usize], &gout, vals[b.0 as usize].shape(), -R::one());
                }
                Op::Scale { x, c } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    for (dv, gv) in dx.data_mut().iter_mut().zip(gout.data()) {
                        *dv += *gv * *c;
                    }
                }
                Op::Sum { x } => {
                    let g = gout.item();
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    for dv in dx.data_mut() {
                        *dv += g;
                    }
                }
                Op::ConcatCh { a, b, ca, cb, plane, bsz } => {
                    let (ca, cb, plane) = (*ca, *cb, *plane);
                    let row_out = (ca + cb) * plane;
                    {
                        let da = ensure(&mut lo[a.0 as usize], vals[a.0 as usize].shape());
                        for bi in 0..*bsz {
                            let src = &gout.data()[bi * row_out..][..ca * plane];
                            let dst = &mut da.data_mut()[bi * ca * plane..][..ca * plane];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv += *sv;
                            }
                        }
                    }
                    let db = ensure(&mut lo[b.0 as usize], vals[b.0 as usize].shape());
                    for bi in 0..*bsz {
                        let src = &gout.data()[bi * row_out + ca * plane..][..cb * plane];
                        let dst = &mut db.data_mut()[bi * cb * plane..][..cb * plane];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += *sv;
                        }
                    }
                }
                Op::Reshape { x } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    for (dv, gv) in dx.data_mut().iter_mut().zip(gout.data()) {
                        *dv += *gv;
                    }
                }
                Op::Narrow { x, offset, width, full, bsz } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    for bi in 0..*bsz {
                        let src = &gout.data()[bi * width..][..*width];
                        let dst = &mut dx.data_mut()[bi * full + offset..][..*width];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += *sv;
                        }
                    }
                }
                Op::RowSelect { x, cols, full } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    for (bi, &c) in cols.iter().enumerate() {
                        dx.data_mut()[bi * full + c] += gout.data()[bi];
                    }
                }
                Op::RepeatRows { x, times, row } => {
                    let dx = ensure(&mut lo[x.0 as usize], vals[x.0 as usize].shape());
                    let b_in = vals[x.0 as usize].len() / row;
                    for bi in 0..b_in {
                        for j in 0..*times {
                            let src = &gout.data()[(bi * times + j) * row..][..*row];
                            let dst = &mut dx.data_mut()[bi * row..][..*row];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv += *sv;
                            }
                        }
                    }
                }
            }
        }
        #[cfg(debug_assertions)]
        for g in pgrads.iter() {
            debug_assert!(g.all_finite(), "non-finite parameter gradient");
        }
    }
}

fn ensure<'s, R: Real>(slot: &'s mut Option<Tensor<R>>, shape: &[usize]) -> &'s mut Tensor<R> {
    slot.get_or_insert_with(|| Tensor::zeros(shape))
}

fn two_mut<R>(s: &mut [Tensor<R>], i: usize, j: usize) -> (&mut Tensor<R>, &mut Tensor<R>) {
    assert_ne!(i, j, "weight and bias must be distinct parameters");
    if i < j {
        let (a, b) = s.split_at_mut(j);
        (&mut a[i], &mut b[0])
    } else {
        let (a, b) = s.split_at_mut(i);
        (&mut b[0], &mut a[j])
    }
}

/// d(a*b)/da accumulated with scalar-broadcast handling.
fn accumulate_mul<R: Real>(
    slot: &mut Option<Tensor<R>>,
    gout: &Tensor<R>,
    other: &Tensor<R>,
    target_shape: &[usize],
) {
    let dt = slot.get_or_insert_with(|| Tensor::zeros(target_shape));
    let n: usize = target_shape.iter().product();
    if n == 1 {
        // scalar side: sum of elementwise products
        let mut acc = R::zero();
        if other.len() == 1 {
            acc = gout.item() * other.item();
        } else {
            for (gv, ov) in gout.data().iter().zip(other.data()) {
                acc += *gv * *ov;
            }
        }
        dt.data_mut()[0] += acc;
    } else if other.len() == 1 {
        let o = other.item();
        for (dv, gv) in dt.data_mut().iter_mut().zip(gout.data()) {
            *dv += *gv * o;
        }
    } else {
        for ((dv, gv), ov) in dt.data_mut().iter_mut().zip(gout.data()).zip(other.data()) {
            *dv += *gv * *ov;
        }
    }
}

/// d(a±b) pass-through with scalar-broadcast reduction.
fn accumulate_passthrough<R: Real>(
    slot: &mut Option<Tensor<R>>,
    gout: &Tensor<R>,
    target_shape: &[usize],
    sign: R,
) {
    let dt = slot.get_or_insert_with(|| Tensor::zeros(target_shape));
    let n: usize = target_shape.iter().product();
    if n == 1 && gout.len() > 1 {
        let mut acc = R::zero();
        for gv in gout.data() {
            acc += *gv;
        }
        dt.data_mut()[0] += acc * sign;
    } else {
        for (dv, gv) in dt.data_mut().iter_mut().zip(gout.data()) {
            *dv += *gv * sign;
        }
    }
}

pub struct TapeExec<'a, R: Real> {
    tape: &'a mut Tape<R>,
    params: &'a ParamStore<R>,
}

impl<'a, R: Real> Exec<R> for TapeExec<'a, R> {
    fn input(&mut self, t: Tensor<R>) -> H {
        self.tape.push(Op::Input, t)
    }

    fn conv(&mut self, x: H, w: ParamId, b: ParamId, stride: usize) -> H {
        let Tape { vals, scratch, .. } = &mut *self.tape;
        let (d, y) = Compute::conv(self.params, &vals[x.0 as usize], w, b, stride, scratch);
        self.tape.push(Op::Conv { d, w, b, x }, y)
    }

    fn opt_conv(&mut self, x: H, w: ParamId, b: ParamId, opts: &[u8], stride: usize) -> H {
        let Tape { vals, scratch, group, .. } = &mut *self.tape;
        let (d, n_opts, y) = Compute::opt_conv(
            self.params, &vals[x.0 as usize], w, b, opts, stride, scratch, group,
        );
        self.tape.push(Op::OptConv { d, w, b, x, opts: opts.to_vec(), n_opts }, y)
    }

    fn deconv(&mut self, x: H, w: ParamId, b: ParamId, stride: usize) -> H {
        let Tape { vals, scratch, .. } = &mut *self.tape;
        let (d, y) = Compute::deconv(self.params, &vals[x.0 as usize], w, b, stride, scratch);
        self.tape.push(Op::Deconv { d, w, b, x }, y)
    }

    fn fc(&mut self, x: H, w: ParamId, b: ParamId) -> H {
        let (bsz, nin, nout, y) = Compute::fc(self.params, self.tape.value(x), w, b);
        self.tape.push(Op::Fc { bsz, nin, nout, w, b, x }, y)
    }

    fn elu(&mut self, x: H) -> H {
        let xv = self.tape.value(x);
        let mut y = Tensor::zeros(xv.shape());
        kn::elu_fwd(xv.data(), y.data_mut());
        self.tape.push(Op::Elu { x }, y)
    }

    fn sigmoid(&mut self, x: H) -> H {
        let xv = self.tape.value(x);
        let mut y = Tensor::zeros(xv.shape());
        kn::sigmoid_fwd(xv.data(), y.data_mut());
        self.tape.push(Op::Sigmoid { x }, y)
    }

    fn mul(&mut self, a: H, b: H) -> H {
        let y = ew_mul(self.tape.value(a), self.tape.value(b));
        self.tape.push(Op::Mul { a, b }, y)
    }

    fn add(&mut self, a: H, b: H) -> H {
        let y = ew_add(self.tape.value(a), self.tape.value(b), R::one());
        self.tape.push(Op::Add { a, b }, y)
    }

    fn sub(&mut self, a: H, b: H) -> H {
        let y = ew_add(self.tape.value(a), self.tape.value(b), -R::one());
        self.tape.push(Op::Sub { a, b }, y)
    }

    fn scale(&mut self, x: H, c: R) -> H {
        let xv = self.tape.value(x);
        let y = Tensor::from_vec(xv.shape(), xv.data().iter().map(|&v| v * c).collect());
        self.tape.push(Op::Scale { x, c }, y)
    }

    fn sum(&mut self, x: H) -> H {
        let mut acc = R::zero();
        for v in self.tape.value(x).data() {
            acc += *v;
        }
        self.tape.push(Op::Sum { x }, Tensor::scalar(acc))
    }

    fn concat_ch(&mut self, a: H, b: H) -> H {
        let (meta, y) = ew_concat_ch(self.tape.value(a), self.tape.value(b));
        let (ca, cb, plane, bsz) = meta;
        self.tape.push(Op::ConcatCh { a, b, ca, cb, plane, bsz }, y)
    }

    fn reshape(&mut self, x: H, shape: &[usize]) -> H {
        let y = self.tape.value(x).clone().reshaped(shape);
        self.tape.push(Op::Reshape { x }, y)
    }

    fn narrow(&mut self, x: H, offset: usize, width: usize) -> H {
        let (meta, y) = ew_narrow(self.tape.value(x), offset, width);
        let (full, bsz) = meta;
        self.tape.push(Op::Narrow { x, offset, width, full, bsz }, y)
    }

    fn row_select(&mut self, x: H, cols: &[usize]) -> H {
        let (full, y) = ew_row_select(self.tape.value(x), cols);
        self.tape.push(Op::RowSelect { x, cols: cols.to_vec(), full }, y)
    }

    fn repeat_rows(&mut self, x: H, times: usize) -> H {
        let (row, y) = ew_repeat_rows(self.tape.value(x), times);
        self.tape.push(Op::RepeatRows { x, times, row }, y)
    }

    fn value(&self, h: H) -> &Tensor<R> {
        self.tape.value(h)
    }
}

fn ew_mul<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Tensor<R> {
    let shape = binary_out_shape(a, b);
    let mut y = Tensor::zeros(&shape);
    if a.len() == 1 {
        let av = a.item();
        for (yv, bv) in y.data_mut().iter_mut().zip(b.data()) {
            *yv = av * *bv;
        }
    } else if b.len() == 1 {
        let bv = b.item();
        for (yv, av) in y.data_mut().iter_mut().zip(a.data()) {
            *yv = *av * bv;
        }
    } else {
        for ((yv, av), bv) in y.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
            *yv = *av * *bv;
        }
    }
    y
}

fn ew_add<R: Real>(a: &Tensor<R>, b: &Tensor<R>, sign: R) -> Tensor<R> {
    let shape = binary_out_shape(a, b);
    let mut y = Tensor::zeros(&shape);
    if a.len() == 1 {
        let av = a.item();
        for (yv, bv) in y.data_mut().iter_mut().zip(b.data()) {
            *yv = av + *bv * sign;
        }
    } else if b.len() == 1 {
        let bv = b.item() * sign;
        for (yv, av) in y.data_mut().iter_mut().zip(a.data()) {
            *yv = *av + bv;
        }
    } else {
        for ((yv, av), bv) in y.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
            *yv = *av + *bv * sign;
        }
    }
    y
}

type ConcatMeta = (usize, usize, usize, usize);

fn ew_concat_ch<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> (ConcatMeta, Tensor<R>) {
    assert_eq!(a.rank(), 4, "concat_ch wants [B,C,H,W]");
    assert_eq!(b.rank(), 4, "concat_ch wants [B,C,H,W]");
    assert_eq!(a.dim(0), b.dim(0), "concat_ch batch mismatch");
    assert_eq!((a.dim(2), a.dim(3)), (b.dim(2), b.dim(3)), "concat_ch spatial mismatch");
    let (bsz, ca, cb) = (a.dim(0), a.dim(1), b.dim(1));
    let plane = a.dim(2) * a.dim(3);
    let mut y = Tensor::zeros(&[bsz, ca + cb, a.dim(2), a.dim(3)]);
    let row_out = (ca + cb) * plane;
    for bi in 0..bsz {
        y.data_mut()[bi * row_out..][..ca * plane]
            .copy_from_slice(&a.data()[bi * ca * plane..][..ca * plane]);
        y.data_mut()[bi * row_out + ca * plane..][..cb * plane]
            .copy_from_slice(&b.data()[bi * cb * plane..][..cb * plane]);
    }
    ((ca, cb, plane, bsz), y)
}

fn ew_narrow<R: Real>(x: &Tensor<R>, offset: usize, width: usize) -> ((usize, usize), Tensor<R>) {
    assert_eq!(x.rank(), 2, "narrow wants [B,W]");
    let (bsz, full) = (x.dim(0), x.dim(1));
    assert!(offset + width <= full, "narrow out of range");
    let mut y = Tensor::zeros(&[bsz, width]);
    for bi in 0..bsz {
        y.data_mut()[bi * width..][..width].copy_from_slice(&x.data()[bi * full + offset..][..width]);
    }
    ((full, bsz), y)
}

fn ew_row_select<R: Real>(x: &Tensor<R>, cols: &[usize]) -> (usize, Tensor<R>) {
    assert_eq!(x.rank(), 2, "row_select wants [B,W]");
    let (bsz, full) = (x.dim(0), x.dim(1));
    assert_eq!(cols.len(), bsz, "one column per row");
    let mut y = Tensor::zeros(&[bsz, 1]);
    for (bi, &c) in cols.iter().enumerate() {
        assert!(c < full, "row_select column out of range");
        y.data_mut()[bi] = x.data()[bi * full + c];
    }
    (full, y)
}

fn ew_repeat_rows<R: Real>(x: &Tensor<R>, times: usize) -> (usize, Tensor<R>) {
    assert!(x.rank() >= 1 && times >= 1);
    let bsz = x.dim(0);
    let row = x.len() / bsz;
    let mut shape = x.shape().to_vec();
    shape[0] = bsz * times;
    let mut y = Tensor::zeros(&shape);
    for bi in 0..bsz {
        for j in 0..times {
            y.data_mut()[(bi * times + j) * row..][..row].copy_from_slice(&x.data()[bi * row..][..row]);
        }
    }
    (row, y)
}

/// Inference executor: same kernels, no recording, no gradients.
pub struct Evaluator<'a, R: Real> {
    params: &'a ParamStore<R>,
    vals: Vec<Tensor<R>>,
    scratch: Vec<R>,
    group: Vec<R>,
}

impl<'a, R: Real> Evaluator<'a, R> {
    pub fn new(params: &'a ParamStore<R>) -> Self {
        Evaluator { params, vals: Vec::new(), scratch: Vec::new(), group: Vec::new() }
    }

    pub fn reset(&mut self) {
        self.vals.clear();
    }

    fn push(&mut self, val: Tensor<R>) -> H {
        debug_assert!(val.all_finite(), "non-finite value in evaluator");
        self.vals.push(val);
        H(self.vals.len() as u32 - 1)
    }
}

impl<'a, R: Real> Exec<R> for Evaluator<'a, R> {
    fn input(&mut self, t: Tensor<R>) -> H {
        self.push(t)
    }

    fn conv(&mut self, x: H, w: ParamId, b: ParamId, stride: usize) -> H {
        let (_, y) = Compute::conv(self.params, &self.vals[x.0 as usize], w, b, stride, &mut self.scratch);
        self.push(y)
    }

    fn opt_conv(&mut self, x: H, w: ParamId, b: ParamId, opts: &[u8], stride: usize) -> H {
        let Evaluator { params, vals, scratch, group } = self;
        let (_, _, y) = Compute::opt_conv(params, &vals[x.0 as usize], w, b, opts, stride, scratch, group);
        self.push(y)
    }

    fn deconv(&mut self, x: H, w: ParamId, b: ParamId, stride: usize) -> H {
        let (_, y) = Compute::deconv(self.params, &self.vals[x.0 as usize], w, b, stride, &mut self.scratch);
        self.push(y)
    }

    fn fc(&mut self, x: H, w: ParamId, b: ParamId) -> H {
        let (_, _, _, y) = Compute::fc(self.params, &self.vals[x.0 as usize], w, b);
        self.push(y)
    }

    fn elu(&mut self, x: H) -> H {
        let xv = &self.vals[x.0 as usize];
        let mut y = Tensor::zeros(xv.shape());
        kn::elu_fwd(xv.data(), y.data_mut());
        self.push(y)
    }

    fn sigmoid(&mut self, x: H) -> H {
        let xv = &self.vals[x.0 as usize];
        let mut y = Tensor::zeros(xv.shape());
        kn::sigmoid_fwd(xv.data(), y.data_mut());
        self.push(y)
    }

    fn mul(&mut self, a: H, b: H) -> H {
        let y = ew_mul(&self.vals[a.0 as usize], &self.vals[b.0 as usize]);
        self.push(y)
    }

    fn add(&mut self, a: H, b: H) -> H {
        let y = ew_add(&self.vals[a.0 as usize], &self.vals[b.0 as usize], R::one());
        self.push(y)
    }

    fn sub(&mut self, a: H, b: H) -> H {
        let y = ew_add(&self.vals[a.0 as usize], &self.vals[b.0 as usize], -R::one());
        self.push(y)
    }

    fn scale(&mut self, x: H, c: R) -> H {
        let xv = &self.vals[x.0 as usize];
        let y = Tensor::from_vec(xv.shape(), xv.data().iter().map(|&v| v * c).collect());
        self.push(y)
    }

    fn sum(&mut self, x: H) -> H {
        let mut acc = R::zero();
        for v in self.vals[x.0 as usize].data() {
            acc += *v;
        }
        self.push(Tensor::scalar(acc))
    }

    fn concat_ch(&mut self, a: H, b: H) -> H {
        let (_, y) = ew_concat_ch(&self.vals[a.0 as usize], &self.vals[b.0 as usize]);
        self.push(y)
    }

    fn reshape(&mut self, x: H, shape: &[usize]) -> H {
        let y = self.vals[x.0 as usize].clone().reshaped(shape);
        self.push(y)
    }

    fn narrow(&mut self, x: H, offset: usize, width: usize) -> H {
        let (_, y) = ew_narrow(&self.vals[x.0 as usize], offset, width);
        self.push(y)
    }

    fn row_select(&mut self, x: H, cols: &[usize]) -> H {
        let (_, y) = ew_row_select(&self.vals[x.0 as usize], cols);
        self.push(y)
    }

    fn repeat_rows(&mut self, x: H, times: usize) -> H {
        let (_, y) = ew_repeat_rows(&self.vals[x.0 as usize], times);
        self.push(y)
    }

    fn value(&self, h: H) -> &Tensor<R> {
        &self.vals[h.0 as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_sum_loss_has_unit_gradients() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = store.add("b", Tensor::from_vec(&[2], vec![0.1, 0.2])).unwrap();
        let mut tape = Tape::new();
        let mut ex = tape.recording(&store);
        let x = ex.input(Tensor::from_vec(&[1, 2], vec![1.0, 1.0]));
        let y = ex.fc(x, w, b);
        let loss = ex.sum(y);
        drop(ex);
        tape.backward(loss, &mut store);
        // d(sum(Wx + b))/dW_ij = x_j = 1, /db_i = 1
        assert!(store.grad(w).data().iter().all(|&g| (g - 1.0).abs() < 1e-12));
        assert!(store.grad(b).data().iter().all(|&g| (g - 1.0).abs() < 1e-12));
    }

    #[test]
    fn two_backward_calls_double_gradients() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_vec(&[1, 1], vec![3.0])).unwrap();
        let b = store.add("b", Tensor::from_vec(&[1], vec![0.0])).unwrap();
        let mut tape = Tape::new();
        let mut ex = tape.recording(&store);
        let x = ex.input(Tensor::from_vec(&[1, 1], vec![2.0]));
        let y = ex.fc(x, w, b);
        let loss = ex.sum(y);
        drop(ex);
        tape.backward(loss, &mut store);
        let g1 = store.grad(w).item();
        tape.backward(loss, &mut store);
        let g2 = store.grad(w).item();
        assert_eq!(g2, 2.0 * g1);
    }

    #[test]
    fn evaluator_matches_tape_bitwise() {
        let mut store = ParamStore::<f32>::new();
        let w = store
            .add("w", Tensor::from_vec(&[3, 4], (0..12).map(|i| (i as f32) * 0.17 - 1.0).collect()))
            .unwrap();
        let b = store.add("b", Tensor::from_vec(&[3], vec![0.3, -0.1, 0.07])).unwrap();
        let xd: Vec<f32> = (0..8).map(|i| (i as f32) * 0.29 - 1.2).collect();

        let mut tape = Tape::new();
        let mut tx = tape.recording(&store);
        let x = tx.input(Tensor::from_vec(&[2, 4], xd.clone()));
        let h = tx.fc(x, w, b);
        let e = tx.elu(h);
        let out_tape = tx.value(e).clone();
        drop(tx);

        let mut ev = Evaluator::new(&store);
        let x2 = ev.input(Tensor::from_vec(&[2, 4], xd));
        let h2 = ev.fc(x2, w, b);
        let e2 = ev.elu(h2);
        assert_eq!(out_tape.data(), ev.value(e2).data());
    }

    #[test]
    fn mul_with_ones_is_identity_and_square_grad_is_2x() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_vec(&[1, 1], vec![1.0])).unwrap();
        let b = store.add("b", Tensor::from_vec(&[1], vec![0.0])).unwrap();
        let mut tape = Tape::new();
        let mut ex = tape.recording(&store);
        let x = ex.input(Tensor::from_vec(&[1, 1], vec![3.0]));
        let y = ex.fc(x, w, b); // y = w*x = 3
        let ones = ex.input(Tensor::filled(&[1, 1], 1.0));
        let y1 = ex.mul(y, ones);
        assert_eq!(ex.value(y1).item(), 3.0);
        let sq = ex.mul(y1, y1); // (wx)^2
        let loss = ex.sum(sq);
        drop(ex);
        tape.backward(loss, &mut store);
        // d(w^2 x^2)/dw = 2 w x^2 = 18
        assert!((store.grad(w).item() - 18.0).abs() < 1e-12);
    }
}
