//! 3D convolutions over `(B, C, D, H, W)` tensors.
//!
//! Dense and grouped convolutions go through chunked im2col + gemm; the
//! depthwise case (one input and one output channel per group) uses direct
//! loops since a 1-row gemm is wasteful.

use super::direct::{self, Direct};
use crate::real::{matmul_into, MatRef, Real};
use crate::tape::Var;
use crate::tensor::Tensor;

/// Geometry of a 3D convolution. Weights are laid out
/// `(C_out, C_in / groups, kD, kH, kW)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dOpts {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub dilation: [usize; 3],
    pub groups: usize,
}

impl Default for Conv3dOpts {
    fn default() -> Self {
        Self { stride: [1; 3], padding: [0; 3], dilation: [1; 3], groups: 1 }
    }
}

impl Conv3dOpts {
    /// Stride 1 with the padding that keeps the spatial size for an odd kernel.
    pub fn same(kernel: [usize; 3], dilation: [usize; 3]) -> Self {
        let mut padding = [0; 3];
        for a in 0..3 {
            assert!(kernel[a] % 2 == 1, "size-preserving padding needs odd kernels");
            padding[a] = dilation[a] * (kernel[a] - 1) / 2;
        }
        Self { stride: [1; 3], padding, dilation, groups: 1 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn output_dims(&self, input: [usize; 3], kernel: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = self.dilation[a] * (kernel[a] - 1) + 1;
            let padded = input[a] + 2 * self.padding[a];
            assert!(padded >= span, "kernel span {span} exceeds padded input {padded} on axis {a}");
            out[a] = (padded - span) / self.stride[a] + 1;
        }
        out
    }
}

/// Static description of one convolution call.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    opts: Conv3dOpts,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.opts.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.opts.groups
    }
    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }
    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }
    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }
    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.opts.stride == [1; 3] && self.opts.padding == [0; 3]
    }
    /// Direct-kernel description when the call qualifies for it.
    fn direct(&self) -> Option<Direct> {
        let d = Direct {
            batch: self.batch,
            cin: self.cin,
            cout: self.cout,
            input: self.input,
            kernel: self.kernel,
            dilation: self.opts.dilation,
            padding: self.opts.padding,
        };
        // Narrow rows leave most vector lanes idle; those go through GEMM.
        let eligible = self.opts.groups == 1
            && self.opts.stride == [1; 3]
            && !self.is_pointwise()
            && self.output[2] >= 8;
        (eligible && d.adjoint_ok() && direct::supported()).then_some(d)
    }
    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }
    /// Output depth planes per im2col chunk.
    fn chunk_planes(&self) -> usize {
        let per_plane = self.cin_g() * self.kvol() * self.output[1] * self.output[2];
        ((1 << 19) / per_plane.max(1)).clamp(1, self.output[0].max(1))
    }

    /// Valid output range `[lo, hi)` along an axis for a kernel tap, and the
    /// input index of output `lo`.
    fn tap_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let s = self.opts.stride[axis] as isize;
        let off = (k * self.opts.dilation[axis]) as isize - self.opts.padding[axis] as isize;
        let n_in = self.input[axis] as isize;
        let n_out = self.output[axis] as isize;
        // need 0 <= o*s + off < n_in
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = if n_in - off <= 0 { 0 } else { ((n_in - off + s - 1) / s).min(n_out) };
        (lo.clamp(0, n_out) as usize, hi.max(lo).clamp(0, n_out) as usize)
    }

    fn tap_input(&self, axis: usize, k: usize, o: usize) -> usize {
        (o * self.opts.stride[axis] + k * self.opts.dilation[axis]) - self.opts.padding[axis]
    }
}

/// Fills `col` (rows = `cin_g * kvol`, cols = planes `[d0, d1)` of the output)
/// from one batch/group slice of the input.
fn im2col<T: Real>(g: &Geometry, x: &[T], d0: usize, d1: usize, col: &mut [T]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let ncols = (d1 - d0) * oh * ow;
    let sw = g.opts.stride[2];
    let mut row = 0;
    for ci in 0..g.cin_g() {
        let xc = &x[ci * g.in_vol()..(ci + 1) * g.in_vol()];
        for kz in 0..kd {
            let (zlo, zhi) = g.tap_range(0, kz);
            for ky in 0..kh {
                let (ylo, yhi) = g.tap_range(1, ky);
                for kx in 0..kw {
                    let (xlo, xhi) = g.tap_range(2, kx);
                    let dst = &mut col[row * ncols..(row + 1) * ncols];
                    dst.fill(T::zero());
                    for od in d0.max(zlo)..d1.min(zhi) {
                        let iz = g.tap_input(0, kz, od);
                        for oy in ylo..yhi {
                            let iy = g.tap_input(1, ky, oy);
                            let src = &xc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                            let drow = &mut dst[((od - d0) * oh + oy) * ow..((od - d0) * oh + oy + 1) * ow];
                            if xlo < xhi {
                                let ix0 = g.tap_input(2, kx, xlo);
                                if sw == 1 {
                                    drow[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                                } else {
                                    for (j, o) in (xlo..xhi).enumerate() {
                                        drow[o] = src[ix0 + j * sw];
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `dx`.
fn col2im<T: Real>(g: &Geometry, col: &[T], d0: usize, d1: usize, dx: &mut [T]) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let ncols = (d1 - d0) * oh * ow;
    let sw = g.opts.stride[2];
    let mut row = 0;
    for ci in 0..g.cin_g() {
        let xc = &mut dx[ci * g.in_vol()..(ci + 1) * g.in_vol()];
        for kz in 0..kd {
            let (zlo, zhi) = g.tap_range(0, kz);
            for ky in 0..kh {
                let (ylo, yhi) = g.tap_range(1, ky);
                for kx in 0..kw {
                    let (xlo, xhi) = g.tap_range(2, kx);
                    let src = &col[row * ncols..(row + 1) * ncols];
                    for od in d0.max(zlo)..d1.min(zhi) {
                        let iz = g.tap_input(0, kz, od);
                        for oy in ylo..yhi {
                            let iy = g.tap_input(1, ky, oy);
                            let drow = &mut xc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                            let srow = &src[((od - d0) * oh + oy) * ow..((od - d0) * oh + oy + 1) * ow];
                            if xlo < xhi {
                                let ix0 = g.tap_input(2, kx, xlo);
                                if sw == 1 {
                                    for (d, &s) in drow[ix0..ix0 + (xhi - xlo)].iter_mut().zip(&srow[xlo..xhi]) {
                                        *d += s;
                                    }
                                } else {
                                    for (j, o) in (xlo..xhi).enumerate() {
                                        drow[ix0 + j * sw] += srow[o];
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn forward_dense<T: Real>(g: &Geometry, x: &[T], w: &[T], out: &mut [T]) {
    let (cig, cog) = (g.cin_g(), g.cout_g());
    let kdim = cig * g.kvol();
    let nout = g.out_vol();
    let mut col = Vec::new();
    for b in 0..g.batch {
        for grp in 0..g.opts.groups {
            let xs = &x[(b * g.cin + grp * cig) * g.in_vol()..(b * g.cin + (grp + 1) * cig) * g.in_vol()];
            let ws = MatRef::row_major(&w[grp * cog * kdim..(grp + 1) * cog * kdim], cog, kdim);
            let os = &mut out[(b * g.cout + grp * cog) * nout..(b * g.cout + (grp + 1) * cog) * nout];
            if g.is_pointwise() {
                matmul_into(ws, MatRef::row_major(xs, cig, nout), os, nout, T::zero());
                continue;
            }
            let planes = g.chunk_planes();
            let plane = g.output[1] * g.output[2];
            let mut d0 = 0;
            while d0 < g.output[0] {
                let d1 = (d0 + planes).min(g.output[0]);
                let ncols = (d1 - d0) * plane;
                col.resize(kdim * ncols, T::zero());
                im2col(g, xs, d0, d1, &mut col);
                matmul_into(ws, MatRef::row_major(&col, kdim, ncols), &mut os[d0 * plane..], nout, T::zero());
                d0 = d1;
            }
        }
    }
}

/// Gradients of the dense path: `(dx, dw)` as requested.
fn backward_dense<T: Real>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    gout: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (cig, cog) = (g.cin_g(), g.cout_g());
    let kdim = cig * g.kvol();
    let nout = g.out_vol();
    let mut dx = need_x.then(|| vec![T::zero(); g.batch * g.cin * g.in_vol()]);
    let mut dw = need_w.then(|| vec![T::zero(); g.cout * kdim]);
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for b in 0..g.batch {
        for grp in 0..g.opts.groups {
            let xr = (b * g.cin + grp * cig) * g.in_vol()..(b * g.cin + (grp + 1) * cig) * g.in_vol();
            let xs = &x[xr.clone()];
            let wsl = &w[grp * cog * kdim..(grp + 1) * cog * kdim];
            let gs = &gout[(b * g.cout + grp * cog) * nout..(b * g.cout + (grp + 1) * cog) * nout];
            if g.is_pointwise() {
                let gm = MatRef::row_major(gs, cog, nout);
                if let Some(dw) = dw.as_mut() {
                    let dws = &mut dw[grp * cog * kdim..(grp + 1) * cog * kdim];
                    matmul_into(gm, MatRef::row_major(xs, cig, nout).t(), dws, kdim, T::one());
                }
                if let Some(dx) = dx.as_mut() {
                    let wm = MatRef::row_major(wsl, cog, kdim).t();
                    matmul_into(wm, gm, &mut dx[xr.clone()], nout, T::one());
                }
                continue;
            }
            let planes = g.chunk_planes();
            let plane = g.output[1] * g.output[2];
            let mut d0 = 0;
            while d0 < g.output[0] {
                let d1 = (d0 + planes).min(g.output[0]);
                let ncols = (d1 - d0) * plane;
                let gm = MatRef {
                    data: &gs[d0 * plane..],
                    rows: cog,
                    cols: ncols,
                    row_stride: nout,
                    col_stride: 1,
                };
                if let Some(dw) = dw.as_mut() {
                    col.resize(kdim * ncols, T::zero());
                    im2col(g, xs, d0, d1, &mut col);
                    let dws = &mut dw[grp * cog * kdim..(grp + 1) * cog * kdim];
                    matmul_into(gm, MatRef::row_major(&col, kdim, ncols).t(), dws, kdim, T::one());
                }
                if let Some(dx) = dx.as_mut() {
                    dcol.resize(kdim * ncols, T::zero());
                    let wm = MatRef::row_major(wsl, cog, kdim).t();
                    matmul_into(wm, gm, &mut dcol, ncols, T::zero());
                    col2im(g, &dcol, d0, d1, &mut dx[xr.clone()]);
                }
                d0 = d1;
            }
        }
    }
    (dx, dw)
}

/// Runs `f(out_row, in_row, ow_lo, ow_hi, ix0)` over every valid (tap, output row) pair
/// of a single channel.
fn depthwise_taps(g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let mut tap = 0;
    for kz in 0..kd {
        let (zlo, zhi) = g.tap_range(0, kz);
        for ky in 0..kh {
            let (ylo, yhi) = g.tap_range(1, ky);
            for kx in 0..kw {
                let (xlo, xhi) = g.tap_range(2, kx);
                if xlo < xhi {
                    let ix0 = g.tap_input(2, kx, xlo);
                    for od in zlo..zhi {
                        let iz = g.tap_input(0, kz, od);
                        for oy in ylo..yhi {
                            let iy = g.tap_input(1, ky, oy);
                            f(tap, (od * oh + oy) * ow, (iz * ih + iy) * iw, xlo, xhi, ix0);
                        }
                    }
                }
                tap += 1;
            }
        }
    }
}

fn forward_depthwise<T: Real>(g: &Geometry, x: &[T], w: &[T], out: &mut [T]) {
    let kv = g.kvol();
    let sw = g.opts.stride[2];
    for b in 0..g.batch {
        for c in 0..g.cout {
            let xc = &x[(b * g.cin + c) * g.in_vol()..(b * g.cin + c + 1) * g.in_vol()];
            let oc = &mut out[(b * g.cout + c) * g.out_vol()..(b * g.cout + c + 1) * g.out_vol()];
            let wc = &w[c * kv..(c + 1) * kv];
            depthwise_taps(g, |tap, orow, irow, lo, hi, ix0| {
                let wv = wc[tap];
                let dst = &mut oc[orow + lo..orow + hi];
                if sw == 1 {
                    for (d, &s) in dst.iter_mut().zip(&xc[irow + ix0..irow + ix0 + (hi - lo)]) {
                        *d += wv * s;
                    }
                } else {
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d += wv * xc[irow + ix0 + j * sw];
                    }
                }
            });
        }
    }
}

fn backward_depthwise<T: Real>(
    g: &Geometry,
    x: &[T],
    w: &[T],
    gout: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let kv = g.kvol();
    let sw = g.opts.stride[2];
    let mut dx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    for b in 0..g.batch {
        for c in 0..g.cout {
            let xoff = (b * g.cin + c) * g.in_vol();
            let xc = &x[xoff..xoff + g.in_vol()];
            let gc = &gout[(b * g.cout + c) * g.out_vol()..(b * g.cout + c + 1) * g.out_vol()];
            let wc = &w[c * kv..(c + 1) * kv];
            let mut dwc = vec![T::zero(); kv];
            let mut dxc = dx.as_mut().map(|d| &mut d[xoff..xoff + g.in_vol()]);
            depthwise_taps(g, |tap, orow, irow, lo, hi, ix0| {
                let gs = &gc[orow + lo..orow + hi];
                if need_w {
                    let mut acc = T::zero();
                    for (j, &gv) in gs.iter().enumerate() {
                        acc += gv * xc[irow + ix0 + j * sw];
                    }
                    dwc[tap] += acc;
                }
                if let Some(dxc) = dxc.as_deref_mut() {
                    let wv = wc[tap];
                    for (j, &gv) in gs.iter().enumerate() {
                        dxc[irow + ix0 + j * sw] += wv * gv;
                    }
                }
            });
            if let Some(dw) = dw.as_mut() {
                for (d, v) in dw[c * kv..(c + 1) * kv].iter_mut().zip(dwc) {
                    *d += v;
                }
            }
        }
    }
    (dx, dw)
}

fn is_f32<T: Real>() -> bool {
    std::any::TypeId::of::<T>() == std::any::TypeId::of::<f32>()
}

fn f32s<T: Real>(v: &[T]) -> &[f32] {
    assert!(is_f32::<T>());
    // SAFETY: `T` is `f32`, checked above.
    unsafe { std::slice::from_raw_parts(v.as_ptr().cast(), v.len()) }
}

fn f32s_mut<T: Real>(v: &mut [T]) -> &mut [f32] {
    assert!(is_f32::<T>());
    // SAFETY: `T` is `f32`, checked above.
    unsafe { std::slice::from_raw_parts_mut(v.as_mut_ptr().cast(), v.len()) }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], batch: usize, vol: usize) {
    let cout = bias.len();
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate() {
            for v in &mut out[(b * cout + c) * vol..(b * cout + c + 1) * vol] {
                *v += bv;
            }
        }
    }
}

fn bias_grad<T: Real>(g: &[T], batch: usize, cout: usize, vol: usize) -> Vec<T> {
    let mut db = vec![T::zero(); cout];
    for b in 0..batch {
        for (c, d) in db.iter_mut().enumerate() {
            *d += g[(b * cout + c) * vol..(b * cout + c + 1) * vol].iter().copied().sum::<T>();
        }
    }
    db
}

impl<'t, T: Real> Var<'t, T> {
    /// 3D convolution. `weight` is `(C_out, C_in / groups, kD, kH, kW)`,
    /// `bias` is `(C_out)`.
    pub fn conv3d(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>, opts: Conv3dOpts) -> Var<'t, T> {
        let (batch, cin, d, h, w) = self.dims5();
        let ws = weight.shape();
        assert_eq!(ws.len(), 5, "conv3d weight must be rank 5");
        assert!(opts.groups >= 1 && cin % opts.groups == 0, "groups must divide C_in");
        assert_eq!(ws[1] * opts.groups, cin, "conv3d: weight expects {} input channels, got {cin}", ws[1] * opts.groups);
        assert_eq!(ws[0] % opts.groups, 0, "groups must divide C_out");
        let kernel = [ws[2], ws[3], ws[4]];
        let output = opts.output_dims([d, h, w], kernel);
        let geo = Geometry { batch, cin, cout: ws[0], input: [d, h, w], output, kernel, opts };
        let mut out = vec![T::zero(); batch * geo.cout * geo.out_vol()];
        let fast = if is_f32::<T>() { geo.direct() } else { None };
        if let Some(d) = fast {
            direct::forward(&d, f32s(self.value().data()), f32s(weight.value().data()), f32s_mut(&mut out));
        } else if geo.is_depthwise() && !geo.is_pointwise() {
            forward_depthwise(&geo, self.value().data(), weight.value().data(), &mut out);
        } else {
            forward_dense(&geo, self.value().data(), weight.value().data(), &mut out);
        }
        if let Some(b) = bias {
            assert_eq!(b.shape(), &[geo.cout], "conv3d bias shape");
            add_bias(&mut out, b.value().data(), batch, geo.out_vol());
        }
        let out = Tensor::from_vec(vec![batch, geo.cout, output[0], output[1], output[2]], out);
        let (xv, wv) = (self.value_rc(), weight.value_rc());
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.tape().op(out, &inputs, move |g, need| {
            let (dx, dw) = if let Some(d) = fast {
                let dx = need[0].then(|| {
                    let mut dx = vec![T::zero(); xv.data().len()];
                    direct::backward_input(&d, f32s(wv.data()), f32s(g.data()), f32s_mut(&mut dx));
                    dx
                });
                let dw = need[1].then(|| {
                    let mut dw = vec![T::zero(); wv.data().len()];
                    direct::backward_weight(&d, f32s(xv.data()), f32s(g.data()), f32s_mut(&mut dw));
                    dw
                });
                (dx, dw)
            } else if geo.is_depthwise() && !geo.is_pointwise() {
                backward_depthwise(&geo, xv.data(), wv.data(), g.data(), need[0], need[1])
            } else {
                backward_dense(&geo, xv.data(), wv.data(), g.data(), need[0], need[1])
            };
            let mut grads = vec![
                dx.map(|d| Tensor::from_vec(xv.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_vec(wv.shape().to_vec(), d)),
            ];
            if need.len() == 3 {
                grads.push(need[2].then(|| {
                    Tensor::from_vec(vec![geo.cout], bias_grad(g.data(), geo.batch, geo.cout, geo.out_vol()))
                }));
            }
            grads
        })
    }

    /// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
    /// `weight` is `(C_in, C_out, 2, 2, 2)`, `bias` is `(C_out)`.
    pub fn conv_transpose3d_2x(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>) -> Var<'t, T> {
        let (batch, cin, d, h, w) = self.dims5();
        let ws = weight.shape();
        assert_eq!(ws.len(), 5);
        assert_eq!(ws[0], cin, "transposed conv expects {} input channels, got {cin}", ws[0]);
        assert_eq!(&ws[2..], &[2, 2, 2], "only 2x2x2 kernels are supported");
        let cout = ws[1];
        let n = d * h * w;
        let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
        let rows = cout * 8;
        let wdat = weight.value().data();
        let x = self.value().data();
        let mut out = vec![T::zero(); batch * cout * od * oh * ow];
        let mut y = vec![T::zero(); rows * n];
        // Scatters row (co, a, b, c) of the gemm result onto the output grid.
        let scatter = |y: &[T], o: &mut [T]| {
            for co in 0..cout {
                for tap in 0..8 {
                    let (a, bb, cc) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                    let yr = &y[(co * 8 + tap) * n..(co * 8 + tap + 1) * n];
                    let oc = &mut o[co * od * oh * ow..(co + 1) * od * oh * ow];
                    for z in 0..d {
                        for yy in 0..h {
                            let orow = ((2 * z + a) * oh + 2 * yy + bb) * ow + cc;
                            let src = &yr[(z * h + yy) * w..(z * h + yy + 1) * w];
                            for (xx, &v) in src.iter().enumerate() {
                                oc[orow + 2 * xx] += v;
                            }
                        }
                    }
                }
            }
        };
        for b in 0..batch {
            let wm = MatRef::row_major(wdat, cin, rows).t();
            matmul_into(wm, MatRef::row_major(&x[b * cin * n..(b + 1) * cin * n], cin, n), &mut y, n, T::zero());
            scatter(&y, &mut out[b * cout * od * oh * ow..(b + 1) * cout * od * oh * ow]);
        }
        if let Some(bv) = bias {
            assert_eq!(bv.shape(), &[cout]);
            add_bias(&mut out, bv.value().data(), batch, od * oh * ow);
        }
        let out = Tensor::from_vec(vec![batch, cout, od, oh, ow], out);
        let (xv, wv) = (self.value_rc(), weight.value_rc());
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.tape().op(out, &inputs, move |g, need| {
            let gd = g.data();
            let mut dx = need[0].then(|| vec![T::zero(); batch * cin * n]);
            let mut dw = need[1].then(|| vec![T::zero(); cin * rows]);
            let mut gy = vec![T::zero(); rows * n];
            for b in 0..batch {
                let gb = &gd[b * cout * od * oh * ow..(b + 1) * cout * od * oh * ow];
                for co in 0..cout {
                    for tap in 0..8 {
                        let (a, bb, cc) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                        let gr = &mut gy[(co * 8 + tap) * n..(co * 8 + tap + 1) * n];
                        let gc = &gb[co * od * oh * ow..(co + 1) * od * oh * ow];
                        for z in 0..d {
                            for yy in 0..h {
                                let orow = ((2 * z + a) * oh + 2 * yy + bb) * ow + cc;
                                for xx in 0..w {
                                    gr[(z * h + yy) * w + xx] = gc[orow + 2 * xx];
                                }
                            }
                        }
                    }
                }
                let gym = MatRef::row_major(&gy, rows, n);
                let xs = &xv.data()[b * cin * n..(b + 1) * cin * n];
                if let Some(dw) = dw.as_mut() {
                    matmul_into(MatRef::row_major(xs, cin, n), gym.t(), dw, rows, T::one());
                }
                if let Some(dx) = dx.as_mut() {
                    let wm = MatRef::row_major(wv.data(), cin, rows);
                    matmul_into(wm, gym, &mut dx[b * cin * n..(b + 1) * cin * n], n, T::zero());
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::from_vec(xv.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_vec(wv.shape().to_vec(), d)),
            ];
            if need.len() == 3 {
                grads.push(need[2].then(|| Tensor::from_vec(vec![cout], bias_grad(gd, batch, cout, od * oh * ow))));
            }
            grads
        })
    }
}

/// Direct-summation reference convolution (test oracle).
pub fn conv3d_reference<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, opts: Conv3dOpts) -> Tensor<T> {
    let (batch, cin, d, h, wd) = x.dims5();
    assert_eq!(cin, w.shape()[1] * opts.groups, "reference conv channel mismatch");
    let ws = w.shape();
    let (cout, cig) = (ws[0], ws[1]);
    let kernel = [ws[2], ws[3], ws[4]];
    let o = opts.output_dims([d, h, wd], kernel);
    let cog = cout / opts.groups;
    let mut out = Tensor::zeros(vec![batch, cout, o[0], o[1], o[2]]);
    for b in 0..batch {
        for co in 0..cout {
            let grp = co / cog;
            for oz in 0..o[0] {
                for oy in 0..o[1] {
                    for ox in 0..o[2] {
                        let mut acc = bias.map(|bb| bb.data()[co]).unwrap_or_else(T::zero);
                        for ci in 0..cig {
                            for kz in 0..kernel[0] {
                                for ky in 0..kernel[1] {
                                    for kx in 0..kernel[2] {
                                        let iz = (oz * opts.stride[0] + kz * opts.dilation[0]) as isize - opts.padding[0] as isize;
                                        let iy = (oy * opts.stride[1] + ky * opts.dilation[1]) as isize - opts.padding[1] as isize;
                                        let ix = (ox * opts.stride[2] + kx * opts.dilation[2]) as isize - opts.padding[2] as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        acc += w.get(&[co, ci, kz, ky, kx])
                                            * x.get(&[b, grp * cig + ci, iz as usize, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, co, oz, oy, ox], acc);
                    }
                }
            }
        }
    }
    out
}
