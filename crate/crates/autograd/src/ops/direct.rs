//! Direct stride-1 dense convolution kernels for `f32` on x86-64.
//!
//! The input is zero-padded once so that every kernel tap reads a contiguous
//! run of voxels; accumulators for a block of output channels and a run of
//! output voxels stay in vector registers.

/// Trailing zeros after a padded buffer, covering the widest vector run.
const SLACK: usize = 64;

/// Shape of one stride-1 dense convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Direct {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub dilation: [usize; 3],
    pub padding: [usize; 3],
}

impl Direct {
    fn padded(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.input[a] + 2 * self.padding[a])
    }

    pub fn output(&self) -> [usize; 3] {
        let p = self.padded();
        [0, 1, 2].map(|a| p[a] - self.dilation[a] * (self.kernel[a] - 1))
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Whether the padding keeps the input-gradient convolution expressible.
    pub fn adjoint_ok(&self) -> bool {
        (0..3).all(|a| self.padding[a] <= self.dilation[a] * (self.kernel[a] - 1))
    }

    fn plan(&self) -> Plan {
        let [_, ph, pw] = self.padded();
        let [kd, kh, kw] = self.kernel;
        let [dd, dh, dw] = self.dilation;
        let mut taps = Vec::with_capacity(self.kvol());
        for z in 0..kd {
            for y in 0..kh {
                for x in 0..kw {
                    taps.push((z * dd * ph + y * dh) * pw + x * dw);
                }
            }
        }
        let pad = self.padded();
        let out = self.output();
        Plan {
            cin: self.cin,
            kv: self.kvol(),
            cstride: pad.iter().product(),
            pad,
            out,
            ovol: out.iter().product(),
            taps,
        }
    }

    /// Copies one batch item into a zero-padded buffer followed by [`SLACK`] zeros.
    fn pad_into(&self, x: &[f32], xp: &mut Vec<f32>) {
        let [d, h, w] = self.input;
        let [pd, ph, pw] = self.padded();
        let [od, oh, ow] = self.padding;
        xp.clear();
        xp.resize(self.cin * pd * ph * pw + SLACK, 0.0);
        for c in 0..self.cin {
            for z in 0..d {
                for y in 0..h {
                    let src = &x[((c * d + z) * h + y) * w..][..w];
                    let dst = ((c * pd + z + od) * ph + y + oh) * pw + ow;
                    xp[dst..dst + w].copy_from_slice(src);
                }
            }
        }
    }
}

/// Loop bounds shared by the vector kernels.
struct Plan {
    cin: usize,
    kv: usize,
    cstride: usize,
    pad: [usize; 3],
    out: [usize; 3],
    ovol: usize,
    taps: Vec<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Isa {
    Avx512,
    Avx2,
}

fn isa() -> Option<Isa> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            return Some(Isa::Avx512);
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            return Some(Isa::Avx2);
        }
    }
    None
}

/// Whether the direct kernels can run on this CPU.
pub(crate) fn supported() -> bool {
    isa().is_some()
}

macro_rules! vector_kernels {
    ($name:ident, $feat:literal, $lanes:literal, $fcb:literal, $wcb:literal, $wtb:literal,
     $zero:ident, $load:ident, $store:ident, $set1:ident, $fmadd:ident) => {
        #[cfg(target_arch = "x86_64")]
        mod $name {
            use std::arch::x86_64::*;

            use super::Plan;

            pub const LANES: usize = $lanes;
            /// Output channels per forward block.
            pub const FCB: usize = $fcb;
            /// Output channels and taps per weight-gradient block.
            pub const WCB: usize = $wcb;
            pub const WTB: usize = $wtb;

            /// Output channels `[co0, co0 + lanes)` over every output voxel.
            /// `wb` holds the block's weights as `[ci * kv + tap][FCB]`.
            #[target_feature(enable = $feat)]
            pub unsafe fn forward_block<const NV: usize>(
                p: &Plan,
                xp: &[f32],
                wb: &[f32],
                co0: usize,
                lanes: usize,
                out: &mut [f32],
            ) {
                let xptr = xp.as_ptr();
                let [od, oh, ow] = p.out;
                let mut tmp = [0f32; 64];
                for z in 0..od {
                    for y in 0..oh {
                        let base = (z * p.pad[1] + y) * p.pad[2];
                        let mut x0 = 0;
                        while x0 < ow {
                            let mut acc = [[$zero(); NV]; FCB];
                            for ci in 0..p.cin {
                                let cbase = ci * p.cstride + base + x0;
                                let wc = wb.as_ptr().add(ci * p.kv * FCB);
                                for (t, &off) in p.taps.iter().enumerate() {
                                    let src = xptr.add(cbase + off);
                                    let mut row = [$zero(); NV];
                                    for v in 0..NV {
                                        row[v] = $load(src.add(v * LANES));
                                    }
                                    let wt = wc.add(t * FCB);
                                    for c in 0..FCB {
                                        let w = $set1(*wt.add(c));
                                        for v in 0..NV {
                                            acc[c][v] = $fmadd(w, row[v], acc[c][v]);
                                        }
                                    }
                                }
                            }
                            let n = (NV * LANES).min(ow - x0);
                            for c in 0..lanes {
                                for v in 0..NV {
                                    $store(tmp.as_mut_ptr().add(v * LANES), acc[c][v]);
                                }
                                let o = (co0 + c) * p.ovol + (z * oh + y) * ow + x0;
                                out[o..o + n].copy_from_slice(&tmp[..n]);
                            }
                            x0 += NV * LANES;
                        }
                    }
                }
            }

            /// Sums `g[c] · x[tap]` over every output voxel for `WCB` output
            /// channels and taps `[t0, t0 + WTB)` of input channel `ci`.
            /// `gblk` is laid out `[z][y][lane][x (rounded to owr)]`.
            #[target_feature(enable = $feat)]
            pub unsafe fn weight_block(
                p: &Plan,
                xp: &[f32],
                gblk: &[f32],
                owr: usize,
                ci: usize,
                t0: usize,
                sums: &mut [[f32; WTB]; WCB],
            ) {
                let xptr = xp.as_ptr();
                let mut offs = [0usize; WTB];
                for (i, o) in offs.iter_mut().enumerate() {
                    *o = ci * p.cstride + p.taps[(t0 + i).min(p.kv - 1)];
                }
                let [od, oh, _] = p.out;
                let mut acc = [[$zero(); WTB]; WCB];
                for z in 0..od {
                    for y in 0..oh {
                        let base = (z * p.pad[1] + y) * p.pad[2];
                        let grow = gblk.as_ptr().add((z * oh + y) * owr * WCB);
                        let mut x0 = 0;
                        while x0 < owr {
                            let mut g = [$zero(); WCB];
                            for c in 0..WCB {
                                g[c] = $load(grow.add(c * owr + x0));
                            }
                            for i in 0..WTB {
                                let r = $load(xptr.add(offs[i] + base + x0));
                                for c in 0..WCB {
                                    acc[c][i] = $fmadd(g[c], r, acc[c][i]);
                                }
                            }
                            x0 += LANES;
                        }
                    }
                }
                let mut tmp = [0f32; LANES];
                for c in 0..WCB {
                    for i in 0..WTB {
                        $store(tmp.as_mut_ptr(), acc[c][i]);
                        sums[c][i] += tmp.iter().sum::<f32>();
                    }
                }
            }
        }
    };
}

vector_kernels!(avx512, "avx512f", 16, 8, 4, 4, _mm512_setzero_ps, _mm512_loadu_ps, _mm512_storeu_ps, _mm512_set1_ps, _mm512_fmadd_ps);
vector_kernels!(avx2, "avx2,fma", 8, 4, 4, 2, _mm256_setzero_ps, _mm256_loadu_ps, _mm256_storeu_ps, _mm256_set1_ps, _mm256_fmadd_ps);

/// `out (B, C_out, O...) = conv(x, w)` with `w` laid out `(C_out, C_in, k...)`.
pub(crate) fn forward(s: &Direct, x: &[f32], w: &[f32], out: &mut [f32]) {
    let isa = isa().expect("direct kernels need avx2+fma or avx512f");
    let fcb = match isa {
        Isa::Avx512 => avx512::FCB,
        Isa::Avx2 => avx2::FCB,
    };
    let p = s.plan();
    let k_all = s.cin * p.kv;
    let blocks = s.cout.div_ceil(fcb);
    let mut wp = vec![0f32; blocks * k_all * fcb];
    for co in 0..s.cout {
        let (b, lane) = (co / fcb, co % fcb);
        for k in 0..k_all {
            wp[(b * k_all + k) * fcb + lane] = w[co * k_all + k];
        }
    }
    let in_vol: usize = s.input.iter().product();
    let ow = p.out[2];
    let mut xp = Vec::new();
    for bi in 0..s.batch {
        s.pad_into(&x[bi * s.cin * in_vol..(bi + 1) * s.cin * in_vol], &mut xp);
        let ob = &mut out[bi * s.cout * p.ovol..(bi + 1) * s.cout * p.ovol];
        for blk in 0..blocks {
            let wb = &wp[blk * k_all * fcb..(blk + 1) * k_all * fcb];
            let lanes = fcb.min(s.cout - blk * fcb);
            // SAFETY: the instruction set was detected at runtime; every read
            // stays inside `xp` thanks to the trailing slack.
            unsafe {
                match isa {
                    Isa::Avx512 if ow > avx512::LANES => avx512::forward_block::<2>(&p, &xp, wb, blk * fcb, lanes, ob),
                    Isa::Avx512 => avx512::forward_block::<1>(&p, &xp, wb, blk * fcb, lanes, ob),
                    Isa::Avx2 => avx2::forward_block::<2>(&p, &xp, wb, blk * fcb, lanes, ob),
                }
            }
        }
    }
}

/// Input gradient: a stride-1 convolution of the output gradient with the
/// spatially flipped, channel-transposed kernel.
pub(crate) fn backward_input(s: &Direct, w: &[f32], gout: &[f32], dx: &mut [f32]) {
    let kv = s.kvol();
    let [kd, kh, kw] = s.kernel;
    let mut wt = vec![0f32; w.len()];
    for co in 0..s.cout {
        for ci in 0..s.cin {
            for t in 0..kv {
                let (z, y, x) = (t / (kh * kw), (t / kw) % kh, t % kw);
                let flipped = ((kd - 1 - z) * kh + (kh - 1 - y)) * kw + (kw - 1 - x);
                wt[(ci * s.cout + co) * kv + flipped] = w[(co * s.cin + ci) * kv + t];
            }
        }
    }
    let adj = Direct {
        batch: s.batch,
        cin: s.cout,
        cout: s.cin,
        input: s.output(),
        kernel: s.kernel,
        dilation: s.dilation,
        padding: [0, 1, 2].map(|a| s.dilation[a] * (s.kernel[a] - 1) - s.padding[a]),
    };
    debug_assert_eq!(adj.output(), s.input);
    forward(&adj, gout, &wt, dx);
}

/// Weight gradient `dw (C_out, C_in, k...)`, overwritten.
pub(crate) fn backward_weight(s: &Direct, x: &[f32], gout: &[f32], dw: &mut [f32]) {
    let isa = isa().expect("direct kernels need avx2+fma or avx512f");
    let (lanes_x, wcb, wtb) = match isa {
        Isa::Avx512 => (avx512::LANES, avx512::WCB, avx512::WTB),
        Isa::Avx2 => (avx2::LANES, avx2::WCB, avx2::WTB),
    };
    let p = s.plan();
    let [od, oh, ow] = p.out;
    let owr = ow.div_ceil(lanes_x) * lanes_x;
    let in_vol: usize = s.input.iter().product();
    let blocks = s.cout.div_ceil(wcb);
    let rows = od * oh;
    dw.iter_mut().for_each(|v| *v = 0.0);
    let mut xp = Vec::new();
    let mut gp = vec![0f32; blocks * rows * owr * wcb];
    for bi in 0..s.batch {
        s.pad_into(&x[bi * s.cin * in_vol..(bi + 1) * s.cin * in_vol], &mut xp);
        let gb = &gout[bi * s.cout * p.ovol..(bi + 1) * s.cout * p.ovol];
        for co in 0..s.cout {
            let (blk, lane) = (co / wcb, co % wcb);
            for r in 0..rows {
                let dst = ((blk * rows + r) * wcb + lane) * owr;
                gp[dst..dst + ow].copy_from_slice(&gb[co * p.ovol + r * ow..][..ow]);
            }
        }
        for blk in 0..blocks {
            let used = wcb.min(s.cout - blk * wcb);
            let gblk = &gp[blk * rows * owr * wcb..(blk + 1) * rows * owr * wcb];
            for ci in 0..s.cin {
                let mut t0 = 0;
                while t0 < p.kv {
                    let nt = wtb.min(p.kv - t0);
                    let mut emit = |c: usize, i: usize, v: f32| {
                        if c < used && i < nt {
                            dw[((blk * wcb + c) * s.cin + ci) * p.kv + t0 + i] += v;
                        }
                    };
                    // SAFETY: the instruction set was detected at runtime; reads
                    // stay inside `xp` (slack) and `gblk` (rounded rows).
                    unsafe {
                        match isa {
                            Isa::Avx512 => {
                                let mut sums = [[0f32; avx512::WTB]; avx512::WCB];
                                avx512::weight_block(&p, &xp, gblk, owr, ci, t0, &mut sums);
                                for (c, r) in sums.iter().enumerate() {
                                    r.iter().enumerate().for_each(|(i, &v)| emit(c, i, v));
                                }
                            }
                            Isa::Avx2 => {
                                let mut sums = [[0f32; avx2::WTB]; avx2::WCB];
                                avx2::weight_block(&p, &xp, gblk, owr, ci, t0, &mut sums);
                                for (c, r) in sums.iter().enumerate() {
                                    r.iter().enumerate().for_each(|(i, &v)| emit(c, i, v));
                                }
                            }
                        }
                    }
                    t0 += wtb;
                }
            }
        }
    }
}
