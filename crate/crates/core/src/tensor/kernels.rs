//! Raw slice kernels used by tape ops. Shapes are validated by the caller.

/// Geometry of a 2-D cross-correlation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Output extent along one axis, `None` when non-positive.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        if padded < kernel || stride == 0 {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    /// Output indices `o` in `[lo, hi)` with `o*stride + k - pad` inside `[0, input)`.
    fn valid_range(&self, k: usize, input: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= input-1
        let last = input as isize - 1 - off;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = lo.max(0) as usize;
        let hi = (hi as usize).min(out);
        (lo, hi.max(lo))
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0; g.cout * plane_out];
    for co in 0..g.cout {
        let dst = &mut out[co * plane_out..(co + 1) * plane_out];
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.cin {
            let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.ho);
                for kx in 0..g.kw {
                    let wv = w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wo);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let row_out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        let row_in = &src[iy * g.w..(iy + 1) * g.w];
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.pad;
                            let n = ox_hi - ox_lo;
                            for (o, i) in row_out[ox_lo..ox_hi].iter_mut().zip(&row_in[ix0..ix0 + n]) {
                                *o += wv * i;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                row_out[ox] += wv * row_in[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_x, grad_w, grad_bias)` for upstream gradient `dy`.
pub(crate) fn conv2d_backward(g: &ConvGeom, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let plane_out = g.ho * g.wo;
    let plane_in = g.h * g.w;
    let mut dx = vec![0.0; g.cin * plane_in];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; g.cout];
    for co in 0..g.cout {
        let gout = &dy[co * plane_out..(co + 1) * plane_out];
        db[co] = gout.iter().sum();
        for ci in 0..g.cin {
            let src = &x[ci * plane_in..(ci + 1) * plane_in];
            let dsrc = &mut dx[ci * plane_in..(ci + 1) * plane_in];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.ho);
                for kx in 0..g.kw {
                    let widx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                    let wv = w[widx];
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.wo);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &gout[oy * g.wo..(oy + 1) * g.wo];
                        let base = iy * g.w;
                        if g.stride == 1 {
                            let ix0 = base + ox_lo + kx - g.pad;
                            let n = ox_hi - ox_lo;
                            let xs = &src[ix0..ix0 + n];
                            let gs = &grow[ox_lo..ox_hi];
                            for (gv, xv) in gs.iter().zip(xs) {
                                acc += gv * xv;
                            }
                            if wv != 0.0 {
                                for (d, gv) in dsrc[ix0..ix0 + n].iter_mut().zip(gs) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = base + ox * g.stride + kx - g.pad;
                                acc += grow[ox] * src[ix];
                                dsrc[ix] += wv * grow[ox];
                            }
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// `[m,k] x [k,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in crow.iter_mut().zip(&b[t * n..(t + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `[m,k]^T x [m,n]` giving `[k,n]`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            for (cv, bv) in c[t * n..(t + 1) * n].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `[m,n] x [k,n]^T` giving `[m,k]`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for t in 0..k {
            let brow = &b[t * n..(t + 1) * n];
            c[i * k + t] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Nearest-neighbour x2 upsampling of `[C,H,W]`.
pub(crate) fn upsample2x(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            let src = &x[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward(dy: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            for xo in 0..w2 {
                dx[(ch * h + y / 2) * w + xo / 2] += dy[(ch * h2 + y) * w2 + xo];
            }
        }
    }
    dx
}
