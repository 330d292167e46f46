//! Numeric kernels behind the differentiable ops. Everything here works on
//! `[C, D, H, W]` tensors with unit stride; padding is explicit per axis so
//! even kernel sizes can still produce "same"-sized outputs.

use super::tensor::Tensor;

/// Padding (before, after) and dilation per spatial axis (depth, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub pad: [(usize, usize); 3],
    pub dil: [usize; 3],
}

impl ConvGeom {
    /// Output keeps the input size for the given kernel and dilation.
    pub fn same(kernel: [usize; 3], dil: [usize; 3]) -> Self {
        let mut pad = [(0, 0); 3];
        for i in 0..3 {
            let span = dil[i] * (kernel[i] - 1);
            pad[i] = (span / 2, span - span / 2);
        }
        ConvGeom { pad, dil }
    }

    pub fn valid() -> Self {
        ConvGeom {
            pad: [(0, 0); 3],
            dil: [1; 3],
        }
    }

    pub fn out_dims(&self, input: [usize; 3], kernel: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for i in 0..3 {
            let padded = input[i] + self.pad[i].0 + self.pad[i].1;
            let span = self.dil[i] * (kernel[i] - 1) + 1;
            if padded < span {
                return None;
            }
            out[i] = padded - span + 1;
        }
        Some(out)
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the callers pass slices whose strided extents cover m×k, k×n
    // and the row-major m×n output; checked by the debug assertions above
    // and by construction of every call site in this module.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Half-open range of output x positions whose input `x + offset` is in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, out_len as isize) as usize;
    (lo.min(hi), hi)
}

struct Im2colPlan {
    c: usize,
    inp: [usize; 3],
    k: [usize; 3],
    out: [usize; 3],
    geom: ConvGeom,
}

impl Im2colPlan {
    fn rows(&self) -> usize {
        self.c * self.k[0] * self.k[1] * self.k[2]
    }

    fn cols(&self) -> usize {
        self.out[0] * self.out[1] * self.out[2]
    }

    /// Calls `f(row, out_offset, in_offset, len)` for every contiguous run
    /// of valid taps. Rows are ordered (channel, kd, kh, kw).
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [d, h, w] = self.inp;
        let [od, oh, ow] = self.out;
        let [kd, kh, kw] = self.k;
        let g = &self.geom;
        let mut row = 0;
        for c in 0..self.c {
            for a in 0..kd {
                let dz = (a * g.dil[0]) as isize - g.pad[0].0 as isize;
                for b in 0..kh {
                    let dy = (b * g.dil[1]) as isize - g.pad[1].0 as isize;
                    for e in 0..kw {
                        let dx = (e * g.dil[2]) as isize - g.pad[2].0 as isize;
                        let (xlo, xhi) = valid_range(ow, dx, w);
                        if xlo < xhi {
                            for z in 0..od {
                                let iz = z as isize + dz;
                                if iz < 0 || iz >= d as isize {
                                    continue;
                                }
                                for y in 0..oh {
                                    let iy = y as isize + dy;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let out_off = (z * oh + y) * ow + xlo;
                                    let in_off = ((c * d + iz as usize) * h + iy as usize) * w
                                        + (xlo as isize + dx) as usize;
                                    f(row, out_off, in_off, xhi - xlo);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let mut cols = vec![0.0; self.rows() * n];
        self.for_each_run(|row, o, i, len| {
            cols[row * n + o..row * n + o + len].copy_from_slice(&x[i..i + len]);
        });
        cols
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let n = self.cols();
        self.for_each_run(|row, o, i, len| {
            let src = &cols[row * n + o..row * n + o + len];
            for (dst, s) in gx[i..i + len].iter_mut().zip(src) {
                *dst += s;
            }
        });
    }
}

fn kernel3(w: &Tensor, first_dims: usize) -> [usize; 3] {
    let s = w.shape();
    assert_eq!(s.len(), first_dims + 3, "kernel rank");
    [s[first_dims], s[first_dims + 1], s[first_dims + 2]]
}

fn is_pointwise(k: [usize; 3], geom: &ConvGeom) -> bool {
    k == [1, 1, 1] && geom.pad == [(0, 0); 3]
}

/// Dense convolution. `w` is `[Co, Ci, kd, kh, kw]`, `bias` is `[Co]`.
pub fn conv3d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, geom: &ConvGeom) -> Tensor {
    let [ci, d, h, wd] = x.dims4();
    let co = w.shape()[0];
    assert_eq!(w.shape()[1], ci, "conv input channels");
    let k = kernel3(w, 2);
    let out = geom
        .out_dims([d, h, wd], k)
        .expect("convolution kernel larger than padded input");
    let plan = Im2colPlan {
        c: ci,
        inp: [d, h, wd],
        k,
        out,
        geom: *geom,
    };
    let n = plan.cols();
    let kk = plan.rows();
    let mut y = vec![0.0; co * n];
    if let Some(b) = bias {
        for (o, row) in y.chunks_mut(n).enumerate() {
            row.fill(b.data()[o]);
        }
    }
    if is_pointwise(k, geom) {
        gemm(co, kk, n, w.data(), (kk, 1), x.data(), (n, 1), 1.0, &mut y);
    } else {
        let cols = plan.im2col(x.data());
        gemm(co, kk, n, w.data(), (kk, 1), &cols, (n, 1), 1.0, &mut y);
    }
    Tensor::from_vec(&[co, out[0], out[1], out[2]], y)
}

/// Gradients of [`conv3d`]: `(d_x, d_w, d_bias)`; `d_x`/`d_w` only when requested.
pub fn conv3d_backward(
    x: &Tensor,
    w: &Tensor,
    geom: &ConvGeom,
    gout: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let [ci, d, h, wd] = x.dims4();
    let co = w.shape()[0];
    let k = kernel3(w, 2);
    let [_, od, oh, ow] = gout.dims4();
    let plan = Im2colPlan {
        c: ci,
        inp: [d, h, wd],
        k,
        out: [od, oh, ow],
        geom: *geom,
    };
    let n = plan.cols();
    let kk = plan.rows();
    let g = gout.data();
    let gb: Vec<f64> = g.chunks(n).map(|r| r.iter().sum()).collect();
    let pointwise = is_pointwise(k, geom);
    let cols_owned;
    let cols: &[f64] = if pointwise {
        x.data()
    } else if need_w {
        cols_owned = plan.im2col(x.data());
        &cols_owned
    } else {
        &[]
    };
    let gw = need_w.then(|| {
        let mut gw = vec![0.0; co * kk];
        gemm(co, n, kk, g, (n, 1), cols, (1, n), 0.0, &mut gw);
        Tensor::from_vec(w.shape(), gw)
    });
    let gx = need_x.then(|| {
        let mut gcols = vec![0.0; kk * n];
        gemm(kk, co, n, w.data(), (1, kk), g, (n, 1), 0.0, &mut gcols);
        if pointwise {
            Tensor::from_vec(x.shape(), gcols)
        } else {
            let mut gx = vec![0.0; x.len()];
            plan.col2im(&gcols, &mut gx);
            Tensor::from_vec(x.shape(), gx)
        }
    });
    (gx, gw, Tensor::from_vec(&[co], gb))
}

/// Per-channel (depthwise) convolution. `w` is `[C, kd, kh, kw]`, `bias` is `[C]`.
pub fn depthwise3d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, geom: &ConvGeom) -> Tensor {
    let [c, d, h, wd] = x.dims4();
    assert_eq!(w.shape()[0], c, "depthwise channels");
    let k = kernel3(w, 1);
    let out = geom
        .out_dims([d, h, wd], k)
        .expect("convolution kernel larger than padded input");
    let plan = Im2colPlan {
        c,
        inp: [d, h, wd],
        k,
        out,
        geom: *geom,
    };
    let n = plan.cols();
    let taps = k[0] * k[1] * k[2];
    let mut y = vec![0.0; c * n];
    if let Some(b) = bias {
        for (ch, row) in y.chunks_mut(n).enumerate() {
            row.fill(b.data()[ch]);
        }
    }
    let xd = x.data();
    let wdat = w.data();
    plan.for_each_run(|row, o, i, len| {
        let ch = row / taps;
        let wv = wdat[row];
        let dst = &mut y[ch * n + o..ch * n + o + len];
        for (yv, xv) in dst.iter_mut().zip(&xd[i..i + len]) {
            *yv += wv * xv;
        }
    });
    Tensor::from_vec(&[c, out[0], out[1], out[2]], y)
}

pub fn depthwise3d_backward(
    x: &Tensor,
    w: &Tensor,
    geom: &ConvGeom,
    gout: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let [c, d, h, wd] = x.dims4();
    let k = kernel3(w, 1);
    let [_, od, oh, ow] = gout.dims4();
    let plan = Im2colPlan {
        c,
        inp: [d, h, wd],
        k,
        out: [od, oh, ow],
        geom: *geom,
    };
    let n = plan.cols();
    let taps = k[0] * k[1] * k[2];
    let g = gout.data();
    let xd = x.data();
    let wdat = w.data();
    let gb: Vec<f64> = g.chunks(n).map(|r| r.iter().sum()).collect();
    let mut gx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
    let mut gw = if need_w { vec![0.0; w.len()] } else { Vec::new() };
    plan.for_each_run(|row, o, i, len| {
        let ch = row / taps;
        let gseg = &g[ch * n + o..ch * n + o + len];
        if need_w {
            gw[row] += gseg.iter().zip(&xd[i..i + len]).map(|(a, b)| a * b).sum::<f64>();
        }
        if need_x {
            let wv = wdat[row];
            for (dst, gv) in gx[i..i + len].iter_mut().zip(gseg) {
                *dst += wv * gv;
            }
        }
    });
    (
        need_x.then(|| Tensor::from_vec(x.shape(), gx)),
        need_w.then(|| Tensor::from_vec(w.shape(), gw)),
        Tensor::from_vec(&[c], gb),
    )
}

/// Transposed convolution with kernel and stride (1, 2, 2): doubles H and W.
/// `w` is `[Ci, Co, 2, 2]`, `bias` is `[Co]`.
pub fn upconv2x(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Tensor {
    let [ci, d, h, wd] = x.dims4();
    let s = w.shape();
    assert_eq!(s, &[ci, s[1], 2, 2], "upconv weight layout");
    let co = s[1];
    let co4 = co * 4;
    let n = d * h * wd;
    let mut tmp = vec![0.0; co4 * n];
    gemm(co4, ci, n, w.data(), (1, co4), x.data(), (n, 1), 0.0, &mut tmp);
    let (h2, w2) = (2 * h, 2 * wd);
    let mut y = vec![0.0; co * d * h2 * w2];
    for o in 0..co {
        let b = bias.map_or(0.0, |b| b.data()[o]);
        for p in 0..2 {
            for q in 0..2 {
                let src = &tmp[((o * 2 + p) * 2 + q) * n..][..n];
                for z in 0..d {
                    for yy in 0..h {
                        let row = ((o * d + z) * h2 + 2 * yy + p) * w2 + q;
                        let srow = &src[(z * h + yy) * wd..][..wd];
                        for (xx, v) in srow.iter().enumerate() {
                            y[row + 2 * xx] = v + b;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[co, d, h2, w2], y)
}

pub fn upconv2x_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Tensor) {
    let [ci, d, h, wd] = x.dims4();
    let co = w.shape()[1];
    let co4 = co * 4;
    let n = d * h * wd;
    let (h2, w2) = (2 * h, 2 * wd);
    let g = gout.data();
    let mut gtmp = vec![0.0; co4 * n];
    let mut gb = vec![0.0; co];
    for o in 0..co {
        for p in 0..2 {
            for q in 0..2 {
                let dst = &mut gtmp[((o * 2 + p) * 2 + q) * n..][..n];
                for z in 0..d {
                    for yy in 0..h {
                        let row = ((o * d + z) * h2 + 2 * yy + p) * w2 + q;
                        let drow = &mut dst[(z * h + yy) * wd..][..wd];
                        for (xx, v) in drow.iter_mut().enumerate() {
                            *v = g[row + 2 * xx];
                        }
                    }
                }
                gb[o] += dst.iter().sum::<f64>();
            }
        }
    }
    let gx = need_x.then(|| {
        let mut gx = vec![0.0; ci * n];
        gemm(ci, co4, n, w.data(), (co4, 1), &gtmp, (n, 1), 0.0, &mut gx);
        Tensor::from_vec(x.shape(), gx)
    });
    let gw = need_w.then(|| {
        let mut gw = vec![0.0; ci * co4];
        gemm(ci, n, co4, x.data(), (n, 1), &gtmp, (1, n), 0.0, &mut gw);
        Tensor::from_vec(w.shape(), gw)
    });
    (gx, gw, Tensor::from_vec(&[co], gb))
}

/// 2×2 max-pooling over H and W only; depth is untouched. Returns the
/// pooled tensor and the flat input index of every maximum.
pub fn maxpool_hw(x: &Tensor) -> (Tensor, Vec<usize>) {
    let [c, d, h, w] = x.dims4();
    assert!(h % 2 == 0 && w % 2 == 0, "max-pool needs even H and W");
    let (h2, w2) = (h / 2, w / 2);
    let xd = x.data();
    let mut y = Vec::with_capacity(c * d * h2 * w2);
    let mut arg = Vec::with_capacity(c * d * h2 * w2);
    for plane in 0..c * d {
        let base = plane * h * w;
        for yy in 0..h2 {
            for xx in 0..w2 {
                let i0 = base + 2 * yy * w + 2 * xx;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if xd[cand] > xd[best] {
                        best = cand;
                    }
                }
                y.push(xd[best]);
                arg.push(best);
            }
        }
    }
    (Tensor::from_vec(&[c, d, h2, w2], y), arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, geom: &ConvGeom) -> Tensor {
        let [ci, d, h, wd] = x.dims4();
        let co = w.shape()[0];
        let k = kernel3(w, 2);
        let out = geom.out_dims([d, h, wd], k).unwrap();
        let mut y = Tensor::zeros(&[co, out[0], out[1], out[2]]);
        for o in 0..co {
            for z in 0..out[0] {
                for yy in 0..out[1] {
                    for xx in 0..out[2] {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for a in 0..k[0] {
                                for b in 0..k[1] {
                                    for e in 0..k[2] {
                                        let iz = (z + a * geom.dil[0]) as isize - geom.pad[0].0 as isize;
                                        let iy = (yy + b * geom.dil[1]) as isize - geom.pad[1].0 as isize;
                                        let ix = (xx + e * geom.dil[2]) as isize - geom.pad[2].0 as isize;
                                        if iz < 0 || iy < 0 || ix < 0 || iz >= d as isize || iy >= h as isize || ix >= wd as isize {
                                            continue;
                                        }
                                        let xi = ((c * d + iz as usize) * h + iy as usize) * wd + ix as usize;
                                        let wi = (((o * ci + c) * k[0] + a) * k[1] + b) * k[2] + e;
                                        acc += x.data()[xi] * w.data()[wi];
                                    }
                                }
                            }
                        }
                        let oi = ((o * out[0] + z) * out[1] + yy) * out[2] + xx;
                        y.data_mut()[oi] = acc;
                    }
                }
            }
        }
        y
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 37 % 17) as f64 - 8.0) * scale).collect())
    }

    #[test]
    fn conv_matches_naive_with_dilation_and_even_kernel() {
        let x = ramp(&[2, 3, 6, 5], 0.1);
        for (k, dil) in [([3, 3, 3], [1, 2, 2]), ([1, 4, 1], [1, 1, 1]), ([3, 1, 1], [1, 1, 1])] {
            let w = ramp(&[3, 2, k[0], k[1], k[2]], 0.05);
            let geom = ConvGeom::same(k, dil);
            let got = conv3d(&x, &w, None, &geom);
            let want = naive_conv(&x, &w, &geom);
            assert_eq!(got.shape(), x.shape().iter().enumerate().map(|(i, &s)| if i == 0 { 3 } else { s }).collect::<Vec<_>>().as_slice());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depthwise_matches_dense_with_diagonal_weights() {
        let x = ramp(&[2, 3, 4, 4], 0.1);
        let dw = ramp(&[2, 3, 3, 3], 0.07);
        let mut dense = Tensor::zeros(&[2, 2, 3, 3, 3]);
        for c in 0..2 {
            dense.data_mut()[(c * 2 + c) * 27..][..27].copy_from_slice(&dw.data()[c * 27..][..27]);
        }
        let geom = ConvGeom::same([3, 3, 3], [2, 2, 2]);
        let a = depthwise3d(&x, &dw, None, &geom);
        let b = conv3d(&x, &dense, None, &geom);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_halves_only_plane() {
        let x = ramp(&[1, 3, 4, 6], 1.0);
        let (y, arg) = maxpool_hw(&x);
        assert_eq!(y.shape(), &[1, 3, 2, 3]);
        for (v, &i) in y.data().iter().zip(&arg) {
            assert_eq!(*v, x.data()[i]);
        }
    }

    #[test]
    fn upconv_places_kernel_taps() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 2.0]);
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = upconv2x(&x, &w, Some(&Tensor::from_vec(&[1], vec![0.5])));
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[1.5, 2.5, 2.5, 4.5, 3.5, 4.5, 6.5, 8.5]);
    }
}
