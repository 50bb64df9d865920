//! Raw numeric kernels behind the autograd ops. Everything here works on
//! plain slices in NCHW order and is single-threaded and deterministic.

/// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product with
/// arbitrary row/column strides on the inputs and a dense row-major output.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
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

/// Below this width the im2col + GEMM path is faster.
const DIRECT_MIN_WIDTH: usize = 32;

#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Stride-1 "same" convolutions with an odd kernel take the direct path.
    fn is_direct(&self) -> bool {
        self.stride == 1 && self.k > 1 && self.k % 2 == 1 && self.pad == self.k / 2 && self.w >= DIRECT_MIN_WIDTH
    }
}

fn pad_planes(x: &[f32], planes: usize, h: usize, w: usize, pad: usize) -> Vec<f32> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f32; planes * hp * wp];
    for (src, dst) in x.chunks(h * w).zip(out.chunks_mut(hp * wp)).take(planes) {
        for y in 0..h {
            dst[(y + pad) * wp + pad..(y + pad) * wp + pad + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    out
}

/// Direct "same" convolution of one image: `out[co] += sum_ci w[co, ci] * xp[ci]`
/// where `xp` is the zero-padded input.
fn direct_conv_image(xp: &[f32], cin: usize, h: usize, w: usize, k: usize, weight: &[f32], cout: usize, out: &mut [f32]) {
    let pad = k / 2;
    let wp = w + 2 * pad;
    let hp = h + 2 * pad;
    let plane = h * w;
    let mut co = 0;
    // Four output channels per pass so each input row is loaded once per tap.
    while co + 4 <= cout {
        let (p0, rest) = out[co * plane..(co + 4) * plane].split_at_mut(plane);
        let (p1, rest) = rest.split_at_mut(plane);
        let (p2, p3) = rest.split_at_mut(plane);
        for ci in 0..cin {
            let src_plane = &xp[ci * hp * wp..(ci + 1) * hp * wp];
            let wk = |j: usize| &weight[((co + j) * cin + ci) * k * k..((co + j) * cin + ci + 1) * k * k];
            let (w0, w1, w2, w3) = (wk(0), wk(1), wk(2), wk(3));
            for y in 0..h {
                let d0 = &mut p0[y * w..(y + 1) * w];
                let d1 = &mut p1[y * w..(y + 1) * w];
                let d2 = &mut p2[y * w..(y + 1) * w];
                let d3 = &mut p3[y * w..(y + 1) * w];
                for ky in 0..k {
                    let row = &src_plane[(y + ky) * wp..(y + ky) * wp + wp];
                    for kx in 0..k {
                        let t = ky * k + kx;
                        let (a, b, c, d) = (w0[t], w1[t], w2[t], w3[t]);
                        let r = &row[kx..kx + w];
                        for i in 0..w {
                            let s = r[i];
                            d0[i] += a * s;
                            d1[i] += b * s;
                            d2[i] += c * s;
                            d3[i] += d * s;
                        }
                    }
                }
            }
        }
        co += 4;
    }
    for co in co..cout {
        let dst_plane = &mut out[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let src_plane = &xp[ci * hp * wp..(ci + 1) * hp * wp];
            let wk = &weight[(co * cin + ci) * k * k..(co * cin + ci + 1) * k * k];
            for y in 0..h {
                let dst = &mut dst_plane[y * w..(y + 1) * w];
                for ky in 0..k {
                    let row = &src_plane[(y + ky) * wp..(y + ky) * wp + wp];
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        for (d, s) in dst.iter_mut().zip(&row[kx..kx + w]) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

fn im2col(x: &[f32], g: &ConvGeom, col: &mut [f32]) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `x` is `[n, cin, h, w]`, `weight` is `[cout, cin, k, k]`.
pub fn conv2d(x: &[f32], n: usize, g: &ConvGeom, weight: &[f32], cout: usize, bias: Option<&[f32]>) -> Vec<f32> {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let kk = g.cin * g.k * g.k;
    let in_stride = g.cin * g.h * g.w;
    let mut out = vec![0.0f32; n * cout * hw];
    if g.is_direct() {
        let xp = pad_planes(x, n * g.cin, g.h, g.w, g.pad);
        let pin = g.cin * (g.h + 2 * g.pad) * (g.w + 2 * g.pad);
        for b in 0..n {
            let ob = &mut out[b * cout * hw..(b + 1) * cout * hw];
            if let Some(bias) = bias {
                for (co, chunk) in ob.chunks_mut(hw).enumerate() {
                    chunk.fill(bias[co]);
                }
            }
            direct_conv_image(&xp[b * pin..(b + 1) * pin], g.cin, g.h, g.w, g.k, weight, cout, ob);
        }
        return out;
    }
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; kk * hw] };
    for b in 0..n {
        let xb = &x[b * in_stride..(b + 1) * in_stride];
        let ob = &mut out[b * cout * hw..(b + 1) * cout * hw];
        if let Some(bias) = bias {
            for (co, chunk) in ob.chunks_mut(hw).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        let src: &[f32] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        gemm(cout, kk, hw, weight, (kk, 1), src, (hw, 1), ob, beta);
    }
    out
}

/// Gradients of a convolution. Returns `(dx, dweight, dbias)`; `dx` is only
/// computed when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f32],
    n: usize,
    g: &ConvGeom,
    weight: &[f32],
    cout: usize,
    gout: &[f32],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let (ho, wo) = g.out_hw();
    let hw = ho * wo;
    let kk = g.cin * g.k * g.k;
    let in_stride = g.cin * g.h * g.w;
    let mut dw = vec![0.0f32; if need_dw { cout * kk } else { 0 }];
    let mut db = vec![0.0f32; cout];
    let mut dx = need_dx.then(|| vec![0.0f32; n * in_stride]);
    if g.is_direct() {
        for b in 0..n {
            for (co, chunk) in gout[b * cout * hw..(b + 1) * cout * hw].chunks(hw).enumerate() {
                db[co] += chunk.iter().sum::<f32>();
            }
        }
        let (hp, wp) = (g.h + 2 * g.pad, g.w + 2 * g.pad);
        if need_dw {
            let kk = g.cin * g.k * g.k;
            let mut col = vec![0.0f32; kk * hw];
            for b in 0..n {
                im2col(&x[b * in_stride..(b + 1) * in_stride], g, &mut col);
                let gb = &gout[b * cout * hw..(b + 1) * cout * hw];
                gemm(cout, hw, kk, gb, (hw, 1), &col, (1, hw), &mut dw, 1.0);
            }
        }
        if let Some(dx) = dx.as_mut() {
            // dx is a same-convolution of gout with the flipped, transposed kernel.
            let kk2 = g.k * g.k;
            let mut flipped = vec![0.0f32; weight.len()];
            for co in 0..cout {
                for ci in 0..g.cin {
                    for i in 0..kk2 {
                        flipped[(ci * cout + co) * kk2 + i] = weight[(co * g.cin + ci) * kk2 + (kk2 - 1 - i)];
                    }
                }
            }
            let gp = pad_planes(gout, n * cout, g.h, g.w, g.pad);
            let pin = cout * hp * wp;
            for b in 0..n {
                let dxb = &mut dx[b * in_stride..(b + 1) * in_stride];
                direct_conv_image(&gp[b * pin..(b + 1) * pin], cout, g.h, g.w, g.k, &flipped, g.cin, dxb);
            }
        }
        return (dx, dw, db);
    }
    let pointwise = g.is_pointwise();
    let mut col = vec![0.0f32; if pointwise { 0 } else { kk * hw }];
    let mut dcol = vec![0.0f32; if pointwise || !need_dx { 0 } else { kk * hw }];
    for b in 0..n {
        let xb = &x[b * in_stride..(b + 1) * in_stride];
        let gb = &gout[b * cout * hw..(b + 1) * cout * hw];
        for (co, chunk) in gb.chunks(hw).enumerate() {
            db[co] += chunk.iter().sum::<f32>();
        }
        if need_dw {
            let src: &[f32] = if pointwise {
                xb
            } else {
                im2col(xb, g, &mut col);
                &col
            };
            gemm(cout, hw, kk, gb, (hw, 1), src, (1, hw), &mut dw, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_stride..(b + 1) * in_stride];
            if pointwise {
                gemm(kk, cout, hw, weight, (1, kk), gb, (hw, 1), dxb, 0.0);
            } else {
                gemm(kk, cout, hw, weight, (1, kk), gb, (hw, 1), &mut dcol, 0.0);
                col2im(&dcol, g, dxb);
            }
        }
    }
    (dx, dw, db)
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Group normalisation statistics: per `(batch, group)` mean and reciprocal std.
pub fn group_norm_stats(x: &[f32], n: usize, c: usize, hw: usize, groups: usize, eps: f32) -> (Vec<f32>, Vec<f32>) {
    let per = c / groups * hw;
    let mut mean = Vec::with_capacity(n * groups);
    let mut rstd = Vec::with_capacity(n * groups);
    for chunk in x.chunks(per).take(n * groups) {
        let m = chunk.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        let var = chunk.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / per as f64;
        mean.push(m as f32);
        rstd.push((1.0 / (var + eps as f64).sqrt()) as f32);
    }
    (mean, rstd)
}

/// Bilinear resize of an NCHW tensor (align-corners = false, edge clamped).
pub fn resize_bilinear(x: &[f32], n: usize, c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * c * oh * ow];
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let coord = |o: usize, scale: f32, limit: usize| {
        let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(limit - 1);
        let i1 = (i0 + 1).min(limit - 1);
        (i0, i1, src - i0 as f32)
    };
    let ys: Vec<_> = (0..oh).map(|o| coord(o, sy, h)).collect();
    let xs: Vec<_> = (0..ow).map(|o| coord(o, sx, w)).collect();
    for (plane, dst) in x.chunks(h * w).zip(out.chunks_mut(oh * ow)).take(n * c) {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}
