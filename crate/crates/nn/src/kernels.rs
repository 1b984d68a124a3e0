//! Raw forward/backward kernels on flat NCHW slices.
//!
//! Batched kernels split work per sample; any cross-sample reduction (weight
//! and bias gradients) is computed as per-sample partials summed in sample
//! order, so results do not depend on the thread count.

use rayon::prelude::*;

/// `c = a·b + beta·c` for row-major operands. `ta`/`tb` read the stored
/// matrix transposed: `a` is stored k×m when `ta`, `b` stored n×k when `tb`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds checked above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
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

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(x: &[f32], g: &ConvGeom, col: &mut [f32]) {
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize + kj as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
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
    let p = g.p();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = ox as isize + kj as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[iy as usize * g.w + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Returns the output and the im2col buffers kept for the backward pass.
pub(crate) fn conv_forward(
    x: &[f32],
    w: &[f32],
    bias: Option<&[f32]>,
    g: &ConvGeom,
) -> (Vec<f32>, Vec<f32>) {
    let (k, p) = (g.k(), g.p());
    let mut out = vec![0.0f32; g.n * g.cout * p];
    let mut cols = vec![0.0f32; g.n * k * p];
    out.par_chunks_mut(g.cout * p)
        .zip(cols.par_chunks_mut(k * p))
        .enumerate()
        .for_each(|(ni, (o, col))| {
            im2col(&x[ni * g.cin * g.h * g.w..(ni + 1) * g.cin * g.h * g.w], g, col);
            if let Some(b) = bias {
                for (co, row) in o.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v = b[co]);
                }
            }
            gemm(g.cout, k, p, w, false, col, false, 1.0, o);
        });
    (out, cols)
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f32>>,
    pub dw: Vec<f32>,
    pub db: Vec<f32>,
}

pub(crate) fn conv_backward(
    dout: &[f32],
    cols: &[f32],
    w: &[f32],
    g: &ConvGeom,
    need_dx: bool,
) -> ConvGrads {
    let (k, p) = (g.k(), g.p());
    let per_sample: Vec<(Vec<f32>, Vec<f64>, Option<Vec<f32>>)> = (0..g.n)
        .into_par_iter()
        .map(|ni| {
            let d = &dout[ni * g.cout * p..(ni + 1) * g.cout * p];
            let col = &cols[ni * k * p..(ni + 1) * k * p];
            let mut dw = vec![0.0f32; g.cout * k];
            gemm(g.cout, p, k, d, false, col, true, 0.0, &mut dw);
            let db: Vec<f64> = d
                .chunks(p)
                .map(|row| row.iter().map(|&v| v as f64).sum())
                .collect();
            let dx = need_dx.then(|| {
                let mut dcol = vec![0.0f32; k * p];
                gemm(k, g.cout, p, w, true, d, false, 0.0, &mut dcol);
                let mut dx = vec![0.0f32; g.cin * g.h * g.w];
                col2im(&dcol, g, &mut dx);
                dx
            });
            (dw, db, dx)
        })
        .collect();

    let mut dw = vec![0.0f32; g.cout * k];
    let mut db = vec![0.0f64; g.cout];
    let mut dx = need_dx.then(|| Vec::with_capacity(g.n * g.cin * g.h * g.w));
    for (sw, sb, sx) in per_sample {
        dw.iter_mut().zip(&sw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&sb).for_each(|(a, b)| *a += b);
        if let (Some(all), Some(part)) = (dx.as_mut(), sx) {
            all.extend_from_slice(&part);
        }
    }
    ConvGrads {
        dx,
        dw,
        db: db.into_iter().map(|v| v as f32).collect(),
    }
}

/// 2×2 stride-2 transposed convolution; weight laid out (Cin, Cout, 2, 2).
pub(crate) fn conv_t2_forward(
    x: &[f32],
    w: &[f32],
    bias: Option<&[f32]>,
    dims: [usize; 4],
    cout: usize,
) -> Vec<f32> {
    let [n, cin, h, wd] = dims;
    let (p, q) = (h * wd, cout * 4);
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = vec![0.0f32; n * cout * oh * ow];
    out.par_chunks_mut(cout * oh * ow)
        .enumerate()
        .for_each(|(ni, o)| {
            let xs = &x[ni * cin * p..(ni + 1) * cin * p];
            let mut y = vec![0.0f32; q * p];
            gemm(q, cin, p, w, true, xs, false, 0.0, &mut y);
            for co in 0..cout {
                let b = bias.map_or(0.0, |b| b[co]);
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = &y[(co * 4 + a * 2 + bb) * p..(co * 4 + a * 2 + bb + 1) * p];
                        for i in 0..h {
                            for j in 0..wd {
                                o[co * oh * ow + (2 * i + a) * ow + 2 * j + bb] =
                                    row[i * wd + j] + b;
                            }
                        }
                    }
                }
            }
        });
    out
}

pub(crate) fn conv_t2_backward(
    dout: &[f32],
    x: &[f32],
    w: &[f32],
    dims: [usize; 4],
    cout: usize,
    need_dx: bool,
) -> ConvGrads {
    let [n, cin, h, wd] = dims;
    let (p, q) = (h * wd, cout * 4);
    let (oh, ow) = (2 * h, 2 * wd);
    let per_sample: Vec<(Vec<f32>, Vec<f64>, Option<Vec<f32>>)> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let d = &dout[ni * cout * oh * ow..(ni + 1) * cout * oh * ow];
            let xs = &x[ni * cin * p..(ni + 1) * cin * p];
            let mut dy = vec![0.0f32; q * p];
            let mut db = vec![0.0f64; cout];
            for co in 0..cout {
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = &mut dy[(co * 4 + a * 2 + bb) * p..(co * 4 + a * 2 + bb + 1) * p];
                        for i in 0..h {
                            for j in 0..wd {
                                let v = d[co * oh * ow + (2 * i + a) * ow + 2 * j + bb];
                                row[i * wd + j] = v;
                                db[co] += v as f64;
                            }
                        }
                    }
                }
            }
            let mut dw = vec![0.0f32; cin * q];
            gemm(cin, p, q, xs, false, &dy, true, 0.0, &mut dw);
            let dx = need_dx.then(|| {
                let mut dx = vec![0.0f32; cin * p];
                gemm(cin, q, p, w, false, &dy, false, 0.0, &mut dx);
                dx
            });
            (dw, db, dx)
        })
        .collect();
    let mut dw = vec![0.0f32; cin * q];
    let mut db = vec![0.0f64; cout];
    let mut dx = need_dx.then(|| Vec::with_capacity(n * cin * p));
    for (sw, sb, sx) in per_sample {
        dw.iter_mut().zip(&sw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&sb).for_each(|(a, b)| *a += b);
        if let (Some(all), Some(part)) = (dx.as_mut(), sx) {
            all.extend_from_slice(&part);
        }
    }
    ConvGrads {
        dx,
        dw,
        db: db.into_iter().map(|v| v as f32).collect(),
    }
}

/// Per-channel batch statistics: biased mean/variance over (N, H, W).
pub(crate) fn channel_moments(x: &[f32], dims: [usize; 4]) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let count = (n * hw) as f64;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for ci in 0..c {
        let mut s = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            s += x[base..base + hw].iter().map(|&v| v as f64).sum::<f64>();
        }
        let m = s / count;
        let mut ss = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            ss += x[base..base + hw]
                .iter()
                .map(|&v| {
                    let d = v as f64 - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ci] = m;
        var[ci] = ss / count;
    }
    (mean, var)
}

/// Batch-norm input gradient given the normalized activations.
pub(crate) fn batchnorm_backward_input(
    dy: &[f32],
    xhat: &[f32],
    gamma: &[f32],
    inv_std: &[f32],
    dims: [usize; 4],
) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dx = vec![0.0f32; dy.len()];
    for ci in 0..c {
        let mut sum_d = 0.0f64;
        let mut sum_dx = 0.0f64;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for i in base..base + hw {
                let d = dy[i] as f64 * gamma[ci] as f64;
                sum_d += d;
                sum_dx += d * xhat[i] as f64;
            }
        }
        let k = inv_std[ci] as f64 / m;
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for i in base..base + hw {
                let d = dy[i] as f64 * gamma[ci] as f64;
                dx[i] = (k * (m * d - sum_d - xhat[i] as f64 * sum_dx)) as f32;
            }
        }
    }
    dx
}

/// Bilinear (align-corners-false) source taps for an axis doubled in size.
pub(crate) fn upsample_taps(n: usize) -> Vec<(usize, usize, f32, f32)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f32 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            let l1 = src - i0 as f32;
            (i0, i1, 1.0 - l1, l1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn upsample_taps_edges_clamp() {
        let taps = upsample_taps(2);
        assert_eq!(taps[0], (0, 1, 1.0, 0.0));
        assert_eq!(taps[1], (0, 1, 0.75, 0.25));
        assert_eq!(taps[2], (0, 1, 0.25, 0.75));
        assert_eq!(taps[3].0, 1);
        assert_eq!(taps[3].1, 1);
    }
}
