// SPDX-License-Identifier: Apache-2.0

//! Dense and 3x3 same-padding convolution kernels with their adjoints.

/// `out[o] = bias[o] + sum_i w[o * n_in + i] * x[i]`
pub fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *y = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulates weight/bias gradients and returns `dx`.
pub fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            drow[i] += g * x[i];
            dx[i] += g * row[i];
        }
    }
    dx
}

/// Shape of a channel-major feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub width: usize,
    pub height: usize,
}

impl MapShape {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }
}

/// Valid output range along one axis for kernel offset `k` in {0,1,2}.
#[inline]
fn span(k: usize, extent: usize) -> (usize, usize) {
    // input index = output index + k - 1
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { extent.saturating_sub(1) } else { extent };
    (lo, hi)
}

/// 3x3 convolution with zero padding. `w` is `[c_out][c_in][3][3]`.
pub fn conv3x3(shape: MapShape, c_in: usize, c_out: usize, w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let MapShape { width, height } = shape;
    let n = shape.cells();
    for co in 0..c_out {
        let o = &mut out[co * n..(co + 1) * n];
        o.fill(b[co]);
        for ci in 0..c_in {
            let input = &x[ci * n..(ci + 1) * n];
            for ky in 0..3 {
                let (y0, y1) = span(ky, height);
                for kx in 0..3 {
                    let wv = w[((co * c_in + ci) * 3 + ky) * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = span(kx, width);
                    for y in y0..y1 {
                        let src = (y + ky - 1) * width;
                        let dst = y * width;
                        for xx in x0..x1 {
                            o[dst + xx] += wv * input[src + xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates `dw`, `db`; returns `dx` when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    shape: MapShape,
    c_in: usize,
    c_out: usize,
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let MapShape { width, height } = shape;
    let n = shape.cells();
    let mut dx = want_dx.then(|| vec![0.0; c_in * n]);
    for co in 0..c_out {
        let g = &dy[co * n..(co + 1) * n];
        db[co] += g.iter().sum::<f64>();
        for ci in 0..c_in {
            let input = &x[ci * n..(ci + 1) * n];
            for ky in 0..3 {
                let (y0, y1) = span(ky, height);
                for kx in 0..3 {
                    let (x0, x1) = span(kx, width);
                    let widx = ((co * c_in + ci) * 3 + ky) * 3 + kx;
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src = (y + ky - 1) * width;
                        let dst = y * width;
                        for xx in x0..x1 {
                            acc += g[dst + xx] * input[src + xx + kx - 1];
                        }
                    }
                    dw[widx] += acc;
                    if let Some(dx) = dx.as_mut() {
                        let wv = w[widx];
                        let d = &mut dx[ci * n..(ci + 1) * n];
                        for y in y0..y1 {
                            let src = (y + ky - 1) * width;
                            let dst = y * width;
                            for xx in x0..x1 {
                                d[src + xx + kx - 1] += wv * g[dst + xx];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit bounds checks.
    fn conv_reference(shape: MapShape, c_in: usize, c_out: usize, w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let (wd, ht) = (shape.width as isize, shape.height as isize);
        let n = shape.cells();
        let mut out = vec![0.0; c_out * n];
        for co in 0..c_out {
            for y in 0..ht {
                for xx in 0..wd {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy < 0 || sx < 0 || sy >= ht || sx >= wd {
                                    continue;
                                }
                                acc += w[((co * c_in + ci) * 3 + ky as usize) * 3 + kx as usize]
                                    * x[ci * n + (sy * wd + sx) as usize];
                            }
                        }
                    }
                    out[co * n + (y * wd + xx) as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_reference() {
        let shape = MapShape { width: 5, height: 3 };
        let (ci, co) = (2, 3);
        let w: Vec<f64> = (0..co * ci * 9).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
        let b = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..ci * 15).map(|i| ((i * 5 % 13) as f64) / 13.0).collect();
        let mut out = vec![0.0; co * 15];
        conv3x3(shape, ci, co, &w, &b, &x, &mut out);
        let reference = conv_reference(shape, ci, co, &w, &b, &x);
        for (a, r) in out.iter().zip(&reference) {
            assert!((a - r).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_the_adjoint() {
        // <dy, conv(x)> linear part must equal <dx, x> + <dw, w>.
        let shape = MapShape { width: 4, height: 4 };
        let (ci, co) = (2, 2);
        let w: Vec<f64> = (0..co * ci * 9).map(|i| ((i * 3 % 7) as f64 - 3.0) / 5.0).collect();
        let b = vec![0.0; co];
        let x: Vec<f64> = (0..ci * 16).map(|i| ((i * 11 % 17) as f64) / 17.0 - 0.5).collect();
        let dy: Vec<f64> = (0..co * 16).map(|i| ((i * 13 % 19) as f64) / 19.0 - 0.5).collect();
        let mut out = vec![0.0; co * 16];
        conv3x3(shape, ci, co, &w, &b, &x, &mut out);
        let lhs: f64 = out.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; co];
        let dx = conv3x3_backward(shape, ci, co, &w, &x, &dy, &mut dw, &mut db, true).unwrap();
        let via_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let via_w: f64 = dw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-12);
        assert!((lhs - via_w).abs() < 1e-12);
    }
}
