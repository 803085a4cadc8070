//! Convolution and fully-connected layers with manual backpropagation.
//!
//! Parameters are stored single-precision; all arithmetic runs in double
//! precision so analytic gradients can be checked against central finite
//! differences at tight tolerances.

/// 3×3 convolution with padding 1. Output extent per axis is
/// `(in - 1) / stride + 1`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// Layout `[out_ch][in_ch][ky][kx]`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            stride,
            weight: vec![0.0; out_ch * in_ch * 9],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    /// Output-column range [start, end) whose sampled input column
    /// `ox*stride + k - 1` stays inside [0, w).
    #[inline]
    fn valid_ox(&self, k: usize, w: usize, ow: usize) -> (usize, usize) {
        let start = if k == 0 { 1usize.div_ceil(self.stride) } else { 0 };
        let end = if w < k {
            0
        } else {
            ((w - k) / self.stride + 1).min(ow)
        };
        (start.min(end), end)
    }

    /// Tap-major patch matrix: row `k = (ic, ky, kx)` holds that tap's
    /// sample for every output pixel, with padded taps left at zero. All
    /// convolution arithmetic then runs over contiguous rows of length
    /// `oh * ow`.
    fn build_columns(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.out_hw(h, w);
        let plane = oh * ow;
        let s = self.stride;
        let mut col = vec![0.0f64; self.in_ch * 9 * plane];
        for ic in 0..self.in_ch {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..3 {
                let (oy0, oy1) = self.valid_ox(ky, h, oh);
                for kx in 0..3 {
                    let (ox0, ox1) = self.valid_ox(kx, w, ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let k = (ic * 3 + ky) * 3 + kx;
                    let col_row = &mut col[k * plane..(k + 1) * plane];
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - 1;
                        let src = &in_plane[iy * w + ox0 * s + kx - 1..];
                        let dst = &mut col_row[oy * ow + ox0..oy * ow + ox1];
                        if s == 1 {
                            dst.copy_from_slice(&src[..dst.len()]);
                        } else {
                            for (d, v) in dst.iter_mut().zip(src.iter().step_by(s)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (oh, ow) = self.out_hw(h, w);
        let plane = oh * ow;
        let k_dim = self.in_ch * 9;
        let col = self.build_columns(input, h, w);
        let mut out = vec![0.0f64; self.out_ch * plane];
        for oc in 0..self.out_ch {
            let out_plane = &mut out[oc * plane..(oc + 1) * plane];
            out_plane.fill(self.bias[oc] as f64);
            let w_row = &self.weight[oc * k_dim..(oc + 1) * k_dim];
            for (k, &wv) in w_row.iter().enumerate() {
                let wv = wv as f64;
                let col_row = &col[k * plane..(k + 1) * plane];
                for (o, c) in out_plane.iter_mut().zip(col_row) {
                    *o += wv * c;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &self,
        input: &[f64],
        h: usize,
        w: usize,
        d_out: &[f64],
        d_weight: &mut [f64],
        d_bias: &mut [f64],
    ) -> Vec<f64> {
        let (oh, ow) = self.out_hw(h, w);
        let plane = oh * ow;
        let k_dim = self.in_ch * 9;
        let s = self.stride;
        let col = self.build_columns(input, h, w);
        let mut d_col = vec![0.0f64; k_dim * plane];
        for oc in 0..self.out_ch {
            let d_plane = &d_out[oc * plane..(oc + 1) * plane];
            d_bias[oc] += d_plane.iter().sum::<f64>();
            let w_row = &self.weight[oc * k_dim..(oc + 1) * k_dim];
            let dw_row = &mut d_weight[oc * k_dim..(oc + 1) * k_dim];
            for k in 0..k_dim {
                let col_row = &col[k * plane..(k + 1) * plane];
                // Four-lane partial sums keep the reduction vectorizable
                // with a fixed summation order.
                let mut acc = [0.0f64; 4];
                let mut chunks_g = d_plane.chunks_exact(4);
                let mut chunks_c = col_row.chunks_exact(4);
                for (g4, c4) in (&mut chunks_g).zip(&mut chunks_c) {
                    for lane in 0..4 {
                        acc[lane] += g4[lane] * c4[lane];
                    }
                }
                let mut dw = (acc[0] + acc[1]) + (acc[2] + acc[3]);
                for (g, c) in chunks_g.remainder().iter().zip(chunks_c.remainder()) {
                    dw += g * c;
                }
                dw_row[k] += dw;

                let wv = w_row[k] as f64;
                let d_col_row = &mut d_col[k * plane..(k + 1) * plane];
                for (d, g) in d_col_row.iter_mut().zip(d_plane) {
                    *d += wv * g;
                }
            }
        }

        // Scatter the patch-matrix gradient back onto the input.
        let mut d_in = vec![0.0f64; self.in_ch * h * w];
        for ic in 0..self.in_ch {
            let din_plane = &mut d_in[ic * h * w..(ic + 1) * h * w];
            for ky in 0..3 {
                let (oy0, oy1) = self.valid_ox(ky, h, oh);
                for kx in 0..3 {
                    let (ox0, ox1) = self.valid_ox(kx, w, ow);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let k = (ic * 3 + ky) * 3 + kx;
                    let d_col_row = &d_col[k * plane..(k + 1) * plane];
                    for oy in oy0..oy1 {
                        let iy = oy * s + ky - 1;
                        let base = iy * w + ox0 * s + kx - 1;
                        let src = &d_col_row[oy * ow + ox0..oy * ow + ox1];
                        if s == 1 {
                            for (d, v) in din_plane[base..base + src.len()]
                                .iter_mut()
                                .zip(src)
                            {
                                *d += v;
                            }
                        } else {
                            for (i, v) in src.iter().enumerate() {
                                din_plane[base + i * s] += v;
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}

/// Dense layer, weight layout `[out][in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o] as f64;
            for (wv, x) in row.iter().zip(input) {
                acc += *wv as f64 * x;
            }
            out.push(acc);
        }
        out
    }

    pub fn backward(
        &self,
        input: &[f64],
        d_out: &[f64],
        d_weight: &mut [f64],
        d_bias: &mut [f64],
    ) -> Vec<f64> {
        let mut d_in = vec![0.0f64; self.in_dim];
        for o in 0..self.out_dim {
            let g = d_out[o];
            d_bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let drow = &mut d_weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                drow[i] += g * input[i];
                d_in[i] += row[i] as f64 * g;
            }
        }
        d_in
    }
}

#[inline]
pub fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Masks a gradient by the ReLU derivative, where `activation` is the
/// post-ReLU output.
#[inline]
pub fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}
