//! Raw NCHW kernels. These operate on flat slices; shape checking and graph
//! bookkeeping live in [`super::graph`].

use crate::error::{Error, Result};

/// Per-axis geometry of a 2-D convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
}

impl ConvGeom {
    /// "Same" padding for a `kh x kw` kernel: stride-1 output keeps H x W.
    pub fn same(kernel: (usize, usize), stride: (usize, usize), dilation: (usize, usize), groups: usize) -> Self {
        Self {
            stride,
            padding: (dilation.0 * (kernel.0 - 1) / 2, dilation.1 * (kernel.1 - 1) / 2),
            dilation,
            groups,
        }
    }

    pub fn out_size(&self, input: (usize, usize), kernel: (usize, usize)) -> Result<(usize, usize)> {
        let axis = |len: usize, pad: usize, dil: usize, k: usize, stride: usize, name: &str| {
            let span = dil * (k - 1) + 1;
            if len + 2 * pad < span || stride == 0 {
                return Err(Error::shape(
                    "conv2d",
                    format!("{name}={len} too small for kernel span {span} with padding {pad}"),
                ));
            }
            Ok((len + 2 * pad - span) / stride + 1)
        };
        Ok((
            axis(input.0, self.padding.0, self.dilation.0, kernel.0, self.stride.0, "H")?,
            axis(input.1, self.padding.1, self.dilation.1, kernel.1, self.stride.1, "W")?,
        ))
    }
}

/// Static description of one convolution call.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: ConvGeom,
}

impl ConvDims {
    pub fn new(input: [usize; 4], weight: [usize; 4], geom: ConvGeom) -> Result<Self> {
        let [n, c_in, h, w] = input;
        let [c_out, c_in_g, kh, kw] = weight;
        let groups = geom.groups;
        if groups == 0 || c_in % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {c_in} not divisible by groups {groups}"),
            ));
        }
        if c_out % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("output channels {c_out} not divisible by groups {groups}"),
            ));
        }
        if c_in_g != c_in / groups {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weight in-channel dim is {c_in_g}, expected {} (C_in {c_in} / groups {groups})",
                    c_in / groups
                ),
            ));
        }
        let (oh, ow) = geom.out_size((h, w), (kh, kw))?;
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
            geom,
        })
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn macs(&self) -> u64 {
        (self.n * self.c_out * self.oh * self.ow * (self.c_in / self.geom.groups) * self.kh * self.kw) as u64
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.geom.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.geom.groups
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.geom.stride == (1, 1) && self.geom.padding == (0, 0)
    }
}

/// Zero-padded copy of one `h x w` plane into `dst` of `ph x pw`.
fn pad_plane(src: &[f64], h: usize, w: usize, pad: (usize, usize), pw: usize, dst: &mut [f64]) {
    for y in 0..h {
        let start = (y + pad.0) * pw + pad.1;
        dst[start..start + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += a * s);
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Padded-plane layout shared by the forward and backward passes.
///
/// For stride 1 the output is accumulated in a "wide" buffer whose rows have
/// the padded width, so every kernel tap becomes a single contiguous
/// multiply-add over `wide_len` elements; the extra columns are discarded.
struct Padded {
    ph: usize,
    pw: usize,
    wide_len: usize,
}

impl ConvDims {
    fn padded(&self) -> Padded {
        let ph = self.h + 2 * self.geom.padding.0;
        let pw = self.w + 2 * self.geom.padding.1;
        Padded {
            ph,
            pw,
            wide_len: (self.oh - 1) * pw + self.ow,
        }
    }

    fn tap_shift(&self, p: &Padded, ki: usize, kj: usize) -> usize {
        ki * self.geom.dilation.0 * p.pw + kj * self.geom.dilation.1
    }

    fn unit_stride(&self) -> bool {
        self.geom.stride == (1, 1)
    }
}

pub(crate) fn conv2d_forward(d: &ConvDims, input: &[f64], weight: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.c_out * d.oh * d.ow];
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    let in_plane = d.h * d.w;
    let out_plane = d.oh * d.ow;
    let taps = d.kh * d.kw;
    if d.is_pointwise() {
        for b in 0..d.n {
            for oc in 0..d.c_out {
                let g = oc / cout_g;
                let o_base = (b * d.c_out + oc) * out_plane;
                let out_p = &mut out[o_base..o_base + out_plane];
                for icg in 0..cin_g {
                    let i_base = (b * d.c_in + g * cin_g + icg) * in_plane;
                    axpy(out_p, weight[oc * cin_g + icg], &input[i_base..i_base + in_plane]);
                }
            }
        }
        return out;
    }
    let p = d.padded();
    let plane = p.ph * p.pw;
    let mut padded = vec![0.0; cin_g * plane];
    let mut wide = vec![0.0; p.wide_len];
    let (sh, sw) = d.geom.stride;
    for b in 0..d.n {
        for g in 0..d.geom.groups {
            for icg in 0..cin_g {
                let i_base = (b * d.c_in + g * cin_g + icg) * in_plane;
                pad_plane(&input[i_base..i_base + in_plane], d.h, d.w, d.geom.padding, p.pw, &mut padded[icg * plane..(icg + 1) * plane]);
            }
            for oc in g * cout_g..(g + 1) * cout_g {
                let o_base = (b * d.c_out + oc) * out_plane;
                if d.unit_stride() {
                    wide.iter_mut().for_each(|v| *v = 0.0);
                    for icg in 0..cin_g {
                        let src = &padded[icg * plane..(icg + 1) * plane];
                        let w_base = (oc * cin_g + icg) * taps;
                        for ki in 0..d.kh {
                            for kj in 0..d.kw {
                                let shift = d.tap_shift(&p, ki, kj);
                                axpy(&mut wide, weight[w_base + ki * d.kw + kj], &src[shift..shift + p.wide_len]);
                            }
                        }
                    }
                    for oy in 0..d.oh {
                        out[o_base + oy * d.ow..o_base + (oy + 1) * d.ow].copy_from_slice(&wide[oy * p.pw..oy * p.pw + d.ow]);
                    }
                } else {
                    let out_p = &mut out[o_base..o_base + out_plane];
                    for icg in 0..cin_g {
                        let src = &padded[icg * plane..(icg + 1) * plane];
                        let w_base = (oc * cin_g + icg) * taps;
                        for ki in 0..d.kh {
                            for kj in 0..d.kw {
                                let wv = weight[w_base + ki * d.kw + kj];
                                let shift = d.tap_shift(&p, ki, kj);
                                for oy in 0..d.oh {
                                    let row = &src[shift + oy * sh * p.pw..];
                                    let dst = &mut out_p[oy * d.ow..(oy + 1) * d.ow];
                                    for (ox, o) in dst.iter_mut().enumerate() {
                                        *o += wv * row[ox * sw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight)`; either may be skipped.
pub(crate) fn conv2d_backward(
    d: &ConvDims,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    want_input: bool,
    want_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut gin = want_input.then(|| vec![0.0; input.len()]);
    let mut gw = want_weight.then(|| vec![0.0; weight.len()]);
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    let in_plane = d.h * d.w;
    let out_plane = d.oh * d.ow;
    let taps = d.kh * d.kw;
    if d.is_pointwise() {
        for b in 0..d.n {
            for oc in 0..d.c_out {
                let g = oc / cout_g;
                let o_base = (b * d.c_out + oc) * out_plane;
                let go_p = &grad_out[o_base..o_base + out_plane];
                for icg in 0..cin_g {
                    let i_base = (b * d.c_in + g * cin_g + icg) * in_plane;
                    let w_idx = oc * cin_g + icg;
                    if let Some(gw) = gw.as_mut() {
                        gw[w_idx] += dot(go_p, &input[i_base..i_base + in_plane]);
                    }
                    if let Some(gin) = gin.as_mut() {
                        axpy(&mut gin[i_base..i_base + in_plane], weight[w_idx], go_p);
                    }
                }
            }
        }
        return (gin, gw);
    }
    let p = d.padded();
    let plane = p.ph * p.pw;
    let (sh, sw) = d.geom.stride;
    let (pad_h, pad_w) = d.geom.padding;
    let mut padded = vec![0.0; cin_g * plane];
    let mut gpad = vec![0.0; if want_input { cin_g * plane } else { 0 }];
    let mut wide = vec![0.0; p.wide_len];
    for b in 0..d.n {
        for g in 0..d.geom.groups {
            if want_weight {
                for icg in 0..cin_g {
                    let i_base = (b * d.c_in + g * cin_g + icg) * in_plane;
                    pad_plane(&input[i_base..i_base + in_plane], d.h, d.w, d.geom.padding, p.pw, &mut padded[icg * plane..(icg + 1) * plane]);
                }
            }
            gpad.iter_mut().for_each(|v| *v = 0.0);
            for oc in g * cout_g..(g + 1) * cout_g {
                let o_base = (b * d.c_out + oc) * out_plane;
                let go_p = &grad_out[o_base..o_base + out_plane];
                if d.unit_stride() {
                    for oy in 0..d.oh {
                        wide[oy * p.pw..oy * p.pw + d.ow].copy_from_slice(&go_p[oy * d.ow..(oy + 1) * d.ow]);
                    }
                    for icg in 0..cin_g {
                        let w_base = (oc * cin_g + icg) * taps;
                        for ki in 0..d.kh {
                            for kj in 0..d.kw {
                                let shift = d.tap_shift(&p, ki, kj);
                                let widx = w_base + ki * d.kw + kj;
                                let lo = icg * plane + shift;
                                if let Some(gw) = gw.as_mut() {
                                    gw[widx] += dot(&wide, &padded[lo..lo + p.wide_len]);
                                }
                                if want_input {
                                    axpy(&mut gpad[lo..lo + p.wide_len], weight[widx], &wide);
                                }
                            }
                        }
                    }
                } else {
                    for icg in 0..cin_g {
                        let w_base = (oc * cin_g + icg) * taps;
                        for ki in 0..d.kh {
                            for kj in 0..d.kw {
                                let shift = d.tap_shift(&p, ki, kj);
                                let widx = w_base + ki * d.kw + kj;
                                let wv = weight[widx];
                                let mut acc = 0.0;
                                for oy in 0..d.oh {
                                    let row = icg * plane + shift + oy * sh * p.pw;
                                    let go_row = &go_p[oy * d.ow..(oy + 1) * d.ow];
                                    for (ox, &go) in go_row.iter().enumerate() {
                                        let idx = row + ox * sw;
                                        if want_weight {
                                            acc += go * padded[idx];
                                        }
                                        if want_input {
                                            gpad[idx] += wv * go;
                                        }
                                    }
                                }
                                if let Some(gw) = gw.as_mut() {
                                    gw[widx] += acc;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(gin) = gin.as_mut() {
                for icg in 0..cin_g {
                    let i_base = (b * d.c_in + g * cin_g + icg) * in_plane;
                    for y in 0..d.h {
                        let start = icg * plane + (y + pad_h) * p.pw + pad_w;
                        gin[i_base + y * d.w..i_base + (y + 1) * d.w].copy_from_slice(&gpad[start..start + d.w]);
                    }
                }
            }
        }
    }
    (gin, gw)
}

/// Pooling window description; padding cells never participate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PoolDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolDims {
    pub fn new(input: [usize; 4], k: usize, stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = input;
        let geom = ConvGeom {
            stride: (stride, stride),
            padding: (pad, pad),
            dilation: (1, 1),
            groups: 1,
        };
        let (oh, ow) = geom.out_size((h, w), (k, k))?;
        Ok(Self {
            n,
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn window(&self, o: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.k as isize).max(0) as usize).min(len);
        (lo, hi)
    }
}

/// Max pooling; also returns the flat input index of each winner.
pub(crate) fn max_pool_forward(d: &PoolDims, input: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let total = d.n * d.c * d.oh * d.ow;
    let mut out = Vec::with_capacity(total);
    let mut arg = Vec::with_capacity(total);
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for oy in 0..d.oh {
            let (y0, y1) = d.window(oy, d.h);
            for ox in 0..d.ow {
                let (x0, x1) = d.window(ox, d.w);
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + y0 * d.w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * d.w + ix;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}

/// Average pooling that divides by the number of in-bounds cells.
pub(crate) fn avg_pool_forward(d: &PoolDims, input: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.n * d.c * d.oh * d.ow);
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for oy in 0..d.oh {
            let (y0, y1) = d.window(oy, d.h);
            for ox in 0..d.ow {
                let (x0, x1) = d.window(ox, d.w);
                let mut sum = 0.0;
                for iy in y0..y1 {
                    sum += input[base + iy * d.w + x0..base + iy * d.w + x1].iter().sum::<f64>();
                }
                out.push(sum / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(d: &PoolDims, grad_out: &[f64]) -> Vec<f64> {
    let mut gin = vec![0.0; d.n * d.c * d.h * d.w];
    for plane in 0..d.n * d.c {
        let base = plane * d.h * d.w;
        for oy in 0..d.oh {
            let (y0, y1) = d.window(oy, d.h);
            for ox in 0..d.ow {
                let (x0, x1) = d.window(ox, d.w);
                let g = grad_out[(plane * d.oh + oy) * d.ow + ox] / ((y1 - y0) * (x1 - x0)) as f64;
                for iy in y0..y1 {
                    gin[base + iy * d.w + x0..base + iy * d.w + x1]
                        .iter_mut()
                        .for_each(|v| *v += g);
                }
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition: out[b,oc,oy,ox] = sum w * in at (oy*s + ki*d - p).
    fn naive_conv(d: &ConvDims, input: &[f64], weight: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; d.n * d.c_out * d.oh * d.ow];
        let cin_g = d.c_in / d.geom.groups;
        let cout_g = d.c_out / d.geom.groups;
        for b in 0..d.n {
            for oc in 0..d.c_out {
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let mut s = 0.0;
                        for icg in 0..cin_g {
                            let ic = (oc / cout_g) * cin_g + icg;
                            for ki in 0..d.kh {
                                for kj in 0..d.kw {
                                    let iy = (oy * d.geom.stride.0 + ki * d.geom.dilation.0) as isize
                                        - d.geom.padding.0 as isize;
                                    let ix = (ox * d.geom.stride.1 + kj * d.geom.dilation.1) as isize
                                        - d.geom.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy as usize >= d.h || ix as usize >= d.w {
                                        continue;
                                    }
                                    s += weight[((oc * cin_g + icg) * d.kh + ki) * d.kw + kj]
                                        * input[((b * d.c_in + ic) * d.h + iy as usize) * d.w + ix as usize];
                                }
                            }
                        }
                        out[((b * d.c_out + oc) * d.oh + oy) * d.ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn fast_conv_matches_naive_definition() {
        let cases = [
            ([2, 4, 7, 6], [4, 1, 3, 3], ConvGeom::same((3, 3), (1, 1), (1, 1), 4)),
            ([1, 4, 8, 8], [4, 1, 5, 5], ConvGeom::same((5, 5), (2, 2), (2, 2), 4)),
            ([1, 3, 6, 6], [5, 3, 1, 7], ConvGeom::same((1, 7), (1, 2), (1, 1), 1)),
            ([2, 2, 5, 5], [3, 2, 1, 1], ConvGeom::same((1, 1), (1, 1), (1, 1), 1)),
            ([1, 4, 9, 9], [2, 2, 3, 3], ConvGeom::same((3, 3), (2, 2), (1, 1), 2)),
        ];
        for (k, (inp, wt, geom)) in cases.into_iter().enumerate() {
            let d = ConvDims::new(inp, wt, geom).unwrap();
            let input: Vec<f64> = (0..inp.iter().product::<usize>()).map(|i| ((i * 7 + k) % 11) as f64 - 5.0).collect();
            let weight: Vec<f64> = (0..wt.iter().product::<usize>()).map(|i| ((i * 3 + 1) % 5) as f64 - 2.0).collect();
            assert_eq!(conv2d_forward(&d, &input, &weight), naive_conv(&d, &input, &weight), "case {k}");
        }
    }

    /// Backward via the adjoint of the naive forward: each output cotangent
    /// is pushed through the same index arithmetic.
    fn naive_backward(d: &ConvDims, input: &[f64], weight: &[f64], go: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gi = vec![0.0; input.len()];
        let mut gw = vec![0.0; weight.len()];
        let cin_g = d.c_in / d.geom.groups;
        let cout_g = d.c_out / d.geom.groups;
        for b in 0..d.n {
            for oc in 0..d.c_out {
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let g = go[((b * d.c_out + oc) * d.oh + oy) * d.ow + ox];
                        for icg in 0..cin_g {
                            let ic = (oc / cout_g) * cin_g + icg;
                            for ki in 0..d.kh {
                                for kj in 0..d.kw {
                                    let iy = (oy * d.geom.stride.0 + ki * d.geom.dilation.0) as isize - d.geom.padding.0 as isize;
                                    let ix = (ox * d.geom.stride.1 + kj * d.geom.dilation.1) as isize - d.geom.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy as usize >= d.h || ix as usize >= d.w {
                                        continue;
                                    }
                                    let wi = ((oc * cin_g + icg) * d.kh + ki) * d.kw + kj;
                                    let ii = ((b * d.c_in + ic) * d.h + iy as usize) * d.w + ix as usize;
                                    gw[wi] += g * input[ii];
                                    gi[ii] += g * weight[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (gi, gw)
    }

    #[test]
    fn fast_backward_matches_naive_adjoint() {
        let cases = [
            ([2, 4, 7, 6], [4, 1, 3, 3], ConvGeom::same((3, 3), (1, 1), (1, 1), 4)),
            ([1, 4, 8, 8], [4, 1, 5, 5], ConvGeom::same((5, 5), (2, 2), (2, 2), 4)),
            ([1, 3, 6, 6], [5, 3, 1, 7], ConvGeom::same((1, 7), (1, 2), (1, 1), 1)),
            ([2, 3, 5, 6], [2, 3, 7, 1], ConvGeom::same((7, 1), (1, 1), (1, 1), 1)),
            ([2, 2, 5, 5], [3, 2, 1, 1], ConvGeom::same((1, 1), (1, 1), (1, 1), 1)),
            ([1, 4, 9, 9], [2, 2, 3, 3], ConvGeom::same((3, 3), (2, 2), (1, 1), 2)),
        ];
        for (k, (inp, wt, geom)) in cases.into_iter().enumerate() {
            let d = ConvDims::new(inp, wt, geom).unwrap();
            let input: Vec<f64> = (0..inp.iter().product::<usize>()).map(|i| ((i * 5 + k) % 7) as f64 - 3.0).collect();
            let weight: Vec<f64> = (0..wt.iter().product::<usize>()).map(|i| ((i * 3 + 2) % 5) as f64 - 2.0).collect();
            let go: Vec<f64> = (0..d.n * d.c_out * d.oh * d.ow).map(|i| ((i * 11) % 9) as f64 - 4.0).collect();
            let (gi, gw) = conv2d_backward(&d, &input, &weight, &go, true, true);
            let (ni, nw) = naive_backward(&d, &input, &weight, &go);
            assert_eq!(gi.unwrap(), ni, "case {k}");
            assert_eq!(gw.unwrap(), nw, "case {k}");
        }
    }

    #[test]
    fn group_mismatch_is_reported() {
        let err = ConvDims::new([1, 3, 4, 4], [4, 1, 3, 3], ConvGeom::same((3, 3), (1, 1), (1, 1), 2)).unwrap_err();
        assert!(err.to_string().contains("groups"));
        let err = ConvDims::new([1, 4, 4, 4], [4, 3, 3, 3], ConvGeom::same((3, 3), (1, 1), (1, 1), 1)).unwrap_err();
        assert!(err.to_string().contains("in-channel"));
    }

    #[test]
    fn avg_pool_excludes_padding() {
        let d = PoolDims::new([1, 1, 2, 2], 3, 1, 1).unwrap();
        let out = avg_pool_forward(&d, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(out, vec![2.5; 4]);
    }
}
