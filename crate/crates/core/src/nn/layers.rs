//! Batched forward/backward kernels. Every buffer is a flat row-major slice
//! holding `batch` samples back to back.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn out_len(&self) -> usize {
        self.out_channels * self.out_height * self.out_width
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if it
    /// falls inside the unpadded input.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = o * self.stride + k;
        if pos < self.padding || pos - self.padding >= limit {
            None
        } else {
            Some(pos - self.padding)
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

pub(crate) fn dense_forward(
    x: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    for b in 0..batch {
        let xb = &x[b * inputs..(b + 1) * inputs];
        let yb = &mut y[b * outputs..(b + 1) * outputs];
        for (o, out) in yb.iter_mut().enumerate() {
            let row = &weights[o * inputs..(o + 1) * inputs];
            let mut acc = bias[o];
            for (w, v) in row.iter().zip(xb) {
                acc += w * v;
            }
            *out = acc;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    inputs: usize,
    outputs: usize,
    weights: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    for b in 0..batch {
        let xb = &x[b * inputs..(b + 1) * inputs];
        let dyb = &dy[b * outputs..(b + 1) * outputs];
        for (o, &g) in dyb.iter().enumerate() {
            dbias[o] += g;
            let drow = &mut dweights[o * inputs..(o + 1) * inputs];
            for (dw, v) in drow.iter_mut().zip(xb) {
                *dw += g * v;
            }
        }
    }
    if !need_dx {
        return Vec::new();
    }
    let mut dx = vec![0.0; batch * inputs];
    for b in 0..batch {
        let dyb = &dy[b * outputs..(b + 1) * outputs];
        let dxb = &mut dx[b * inputs..(b + 1) * inputs];
        for (o, &g) in dyb.iter().enumerate() {
            let row = &weights[o * inputs..(o + 1) * inputs];
            for (d, w) in dxb.iter_mut().zip(row) {
                *d += g * w;
            }
        }
    }
    dx
}

pub(crate) fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub(crate) fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    batch: usize,
    g: ConvGeom,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let (in_len, out_len) = (g.in_len(), g.out_len());
    let plane = g.out_height * g.out_width;
    let k2 = g.kernel * g.kernel;
    let mut y = vec![0.0; batch * out_len];
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let yb = &mut y[b * out_len..(b + 1) * out_len];
        for o in 0..g.out_channels {
            let yo = &mut yb[o * plane..(o + 1) * plane];
            yo.fill(bias[o]);
            for c in 0..g.channels {
                let xc = &xb[c * g.height * g.width..(c + 1) * g.height * g.width];
                let wk = &weights[(o * g.channels + c) * k2..(o * g.channels + c + 1) * k2];
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let w = wk[ki * g.kernel + kj];
                        for oh in 0..g.out_height {
                            let Some(ih) = g.source(oh, ki, g.height) else {
                                continue;
                            };
                            for ow in 0..g.out_width {
                                if let Some(iw) = g.source(ow, kj, g.width) {
                                    yo[oh * g.out_width + ow] += w * xc[ih * g.width + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    g: ConvGeom,
    weights: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let (in_len, out_len) = (g.in_len(), g.out_len());
    let plane = g.out_height * g.out_width;
    let k2 = g.kernel * g.kernel;
    let mut dx = if need_dx {
        vec![0.0; batch * in_len]
    } else {
        Vec::new()
    };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        for o in 0..g.out_channels {
            let dyo = &dyb[o * plane..(o + 1) * plane];
            dbias[o] += dyo.iter().sum::<f64>();
            for c in 0..g.channels {
                let base = c * g.height * g.width;
                let widx = (o * g.channels + c) * k2;
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let w = weights[widx + ki * g.kernel + kj];
                        let mut acc = 0.0;
                        for oh in 0..g.out_height {
                            let Some(ih) = g.source(oh, ki, g.height) else {
                                continue;
                            };
                            for ow in 0..g.out_width {
                                if let Some(iw) = g.source(ow, kj, g.width) {
                                    let grad = dyo[oh * g.out_width + ow];
                                    let at = base + ih * g.width + iw;
                                    acc += grad * xb[at];
                                    if need_dx {
                                        dx[b * in_len + at] += grad * w;
                                    }
                                }
                            }
                        }
                        dweights[widx + ki * g.kernel + kj] += acc;
                    }
                }
            }
        }
    }
    dx
}

/// Flat index (within one channel plane) of the maximum in a pooling
/// window. Ties resolve to the first position in row-major scan order.
#[inline]
fn window_argmax(plane: &[f64], g: &PoolGeom, oh: usize, ow: usize) -> usize {
    let mut best = (oh * g.stride) * g.width + ow * g.stride;
    let mut best_val = plane[best];
    for i in 0..g.window {
        for j in 0..g.window {
            let at = (oh * g.stride + i) * g.width + ow * g.stride + j;
            if plane[at] > best_val {
                best_val = plane[at];
                best = at;
            }
        }
    }
    best
}

pub(crate) fn maxpool_forward(x: &[f64], batch: usize, g: PoolGeom) -> Vec<f64> {
    let in_plane = g.height * g.width;
    let out_plane = g.out_height * g.out_width;
    let mut y = vec![0.0; batch * g.channels * out_plane];
    for bc in 0..batch * g.channels {
        let plane = &x[bc * in_plane..(bc + 1) * in_plane];
        for oh in 0..g.out_height {
            for ow in 0..g.out_width {
                y[bc * out_plane + oh * g.out_width + ow] = plane[window_argmax(plane, &g, oh, ow)];
            }
        }
    }
    y
}

pub(crate) fn maxpool_backward(x: &[f64], dy: &[f64], batch: usize, g: PoolGeom) -> Vec<f64> {
    let in_plane = g.height * g.width;
    let out_plane = g.out_height * g.out_width;
    let mut dx = vec![0.0; x.len()];
    for bc in 0..batch * g.channels {
        let plane = &x[bc * in_plane..(bc + 1) * in_plane];
        for oh in 0..g.out_height {
            for ow in 0..g.out_width {
                let at = window_argmax(plane, &g, oh, ow);
                dx[bc * in_plane + at] += dy[bc * out_plane + oh * g.out_width + ow];
            }
        }
    }
    dx
}
