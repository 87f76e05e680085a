//! Dense building blocks over row-major `rows × width` buffers, with
//! hand-written reverse passes. Parameters live in one flat slice; layers
//! only hold offsets into it.

pub(crate) const LN_EPS: f64 = 1e-5;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = W x + b` with `W` stored `out × inp`; the bias follows the weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn b(&self) -> usize {
        self.w + self.inp * self.out
    }

    pub fn len(&self) -> usize {
        (self.inp + 1) * self.out
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
        let (inp, out) = (self.inp, self.out);
        let w = &p[self.w..self.b()];
        let b = &p[self.b()..self.b() + out];
        let mut y = vec![0.0; rows * out];
        for (xr, yr) in x.chunks_exact(inp).zip(y.chunks_exact_mut(out)) {
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = b[o] + dot(xr, &w[o * inp..(o + 1) * inp]);
            }
        }
        y
    }

    /// Accumulates parameter gradients into `g`; returns `dx` if asked.
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], need_dx: bool) -> Option<Vec<f64>> {
        let (inp, out) = (self.inp, self.out);
        let w = &p[self.w..self.b()];
        let (gw, gb) = g[self.w..self.w + self.len()].split_at_mut(inp * out);
        let mut dx = need_dx.then(|| vec![0.0; x.len()]);
        for (r, (xr, dyr)) in x.chunks_exact(inp).zip(dy.chunks_exact(out)).enumerate() {
            for (o, &d) in dyr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                axpy(d, xr, &mut gw[o * inp..(o + 1) * inp]);
                if let Some(dx) = dx.as_mut() {
                    axpy(d, &w[o * inp..(o + 1) * inp], &mut dx[r * inp..(r + 1) * inp]);
                }
            }
        }
        dx
    }
}

/// Per-row layer normalization with learned scale and shift.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerNorm {
    pub gamma: usize,
    pub dim: usize,
}

pub(crate) struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn beta(&self) -> usize {
        self.gamma + self.dim
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (Vec<f64>, LnCache) {
        let d = self.dim;
        let gamma = &p[self.gamma..self.gamma + d];
        let beta = &p[self.beta()..self.beta() + d];
        let rows = x.len() / d;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let xr = &x[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(s);
            for k in 0..d {
                let h = (xr[k] - mean) * s;
                xhat[r * d + k] = h;
                y[r * d + k] = gamma[k] * h + beta[k];
            }
        }
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &LnCache, dy: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let n = d as f64;
        let gamma = &p[self.gamma..self.gamma + d];
        let mut dx = vec![0.0; dy.len()];
        for (r, &s) in cache.inv_std.iter().enumerate() {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut sum = 0.0;
            let mut sum_xh = 0.0;
            for k in 0..d {
                g[self.gamma + k] += dyr[k] * xh[k];
                g[self.beta() + k] += dyr[k];
                let dxh = dyr[k] * gamma[k];
                sum += dxh;
                sum_xh += dxh * xh[k];
            }
            for k in 0..d {
                let dxh = dyr[k] * gamma[k];
                dx[r * d + k] = s / n * (n * dxh - sum - xh[k] * sum_xh);
            }
        }
        dx
    }
}

/// `Linear → ReLU → Linear`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

pub(crate) struct MlpCache {
    x: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
}

impl Mlp {
    pub fn forward(&self, p: &[f64], x: Vec<f64>, rows: usize) -> (Vec<f64>, MlpCache) {
        let z1 = self.l1.forward(p, &x, rows);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let y = self.l2.forward(p, &a1, rows);
        (y, MlpCache { x, z1, a1 })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &MlpCache, dy: &[f64]) -> Vec<f64> {
        let mut da1 = self.l2.backward(p, g, &cache.a1, dy, true).unwrap_or_default();
        for (d, z) in da1.iter_mut().zip(&cache.z1) {
            if *z <= 0.0 {
                *d = 0.0;
            }
        }
        self.l1.backward(p, g, &cache.x, &da1, true).unwrap_or_default()
    }
}

/// Row-wise `[a | b]`.
pub(crate) fn concat_rows(a: &[f64], b: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ar, br) in a.chunks_exact(width).zip(b.chunks_exact(width)) {
        out.extend_from_slice(ar);
        out.extend_from_slice(br);
    }
    out
}

/// Inverse of [`concat_rows`].
pub(crate) fn split_rows(x: &[f64], width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(x.len() / 2);
    let mut b = Vec::with_capacity(x.len() / 2);
    for r in x.chunks_exact(2 * width) {
        a.extend_from_slice(&r[..width]);
        b.extend_from_slice(&r[width..]);
    }
    (a, b)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
