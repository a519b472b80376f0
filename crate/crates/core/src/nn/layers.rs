use rand::Rng;

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = W x + b` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: glorot(rng, in_dim, out_dim, in_dim * out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + dot(row, x))
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            let row = o * self.in_dim..(o + 1) * self.in_dim;
            axpy(d, x, &mut grad.weight[row.clone()]);
            axpy(d, &self.weight[row], &mut dx);
        }
        dx
    }

    /// Like [`Linear::backward`] but skips the input gradient.
    pub fn backward_params(&self, x: &[f64], dy: &[f64], grad: &mut Linear) {
        for (o, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            axpy(d, x, &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim]);
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Single-direction LSTM. Gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden: usize,
    /// `4H × D`, row-major.
    pub w: Vec<f64>,
    /// `4H × H`, row-major.
    pub u: Vec<f64>,
    pub b: Vec<f64>,
}

/// Intermediate values of one forward pass, needed for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    xs: Vec<Vec<f64>>,
    /// Post-activation gates per step, `4H` each.
    gates: Vec<Vec<f64>>,
    /// Cell states; `cs[t + 1]` is the state after step `t`.
    cs: Vec<Vec<f64>>,
    /// Hidden states; `hs[t + 1]` is the output of step `t`.
    hs: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        Lstm {
            input_dim,
            hidden,
            w: glorot(rng, input_dim, 4 * hidden, 4 * hidden * input_dim),
            u: glorot(rng, hidden, 4 * hidden, 4 * hidden * hidden),
            b,
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Lstm {
            input_dim,
            hidden,
            w: vec![0.0; 4 * hidden * input_dim],
            u: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    /// Runs the sequence and returns the last hidden state (zeros for an empty sequence).
    pub fn forward(&self, xs: Vec<Vec<f64>>) -> (Vec<f64>, LstmTrace) {
        let h = self.hidden;
        let mut trace = LstmTrace {
            gates: Vec::with_capacity(xs.len()),
            cs: vec![vec![0.0; h]],
            hs: vec![vec![0.0; h]],
            xs: Vec::new(),
        };
        for x in &xs {
            let h_prev = trace.hs.last().unwrap();
            let c_prev = trace.cs.last().unwrap();
            let mut a = self.b.clone();
            for (r, ar) in a.iter_mut().enumerate() {
                *ar += dot(&self.w[r * self.input_dim..(r + 1) * self.input_dim], x)
                    + dot(&self.u[r * h..(r + 1) * h], h_prev);
            }
            for (k, v) in a.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&k) { v.tanh() } else { sigmoid(*v) };
            }
            let mut c = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for j in 0..h {
                let (i, f, g, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                c[j] = f * c_prev[j] + i * g;
                hn[j] = o * c[j].tanh();
            }
            trace.gates.push(a);
            trace.cs.push(c);
            trace.hs.push(hn);
        }
        trace.xs = xs;
        (trace.hs.last().unwrap().clone(), trace)
    }

    /// Backpropagation through time from a gradient on the last hidden state.
    pub fn backward(&self, trace: &LstmTrace, dh_last: &[f64], grad: &mut Lstm) {
        let h = self.hidden;
        let d = self.input_dim;
        let mut dh = dh_last.to_vec();
        let mut dc = vec![0.0; h];
        let mut da = vec![0.0; 4 * h];
        for t in (0..trace.xs.len()).rev() {
            let gates = &trace.gates[t];
            let c = &trace.cs[t + 1];
            let c_prev = &trace.cs[t];
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = c[j].tanh();
                let d_o = dh[j] * tc;
                dc[j] += dh[j] * o * (1.0 - tc * tc);
                let d_i = dc[j] * g;
                let d_g = dc[j] * i;
                let d_f = dc[j] * c_prev[j];
                da[j] = d_i * i * (1.0 - i);
                da[h + j] = d_f * f * (1.0 - f);
                da[2 * h + j] = d_g * (1.0 - g * g);
                da[3 * h + j] = d_o * o * (1.0 - o);
                dc[j] *= f;
            }
            let x = &trace.xs[t];
            let h_prev = &trace.hs[t];
            let mut dh_prev = vec![0.0; h];
            for (r, &dr) in da.iter().enumerate() {
                grad.b[r] += dr;
                axpy(dr, x, &mut grad.w[r * d..(r + 1) * d]);
                axpy(dr, h_prev, &mut grad.u[r * h..(r + 1) * h]);
                axpy(dr, &self.u[r * h..(r + 1) * h], &mut dh_prev);
            }
            dh = dh_prev;
        }
    }
}
