//! Stacked LSTM over a window with a linear head on the final hidden state.
//!
//! Gate order within each `4H` block is input, forget, cell, output. Inputs
//! are time-major: row `t * batch + b` of the input matrix is sample `b` at
//! step `t`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::scalar::{sigmoid, tanh, Scalar};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named-shape index of the flat parameter vector.
pub fn param_index(dims: Dims) -> Vec<ParamSpec> {
    let g = 4 * dims.hidden;
    let mut out = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, shape: Vec<usize>| {
        let spec = ParamSpec { name, shape, offset };
        offset += spec.len();
        out.push(spec);
    };
    for l in 0..dims.layers {
        let d = if l == 0 { dims.input } else { dims.hidden };
        push(format!("lstm.{l}.w_ih"), vec![g, d]);
        push(format!("lstm.{l}.w_hh"), vec![g, dims.hidden]);
        push(format!("lstm.{l}.bias"), vec![g]);
    }
    push("head.weight".into(), vec![dims.classes, dims.hidden]);
    push("head.bias".into(), vec![dims.classes]);
    out
}

pub fn param_count(dims: Dims) -> usize {
    param_index(dims).iter().map(ParamSpec::len).sum()
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    input: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub dims: Dims,
    pub params: Vec<T>,
}

struct LayerCache<T> {
    input: Vec<T>,
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_c: Vec<T>,
    hs: Vec<T>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<T> {
    batch: usize,
    steps: usize,
    k: usize,
    layers: Vec<LayerCache<T>>,
    /// Dropout mask applied to the output of layer `l` before layer `l + 1`.
    between: Vec<Option<Vec<T>>>,
    head_mask: Option<Vec<T>>,
    head_in: Vec<T>,
}

fn dropout_mask<T: Scalar>(len: usize, p: f64, rng: &mut Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

impl<T: Scalar> Network<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            params: vec![T::zero(); param_count(dims)],
        }
    }

    fn layer_offsets(&self, l: usize) -> LayerOffsets {
        let h = self.dims.hidden;
        let g = 4 * h;
        let mut off = 0;
        for i in 0..l {
            let d = if i == 0 { self.dims.input } else { h };
            off += g * d + g * h + g;
        }
        let input = if l == 0 { self.dims.input } else { h };
        LayerOffsets {
            w_ih: off,
            w_hh: off + g * input,
            bias: off + g * input + g * h,
            input,
        }
    }

    fn head_offsets(&self) -> (usize, usize) {
        let h = self.dims.hidden;
        let g = 4 * h;
        let lstm: usize = (0..self.dims.layers)
            .map(|l| {
                let d = if l == 0 { self.dims.input } else { h };
                g * d + g * h + g
            })
            .sum();
        (lstm, lstm + self.dims.classes * h)
    }

    /// Index range of output unit `u`'s weight row and its bias entry.
    pub fn head_unit_ranges(&self, u: usize) -> (std::ops::Range<usize>, usize) {
        let h = self.dims.hidden;
        let (w, b) = self.head_offsets();
        (w + u * h..w + (u + 1) * h, b + u)
    }

    /// Logits of the first `k` output units for `batch` sequences of
    /// `steps` steps. With `dropout = Some((p, rng))`, inverted dropout is
    /// applied between recurrent layers and before the head.
    pub fn forward(
        &self,
        x: &[T],
        batch: usize,
        steps: usize,
        k: usize,
        mut dropout: Option<(f64, &mut Rng)>,
    ) -> (Vec<T>, ForwardCache<T>) {
        let h = self.dims.hidden;
        let g = 4 * h;
        assert_eq!(x.len(), batch * steps * self.dims.input, "input tensor shape");
        assert!(k <= self.dims.classes);
        let rows = batch * steps;
        let mut layers: Vec<LayerCache<T>> = Vec::with_capacity(self.dims.layers);
        let mut between = Vec::with_capacity(self.dims.layers);
        let mut input = x.to_vec();
        for l in 0..self.dims.layers {
            let o = self.layer_offsets(l);
            let w_ih = &self.params[o.w_ih..o.w_ih + g * o.input];
            let w_hh = &self.params[o.w_hh..o.w_hh + g * h];
            let bias = &self.params[o.bias..o.bias + g];

            let mut gates = vec![T::zero(); rows * g];
            for r in 0..rows {
                gates[r * g..(r + 1) * g].copy_from_slice(bias);
            }
            T::gemm(rows, o.input, g, T::one(), &input, o.input as isize, 1, w_ih, 1, o.input as isize, T::one(), &mut gates, g as isize, 1);

            let mut cells = vec![T::zero(); rows * h];
            let mut tanh_c = vec![T::zero(); rows * h];
            let mut hs = vec![T::zero(); rows * h];
            for t in 0..steps {
                let cur = t * batch;
                if t > 0 {
                    let (prev_h, _) = hs.split_at(cur * h);
                    let prev = &prev_h[(cur - batch) * h..];
                    T::gemm(batch, h, g, T::one(), prev, h as isize, 1, w_hh, 1, h as isize, T::one(), &mut gates[cur * g..(cur + batch) * g], g as isize, 1);
                }
                for b in 0..batch {
                    let r = cur + b;
                    let a = &mut gates[r * g..(r + 1) * g];
                    for j in 0..h {
                        let i_g = sigmoid(a[j]);
                        let f_g = sigmoid(a[h + j]);
                        let c_g = tanh(a[2 * h + j]);
                        let o_g = sigmoid(a[3 * h + j]);
                        a[j] = i_g;
                        a[h + j] = f_g;
                        a[2 * h + j] = c_g;
                        a[3 * h + j] = o_g;
                        let c_prev = if t > 0 { cells[(r - batch) * h + j] } else { T::zero() };
                        let c = f_g * c_prev + i_g * c_g;
                        let tc = tanh(c);
                        cells[r * h + j] = c;
                        tanh_c[r * h + j] = tc;
                        hs[r * h + j] = o_g * tc;
                    }
                }
            }
            let next_input = if l + 1 < self.dims.layers {
                let mut next = hs.clone();
                let mask = match dropout.as_mut() {
                    Some((p, rng)) if *p > 0.0 => {
                        let m: Vec<T> = dropout_mask(rows * h, *p, rng);
                        next.iter_mut().zip(&m).for_each(|(v, m)| *v = *v * *m);
                        Some(m)
                    }
                    _ => None,
                };
                between.push(mask);
                next
            } else {
                Vec::new()
            };
            layers.push(LayerCache {
                input: std::mem::replace(&mut input, next_input),
                gates,
                cells,
                tanh_c,
                hs,
            });
        }

        let top = layers.last().expect("at least one layer");
        let last = (steps - 1) * batch;
        let mut head_in = if steps == 0 { vec![T::zero(); batch * h] } else { top.hs[last * h..(last + batch) * h].to_vec() };
        let head_mask = match dropout.as_mut() {
            Some((p, rng)) if *p > 0.0 => {
                let m: Vec<T> = dropout_mask(batch * h, *p, rng);
                head_in.iter_mut().zip(&m).for_each(|(v, m)| *v = *v * *m);
                Some(m)
            }
            _ => None,
        };
        let (hw, hb) = self.head_offsets();
        let mut logits = vec![T::zero(); batch * k];
        for b in 0..batch {
            logits[b * k..(b + 1) * k].copy_from_slice(&self.params[hb..hb + k]);
        }
        T::gemm(batch, h, k, T::one(), &head_in, h as isize, 1, &self.params[hw..hw + k * h], 1, h as isize, T::one(), &mut logits, k as isize, 1);

        let cache = ForwardCache {
            batch,
            steps,
            k,
            layers,
            between,
            head_mask,
            head_in,
        };
        (logits, cache)
    }

    /// Accumulates into `grads` the gradient of a loss whose derivative with
    /// respect to the cached forward's logits is `dlogits`.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &[T], grads: &mut [T]) {
        let h = self.dims.hidden;
        let g = 4 * h;
        let (batch, steps, k) = (cache.batch, cache.steps, cache.k);
        assert_eq!(dlogits.len(), batch * k);
        assert_eq!(grads.len(), self.params.len());
        if batch == 0 || steps == 0 {
            return;
        }
        let rows = batch * steps;

        let (hw, hb) = self.head_offsets();
        T::gemm(k, batch, h, T::one(), dlogits, 1, k as isize, &cache.head_in, h as isize, 1, T::one(), &mut grads[hw..hw + k * h], h as isize, 1);
        for b in 0..batch {
            for u in 0..k {
                grads[hb + u] = grads[hb + u] + dlogits[b * k + u];
            }
        }
        let mut d_head_in = vec![T::zero(); batch * h];
        T::gemm(batch, k, h, T::one(), dlogits, k as isize, 1, &self.params[hw..hw + k * h], h as isize, 1, T::zero(), &mut d_head_in, h as isize, 1);
        if let Some(m) = &cache.head_mask {
            d_head_in.iter_mut().zip(m).for_each(|(d, m)| *d = *d * *m);
        }

        let mut d_hs = vec![T::zero(); rows * h];
        let last = (steps - 1) * batch;
        d_hs[last * h..].copy_from_slice(&d_head_in);

        for l in (0..self.dims.layers).rev() {
            let o = self.layer_offsets(l);
            let lc = &cache.layers[l];
            let w_hh = &self.params[o.w_hh..o.w_hh + g * h];
            let mut d_gates = vec![T::zero(); rows * g];
            let mut dh_next = vec![T::zero(); batch * h];
            let mut dc_next = vec![T::zero(); batch * h];
            for t in (0..steps).rev() {
                let cur = t * batch;
                for b in 0..batch {
                    let r = cur + b;
                    let a = &lc.gates[r * g..(r + 1) * g];
                    let da = &mut d_gates[r * g..(r + 1) * g];
                    for j in 0..h {
                        let (i_g, f_g, c_g, o_g) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let tc = lc.tanh_c[r * h + j];
                        let dh = d_hs[r * h + j] + dh_next[b * h + j];
                        let d_o = dh * tc;
                        let dc = dh * o_g * (T::one() - tc * tc) + dc_next[b * h + j];
                        let c_prev = if t > 0 { lc.cells[(r - batch) * h + j] } else { T::zero() };
                        let d_i = dc * c_g;
                        let d_c = dc * i_g;
                        let d_f = dc * c_prev;
                        dc_next[b * h + j] = dc * f_g;
                        da[j] = d_i * i_g * (T::one() - i_g);
                        da[h + j] = d_f * f_g * (T::one() - f_g);
                        da[2 * h + j] = d_c * (T::one() - c_g * c_g);
                        da[3 * h + j] = d_o * o_g * (T::one() - o_g);
                    }
                }
                if t > 0 {
                    T::gemm(batch, g, h, T::one(), &d_gates[cur * g..(cur + batch) * g], g as isize, 1, w_hh, h as isize, 1, T::zero(), &mut dh_next, h as isize, 1);
                }
            }

            T::gemm(g, rows, o.input, T::one(), &d_gates, 1, g as isize, &lc.input, o.input as isize, 1, T::one(), &mut grads[o.w_ih..o.w_ih + g * o.input], o.input as isize, 1);
            if steps > 1 {
                T::gemm(g, rows - batch, h, T::one(), &d_gates[batch * g..], 1, g as isize, &lc.hs[..(rows - batch) * h], h as isize, 1, T::one(), &mut grads[o.w_hh..o.w_hh + g * h], h as isize, 1);
            }
            for r in 0..rows {
                for j in 0..g {
                    grads[o.bias + j] = grads[o.bias + j] + d_gates[r * g + j];
                }
            }

            if l > 0 {
                let w_ih = &self.params[o.w_ih..o.w_ih + g * o.input];
                let mut d_in = vec![T::zero(); rows * o.input];
                T::gemm(rows, g, o.input, T::one(), &d_gates, g as isize, 1, w_ih, o.input as isize, 1, T::zero(), &mut d_in, o.input as isize, 1);
                if let Some(m) = &cache.between[l - 1] {
                    d_in.iter_mut().zip(m).for_each(|(d, m)| *d = *d * *m);
                }
                d_hs = d_in;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            dims: self.dims,
            params: self.params.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Converts per-sample `steps x features` windows into a time-major batch.
pub fn time_major<T: Scalar>(windows: &[&[f32]], steps: usize, features: usize) -> Vec<T> {
    let batch = windows.len();
    let mut x = vec![T::zero(); batch * steps * features];
    for (b, w) in windows.iter().enumerate() {
        assert_eq!(w.len(), steps * features, "window shape");
        for t in 0..steps {
            let dst = (t * batch + b) * features;
            for (d, s) in x[dst..dst + features].iter_mut().zip(&w[t * features..(t + 1) * features]) {
                *d = T::of_f32(*s);
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_net(dims: Dims, seed: u64) -> Network<f64> {
        let mut rng = Rng::seed_from_u64(seed);
        let mut net = Network::<f64>::zeros(dims);
        net.params.iter_mut().for_each(|p| *p = rng.random_range(-0.5..0.5));
        net
    }

    fn loss_of(net: &Network<f64>, x: &[f64], b: usize, s: usize, k: usize, w: &[f64], seed: Option<u64>) -> f64 {
        let mut rng = seed.map(Rng::seed_from_u64);
        let (logits, _) = net.forward(x, b, s, k, rng.as_mut().map(|r| (0.3, r)));
        logits.iter().zip(w).map(|(z, w)| z * w).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let dims = Dims { input: 3, hidden: 4, layers: 2, classes: 5 };
        let net = random_net(dims, 1);
        let (b, s, k) = (2, 5, 3);
        let mut rng = Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..b * s * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..b * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        for seed in [None, Some(9)] {
            let mut drng = seed.map(Rng::seed_from_u64);
            let (_, cache) = net.forward(&x, b, s, k, drng.as_mut().map(|r| (0.3, r)));
            let mut grads = vec![0.0; net.params.len()];
            net.backward(&cache, &w, &mut grads);
            for i in 0..net.params.len() {
                let eps = 1e-6;
                let mut p = net.clone();
                p.params[i] += eps;
                let up = loss_of(&p, &x, b, s, k, &w, seed);
                p.params[i] -= 2.0 * eps;
                let down = loss_of(&p, &x, b, s, k, &w, seed);
                let fd = (up - down) / (2.0 * eps);
                let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-7);
                assert!(err < 1e-5 || (fd - grads[i]).abs() < 1e-9, "param {i}: fd {fd} vs analytic {}", grads[i]);
            }
        }
    }

    #[test]
    fn inactive_units_get_no_gradient() {
        let dims = Dims { input: 2, hidden: 3, layers: 1, classes: 4 };
        let net = random_net(dims, 3);
        let x = vec![0.3; 2 * 4 * 2];
        let (_, cache) = net.forward(&x, 2, 4, 2, None);
        let mut grads = vec![0.0; net.params.len()];
        net.backward(&cache, &[1.0, -1.0, 0.5, 0.25], &mut grads);
        for u in 2..4 {
            let (w, b) = net.head_unit_ranges(u);
            assert!(grads[w].iter().all(|&g| g == 0.0));
            assert_eq!(grads[b], 0.0);
        }
    }

    #[test]
    fn rows_are_independent_in_eval_mode() {
        let dims = Dims { input: 2, hidden: 3, layers: 2, classes: 3 };
        let net = random_net(dims, 4);
        let w1: Vec<f32> = (0..10).map(|v| v as f32 * 0.1).collect();
        let w2: Vec<f32> = (0..10).map(|v| -(v as f32) * 0.2).collect();
        let x: Vec<f64> = time_major(&[&w1, &w2, &w1], 5, 2);
        let (logits, _) = net.forward(&x, 3, 5, 3, None);
        assert_eq!(&logits[0..3], &logits[6..9]);
        assert_ne!(&logits[0..3], &logits[3..6]);
    }

    #[test]
    fn parameter_count_closed_form() {
        let dims = Dims { input: 46, hidden: 128, layers: 2, classes: 10 };
        // 4H(F + H + 1) + 4H(H + H + 1) + C(H + 1)
        assert_eq!(param_count(dims), 89_600 + 131_584 + 1_290);
        assert_eq!(param_count(dims), 222_474);
    }
}
