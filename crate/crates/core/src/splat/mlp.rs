//! Small dense networks with tanh hidden layers and a linear output.

use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Hidden layers drawn from `N(0, 1/fan_in)`; the output layer is zero.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let mut d = Dense::zeros(sizes[l], sizes[l + 1]);
                if l + 1 < n {
                    let s = 1.0 / (sizes[l] as f64).sqrt();
                    d.weight.iter_mut().for_each(|w| *w = s * rng::normal(rng));
                }
                d
            })
            .collect();
        Self { layers }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        self.trace(z).pop().expect("non-empty")
    }

    /// Activations of every layer, input first and output last.
    pub fn trace(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![z.to_vec()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = layer.apply(acts.last().expect("input"));
            if l < last {
                a.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(a);
        }
        acts
    }

    /// Accumulates parameter gradients into `grad` (layout of [`Mlp::params`])
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.len();
        }
        let mut delta = dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let g = &mut grad[offsets[l]..offsets[l] + layer.len()];
            let (gw, gb) = g.split_at_mut(layer.weight.len());
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (gwi, &x) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                    *gwi += d * x;
                }
            }
            let mut da = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (a, &w) in da.iter_mut().zip(&layer.weight[o * layer.inputs..(o + 1) * layer.inputs]) {
                    *a += d * w;
                }
            }
            if l > 0 {
                // input of layer l is a tanh activation
                for (a, &y) in da.iter_mut().zip(input) {
                    *a *= 1.0 - y * y;
                }
            }
            delta = da;
        }
        delta
    }

    /// Flattened as `W_0, b_0, W_1, b_1, ...`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
    }

    pub fn from_params(sizes: &[usize], p: &[f64]) -> Option<Self> {
        if sizes.len() < 2 {
            return None;
        }
        let mut m = Self { layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() };
        if p.len() != m.num_params() {
            return None;
        }
        m.set_params(p);
        Some(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_output_layer_gives_zero() {
        let m = Mlp::new(&[5, 8, 8, 3], &mut rng::seeded(1));
        assert_eq!(m.forward(&[0.3, -1.0, 2.0, 0.1, 0.0]), vec![0.0; 3]);
        assert_eq!(m.num_params(), 5 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng::seeded(2);
        let mut m = Mlp::new(&[4, 6, 5, 2], &mut r);
        let mut p = m.params();
        p.iter_mut().for_each(|v| *v += 0.3 * rng::normal(&mut r));
        m.set_params(&p);
        let z = [0.2, -0.4, 0.9, 0.1];
        let c = [0.7, -1.3];
        let loss = |m: &Mlp, z: &[f64]| m.forward(z).iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let mut g = vec![0.0; m.num_params()];
        let dz = m.backward(&m.trace(&z), &c, &mut g);
        let eps = 1e-6;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += eps;
            let mut mp = m.clone();
            mp.set_params(&q);
            q[i] -= 2.0 * eps;
            let mut mm = m.clone();
            mm.set_params(&q);
            let fd = (loss(&mp, &z) - loss(&mm, &z)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-7, "param {i}: {fd} vs {}", g[i]);
        }
        for i in 0..4 {
            let mut zp = z;
            zp[i] += eps;
            let mut zm = z;
            zm[i] -= eps;
            let fd = (loss(&m, &zp) - loss(&m, &zm)) / (2.0 * eps);
            assert!((fd - dz[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn params_round_trip() {
        let m = Mlp::new(&[3, 4, 2], &mut rng::seeded(3));
        let back = Mlp::from_params(&m.sizes(), &m.params()).unwrap();
        assert_eq!(back, m);
        assert!(Mlp::from_params(&[3, 4, 2], &[0.0; 3]).is_none());
    }
}
