use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, h: f64) -> f64 {
        match self {
            Activation::Relu => h.max(0.0),
            Activation::Tanh => h.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `h` and output `a`.
    fn derivative(self, h: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected layer, weights stored row-major as `n_out × n_in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                self.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct Trace {
    /// Input to each layer (post-activation, post-dropout of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<f64>>,
    /// Activations of hidden layers before dropout.
    post: Vec<Vec<f64>>,
    /// Dropout multipliers per hidden unit (0 or 1 / keep).
    masks: Vec<Option<Vec<f64>>>,
    pub logits: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights times `init_scale`, zero biases.
    pub fn new<R: Rng>(
        n_in: usize,
        hidden: &[usize],
        n_out: usize,
        activation: Activation,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(n_out);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let mut layer = Dense::zeros(w[0], w[1]);
                let limit = init_scale * (6.0 / (w[0] + w[1]) as f64).sqrt();
                if limit > 0.0 {
                    let dist = Uniform::new(-limit, limit).expect("finite init limit");
                    layer.w.iter_mut().for_each(|v| *v = dist.sample(rng));
                }
                layer
            })
            .collect();
        Mlp { layers, activation }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.affine(&a);
            a = if l == last {
                h
            } else {
                h.into_iter().map(|v| self.activation.apply(v)).collect()
            };
        }
        a
    }

    /// Forward pass keeping intermediates. With `dropout = Some((rate, rng))`
    /// hidden activations are masked with inverted dropout.
    pub(crate) fn trace<R: Rng>(&self, x: &[f64], mut dropout: Option<(f64, &mut R)>) -> Trace {
        let last = self.layers.len() - 1;
        let mut t = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::new(),
            post: Vec::new(),
            masks: Vec::new(),
            logits: Vec::new(),
        };
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let h = layer.affine(&a);
            t.inputs.push(a);
            if l == last {
                t.logits = h;
                break;
            }
            let post: Vec<f64> = h.iter().map(|&v| self.activation.apply(v)).collect();
            let mask = match dropout.as_mut() {
                Some((rate, rng)) if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    Some(
                        (0..post.len())
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect::<Vec<f64>>(),
                    )
                }
                _ => None,
            };
            a = match &mask {
                Some(m) => post.iter().zip(m).map(|(a, m)| a * m).collect(),
                None => post.clone(),
            };
            t.pre.push(h);
            t.post.push(post);
            t.masks.push(mask);
        }
        t
    }

    pub(crate) fn zero_grads(&self) -> Vec<Dense> {
        self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect()
    }

    /// Accumulates parameter gradients for one sample given `dL/dlogits`.
    pub(crate) fn backward(&self, trace: &Trace, dlogits: &[f64], grads: &mut [Dense]) {
        let mut delta = dlogits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let g = &mut grads[l];
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.b[o] += d;
                let row = &mut g.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.n_in];
            for o in 0..layer.n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.w[o * layer.n_in..(o + 1) * layer.n_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            let (pre, post, mask) = (&trace.pre[l - 1], &trace.post[l - 1], &trace.masks[l - 1]);
            for (i, p) in prev.iter_mut().enumerate() {
                let m = mask.as_ref().map_or(1.0, |m| m[i]);
                *p *= m * self.activation.derivative(pre[i], post[i]);
            }
            delta = prev;
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters flattened layer by layer (weights then biases).
    pub fn params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params());
        let mut i = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = params[i];
                i += 1;
            }
        }
    }
}

pub(crate) fn flatten(layers: &[Dense]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.w.iter().chain(&l.b).copied())
        .collect()
}
