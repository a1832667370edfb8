//! Dense multilayer perceptron with hand-written back-propagation.
//!
//! Hidden layers use ReLU and the output layer is linear. This is the hot
//! path of agent training, so it avoids the generic tape and works on whole
//! batches with a single matrix product per layer.

use ndarray::{Array1, Array2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub trait Scalar: Float + LinalgScalar + ScalarOperand + std::fmt::Debug + Send + Sync + 'static {
    fn lift(v: f64) -> Self;
    fn widen(self) -> f64;
}

impl Scalar for f32 {
    fn lift(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn lift(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Linear<F>>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct MlpCache<F> {
    inputs: Vec<Array2<F>>,
}

#[derive(Clone, Debug)]
pub struct MlpGrads<F> {
    pub layers: Vec<Linear<F>>,
}

impl<F: Scalar> Mlp<F> {
    /// `sizes` lists every width from input to output.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Linear {
                    w: Array2::from_shape_fn((w[0], w[1]), |_| F::lift(dist.sample(rng))),
                    b: Array1::from_shape_fn(w[1], |_| F::lift(dist.sample(rng))),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.w.ncols()).unwrap_or(0)
    }

    pub fn predict(&self, x: &Array2<F>) -> Array2<F> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w) + &layer.b;
            if i < last {
                h.mapv_inplace(|v| v.max(F::zero()));
            }
        }
        h
    }

    pub fn forward(&self, x: &Array2<F>) -> (Array2<F>, MlpCache<F>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w) + &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(F::zero()));
            }
            inputs.push(h);
            h = z;
        }
        (h, MlpCache { inputs })
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache<F>, grad_out: &Array2<F>) -> (MlpGrads<F>, Array2<F>) {
        let mut grads: Vec<Linear<F>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let gw = input.t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            let mut gin = g.dot(&layer.w.t());
            if i > 0 {
                // `input` is the ReLU output of the previous layer.
                Zip::from(&mut gin).and(input).for_each(|g, &a| {
                    if a <= F::zero() {
                        *g = F::zero();
                    }
                });
            }
            grads.push(Linear { w: gw, b: gb });
            g = gin;
        }
        grads.reverse();
        (MlpGrads { layers: grads }, g)
    }

    /// Gradient with respect to the input only.
    pub fn input_gradient(&self, cache: &MlpCache<F>, grad_out: &Array2<F>) -> Array2<F> {
        let mut g = grad_out.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut gin = g.dot(&layer.w.t());
            if i > 0 {
                Zip::from(&mut gin).and(&cache.inputs[i]).for_each(|g, &a| {
                    if a <= F::zero() {
                        *g = F::zero();
                    }
                });
            }
            g = gin;
        }
        g
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn polyak_from(&mut self, online: &Mlp<F>, tau: F) {
        let keep = F::one() - tau;
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            Zip::from(&mut t.w).and(&o.w).for_each(|t, &o| *t = tau * o + keep * *t);
            Zip::from(&mut t.b).and(&o.b).for_each(|t, &o| *t = tau * o + keep * *t);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Flattened `(name, matrix)` view in `f64`, biases as `1 x n` rows.
    pub fn export(&self, prefix: &str) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.w"), l.w.mapv(F::widen)));
            out.push((format!("{prefix}.{i}.b"), l.b.mapv(F::widen).insert_axis(Axis(0))));
        }
        out
    }

    pub fn import(&mut self, prefix: &str, lookup: &dyn Fn(&str) -> Option<Array2<f64>>) -> Option<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let w = lookup(&format!("{prefix}.{i}.w"))?;
            let b = lookup(&format!("{prefix}.{i}.b"))?;
            if w.dim() != l.w.dim() || b.len() != l.b.len() {
                return None;
            }
            l.w = w.mapv(F::lift);
            l.b = b.row(0).mapv(F::lift);
        }
        Some(())
    }
}

impl<F: Scalar> MlpGrads<F> {
    pub fn add_assign(&mut self, other: &MlpGrads<F>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut a.w).and(&b.w).for_each(|x, &y| *x = *x + y);
            Zip::from(&mut a.b).and(&b.b).for_each(|x, &y| *x = *x + y);
        }
    }
}

/// Adam state shaped like an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpAdam<F> {
    pub lr: F,
    pub step: u64,
    pub m: Vec<Linear<F>>,
    pub v: Vec<Linear<F>>,
}

impl<F: Scalar> MlpAdam<F> {
    pub fn new(net: &Mlp<F>, lr: f64) -> Self {
        let zeros: Vec<Linear<F>> = net
            .layers
            .iter()
            .map(|l| Linear { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.raw_dim()) })
            .collect();
        Self { lr: F::lift(lr), step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, net: &mut Mlp<F>, grads: &MlpGrads<F>) {
        self.step += 1;
        let b1 = F::lift(0.9);
        let b2 = F::lift(0.999);
        let eps = F::lift(1e-8);
        let one = F::one();
        let bc1 = one - b1.powi(self.step as i32);
        let bc2 = one - b2.powi(self.step as i32);
        let lr = self.lr;
        let upd = |p: &mut F, g: F, m: &mut F, v: &mut F| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p = *p - lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut layer.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(|p, &g, m, v| upd(p, g, m, v));
            Zip::from(&mut layer.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(|p, &g, m, v| upd(p, g, m, v));
        }
    }

    pub fn export(&self, prefix: &str) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        for (i, (m, v)) in self.m.iter().zip(&self.v).enumerate() {
            out.push((format!("{prefix}.m.{i}.w"), m.w.mapv(F::widen)));
            out.push((format!("{prefix}.m.{i}.b"), m.b.mapv(F::widen).insert_axis(Axis(0))));
            out.push((format!("{prefix}.v.{i}.w"), v.w.mapv(F::widen)));
            out.push((format!("{prefix}.v.{i}.b"), v.b.mapv(F::widen).insert_axis(Axis(0))));
        }
        out.push((format!("{prefix}.step"), Array2::from_elem((1, 1), self.step as f64)));
        out
    }

    pub fn import(&mut self, prefix: &str, lookup: &dyn Fn(&str) -> Option<Array2<f64>>) -> Option<()> {
        for (i, (m, v)) in self.m.iter_mut().zip(self.v.iter_mut()).enumerate() {
            m.w = lookup(&format!("{prefix}.m.{i}.w"))?.mapv(F::lift);
            m.b = lookup(&format!("{prefix}.m.{i}.b"))?.row(0).mapv(F::lift);
            v.w = lookup(&format!("{prefix}.v.{i}.w"))?.mapv(F::lift);
            v.b = lookup(&format!("{prefix}.v.{i}.b"))?.row(0).mapv(F::lift);
        }
        self.step = lookup(&format!("{prefix}.step"))?[[0, 0]] as u64;
        Some(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp<f64>, x: &Array2<f64>) -> f64 {
        net.predict(x).iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v * v).sum::<f64>() * 0.5
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f64>::new(&[4, 7, 5, 2], &mut rng);
        let x = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 4 + j) as f64 * 0.37).sin());
        let (out, cache) = net.forward(&x);
        let gout = Array2::from_shape_fn(out.dim(), |(i, j)| (i * 2 + j + 1) as f64 * out[[i, j]]);
        let (grads, gin) = net.backward(&cache, &gout);
        assert_eq!(gin, net.input_gradient(&cache, &gout));

        let eps = 1e-6;
        for li in 0..net.layers.len() {
            for idx in 0..net.layers[li].w.len() {
                let (r, c) = (idx / net.layers[li].w.ncols(), idx % net.layers[li].w.ncols());
                let mut up = net.clone();
                up.layers[li].w[[r, c]] += eps;
                let mut dn = net.clone();
                dn.layers[li].w[[r, c]] -= eps;
                let fd = (loss(&up, &x) - loss(&dn, &x)) / (2.0 * eps);
                assert!((fd - grads.layers[li].w[[r, c]]).abs() < 1e-6, "layer {li} w[{r},{c}]");
            }
            for j in 0..net.layers[li].b.len() {
                let mut up = net.clone();
                up.layers[li].b[j] += eps;
                let mut dn = net.clone();
                dn.layers[li].b[j] -= eps;
                let fd = (loss(&up, &x) - loss(&dn, &x)) / (2.0 * eps);
                assert!((fd - grads.layers[li].b[j]).abs() < 1e-6);
            }
        }
        for r in 0..3 {
            for c in 0..4 {
                let mut xu = x.clone();
                xu[[r, c]] += eps;
                let mut xd = x.clone();
                xd[[r, c]] -= eps;
                let fd = (loss(&net, &xu) - loss(&net, &xd)) / (2.0 * eps);
                assert!((fd - gin[[r, c]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn polyak_moves_by_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let online = Mlp::<f64>::new(&[2, 3, 1], &mut rng);
        let mut target = Mlp::<f64>::new(&[2, 3, 1], &mut rng);
        let before = target.clone();
        target.polyak_from(&online, 1e-3);
        for (l, (t, (b, o))) in target.layers.iter().zip(before.layers.iter().zip(&online.layers)).enumerate() {
            for ((t, b), o) in t.w.iter().zip(&b.w).zip(&o.w) {
                assert!(((o - t) - (1.0 - 1e-3) * (o - b)).abs() < 1e-15, "layer {l}");
            }
        }
    }
}
