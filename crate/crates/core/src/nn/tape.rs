//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! accumulates gradients for every parameter that was read through
//! [`Tape::param`].

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatRows(Vec<Var>),
    MeanSquare(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    cache: Vec<Option<Var>>,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { store, cache: vec![None; store.len()], nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.cache[index] {
            return v;
        }
        let v = self.push(self.store.get(index).clone(), Op::Param(index));
        self.cache[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 - x);
        self.push(out, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| self.value(*v).view()).collect();
        let out = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start, len))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start, len))
    }

    /// Mean of squared entries, as a `1 x 1` node.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::MeanSquare(a))
    }

    /// `x @ w + b` for parameters `w` and `b`.
    pub fn affine(&mut self, x: Var, w: usize, b: usize) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Back-propagates from the scalar node `root` and returns one gradient
    /// per parameter of the store (zeros for parameters not read).
    pub fn backward(&self, root: Var) -> Vec<Array2<f64>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.raw_dim()));
        let mut out: Vec<Array2<f64>> =
            (0..self.store.len()).map(|i| Array2::zeros(self.store.get(i).raw_dim())).collect();

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(i) => out[*i] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::OneMinus(a) => acc(&mut grads, *a, -g),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, start, len) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![*start..*start + *len, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::MeanSquare(a) => {
                    let x = self.value(*a);
                    let c = 2.0 * g[[0, 0]] / x.len() as f64;
                    acc(&mut grads, *a, x * c);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences over every parameter entry.
    fn numeric_grads(store: &ParamStore, f: impl Fn(&ParamStore) -> f64) -> Vec<Array2<f64>> {
        let eps = 1e-6;
        let mut probe = store.clone();
        (0..store.len())
            .map(|i| {
                let mut g = Array2::zeros(store.get(i).raw_dim());
                for idx in 0..g.len() {
                    let (r, c) = (idx / g.ncols(), idx % g.ncols());
                    let orig = probe.get(i)[[r, c]];
                    probe.get_mut(i)[[r, c]] = orig + eps;
                    let up = f(&probe);
                    probe.get_mut(i)[[r, c]] = orig - eps;
                    let down = f(&probe);
                    probe.get_mut(i)[[r, c]] = orig;
                    g[[r, c]] = (up - down) / (2.0 * eps);
                }
                g
            })
            .collect()
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[0.3, -0.2, 0.1], [0.05, 0.4, -0.3]]);
        let b = store.add("b", array![[0.1, -0.1, 0.2]]);
        let v = store.add("v", array![[0.5], [-0.7], [0.2], [0.9], [-0.1], [0.3]]);
        let x = array![[0.2, -0.4], [1.0, 0.3], [-0.5, 0.8], [0.1, 0.1]];

        let forward = |store: &ParamStore| -> (f64, Vec<Array2<f64>>) {
            let mut t = Tape::new(store);
            let xi = t.constant(x.clone());
            let h = t.affine(xi, w, b);
            let a = t.tanh(h);
            let s = t.sigmoid(h);
            let one = t.one_minus(s);
            let gated = t.mul(a, one);
            let r = t.relu(h);
            let both = t.concat_cols(&[gated, r]);
            let top = t.slice_rows(both, 0, 2);
            let bottom = t.slice_rows(both, 2, 2);
            let mix = t.sub(top, bottom);
            let stacked = t.concat_rows(&[mix, top]);
            let vv = t.param(v);
            let y = t.matmul(stacked, vv);
            let y2 = t.scale(y, 1.5);
            let first = t.slice_cols(both, 1, 2);
            let fsum = t.mean_square(first);
            let loss_a = t.mean_square(y2);
            let loss = t.add(loss_a, fsum);
            (t.scalar(loss), t.backward(loss))
        };
        let (_, analytic) = forward(&store);
        let numeric = numeric_grads(&store, |s| forward(s).0);
        for (a, n) in analytic.iter().zip(&numeric) {
            for (x, y) in a.iter().zip(n) {
                assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }
}
