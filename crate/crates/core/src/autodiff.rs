//! A small reverse-mode tape over dense vectors.
//!
//! Every node holds a `Vec<f64>`; scalars are length-1 vectors and matrices
//! are row-major vectors whose shape is given to the op that consumes them.
//! It covers exactly what the sentence selectors need (LSTM cells, attention,
//! pooling, cosine) and nothing more.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec { w: usize, x: usize, rows: usize, cols: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// scalar (length 1) times vector
    ScalarMul { s: usize, v: usize },
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Relu(usize),
    Slice { src: usize, start: usize },
    Concat(Vec<usize>),
    /// element-wise max; `arg[k]` is the input that won component k
    MaxPool { arg: Vec<usize> },
    Mean(Vec<usize>),
    Dot(usize, usize),
    Cosine(usize, usize),
    Sum(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].value.len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inputs and parameters alike enter as leaves.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matvec(&mut self, w: Var, x: Var, rows: usize, cols: usize) -> Var {
        let wv = &self.nodes[w.0].value;
        let xv = &self.nodes[x.0].value;
        assert_eq!(wv.len(), rows * cols, "matvec weight shape");
        assert_eq!(xv.len(), cols, "matvec input length");
        let out = (0..rows)
            .map(|r| {
                wv[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(xv)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(out, Op::MatVec { w: w.0, x: x.0, rows, cols })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.len(), bv.len(), "element-wise op length mismatch");
        let out = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x * c).collect();
        self.push(out, Op::Scale(a.0, c))
    }

    pub fn scalar_mul(&mut self, s: Var, v: Var) -> Var {
        let sv = self.scalar(s);
        let out = self.nodes[v.0].value.iter().map(|x| x * sv).collect();
        self.push(out, Op::ScalarMul { s: s.0, v: v.0 })
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(out, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(out, Op::Slice { src: a.0, start })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out = parts
            .iter()
            .flat_map(|p| self.nodes[p.0].value.iter().copied())
            .collect();
        self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect()))
    }

    /// Element-wise maximum over a non-empty list of equal-length vectors.
    /// Ties go to the earliest input.
    pub fn max_pool(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "max_pool over nothing");
        let n = self.nodes[inputs[0].0].value.len();
        let mut out = self.nodes[inputs[0].0].value.clone();
        let mut arg = vec![inputs[0].0; n];
        for p in &inputs[1..] {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.len(), n, "max_pool length mismatch");
            for k in 0..n {
                if v[k] > out[k] {
                    out[k] = v[k];
                    arg[k] = p.0;
                }
            }
        }
        self.push(out, Op::MaxPool { arg })
    }

    pub fn mean(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "mean over nothing");
        let n = self.nodes[inputs[0].0].value.len();
        let mut out = vec![0.0; n];
        for p in inputs {
            for (o, v) in out.iter_mut().zip(&self.nodes[p.0].value) {
                *o += v;
            }
        }
        let m = inputs.len() as f64;
        out.iter_mut().for_each(|o| *o /= m);
        self.push(out, Op::Mean(inputs.iter().map(|p| p.0).collect()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let d = dot(&self.nodes[a.0].value, &self.nodes[b.0].value);
        self.push(vec![d], Op::Dot(a.0, b.0))
    }

    /// Cosine similarity; 0 (with zero gradient) when either side has zero norm.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let (na, nb) = (norm(av), norm(bv));
        let c = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot(av, bv) / (na * nb)
        };
        self.push(vec![c], Op::Cosine(a.0, b.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a.0))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.nodes[output.0].value.len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
            grads[idx].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    let wv = &self.nodes[*w].value;
                    let xv = &self.nodes[*x].value;
                    {
                        let gw = acc(&mut grads, *w, rows * cols);
                        for r in 0..rows {
                            if g[r] == 0.0 {
                                continue;
                            }
                            for c in 0..cols {
                                gw[r * cols + c] += g[r] * xv[c];
                            }
                        }
                    }
                    let gx = acc(&mut grads, *x, cols);
                    for r in 0..rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            gx[c] += wv[r * cols + c] * g[r];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (t, sign) in [(*a, 1.0), (*b, 1.0)] {
                        let ga = acc(&mut grads, t, g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += sign * y);
                    }
                }
                Op::Sub(a, b) => {
                    for (t, sign) in [(*a, 1.0), (*b, -1.0)] {
                        let ga = acc(&mut grads, t, g.len());
                        ga.iter_mut().zip(&g).for_each(|(x, y)| *x += sign * y);
                    }
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut grads, *a, g.len());
                    ga.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y);
                }
                Op::ScalarMul { s, v } => {
                    let sv = self.nodes[*s].value[0];
                    let vv = &self.nodes[*v].value;
                    let ds: f64 = g.iter().zip(vv).map(|(a, b)| a * b).sum();
                    acc(&mut grads, *s, 1)[0] += ds;
                    let gv = acc(&mut grads, *v, g.len());
                    gv.iter_mut().zip(&g).for_each(|(x, y)| *x += sv * y);
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        let y = node.value[k];
                        ga[k] += g[k] * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        let y = node.value[k];
                        ga[k] += g[k] * y * (1.0 - y);
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        ga[k] += g[k] * node.value[k];
                    }
                }
                Op::Relu(a) => {
                    let av = &self.nodes[*a].value;
                    let ga = acc(&mut grads, *a, g.len());
                    for k in 0..g.len() {
                        if av[k] > 0.0 {
                            ga[k] += g[k];
                        }
                    }
                }
                Op::Slice { src, start } => {
                    let n = self.nodes[*src].value.len();
                    let gs = acc(&mut grads, *src, n);
                    for k in 0..g.len() {
                        gs[start + k] += g[k];
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        let gp = acc(&mut grads, p, n);
                        for k in 0..n {
                            gp[k] += g[off + k];
                        }
                        off += n;
                    }
                }
                Op::MaxPool { arg } => {
                    let n = g.len();
                    for k in 0..n {
                        acc(&mut grads, arg[k], n)[k] += g[k];
                    }
                }
                Op::Mean(inputs) => {
                    let m = inputs.len() as f64;
                    for &p in inputs {
                        let gp = acc(&mut grads, p, g.len());
                        gp.iter_mut().zip(&g).for_each(|(x, y)| *x += y / m);
                    }
                }
                Op::Dot(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let ga = acc(&mut grads, *a, av.len());
                    ga.iter_mut().zip(bv).for_each(|(x, y)| *x += g[0] * y);
                    let gb = acc(&mut grads, *b, bv.len());
                    gb.iter_mut().zip(av).for_each(|(x, y)| *x += g[0] * y);
                }
                Op::Cosine(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (na, nb) = (norm(av), norm(bv));
                    if na > 0.0 && nb > 0.0 {
                        let c = node.value[0];
                        let ga = acc(&mut grads, *a, av.len());
                        for k in 0..av.len() {
                            ga[k] += g[0] * (bv[k] / (na * nb) - c * av[k] / (na * na));
                        }
                        let gb = acc(&mut grads, *b, bv.len());
                        for k in 0..bv.len() {
                            gb[k] += g[0] * (av[k] / (na * nb) - c * bv[k] / (nb * nb));
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = self.nodes[*a].value.len();
                    let ga = acc(&mut grads, *a, n);
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the output w.r.t. `v`; `None` when `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
