//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value and
//! the ids of its inputs. [`Graph::backward`] walks the tape once in reverse.
//! Nodes that cannot reach a trainable leaf carry no gradient and are skipped,
//! so frozen networks cost a forward pass only.

use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Relu(Var),
    ClampMin(Var, T),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SegmentMean(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    SumAll(Var),
    RowNorm(Var),
    RowDot(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar output with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as data.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.shape(), (1, av.cols()), "bias shape");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *x += *b;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(value, Op::AddBias(a, bias), ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Matrix::from_vec(av.rows(), av.cols(), data).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let value = Matrix::from_vec(av.rows(), av.cols(), data).unwrap();
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        self.map(a, |x| x + c, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    /// `max(a, floor)`; the gradient is zero wherever the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: T) -> Var {
        self.map(a, |x| if x > floor { x } else { floor }, Op::ClampMin(a, floor))
    }

    /// `out[i] = a[indices[i]]` row-wise.
    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            data.extend_from_slice(av.row(i));
        }
        let value = Matrix::from_vec(indices.len(), cols, data).unwrap();
        let ng = self.ng(a);
        self.push(value, Op::Gather(a, indices), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat row mismatch");
                data.extend_from_slice(pv.row(r));
            }
        }
        let value = Matrix::from_vec(rows, cols, data).unwrap();
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Mean over consecutive row segments `offsets[s]..offsets[s+1]`.
    pub fn segment_mean(&mut self, a: Var, offsets: Vec<usize>) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let segs = offsets.len() - 1;
        assert_eq!(*offsets.last().unwrap(), av.rows(), "segments must cover all rows");
        let mut value = Matrix::zeros(segs, cols);
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            assert!(hi > lo, "empty segment");
            let inv = T::one() / T::of((hi - lo) as f64);
            let out = value.row_mut(s);
            for r in lo..hi {
                for (o, x) in out.iter_mut().zip(av.row(r)) {
                    *o += *x;
                }
            }
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let ng = self.ng(a);
        self.push(value, Op::SegmentMean(a, offsets), ng)
    }

    /// Column-wise max over consecutive row segments.
    pub fn segment_max(&mut self, a: Var, offsets: Vec<usize>) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let segs = offsets.len() - 1;
        assert_eq!(*offsets.last().unwrap(), av.rows(), "segments must cover all rows");
        let mut value = Matrix::zeros(segs, cols);
        let mut argmax = vec![0usize; segs * cols];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            assert!(hi > lo, "empty segment");
            for c in 0..cols {
                let mut best = lo;
                for r in lo + 1..hi {
                    if av.get(r, c) > av.get(best, c) {
                        best = r;
                    }
                }
                argmax[s * cols + c] = best;
                value.row_mut(s)[c] = av.get(best, c);
            }
        }
        let ng = self.ng(a);
        self.push(value, Op::SegmentMax(a, argmax), ng)
    }

    /// Mean over all rows, giving a `1×c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let rows = self.value(a).rows();
        self.segment_mean(a, vec![0, rows])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Matrix::scalar(total), Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).data().len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Euclidean norm of every row, `r×1`. The gradient at a zero row is zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().map(|x| *x * *x).sum::<T>().sqrt())
            .collect();
        let value = Matrix::from_vec(av.rows(), 1, data).unwrap();
        let ng = self.ng(a);
        self.push(value, Op::RowNorm(a), ng)
    }

    /// Row-wise inner products, `r×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_dot shape mismatch");
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| *x * *y).sum())
            .collect();
        let value = Matrix::from_vec(av.rows(), 1, data).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::RowDot(a, b), ng)
    }

    /// Gradients of the `1×1` node `output` with respect to every node that needs one.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        assert_eq!(self.value(output).shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Matrix<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix<T>>], v: Var, delta: Matrix<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Matrix<T>>],
        v: Var,
        f: impl FnOnce(&mut Matrix<T>),
    ) {
        if !self.ng(v) {
            return;
        }
        let (r, c) = self.value(v).shape();
        let acc = grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c));
        f(acc);
    }

    fn propagate(&self, idx: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *bias, |acc| {
                    for r in 0..g.rows() {
                        for (o, x) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *o += *x;
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate_with(grads, *b, |acc| {
                    for (o, x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o -= *x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |acc| {
                    for ((o, x), y) in acc.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += *x * *y;
                    }
                });
                self.accumulate_with(grads, *b, |acc| {
                    for ((o, x), y) in acc.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += *x * *y;
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |acc| {
                    for ((o, x), y) in acc.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o += *x / *y;
                    }
                });
                self.accumulate_with(grads, *b, |acc| {
                    let it = acc.data_mut().iter_mut().zip(g.data());
                    for ((o, x), (n, d)) in it.zip(av.data().iter().zip(bv.data())) {
                        *o -= *x * *n / (*d * *d);
                    }
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate_with(grads, *a, |acc| {
                    for (o, x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o += *x * s;
                    }
                });
            }
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let out = &node.value;
                self.accumulate_with(grads, *a, |acc| {
                    for ((o, x), y) in acc.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        if *y > T::zero() {
                            *o += *x;
                        }
                    }
                });
            }
            Op::ClampMin(a, floor) => {
                let av = self.value(*a);
                self.accumulate_with(grads, *a, |acc| {
                    for ((o, x), y) in acc.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        if *y > *floor {
                            *o += *x;
                        }
                    }
                });
            }
            Op::Gather(a, indices) => {
                self.accumulate_with(grads, *a, |acc| {
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, x) in acc.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += *x;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    self.accumulate_with(grads, p, |acc| {
                        for r in 0..g.rows() {
                            let src = &g.row(r)[offset..offset + cols];
                            for (o, x) in acc.row_mut(r).iter_mut().zip(src) {
                                *o += *x;
                            }
                        }
                    });
                    offset += cols;
                }
            }
            Op::SegmentMean(a, offsets) => {
                self.accumulate_with(grads, *a, |acc| {
                    for s in 0..offsets.len() - 1 {
                        let (lo, hi) = (offsets[s], offsets[s + 1]);
                        let inv = T::one() / T::of((hi - lo) as f64);
                        for r in lo..hi {
                            for (o, x) in acc.row_mut(r).iter_mut().zip(g.row(s)) {
                                *o += *x * inv;
                            }
                        }
                    }
                });
            }
            Op::SegmentMax(a, argmax) => {
                let cols = g.cols();
                self.accumulate_with(grads, *a, |acc| {
                    for (k, &r) in argmax.iter().enumerate() {
                        let (s, c) = (k / cols, k % cols);
                        acc.row_mut(r)[c] += g.get(s, c);
                    }
                });
            }
            Op::SumAll(a) => {
                let (r, c) = self.value(*a).shape();
                let fill = g.data()[0];
                self.accumulate(grads, *a, Matrix::from_vec(r, c, vec![fill; r * c]).unwrap());
            }
            Op::RowNorm(a) => {
                let av = self.value(*a);
                let out = &node.value;
                self.accumulate_with(grads, *a, |acc| {
                    for r in 0..av.rows() {
                        let n = out.data()[r];
                        if n > T::zero() {
                            let k = g.data()[r] / n;
                            for (o, x) in acc.row_mut(r).iter_mut().zip(av.row(r)) {
                                *o += k * *x;
                            }
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |acc| {
                    for r in 0..av.rows() {
                        let k = g.data()[r];
                        for (o, y) in acc.row_mut(r).iter_mut().zip(bv.row(r)) {
                            *o += k * *y;
                        }
                    }
                });
                self.accumulate_with(grads, *b, |acc| {
                    for r in 0..av.rows() {
                        let k = g.data()[r];
                        for (o, x) in acc.row_mut(r).iter_mut().zip(av.row(r)) {
                            *o += k * *x;
                        }
                    }
                });
            }
        }
    }
}
