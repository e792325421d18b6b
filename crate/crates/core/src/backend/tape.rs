//! Scalar reverse-mode tape evaluated on two lanes at once: the input and a
//! reference (baseline) input.
//!
//! Backward in [`Mode::Gradient`] yields ordinary partial derivatives at the
//! input lane. Backward in [`Mode::DeepLift`] yields DeepLift multipliers:
//! linear nodes pass their coefficients, elementwise nonlinearities use the
//! rescale rule `Δout / Δin` (the derivative when `|Δin| < 1e-8`), and
//! products `a·b` use the symmetric split `Δ(ab) = ā·Δb + b̄·Δa` with
//! `ā, b̄` the lane averages. Every node then satisfies
//! `Δout = Σ multiplier · Δin` exactly, so contributions sum to the output
//! difference.

/// Threshold below which the rescale rule falls back to the gradient.
pub const RESCALE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Exp,
    Recip,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Recip => 1.0 / x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Unary::Tanh => 1.0 - x.tanh().powi(2),
            Unary::Exp => x.exp(),
            Unary::Recip => -1.0 / (x * x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Gradient,
    DeepLift,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    Linear { start: usize, end: usize },
    Mul(usize, usize),
    Unary(usize, Unary),
}

#[derive(Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<[f64; 2]>,
    terms: Vec<(usize, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, op: Op, value: [f64; 2]) -> Var {
        self.ops.push(op);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    pub fn input(&mut self, x: f64, reference: f64) -> Var {
        self.push(Op::Leaf, [x, reference])
    }

    pub fn constant(&mut self, c: f64) -> Var {
        self.push(Op::Leaf, [c, c])
    }

    /// `bias + Σ coef · var`.
    pub fn linear(&mut self, terms: impl IntoIterator<Item = (Var, f64)>, bias: f64) -> Var {
        let start = self.terms.len();
        let mut value = [bias, bias];
        for (v, c) in terms {
            let [x, r] = self.values[v.0];
            value[0] += c * x;
            value[1] += c * r;
            self.terms.push((v.0, c));
        }
        let end = self.terms.len();
        self.push(Op::Linear { start, end }, value)
    }

    pub fn sum(&mut self, vars: &[Var]) -> Var {
        self.linear(vars.iter().map(|&v| (v, 1.0)), 0.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let [ax, ar] = self.values[a.0];
        let [bx, br] = self.values[b.0];
        self.push(Op::Mul(a.0, b.0), [ax * bx, ar * br])
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        let products: Vec<Var> = a.iter().zip(b).map(|(&x, &y)| self.mul(x, y)).collect();
        self.sum(&products)
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let [x, r] = self.values[a.0];
        self.push(Op::Unary(a.0, f), [f.apply(x), f.apply(r)])
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.0][0]
    }

    pub fn reference_value(&self, v: Var) -> f64 {
        self.values[v.0][1]
    }

    /// Adjoint of `output` with respect to every node, indexed like the tape.
    pub fn backward(&self, output: Var, mode: Mode) -> Vec<f64> {
        let mut adj = vec![0.0; self.ops.len()];
        adj[output.0] = 1.0;
        for i in (0..=output.0).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match self.ops[i] {
                Op::Leaf => {}
                Op::Linear { start, end } => {
                    for &(j, c) in &self.terms[start..end] {
                        adj[j] += g * c;
                    }
                }
                Op::Mul(a, b) => {
                    let [ax, ar] = self.values[a];
                    let [bx, br] = self.values[b];
                    let (ma, mb) = match mode {
                        Mode::Gradient => (bx, ax),
                        Mode::DeepLift => (0.5 * (bx + br), 0.5 * (ax + ar)),
                    };
                    adj[a] += g * ma;
                    adj[b] += g * mb;
                }
                Op::Unary(a, f) => {
                    let [x, r] = self.values[a];
                    let m = match mode {
                        Mode::Gradient => f.derivative(x),
                        Mode::DeepLift => {
                            let dx = x - r;
                            if dx.abs() < RESCALE_EPS {
                                f.derivative(x)
                            } else {
                                (self.values[i][0] - self.values[i][1]) / dx
                            }
                        }
                    };
                    adj[a] += g * m;
                }
            }
        }
        adj
    }

    pub fn adjoint(adjoints: &[f64], v: Var) -> f64 {
        adjoints[v.0]
    }
}
