use ndarray::Array2;

use super::{Tape, Var};

/// A named trainable matrix that outlives individual tapes. Gradients from
/// successive tapes are summed into `grad` until the next optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Registers the current value on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Var {
        tape.var(self.value.clone())
    }

    /// Registers the current value on `tape` as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Var {
        tape.constant(self.value.clone())
    }

    /// Adds the gradient `tape` holds for `var` (if any).
    pub fn accumulate(&mut self, tape: &Tape, var: Var) {
        if let Some(g) = tape.grad(var) {
            self.grad += g;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Adam with bias correction. Moment buffers are matched to parameters by
/// position, so the same parameter order must be passed to every step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// One update of every parameter from its accumulated gradient; gradients
    /// are zeroed afterwards.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between Adam steps");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
            p.zero_grad();
        }
    }
}
