use crate::autograd::Tensor;

/// Adam with bias correction over a fixed list of tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. `params[i]` and `grads[i]` must have the sizes given at construction.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed size");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], grads[i]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Gradient of `λ‖θ‖²`, added in place: `g += 2λθ`.
pub fn add_l2_grad(grad: &mut Tensor, param: &Tensor, lambda: f64) {
    for (g, p) in grad.data_mut().iter_mut().zip(param.data()) {
        *g += 2.0 * lambda * p;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new([2]);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut [&mut x], &[&g], 0.05);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
        assert_eq!(opt.steps(), 2000);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = vec![1.0];
        let mut opt = Adam::new([1]);
        opt.step(&mut [&mut x], &[&[0.3]], 0.01);
        assert!((x[0] - 0.99).abs() < 1e-9);
    }
}
