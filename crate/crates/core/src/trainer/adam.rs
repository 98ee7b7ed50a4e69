use crate::autodiff::Tensor;
use crate::model::ParamStore;

/// Adam with bias correction and a fixed learning rate.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update; parameters without a gradient are treated as having a zero one.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (k, p) in params.tensors_mut().iter_mut().enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let g = grads[k].as_ref().map(Tensor::data);
            for i in 0..m.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.data_mut()[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = ParamStore::default();
        ps.add("w".into(), Tensor::row_vector(vec![1.0, -2.0, 0.5]));
        let mut opt = Adam::new(&ps, 0.1);
        opt.step(&mut ps, &[Some(Tensor::row_vector(vec![3.0, -0.5, 0.0]))]);
        let w = ps.get(0).data();
        assert!((w[0] - 0.9).abs() < 1e-7);
        assert!((w[1] + 1.9).abs() < 1e-7);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamStore::default();
        ps.add("w".into(), Tensor::row_vector(vec![4.0, -3.0]));
        let mut opt = Adam::new(&ps, 0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = ps.get(0).data().iter().map(|x| 2.0 * (x - 1.0)).collect();
            opt.step(&mut ps, &[Some(Tensor::row_vector(g))]);
        }
        for &x in ps.get(0).data() {
            assert!((x - 1.0).abs() < 1e-3, "{x}");
        }
    }
}
