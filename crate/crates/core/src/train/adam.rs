//! First/second-moment adaptive steps over a flat parameter vector with a
//! learning rate per entry.

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One update; `lr` holds either one rate per parameter or a single rate.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match the parameters");
        assert_eq!(grad.len(), params.len());
        assert!(lr.len() == 1 || lr.len() == params.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            let rate = if lr.len() == 1 { lr[0] } else { lr[i] };
            params[i] -= rate * mh / (vh.sqrt() + self.eps);
        }
    }

    /// Rebuilds the moments for a resized parameter vector. `sources[i]`
    /// names the old index whose moments entry `i` inherits; `None` starts
    /// from zero.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let pick = |old: &[f64]| sources.iter().map(|s| s.map_or(0.0, |j| old[j])).collect::<Vec<f64>>();
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}
