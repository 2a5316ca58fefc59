use super::params::ParamStore;
use super::tape::Grads;
use super::tensor::Mat;
use crate::Result;

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Mat> = (0..store.len())
            .map(|i| {
                let (r, c) = store.get(i).shape();
                Mat::zeros(r, c)
            })
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in 0..store.len() {
            let Some(g) = grads.get(id) else { continue };
            let p = store.get_mut(id);
            let (m, v) = (self.m[id].data_mut(), self.v[id].data_mut());
            for (i, (x, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *x -= lr * (update + self.weight_decay * *x);
            }
        }
        Ok(())
    }
}

/// Linear warmup over the first `warmup_ratio` of steps, then cosine decay to zero.
pub fn lr_at(step: usize, total: usize, base: f64, warmup_ratio: f64) -> f64 {
    let warm = ((total as f64) * warmup_ratio).ceil() as usize;
    if step < warm {
        return base * (step + 1) as f64 / warm as f64;
    }
    let span = total.saturating_sub(warm).max(1) as f64;
    let progress = ((step - warm) as f64 / span).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Rescale to at most `max_norm` in global L2 norm; returns the norm before clipping.
pub fn clip_grads(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        assert!((lr_at(0, 100, 1.0, 0.03) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(lr_at(2, 100, 1.0, 0.03), 1.0);
        assert_eq!(lr_at(3, 100, 1.0, 0.03), 1.0);
        assert!(lr_at(99, 100, 1.0, 0.03) < 0.01);
        assert!(lr_at(50, 100, 1.0, 0.0) > 0.49);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add_filled("x", 1, 2, 3.0);
        let mut opt = AdamW::new(&store, 0.0);
        for _ in 0..500 {
            let x = store.get(id).clone();
            let g = Grads {
                by_param: vec![Some(x.scaled(2.0))],
            };
            opt.step(&mut store, &g, 0.05).unwrap();
        }
        assert!(store.get(id).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping() {
        let mut g = Grads {
            by_param: vec![Some(Mat::from_vec(1, 2, vec![3.0, 4.0]).unwrap()), None],
        };
        assert_eq!(clip_grads(&mut g, 1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
    }
}
