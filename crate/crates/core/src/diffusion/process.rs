use super::{NoiseSchedule, Vocabulary};
use crate::{Error, Result, TokenId};

/// A distribution supported on `{token, MASK}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorbing {
    pub token: TokenId,
    pub mask: TokenId,
    pub p_token: f64,
    pub p_mask: f64,
}

impl Absorbing {
    pub fn prob(&self, x: TokenId) -> f64 {
        if x == self.token {
            self.p_token
        } else if x == self.mask {
            self.p_mask
        } else {
            0.0
        }
    }

    fn pinned(token: TokenId, mask: TokenId) -> Self {
        Self {
            token,
            mask,
            p_token: 1.0,
            p_mask: 0.0,
        }
    }
}

/// `q(x_t | x_0) = alpha_t [x_t = x_0] + (1 - alpha_t) [x_t = MASK]`.
pub fn forward_marginal(
    x0: TokenId,
    t: usize,
    sched: &NoiseSchedule,
    vocab: &Vocabulary,
) -> Result<Absorbing> {
    sched.check_step(t)?;
    vocab.check_token(x0)?;
    if vocab.is_mask(x0) {
        return Err(Error::contract("forward process cannot start from MASK"));
    }
    let a = sched.alpha(t);
    Ok(Absorbing {
        token: x0,
        mask: vocab.mask(),
        p_token: a,
        p_mask: 1.0 - a,
    })
}

/// One-step kernel `q(x_t | x_{t-1})`; a masked input stays masked.
pub fn forward_step(
    x_prev: TokenId,
    t: usize,
    sched: &NoiseSchedule,
    vocab: &Vocabulary,
) -> Result<Absorbing> {
    sched.check_step(t)?;
    vocab.check_token(x_prev)?;
    if vocab.is_mask(x_prev) {
        return Ok(Absorbing::pinned(x_prev, vocab.mask()));
    }
    let b = sched.beta(t);
    Ok(Absorbing {
        token: x_prev,
        mask: vocab.mask(),
        p_token: 1.0 - b,
        p_mask: b,
    })
}

/// Forward posterior `q(x_{t-1} | x_t, x_0)`.
///
/// An unmasked `x_t` pins `x_{t-1}`. A masked `x_t` unmasks to `x_0` with
/// probability `(alpha_{t-1} - alpha_t) / (1 - alpha_t)`.
pub fn posterior_step(
    xt: TokenId,
    x0: TokenId,
    t: usize,
    sched: &NoiseSchedule,
    vocab: &Vocabulary,
) -> Result<Absorbing> {
    sched.check_step(t)?;
    vocab.check_token(xt)?;
    vocab.check_token(x0)?;
    if vocab.is_mask(x0) {
        return Err(Error::contract("x_0 cannot be MASK"));
    }
    if !vocab.is_mask(xt) {
        if xt != x0 {
            return Err(Error::contract(format!(
                "x_t = {xt} is unmasked but differs from x_0 = {x0}"
            )));
        }
        return Ok(Absorbing::pinned(x0, vocab.mask()));
    }
    let w = loss_weight(t, sched)?;
    Ok(Absorbing {
        token: x0,
        mask: vocab.mask(),
        p_token: w,
        p_mask: 1.0 - w,
    })
}

/// Per-masked-position weight `(alpha_{t-1} - alpha_t) / (1 - alpha_t)`.
pub fn loss_weight(t: usize, sched: &NoiseSchedule) -> Result<f64> {
    sched.check_step(t)?;
    let (prev, cur) = (sched.alpha(t - 1), sched.alpha(t));
    if 1.0 - cur <= 0.0 {
        return Err(Error::Degenerate(format!(
            "alpha_{t} = 1, nothing can be masked"
        )));
    }
    Ok((prev - cur) / (1.0 - cur))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::with_content(4).unwrap()
    }

    /// Schedule whose first two alphas are the given values.
    fn sched_with(a1: f64, a2: f64) -> NoiseSchedule {
        let b1 = 1.0 - a1;
        let b2 = 1.0 - a2 / a1;
        NoiseSchedule::from_betas(vec![b1, b2, 1.0]).unwrap()
    }

    #[test]
    fn forward_marginal_examples() {
        let v = vocab();
        let s = NoiseSchedule::from_betas(vec![0.0, 0.4, 1.0]).unwrap();
        let m = forward_marginal(2, 1, &s, &v).unwrap();
        assert_eq!((m.p_token, m.p_mask), (1.0, 0.0));
        let m = forward_marginal(2, 2, &s, &v).unwrap();
        assert!((m.p_token - 0.6).abs() < 1e-15 && (m.p_mask - 0.4).abs() < 1e-15);
        let m = forward_marginal(2, 3, &s, &v).unwrap();
        assert_eq!((m.p_token, m.p_mask), (0.0, 1.0));
        assert_eq!(m.prob(2) + m.prob(v.mask()), 1.0);
    }

    #[test]
    fn forward_marginal_errors() {
        let v = vocab();
        let s = NoiseSchedule::linear_alpha(3).unwrap();
        assert!(matches!(
            forward_marginal(0, 0, &s, &v),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(matches!(
            forward_marginal(0, 4, &s, &v),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(forward_marginal(v.mask(), 1, &s, &v).is_err());
    }

    #[test]
    fn posterior_examples() {
        let v = vocab();
        let s = sched_with(0.8, 0.5);
        let p = posterior_step(1, 1, 2, &s, &v).unwrap();
        assert_eq!(p.prob(1), 1.0);
        let p = posterior_step(v.mask(), 1, 2, &s, &v).unwrap();
        assert!((p.prob(1) - 0.6).abs() < 1e-12);
        assert!((p.prob(v.mask()) - 0.4).abs() < 1e-12);
        // flat schedule step
        let flat = NoiseSchedule::from_betas(vec![0.5, 0.0, 1.0]).unwrap();
        let p = posterior_step(v.mask(), 1, 2, &flat, &v).unwrap();
        assert_eq!(p.prob(v.mask()), 1.0);
        assert!(posterior_step(2, 1, 2, &s, &v).is_err());
    }

    #[test]
    fn loss_weight_examples() {
        assert!((loss_weight(2, &sched_with(0.8, 0.5)).unwrap() - 0.6).abs() < 1e-12);
        let flat = NoiseSchedule::from_betas(vec![0.5, 0.0, 1.0]).unwrap();
        assert_eq!(loss_weight(2, &flat).unwrap(), 0.0);
        let one = NoiseSchedule::linear_alpha(1).unwrap();
        assert_eq!(loss_weight(1, &one).unwrap(), 1.0);
        let never = NoiseSchedule::from_betas(vec![0.0, 1.0]).unwrap();
        assert!(matches!(loss_weight(1, &never), Err(Error::Degenerate(_))));
    }

    /// Exhaustive: sum_{x_{t-1}} q(x_t|x_{t-1}) q(x_{t-1}|x_0) = q(x_t|x_0).
    #[test]
    fn posterior_and_kernels_compose() {
        for content in 1..=4 {
            let v = Vocabulary::with_content(content).unwrap();
            for steps in 1..=6 {
                let scheds = [
                    NoiseSchedule::linear_alpha(steps).unwrap(),
                    NoiseSchedule::from_betas(
                        (1..=steps)
                            .map(|t| if t == steps { 1.0 } else { 0.1 * t as f64 })
                            .collect(),
                    )
                    .unwrap(),
                ];
                for s in &scheds {
                    for x0 in v.content_tokens() {
                        for t in 1..=steps {
                            for xt in [x0, v.mask()] {
                                let direct = forward_marginal(x0, t, s, &v).unwrap().prob(xt);
                                let composed: f64 = [x0, v.mask()]
                                    .iter()
                                    .map(|&xp| {
                                        let prev = if t == 1 {
                                            if xp == x0 {
                                                1.0
                                            } else {
                                                0.0
                                            }
                                        } else {
                                            forward_marginal(x0, t - 1, s, &v).unwrap().prob(xp)
                                        };
                                        forward_step(xp, t, s, &v).unwrap().prob(xt) * prev
                                    })
                                    .sum();
                                assert!((direct - composed).abs() < 1e-12);
                                // Bayes: posterior * q(x_t|x_0) = q(x_t|x_{t-1}) q(x_{t-1}|x_0)
                                if direct > 0.0 && s.alpha(t) < 1.0 {
                                    let post = posterior_step(xt, x0, t, s, &v).unwrap();
                                    for xp in [x0, v.mask()] {
                                        let prev = if t == 1 {
                                            if xp == x0 {
                                                1.0
                                            } else {
                                                0.0
                                            }
                                        } else {
                                            forward_marginal(x0, t - 1, s, &v).unwrap().prob(xp)
                                        };
                                        let joint =
                                            forward_step(xp, t, s, &v).unwrap().prob(xt) * prev;
                                        assert!((post.prob(xp) * direct - joint).abs() < 1e-12);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
