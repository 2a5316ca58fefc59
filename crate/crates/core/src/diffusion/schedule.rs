use crate::config::Config;
use crate::{Error, Result};

const TOL: f64 = 1e-12;

/// Per-step masking rates `beta[t]` and cumulative survival
/// `alpha[t] = prod_{s<=t} (1 - beta[s])`, for `t = 0..=T` with `alpha[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
}

impl NoiseSchedule {
    /// `alpha_t = 1 - t/T`, i.e. `beta_t = 1 / (T - t + 1)`.
    pub fn linear_alpha(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("T must be positive".into()));
        }
        let beta = (1..=steps).map(|t| 1.0 / (steps - t + 1) as f64).collect();
        let alpha = (0..=steps).map(|t| 1.0 - t as f64 / steps as f64).collect();
        Ok(Self { beta, alpha })
    }

    /// Build from explicit per-step rates `beta_1..beta_T`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Schedule("empty beta".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::Schedule(format!("beta {b} outside [0,1]")));
        }
        let mut alpha = Vec::with_capacity(beta.len() + 1);
        alpha.push(1.0);
        for b in &beta {
            let last = *alpha.last().unwrap();
            alpha.push(last * (1.0 - b));
        }
        let terminal = *alpha.last().unwrap();
        if terminal.abs() > TOL {
            return Err(Error::Schedule(format!("alpha_T = {terminal}, expected 0")));
        }
        *alpha.last_mut().unwrap() = 0.0;
        Ok(Self { beta, alpha })
    }

    /// Reads `[schedule]`: `T`, `schedule = linear-alpha | explicit`, `beta`.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let kind = cfg.raw("schedule", "schedule").unwrap_or("linear-alpha");
        match kind {
            "linear-alpha" => Self::linear_alpha(cfg.require("schedule", "T")?),
            "explicit" => {
                let beta: Vec<f64> = cfg
                    .get_list("schedule", "beta")?
                    .ok_or_else(|| Error::Config("explicit schedule needs beta".into()))?;
                if let Some(t) = cfg.get::<usize>("schedule", "T")? {
                    if t != beta.len() {
                        return Err(Error::Config(format!(
                            "T = {t} but beta has {} entries",
                            beta.len()
                        )));
                    }
                }
                Self::from_betas(beta)
            }
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }

    pub fn write_config(&self, cfg: &mut Config) {
        cfg.set("schedule", "T", self.steps());
        cfg.set("schedule", "schedule", "explicit");
        let list: Vec<String> = self.beta.iter().map(|b| b.to_string()).collect();
        cfg.set("schedule", "beta", format!("[{}]", list.join(", ")));
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `alpha_t` for `t` in `0..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_alpha_endpoints() {
        let s = NoiseSchedule::linear_alpha(4).unwrap();
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.alpha(4), 0.0);
        assert_eq!(s.beta(1), 0.25);
        assert_eq!(s.beta(4), 1.0);
    }

    #[test]
    fn explicit_schedule_must_absorb() {
        assert!(NoiseSchedule::from_betas(vec![0.5, 0.5]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.5, 1.0]).is_ok());
        assert!(NoiseSchedule::from_betas(vec![1.5]).is_err());
        assert!(NoiseSchedule::linear_alpha(0).is_err());
    }

    #[test]
    fn config_round_trip() {
        let cfg = Config::parse("[schedule]\nT = 3\nschedule = linear-alpha\n").unwrap();
        let s = NoiseSchedule::from_config(&cfg).unwrap();
        let mut out = Config::new();
        s.write_config(&mut out);
        let back = NoiseSchedule::from_config(&Config::parse(&out.canonical()).unwrap()).unwrap();
        for t in 0..=3 {
            assert!((s.alpha(t) - back.alpha(t)).abs() < 1e-12);
        }
        let bad = Config::parse("[schedule] T=2 schedule=explicit beta=[0.5, 0.5, 1.0]").unwrap();
        assert!(NoiseSchedule::from_config(&bad).is_err());
    }

    proptest! {
        // Composing per-step survival reproduces alpha_t; alpha is monotone.
        #[test]
        fn chapman_kolmogorov_scalar(steps in 1usize..40, raw in proptest::collection::vec(0.0f64..1.0, 1..12)) {
            let lin = NoiseSchedule::linear_alpha(steps).unwrap();
            let mut betas = raw;
            betas.push(1.0);
            let exp = NoiseSchedule::from_betas(betas).unwrap();
            for s in [lin, exp] {
                let mut run = 1.0;
                for t in 1..=s.steps() {
                    run *= 1.0 - s.beta(t);
                    prop_assert!((run - s.alpha(t)).abs() < 1e-12);
                    prop_assert!(s.alpha(t) <= s.alpha(t - 1));
                }
                prop_assert!(s.alpha(s.steps()).abs() < 1e-12);
            }
        }
    }
}
