use crate::{Error, Result, TokenId};

/// Fraction of samples accepted by `check`.
pub fn validity_rate(samples: &[Vec<TokenId>], check: impl Fn(&[TokenId]) -> bool) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::contract("validity of an empty sample set"));
    }
    Ok(samples.iter().filter(|s| check(s)).count() as f64 / samples.len() as f64)
}

/// Fraction of samples equal to their reference.
pub fn exact_match_rate(samples: &[Vec<TokenId>], references: &[Vec<TokenId>]) -> Result<f64> {
    if samples.is_empty() || samples.len() != references.len() {
        return Err(Error::contract(format!(
            "{} samples for {} references",
            samples.len(),
            references.len()
        )));
    }
    Ok(samples
        .iter()
        .zip(references)
        .filter(|(a, b)| a == b)
        .count() as f64
        / samples.len() as f64)
}

/// Standard error of a binomial proportion.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates() {
        let s = vec![vec![0, 0], vec![0, 1], vec![1, 1]];
        assert_eq!(validity_rate(&s, |x| x[0] == x[1]).unwrap(), 2.0 / 3.0);
        assert_eq!(validity_rate(&s, |_| true).unwrap(), 1.0);
        assert!(validity_rate(&[], |_| true).is_err());
        assert_eq!(
            exact_match_rate(&s, &[vec![0, 0], vec![1, 1], vec![1, 1]]).unwrap(),
            2.0 / 3.0
        );
        assert_eq!(binomial_se(0.5, 100), 0.05);
    }
}
