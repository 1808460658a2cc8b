//! Significance tests over matched pairs.
//!
//! The McNemar statistic is `(tn - cp)^2 / (tn + cp)` on two counts, with the
//! p-value taken from the chi-square distribution with one degree of freedom.
//! How the two counts are read off the matched pairs is selected by
//! [`McNemarCounting`].

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Outcomes of the treated and control members of matched pairs, aligned by
/// pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedOutcomes<T> {
    pub y_treated: Vec<T>,
    pub y_control: Vec<T>,
}

impl<T: Copy> PairedOutcomes<T> {
    pub fn new(y_treated: Vec<T>, y_control: Vec<T>) -> Result<Self> {
        if y_treated.len() != y_control.len() {
            return Err(Error::Dimension(format!(
                "{} treated outcomes vs {} control outcomes",
                y_treated.len(),
                y_control.len()
            )));
        }
        Ok(PairedOutcomes { y_treated, y_control })
    }

    pub fn n_pairs(&self) -> usize {
        self.y_treated.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// First McNemar count (see [`McNemarCounting`]); zero for t-tests.
    pub tn: usize,
    /// Second McNemar count; zero for t-tests.
    pub cp: usize,
    /// Sign of the estimated effect of treatment on the outcome.
    pub direction: i8,
    /// Set when a degenerate-input convention produced the result.
    pub degenerate: bool,
}

/// Which counts of the paired outcomes enter the McNemar statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarCounting {
    /// Discordant pairs: `tn` counts pairs whose treated member is negative
    /// while the control member is positive, `cp` counts pairs whose treated
    /// member is positive while the control member is negative.
    #[default]
    Discordant,
    /// Marginal counts: `tn` is the number of treated members with a negative
    /// outcome and `cp` the number of control members with a positive
    /// outcome.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct McNemarOptions {
    #[serde(default)]
    pub counting: McNemarCounting,
    /// Apply the `(|tn - cp| - 1)^2` continuity correction.
    #[serde(default)]
    pub continuity_correction: bool,
}

/// `P(X > x)` for `X ~ chi-square(1)`, computed as `erfc(sqrt(x / 2))`.
pub fn chi2_sf_1df(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidInput(format!("chi-square statistic must be >= 0, got {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(erfc((x / 2.0).sqrt()).clamp(0.0, 1.0))
}

/// McNemar statistic and p-value from the two counts.
///
/// `tn + cp == 0` yields statistic 0, p = 1 and the degenerate flag.
pub fn mcnemar_counts(tn: usize, cp: usize, continuity_correction: bool) -> TestResult {
    let direction = (cp as i64 - tn as i64).signum() as i8;
    if tn + cp == 0 {
        return TestResult { statistic: 0.0, p_value: 1.0, tn, cp, direction, degenerate: true };
    }
    let diff = (tn as f64 - cp as f64).abs();
    let num = if continuity_correction { (diff - 1.0).max(0.0) } else { diff };
    let statistic = num * num / (tn + cp) as f64;
    let p_value = chi2_sf_1df(statistic).expect("statistic is nonnegative");
    TestResult { statistic, p_value, tn, cp, direction, degenerate: false }
}

/// McNemar's test on binary paired outcomes.
pub fn mcnemar(paired: &PairedOutcomes<u8>, opts: McNemarOptions) -> Result<TestResult> {
    if paired.y_treated.iter().chain(&paired.y_control).any(|&y| y > 1) {
        return Err(Error::InvalidInput("McNemar's test needs binary outcomes".into()));
    }
    let (tn, cp) = match opts.counting {
        McNemarCounting::Discordant => {
            let mut c = 0;
            let mut b = 0;
            for (&t, &u) in paired.y_treated.iter().zip(&paired.y_control) {
                match (t, u) {
                    (0, 1) => c += 1,
                    (1, 0) => b += 1,
                    _ => {}
                }
            }
            (c, b)
        }
        McNemarCounting::Marginal => (
            paired.y_treated.iter().filter(|&&y| y == 0).count(),
            paired.y_control.iter().filter(|&&y| y == 1).count(),
        ),
    };
    Ok(mcnemar_counts(tn, cp, opts.continuity_correction))
}

/// Two-sided paired t-test on the per-pair differences `treated - control`.
///
/// Zero-variance differences: a zero mean gives t = 0, p = 1; a nonzero mean
/// gives t = +-inf, p = 0. Both set the degenerate flag.
pub fn paired_t_test(paired: &PairedOutcomes<f64>) -> Result<TestResult> {
    let n = paired.n_pairs();
    if n < 2 {
        return Err(Error::InvalidInput(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = paired.y_treated.iter().zip(&paired.y_control).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let direction = if mean > 0.0 {
        1
    } else if mean < 0.0 {
        -1
    } else {
        0
    };
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TestResult { statistic: 0.0, p_value: 1.0, tn: 0, cp: 0, direction, degenerate: true }
        } else {
            TestResult {
                statistic: mean.signum() * f64::INFINITY,
                p_value: 0.0,
                tn: 0,
                cp: 0,
                direction,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / nf).sqrt();
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("df >= 1");
    let p_value = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TestResult { statistic: t, p_value, tn: 0, cp: 0, direction, degenerate: false })
}

/// One-sided variant of [`paired_t_test`] for the alternative
/// `mean(treated - control) > 0`.
pub fn paired_t_test_greater(paired: &PairedOutcomes<f64>) -> Result<TestResult> {
    let two = paired_t_test(paired)?;
    let p = if two.degenerate {
        if two.statistic > 0.0 {
            0.0
        } else {
            1.0
        }
    } else {
        let n = paired.n_pairs() as f64;
        StudentsT::new(0.0, 1.0, n - 1.0).expect("df >= 1").sf(two.statistic)
    };
    Ok(TestResult { p_value: p, ..two })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson rule, used as an oracle independent of erfc and
    /// the incomplete beta function.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn normal_two_sided_tail(z: f64) -> f64 {
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        1.0 - 2.0 * simpson(pdf, 0.0, z, 20_000)
    }

    fn student_t_two_sided(t: f64, df: f64) -> f64 {
        // density normalizer via the beta function B(1/2, df/2) for df = 3
        assert_eq!(df, 3.0);
        let c = 2.0 / (std::f64::consts::PI * 3f64.sqrt());
        let pdf = |x: f64| c * (1.0 + x * x / 3.0).powi(-2);
        1.0 - 2.0 * simpson(pdf, 0.0, t.abs(), 20_000)
    }

    #[test]
    fn mcnemar_formula() {
        let r = mcnemar_counts(10, 20, false);
        assert!((r.statistic - 10.0 / 3.0).abs() < 1e-12);
        let oracle = normal_two_sided_tail((10.0f64 / 3.0).sqrt());
        assert!((r.p_value - oracle).abs() < 1e-8);
        assert!((r.p_value - 0.0679).abs() < 1e-4);
        let tie = mcnemar_counts(7, 7, false);
        assert_eq!(tie.statistic, 0.0);
        assert_eq!(tie.p_value, 1.0);
        let none = mcnemar_counts(0, 0, false);
        assert!(none.degenerate);
        assert_eq!(none.p_value, 1.0);
    }

    #[test]
    fn mcnemar_continuity_correction() {
        let r = mcnemar_counts(10, 20, true);
        assert!((r.statistic - 81.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn mcnemar_counting_modes() {
        let p = PairedOutcomes::new(vec![1, 1, 0, 0, 1], vec![0, 1, 1, 0, 0]).unwrap();
        let d = mcnemar(&p, McNemarOptions::default()).unwrap();
        assert_eq!((d.tn, d.cp), (1, 2));
        assert_eq!(d.direction, 1);
        let m = mcnemar(&p, McNemarOptions { counting: McNemarCounting::Marginal, ..Default::default() })
            .unwrap();
        assert_eq!((m.tn, m.cp), (2, 2));
        let bad = PairedOutcomes::new(vec![2], vec![0]).unwrap();
        assert!(mcnemar(&bad, McNemarOptions::default()).is_err());
    }

    #[test]
    fn chi2_sf_values() {
        assert_eq!(chi2_sf_1df(0.0).unwrap(), 1.0);
        for (x, expected) in [(3.841, 0.05), (6.635, 0.01)] {
            let oracle = normal_two_sided_tail(f64::sqrt(x));
            let got = chi2_sf_1df(x).unwrap();
            assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
            assert!((got - expected).abs() < 2e-4);
        }
        assert!(chi2_sf_1df(-1.0).is_err());
    }

    #[test]
    fn chi2_sf_is_monotone() {
        let mut prev = f64::INFINITY;
        for i in 0..1000 {
            let v = chi2_sf_1df(i as f64 * 0.03).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn paired_t_examples() {
        let p = PairedOutcomes::new(vec![1.0, -1.0, 2.0, 0.0], vec![0.0; 4]).unwrap();
        let r = paired_t_test(&p).unwrap();
        let sd = (5.0f64 / 3.0).sqrt();
        let t = 0.5 / (sd / 2.0);
        assert!((r.statistic - t).abs() < 1e-12);
        assert!((r.statistic - 0.7746).abs() < 1e-4);
        let oracle = student_t_two_sided(t, 3.0);
        assert!((r.p_value - oracle).abs() < 1e-8);
        assert!((r.p_value - 0.495).abs() < 1e-3);

        let same = PairedOutcomes::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
        let r = paired_t_test(&same).unwrap();
        assert!(r.degenerate && r.p_value == 1.0 && r.statistic == 0.0);

        let shift = PairedOutcomes::new(vec![2.0; 4], vec![1.0; 4]).unwrap();
        let r = paired_t_test(&shift).unwrap();
        assert!(r.degenerate && r.p_value == 0.0 && r.direction == 1);

        let one = PairedOutcomes::new(vec![1.0], vec![0.0]).unwrap();
        assert!(paired_t_test(&one).is_err());
    }

    #[test]
    fn one_sided_halves_two_sided() {
        let p = PairedOutcomes::new(vec![1.0, 0.5, 2.0, 0.0], vec![0.0; 4]).unwrap();
        let two = paired_t_test(&p).unwrap();
        let one = paired_t_test_greater(&p).unwrap();
        assert!((one.p_value - two.p_value / 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mcnemar_symmetric(tn in 0usize..500, cp in 0usize..500) {
            let a = mcnemar_counts(tn, cp, false);
            let b = mcnemar_counts(cp, tn, false);
            prop_assert_eq!(a.statistic, b.statistic);
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert!(a.statistic >= 0.0);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn mcnemar_ignores_concordant_pairs(
            pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..60),
            extra in proptest::collection::vec(0u8..2, 0..20),
        ) {
            let (t, c): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let base = mcnemar(&PairedOutcomes::new(t.clone(), c.clone()).unwrap(), Default::default()).unwrap();
            let mut t2 = t;
            let mut c2 = c;
            for y in extra {
                t2.push(y);
                c2.push(y);
            }
            let more = mcnemar(&PairedOutcomes::new(t2, c2).unwrap(), Default::default()).unwrap();
            prop_assert_eq!(base.statistic, more.statistic);
        }

        #[test]
        fn tests_invariant_to_pair_order(
            pairs in proptest::collection::vec((0u8..2, 0u8..2), 2..60),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut crate::seed::rng(seed));
            let split = |v: &[(u8, u8)]| -> (Vec<u8>, Vec<u8>) { v.iter().copied().unzip() };
            let (a, b) = split(&pairs);
            let (c, d) = split(&shuffled);
            let m1 = mcnemar(&PairedOutcomes::new(a.clone(), b.clone()).unwrap(), Default::default()).unwrap();
            let m2 = mcnemar(&PairedOutcomes::new(c.clone(), d.clone()).unwrap(), Default::default()).unwrap();
            prop_assert_eq!(m1, m2);
            let f = |v: Vec<u8>| v.into_iter().map(f64::from).collect::<Vec<_>>();
            let t1 = paired_t_test(&PairedOutcomes::new(f(a), f(b)).unwrap()).unwrap();
            let t2 = paired_t_test(&PairedOutcomes::new(f(c), f(d)).unwrap()).unwrap();
            prop_assert!((t1.p_value - t2.p_value).abs() < 1e-12);
        }
    }
}
