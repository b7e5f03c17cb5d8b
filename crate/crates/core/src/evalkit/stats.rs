//! One-way ANOVA and one-tailed t-tests, with tail probabilities from the
//! regularized incomplete beta function.

use serde::{Deserialize, Serialize};

use super::EvalError;

const BETA_CF_EPS: f64 = 1e-16;
const BETA_CF_MAX_ITER: usize = 10_000;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, nine coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `P(F ≥ f)` for an F distribution with `(d1, d2)` degrees of freedom.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// `P(T ≥ t)` for Student's t with `nu` degrees of freedom.
pub fn t_survival(t: f64, nu: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let tail = 0.5 * reg_inc_beta(nu / 2.0, 0.5, nu / (nu + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dof {
    Anova { between: f64, within: f64 },
    T { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: Dof,
}

/// Single-factor ANOVA across groups.
///
/// Zero within-group variance with distinct group means yields an infinite
/// statistic and `p = 0`.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<StatTestResult, EvalError> {
    if groups.len() < 2 {
        return Err(EvalError::InsufficientSamples("ANOVA needs at least two groups".into()));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(EvalError::InsufficientSamples("every ANOVA group needs at least two samples".into()));
    }
    let k = groups.len() as f64;
    let n: usize = groups.iter().map(Vec::len).sum();
    let n = n as f64;
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let d1 = k - 1.0;
    let d2 = n - k;
    let dof = Dof::Anova { between: d1, within: d2 };
    let ms_between = ss_between / d1;
    let ms_within = ss_within / d2;
    let scale = grand.abs().max(1.0);
    let between_zero = ss_between <= (f64::EPSILON * scale).powi(2) * n;
    if ms_within == 0.0 {
        if between_zero {
            return Err(EvalError::DegenerateGroups);
        }
        return Ok(StatTestResult {
            statistic: f64::INFINITY,
            p_value: 0.0,
            dof,
        });
    }
    let statistic = if between_zero { 0.0 } else { ms_between / ms_within };
    Ok(StatTestResult {
        statistic,
        p_value: f_survival(statistic, d1, d2),
        dof,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// One-tailed t-test of `mean(a) > mean(b)`. Paired uses the differences
/// `a - b`; unpaired is Welch's test.
///
/// When every difference (or both samples) has zero spread the statistic is
/// `±∞` if the means differ; identical samples are [`EvalError::ZeroVariance`].
pub fn t_test_one_tailed(a: &[f64], b: &[f64], paired: bool) -> Result<StatTestResult, EvalError> {
    let (t, nu) = if paired {
        if a.len() != b.len() {
            return Err(EvalError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        if a.len() < 2 {
            return Err(EvalError::InsufficientSamples("paired t-test needs two pairs".into()));
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let (m, v) = mean_var(&d);
        let n = d.len() as f64;
        let nu = n - 1.0;
        if v == 0.0 {
            if m == 0.0 {
                return Err(EvalError::ZeroVariance);
            }
            (m.signum() * f64::INFINITY, nu)
        } else {
            (m / (v / n).sqrt(), nu)
        }
    } else {
        if a.len() < 2 || b.len() < 2 {
            return Err(EvalError::InsufficientSamples("Welch t-test needs two samples per group".into()));
        }
        let (ma, va) = mean_var(a);
        let (mb, vb) = mean_var(b);
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (sa, sb) = (va / na, vb / nb);
        let se2 = sa + sb;
        if se2 == 0.0 {
            if ma == mb {
                return Err(EvalError::ZeroVariance);
            }
            ((ma - mb).signum() * f64::INFINITY, na + nb - 2.0)
        } else {
            let nu = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
            ((ma - mb) / se2.sqrt(), nu)
        }
    };
    Ok(StatTestResult {
        statistic: t,
        p_value: t_survival(t, nu).clamp(0.0, 1.0),
        dof: Dof::T { nu },
    })
}
