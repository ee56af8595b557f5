//! Critical exponents, growth-regime classification, and the ledger of
//! explicit smallness constants gating each regime.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance used when deciding whether a user-provided `q` sits exactly on a
/// critical value.
pub const REGIME_EQ_TOL: f64 = 1e-12;

/// Growth regime of the coupling exponent `q` relative to the two critical
/// values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    MassCritical,
    Supercritical,
    SobolevCritical,
    Beyond,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::Subcritical => "subcritical",
            Regime::MassCritical => "mass_critical",
            Regime::Supercritical => "supercritical",
            Regime::SobolevCritical => "sobolev_critical",
            Regime::Beyond => "beyond",
        };
        f.write_str(s)
    }
}

fn check_gamma_n(gamma: f64, n: u32) -> Result<f64> {
    if !(gamma > 1.0) {
        return Err(Error::BadParameter(format!("gamma must be > 1, got {gamma}")));
    }
    if n < 1 {
        return Err(Error::BadParameter("dimension must be >= 1".into()));
    }
    Ok(gamma / (gamma - 1.0))
}

/// Mass-critical exponent `(N + gamma') / N`.
pub fn mass_critical(gamma: f64, n: u32) -> Result<f64> {
    let gc = check_gamma_n(gamma, n)?;
    Ok((n as f64 + gc) / n as f64)
}

/// Sobolev-critical exponent `N / (N - gamma')`, infinite when `gamma' >= N`.
pub fn sobolev_critical(gamma: f64, n: u32) -> Result<f64> {
    let gc = check_gamma_n(gamma, n)?;
    if gc >= n as f64 {
        Ok(f64::INFINITY)
    } else {
        Ok(n as f64 / (n as f64 - gc))
    }
}

/// Partitions `q > 1` into the five growth regimes; exact-equality cases use
/// [`REGIME_EQ_TOL`].
pub fn classify_regime(gamma: f64, n: u32, q: f64) -> Result<Regime> {
    if !(q > 1.0) {
        return Err(Error::BadParameter(format!("q must be > 1, got {q}")));
    }
    let q_bar = mass_critical(gamma, n)?;
    let q_c = sobolev_critical(gamma, n)?;
    if (q - q_bar).abs() <= REGIME_EQ_TOL {
        Ok(Regime::MassCritical)
    } else if q < q_bar {
        Ok(Regime::Subcritical)
    } else if q_c.is_finite() && (q - q_c).abs() <= REGIME_EQ_TOL {
        Ok(Regime::SobolevCritical)
    } else if q < q_c {
        Ok(Regime::Supercritical)
    } else {
        Ok(Regime::Beyond)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) {
        return Err(Error::BadParameter(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Radius `(C_L / (C_f C_q))^{q'}` of the ball containing the supercritical
/// local minimizer.
pub fn alpha_bar(cl: f64, cf: f64, cq: f64, q: f64) -> Result<f64> {
    check_positive("C_L", cl)?;
    check_positive("C_f", cf)?;
    check_positive("C_q", cq)?;
    if !(q > 1.0) {
        return Err(Error::BadParameter(format!("q must be > 1, got {q}")));
    }
    let q_conj = q / (q - 1.0);
    Ok((cl / (cf * cq)).powf(q_conj))
}

/// `K' = C_L + C_L^{-1} + 2 K_f + C_L / (q C_q)`.
pub fn k_prime(cl: f64, cq: f64, q: f64, kf: f64) -> f64 {
    cl + 1.0 / cl + 2.0 * kf + cl / (q * cq)
}

/// `K'' = C_L + C_L^{-1} + 2 K_f`.
pub fn k_dprime(cl: f64, kf: f64) -> f64 {
    cl + 1.0 / cl + 2.0 * kf
}

/// Supercritical coupling threshold
/// `min{ C_L/C_q, (K' q')^{1-q} (C_L/C_q)^q }`.
pub fn cf_threshold_supercritical(cl: f64, cq: f64, q: f64, kf: f64) -> Result<f64> {
    check_positive("C_L", cl)?;
    check_positive("C_q", cq)?;
    if !(q > 1.0) {
        return Err(Error::BadParameter(format!("q must be > 1, got {q}")));
    }
    if !(kf >= 0.0) {
        return Err(Error::BadParameter(format!("K_f must be >= 0, got {kf}")));
    }
    let kp = k_prime(cl, cq, q, kf);
    let q_conj = q / (q - 1.0);
    let first = cl / cq;
    let second = (kp * q_conj).powf(1.0 - q) * first.powf(q);
    Ok(first.min(second))
}

/// Mass-critical coupling threshold `q C_L / C_q`.
pub fn cf_threshold_mass_critical(cl: f64, cq: f64, q: f64) -> f64 {
    q * cl / cq
}

/// Sobolev-critical ball radius and coupling threshold:
/// `alpha_hat = ((C_q/C_L) K'' + 1)^q` (independent of `C_f`) and the bound
/// `C_f < q C_L / (C_q (alpha_hat + 1))`.
pub fn cf_threshold_critical(cl: f64, cq: f64, q: f64, kf: f64) -> Result<(f64, f64)> {
    check_positive("C_L", cl)?;
    check_positive("C_q", cq)?;
    if !(q > 1.0) {
        return Err(Error::BadParameter(format!("q must be > 1, got {q}")));
    }
    if !(kf >= 0.0) {
        return Err(Error::BadParameter(format!("K_f must be >= 0, got {kf}")));
    }
    let kpp = k_dprime(cl, kf);
    let alpha_hat = (cq / cl * kpp + 1.0).powf(q);
    let threshold = q * cl / (cq * (alpha_hat + 1.0));
    Ok((alpha_hat, threshold))
}

/// Drift smallness bound `1 / (2 C_E C_S)` for the sharp Fokker-Planck
/// estimate.
pub fn drift_smallness_bound(ce: f64, cs: f64) -> f64 {
    1.0 / (2.0 * ce * cs)
}

/// Hamiltonian-offset bound `K_H <= 1 / (4 C_E C_S)` for the critical case.
pub fn kh_threshold(ce: f64, cs: f64) -> f64 {
    1.0 / (4.0 * ce * cs)
}

use crate::ser::ext_real;

/// Every explicit constant and smallness threshold of the existence theory,
/// evaluated for one concrete problem instance.
///
/// `c_q`, `c_e`, `c_s` are measured discrete surrogates for the embedding
/// constants (see `energy::estimate_cq` and friends); their provenance is
/// recorded alongside.
#[derive(Clone, Debug, Serialize)]
pub struct ConstantsLedger {
    pub gamma: f64,
    pub gamma_conj: f64,
    pub q: f64,
    pub n: u32,
    pub q_bar: f64,
    #[serde(serialize_with = "ext_real")]
    pub q_c: f64,
    pub c_l: f64,
    pub c_q: f64,
    pub c_e: f64,
    pub c_s: f64,
    #[serde(serialize_with = "ext_real")]
    pub alpha_bar: f64,
    pub alpha_hat: f64,
    pub k_prime: f64,
    pub k_dprime: f64,
    /// Coupling bound imposed by the classified regime (`inf` when the regime
    /// imposes none, `0` beyond the Sobolev-critical exponent).
    #[serde(serialize_with = "ext_real")]
    pub cf_threshold: f64,
    pub kh_threshold: f64,
    pub drift_bound: f64,
    pub regime: Regime,
    pub provenance: BTreeMap<String, String>,
}

impl ConstantsLedger {
    /// Assembles the ledger from model constants and measured embedding
    /// surrogates.
    pub fn assemble(
        gamma: f64,
        q: f64,
        n: u32,
        c_f: f64,
        k_f: f64,
        c_l: f64,
        c_q: f64,
        c_e: f64,
        c_s: f64,
    ) -> Result<Self> {
        let gamma_conj = check_gamma_n(gamma, n)?;
        let q_bar = mass_critical(gamma, n)?;
        let q_c = sobolev_critical(gamma, n)?;
        let regime = classify_regime(gamma, n, q)?;
        let a_bar = if c_f > 0.0 {
            alpha_bar(c_l, c_f, c_q, q)?
        } else {
            f64::INFINITY
        };
        let (alpha_hat, crit_thr) = cf_threshold_critical(c_l, c_q, q, k_f)?;
        let cf_thr = match regime {
            Regime::Subcritical => f64::INFINITY,
            Regime::MassCritical => cf_threshold_mass_critical(c_l, c_q, q),
            Regime::Supercritical => cf_threshold_supercritical(c_l, c_q, q, k_f)?,
            Regime::SobolevCritical => crit_thr,
            Regime::Beyond => 0.0,
        };
        let mut provenance = BTreeMap::new();
        provenance.insert("c_l".into(), "closed form (sharp power-model constant)".into());
        provenance.insert("c_q".into(), "measured on the discrete grid".into());
        provenance.insert("c_e".into(), "measured on the discrete grid".into());
        provenance.insert("c_s".into(), "measured on the discrete grid".into());
        provenance.insert(
            "cf_threshold".into(),
            format!("regime-dependent bound for {regime}"),
        );
        Ok(Self {
            gamma,
            gamma_conj,
            q,
            n,
            q_bar,
            q_c,
            c_l,
            c_q,
            c_e,
            c_s,
            alpha_bar: a_bar,
            alpha_hat,
            k_prime: k_prime(c_l, c_q, q, k_f),
            k_dprime: k_dprime(c_l, k_f),
            cf_threshold: cf_thr,
            kh_threshold: kh_threshold(c_e, c_s),
            drift_bound: drift_smallness_bound(c_e, c_s),
            regime,
            provenance,
        })
    }

    /// Ball radius to hand to the minimizer: `alpha_bar` in the supercritical
    /// regime, `alpha_hat` at the Sobolev-critical exponent, unconstrained
    /// otherwise.
    pub fn ball_radius(&self) -> f64 {
        match self.regime {
            Regime::Supercritical => self.alpha_bar,
            Regime::SobolevCritical => self.alpha_hat,
            _ => f64::INFINITY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exponent_table_quadratic() {
        // gamma = 2 across dimensions
        assert_eq!(mass_critical(2.0, 1).unwrap(), 3.0);
        assert_eq!(mass_critical(2.0, 2).unwrap(), 2.0);
        assert!((mass_critical(2.0, 3).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(mass_critical(2.0, 4).unwrap(), 1.5);
        assert!(sobolev_critical(2.0, 1).unwrap().is_infinite());
        assert!(sobolev_critical(2.0, 2).unwrap().is_infinite());
        assert_eq!(sobolev_critical(2.0, 3).unwrap(), 3.0);
        assert_eq!(sobolev_critical(2.0, 4).unwrap(), 2.0);
        assert!(mass_critical(0.9, 1).is_err());
    }

    #[test]
    fn mass_critical_large_gamma_limit() {
        let mut last = mass_critical(1.5, 2).unwrap();
        for gamma in [2.0, 4.0, 16.0, 256.0] {
            let v = mass_critical(gamma, 2).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!((last - 1.5).abs() < 5e-3);
    }

    #[test]
    fn sobolev_dominates_mass() {
        for gamma in [1.2, 1.5, 2.0, 3.0, 5.0] {
            for n in 1..=6u32 {
                let qc = sobolev_critical(gamma, n).unwrap();
                let qb = mass_critical(gamma, n).unwrap();
                if qc.is_finite() {
                    assert!(qc >= qb, "gamma {gamma} n {n}");
                }
            }
        }
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(2.0, 1, 2.0).unwrap(), Regime::Subcritical);
        assert_eq!(classify_regime(2.0, 1, 3.0).unwrap(), Regime::MassCritical);
        assert_eq!(classify_regime(2.0, 4, 2.0).unwrap(), Regime::SobolevCritical);
        assert_eq!(classify_regime(2.0, 4, 2.5).unwrap(), Regime::Beyond);
        assert_eq!(classify_regime(2.0, 4, 1.8).unwrap(), Regime::Supercritical);
        assert!(classify_regime(2.0, 4, 0.5).is_err());
    }

    #[test]
    fn alpha_bar_hand_values() {
        assert!((alpha_bar(1.0, 0.5, 1.0, 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((alpha_bar(1.0, 1.0, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
        // monotone decreasing in C_f
        let mut last = f64::INFINITY;
        for cf in [0.1, 0.2, 0.5, 0.9, 2.0] {
            let a = alpha_bar(1.0, cf, 1.0, 2.0).unwrap();
            assert!(a < last);
            last = a;
        }
    }

    #[test]
    fn threshold_hand_values() {
        // K' = 1 + 1 + 0 + 1/2
        assert!((k_prime(1.0, 1.0, 2.0, 0.0) - 2.5).abs() < 1e-12);
        // min{1, (2.5 * 2)^{-1} * 1} = 0.2
        let thr = cf_threshold_supercritical(1.0, 1.0, 2.0, 0.0).unwrap();
        assert!((thr - 0.2).abs() < 1e-12);
        // always bounded by C_L / C_q
        for kf in [0.0, 0.1, 1.0, 5.0] {
            let t = cf_threshold_supercritical(1.0, 1.0, 2.0, kf).unwrap();
            assert!(t <= 1.0 + 1e-15);
        }
        // decreasing in K_f
        let mut last = f64::INFINITY;
        for kf in [0.0, 0.5, 1.0, 2.0] {
            let t = cf_threshold_supercritical(1.0, 1.0, 2.0, kf).unwrap();
            assert!(t < last);
            last = t;
        }
        // K'' = 2, alpha_hat = 9, bound = 2/10
        let (alpha_hat, thr) = cf_threshold_critical(1.0, 1.0, 2.0, 0.0).unwrap();
        assert!((k_dprime(1.0, 0.0) - 2.0).abs() < 1e-12);
        assert!((alpha_hat - 9.0).abs() < 1e-12);
        assert!((thr - 0.2).abs() < 1e-12);
        assert!(alpha_hat > 1.0);
    }

    #[test]
    fn alpha_hat_independent_of_cf() {
        let ledger_a =
            ConstantsLedger::assemble(2.0, 2.0, 4, 0.05, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let ledger_b =
            ConstantsLedger::assemble(2.0, 2.0, 4, 0.15, 0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(ledger_a.alpha_hat, ledger_b.alpha_hat);
        assert_eq!(ledger_a.regime, Regime::SobolevCritical);
    }

    #[test]
    fn quadratic_case_matches_transformed_exponents() {
        // for gamma = 2 the two critical values coincide with the classical
        // constrained-eigenvalue thresholds: 2q <= 2 + 4/N and 2q < 2 + 4/(N-2)
        for n in 1..=6u32 {
            let qb = mass_critical(2.0, n).unwrap();
            assert!((2.0 * qb - (2.0 + 4.0 / n as f64)).abs() < 1e-12);
            let qc = sobolev_critical(2.0, n).unwrap();
            if n > 2 {
                assert!((2.0 * qc - (2.0 + 4.0 / (n as f64 - 2.0))).abs() < 1e-12);
            } else {
                assert!(qc.is_infinite());
            }
        }
    }

    #[test]
    fn alpha_bar_exceeds_one_under_threshold() {
        let mut rng_vals = vec![];
        for i in 0..50 {
            rng_vals.push(0.01 + 0.0198 * i as f64);
        }
        for &cf in &rng_vals {
            let cl = 0.8;
            let cq = 1.3;
            let q = 2.4;
            if cf < cl / cq {
                assert!(alpha_bar(cl, cf, cq, q).unwrap() > 1.0);
            }
        }
    }

    #[test]
    fn ledger_serializes_infinities_as_strings() {
        let ledger = ConstantsLedger::assemble(2.0, 2.0, 1, 0.5, 0.0, 0.5, 1.0, 1.0, 1.0).unwrap();
        assert!(ledger.q_c.is_infinite());
        let json = serde_json::to_string(&ledger).unwrap();
        assert!(json.contains("\"q_c\":\"inf\""));
        assert!(json.contains("\"cf_threshold\":\"inf\""));
    }

    proptest! {
        /// The five regimes partition (1, inf) with no gaps or overlaps.
        #[test]
        fn regimes_partition(gamma in 1.05f64..4.0, n in 1u32..5, q in 1.000001f64..12.0) {
            let regime = classify_regime(gamma, n, q).unwrap();
            let q_bar = mass_critical(gamma, n).unwrap();
            let q_c = sobolev_critical(gamma, n).unwrap();
            let expected = if (q - q_bar).abs() <= REGIME_EQ_TOL {
                Regime::MassCritical
            } else if q < q_bar {
                Regime::Subcritical
            } else if q_c.is_finite() && (q - q_c).abs() <= REGIME_EQ_TOL {
                Regime::SobolevCritical
            } else if q < q_c {
                Regime::Supercritical
            } else {
                Regime::Beyond
            };
            prop_assert_eq!(regime, expected);
        }
    }
}
