//! Formal multiplication series for the polynomial Phi(t) = pi t + t^q.
//!
//! For a unit gamma of O, the series [gamma](t) is the unique power series
//! with [gamma](t) = gamma t + O(t^2) and [gamma](Phi(t)) = Phi([gamma](t)).
//! Comparing coefficients of t^n in the functional equation gives
//!
//!   c_n * pi * (pi^{n-1} - 1) = (G^q)_n - sum_{j>=1} C(n-(q-1)j, j) pi^{n-qj} c_{n-(q-1)j}
//!
//! with G the series built from the already-known coefficients, so each c_n
//! is obtained from earlier ones by one division by pi and one unit
//! inversion. The division costs a certified pi-adic digit, and this module
//! keeps an explicit per-coefficient ledger of how many digits remain
//! certified, so that the reduction modulo pi is only performed when it is
//! actually justified.
//!
//! Two exact shortcuts keep the ledger healthy: roots of unity omega fixed
//! by x -> x^q satisfy [omega](t) = omega t on the nose, so gamma is first
//! split as omega * u with u = 1 + O(pi) and only the u-part runs through
//! the recursion.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::local::{Local, OElem};
use num_bigint::BigUint;

/// A value together with the number of certified pi-adic digits.
#[derive(Clone)]
struct Lv {
    v: OElem,
    cert: usize,
}

fn veff(o: &Local, x: &Lv) -> usize {
    o.valuation(&x.v).min(x.cert)
}

fn lv_exact(o: &Local, v: OElem) -> Lv {
    Lv { v, cert: o.pi_prec }
}

fn lv_add(o: &Local, a: &Lv, b: &Lv) -> Lv {
    Lv {
        v: o.add(&a.v, &b.v),
        cert: a.cert.min(b.cert),
    }
}

fn lv_sub(o: &Local, a: &Lv, b: &Lv) -> Lv {
    Lv {
        v: o.sub(&a.v, &b.v),
        cert: a.cert.min(b.cert),
    }
}

fn lv_mul(o: &Local, a: &Lv, b: &Lv) -> Lv {
    let cert = (a.cert + veff(o, b)).min(b.cert + veff(o, a)).min(o.pi_prec);
    Lv {
        v: o.mul(&a.v, &b.v),
        cert,
    }
}

/// Pascal's triangle modulo p^m0, rows 0..=n.
fn binomials(o: &Local, n: usize) -> Vec<Vec<BigUint>> {
    let mut rows: Vec<Vec<BigUint>> = Vec::with_capacity(n + 1);
    rows.push(vec![BigUint::from(1u32)]);
    for m in 1..=n {
        let prev = &rows[m - 1];
        let mut row = Vec::with_capacity(m + 1);
        row.push(BigUint::from(1u32));
        for j in 1..m {
            row.push((&prev[j - 1] + &prev[j]) % &o.modulus);
        }
        row.push(BigUint::from(1u32));
        rows.push(row);
    }
    rows
}

fn scalar_to_elem(o: &Local, s: &BigUint) -> OElem {
    let mut x = o.zero();
    x.coeffs[0][0] = s % &o.modulus;
    x
}

/// Truncated product of dense coefficient vectors (index = degree).
fn poly_mul(o: &Local, a: &[Lv], b: &[Lv], tprec: usize) -> Vec<Lv> {
    let zero = lv_exact(o, o.zero());
    let mut out = vec![zero; tprec + 1];
    for (i, ai) in a.iter().enumerate().take(tprec + 1) {
        if ai.v == o.zero() && ai.cert == o.pi_prec {
            continue;
        }
        for (j, bj) in b.iter().enumerate().take(tprec + 1 - i) {
            let prod = lv_mul(o, ai, bj);
            out[i + j] = lv_add(o, &out[i + j], &prod);
        }
    }
    out
}

/// The multiplication series of one unit, with certified coefficients.
pub struct GammaSeries {
    pub local: Local,
    pub gamma: OElem,
    pub tprec: usize,
    /// coeffs[n-1] = (c_n, certified pi-adic digits of c_n), n = 1..=tprec.
    pub coeffs: Vec<(OElem, usize)>,
}

/// Runs the coefficient recursion for a principal unit (u = 1 mod pi).
fn raw_series(o: &Local, u: &OElem, tprec: usize) -> Result<Vec<Lv>> {
    let q = o.q as usize;
    let zero = lv_exact(o, o.zero());
    let mut g: Vec<Lv> = vec![zero.clone(); tprec + 1];
    g[1] = lv_exact(o, u.clone());
    // pows[k-1] = G^k as a dense truncated polynomial, maintained
    // incrementally as coefficients are appended.
    let mut pows: Vec<Vec<Lv>> = Vec::with_capacity(q);
    pows.push(g.clone());
    for k in 2..=q {
        let next = poly_mul(o, &pows[k - 2], &g, tprec);
        pows.push(next);
    }
    let binom = binomials(o, tprec.max(q));
    let mut pi_pows: Vec<OElem> = Vec::with_capacity(tprec + 1);
    pi_pows.push(o.one());
    for i in 1..=tprec {
        pi_pows.push(o.mul(&pi_pows[i - 1], &o.pi()));
    }
    for n in 2..=tprec {
        // Coefficient n of G^q is already final: it never involves c_n.
        let mut known = pows[q - 1][n].clone();
        for j in 1..=n / q {
            let m = n - (q - 1) * j;
            let scalar = o.mul(
                &scalar_to_elem(o, &binom[m][j]),
                &pi_pows[n - q * j],
            );
            let term = lv_mul(o, &g[m], &lv_exact(o, scalar));
            known = lv_sub(o, &known, &term);
        }
        let divided = Lv {
            v: o.div_pi(&known.v).map_err(|_| {
                Error::PrecisionExhausted(format!(
                    "coefficient {n} of the multiplication series is not divisible by pi \
                     at the working precision"
                ))
            })?,
            cert: known.cert.saturating_sub(1),
        };
        let unit = o.sub(&pi_pows[n - 1], &o.one());
        let cn = lv_mul(o, &divided, &lv_exact(o, o.unit_inverse(&unit)?));
        if cn.cert == 0 {
            return Err(Error::PrecisionExhausted(format!(
                "no certified digits remain for coefficient {n}; raise pi_prec"
            )));
        }
        g[n] = cn.clone();
        // Update the maintained powers: for the old partial series G_old,
        // (G_old + c t^n)^k = sum_j C(k,j) c^j t^{nj} G_old^{k-j}.
        let old = pows.clone();
        let mut c_pows: Vec<Lv> = vec![lv_exact(o, o.one())];
        for _ in 1..=q {
            let last = c_pows.last().unwrap();
            c_pows.push(lv_mul(o, last, &cn));
        }
        for k in 1..=q {
            for j in 1..=k {
                if n * j > tprec {
                    break;
                }
                let cj = &c_pows[j];
                let coef = lv_mul(
                    o,
                    cj,
                    &lv_exact(o, scalar_to_elem(o, &binom[k][j])),
                );
                if j == k {
                    let cur = pows[k - 1][n * j].clone();
                    pows[k - 1][n * j] = lv_add(o, &cur, &coef);
                    continue;
                }
                let base = &old[k - j - 1];
                for (d, bd) in base.iter().enumerate() {
                    if n * j + d > tprec {
                        break;
                    }
                    let add = lv_mul(o, bd, &coef);
                    let cur = pows[k - 1][n * j + d].clone();
                    pows[k - 1][n * j + d] = lv_add(o, &cur, &add);
                }
            }
        }
    }
    Ok(g[1..].to_vec())
}

impl GammaSeries {
    /// Computes [gamma](t) to t-degree `tprec`.
    pub fn compute(local: &Local, gamma: &OElem, tprec: usize) -> Result<GammaSeries> {
        if tprec == 0 {
            return Err(Error::ParameterOutOfRange(
                "series precision must be positive".into(),
            ));
        }
        if local.valuation(gamma) != 0 {
            return Err(Error::NotAUnit(
                "the multiplication series is only defined for units".into(),
            ));
        }
        let omega = local.teichmuller(local.residue_class(gamma));
        let u = local.mul(gamma, &local.unit_inverse(&omega)?);
        let raw = raw_series(local, &u, tprec)?;
        // [omega * u] = [omega] o [u] and [omega](t) = omega t exactly, so
        // the final coefficients are omega * c_n(u); omega is an exact unit
        // and costs no certified digits.
        let coeffs = raw
            .into_iter()
            .map(|lv| (local.mul(&omega, &lv.v), lv.cert))
            .collect();
        Ok(GammaSeries {
            local: local.clone(),
            gamma: gamma.clone(),
            tprec,
            coeffs,
        })
    }

    fn dense(&self) -> Vec<Lv> {
        let o = &self.local;
        let mut g = vec![lv_exact(o, o.zero()); self.tprec + 1];
        for (n, (v, cert)) in self.coeffs.iter().enumerate() {
            g[n + 1] = Lv {
                v: v.clone(),
                cert: *cert,
            };
        }
        g
    }

    /// Recomputes both sides of the functional equation from the stored
    /// coefficients and checks that the residual vanishes to its certified
    /// precision. Returns the weakest certified precision among residual
    /// coefficients.
    pub fn verify_functional_equation(&self) -> Result<usize> {
        let o = &self.local;
        let tp = self.tprec;
        let g = self.dense();
        // Phi as a dense exact polynomial.
        let mut phi = vec![lv_exact(o, o.zero()); tp + 1];
        phi[1] = lv_exact(o, o.pi());
        if o.q as usize <= tp {
            phi[o.q as usize] = lv_exact(o, o.one());
        }
        // Left side: G(Phi(t)) = sum c_m Phi^m.
        let mut lhs = vec![lv_exact(o, o.zero()); tp + 1];
        let mut phi_pow = vec![lv_exact(o, o.zero()); tp + 1];
        phi_pow[0] = lv_exact(o, o.one());
        for m in 1..=tp {
            phi_pow = poly_mul(o, &phi_pow, &phi, tp);
            for (d, pd) in phi_pow.iter().enumerate() {
                let term = lv_mul(o, pd, &g[m]);
                lhs[d] = lv_add(o, &lhs[d], &term);
            }
        }
        // Right side: pi G + G^q by repeated squaring.
        let mut gq = vec![lv_exact(o, o.zero()); tp + 1];
        gq[0] = lv_exact(o, o.one());
        let mut base = g.clone();
        let mut k = o.q;
        while k > 0 {
            if k & 1 == 1 {
                gq = poly_mul(o, &gq, &base, tp);
            }
            base = poly_mul(o, &base, &base, tp);
            k >>= 1;
        }
        let pi = lv_exact(o, o.pi());
        let mut min_cert = o.pi_prec;
        for d in 0..=tp {
            let rhs = lv_add(o, &lv_mul(o, &g[d], &pi), &gq[d]);
            let diff = lv_sub(o, &lhs[d], &rhs);
            if o.valuation(&diff.v) < diff.cert {
                return Err(Error::CommutationFailure(format!(
                    "functional equation fails at degree {d}: residual valuation {} \
                     below certified precision {}",
                    o.valuation(&diff.v),
                    diff.cert
                )));
            }
            min_cert = min_cert.min(diff.cert);
        }
        Ok(min_cert)
    }

    /// Coefficients modulo pi, as residue-field codes. Every coefficient
    /// must still certify at least one digit.
    pub fn reduction_mod_p(&self) -> Result<Vec<u16>> {
        let o = &self.local;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, (v, cert))| {
                if *cert == 0 {
                    Err(Error::PrecisionExhausted(format!(
                        "coefficient {} has no certified digits",
                        n + 1
                    )))
                } else {
                    Ok(o.residue_class(v))
                }
            })
            .collect()
    }

    /// Coefficients modulo pi, embedded into a (possibly larger) field k
    /// containing the residue field.
    pub fn reduction_in_field(&self, k: &Field) -> Result<Vec<u16>> {
        let sub: Vec<u64> = self.local.unram.iter().map(|&c| c % self.local.p).collect();
        let table = k.subfield_embedding(&sub)?;
        Ok(self
            .reduction_mod_p()?
            .into_iter()
            .map(|c| table[c as usize])
            .collect())
    }
}

/// Composition (outer o inner) of truncated series over k, both and the
/// result indexed with coeffs[n-1] = coefficient of t^n.
pub fn compose_mod_p(k: &Field, outer: &[u16], inner: &[u16], tprec: usize) -> Vec<u16> {
    let mut out = vec![0u16; tprec];
    // inner^m, dense with index = degree.
    let mut pow = vec![0u16; tprec + 1];
    pow[0] = 1;
    for m in 1..=tprec {
        // pow <- pow * inner
        let mut next = vec![0u16; tprec + 1];
        for d in 0..=tprec {
            if pow[d] == 0 {
                continue;
            }
            for (i, &ci) in inner.iter().enumerate() {
                let deg = d + i + 1;
                if deg > tprec {
                    break;
                }
                next[deg] = k.add(next[deg], k.mul(pow[d], ci));
            }
        }
        pow = next;
        let cm = outer.get(m - 1).copied().unwrap_or(0);
        if cm == 0 {
            continue;
        }
        for d in 1..=tprec {
            if pow[d] != 0 {
                out[d - 1] = k.add(out[d - 1], k.mul(cm, pow[d]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local::LocalCtx;

    #[test]
    fn q2_multiplication_by_three_is_binomial() {
        // Over Q_2 with Phi(t) = 2t + t^2 = (1+t)^2 - 1, the formal group is
        // multiplicative and [3](t) = (1+t)^3 - 1 = 3t + 3t^2 + t^3 exactly.
        let o = LocalCtx::new(2, 1, 1, 12).unwrap();
        let s = GammaSeries::compute(&o, &o.from_int(3), 8).unwrap();
        let expect = [3i64, 3, 1, 0, 0, 0, 0, 0];
        for (n, (c, cert)) in s.coeffs.iter().enumerate() {
            assert!(*cert >= 1, "coefficient {} lost all digits", n + 1);
            assert!(
                o.congruent(c, &o.from_int(expect[n]), *cert),
                "coefficient {} differs from binomial series",
                n + 1
            );
        }
        assert!(s.verify_functional_equation().unwrap() >= 1);
    }

    #[test]
    fn teichmuller_unit_gives_linear_series() {
        // [omega](t) = omega t for the fixed point omega of x -> x^q.
        let o = LocalCtx::new(3, 1, 1, 10).unwrap();
        let omega = o.teichmuller(2);
        let s = GammaSeries::compute(&o, &omega, 6).unwrap();
        assert!(o.congruent(&s.coeffs[0].0, &omega, s.coeffs[0].1));
        for (c, cert) in &s.coeffs[1..] {
            assert!(o.is_zero_mod(c, *cert));
        }
    }

    #[test]
    fn series_of_one_is_identity() {
        let o = LocalCtx::new(3, 1, 1, 10).unwrap();
        let s = GammaSeries::compute(&o, &o.one(), 6).unwrap();
        assert!(o.congruent(&s.coeffs[0].0, &o.one(), s.coeffs[0].1));
        for (c, cert) in &s.coeffs[1..] {
            assert!(o.is_zero_mod(c, *cert));
        }
    }

    #[test]
    fn functional_equation_certified_for_principal_units() {
        for (p, e, f) in [(2, 1, 1), (3, 1, 1), (3, 2, 1), (2, 1, 2)] {
            let o = LocalCtx::new(p, e, f, 16).unwrap();
            let gamma = o.from_int(1 + p as i64);
            let s = GammaSeries::compute(&o, &gamma, 10).unwrap();
            let cert = s.verify_functional_equation().unwrap();
            assert!(cert >= 1, "residual certification lost for p={p}, e={e}, f={f}");
            let red = s.reduction_mod_p().unwrap();
            assert_eq!(red[0], 1, "principal unit must reduce to 1 at degree 1");
        }
    }

    #[test]
    fn linear_coefficient_is_gamma_and_next_vanish_below_q() {
        // [gamma](t) = gamma t modulo t^q.
        let o = LocalCtx::new(3, 1, 1, 12).unwrap();
        let gamma = o.from_int(4);
        let s = GammaSeries::compute(&o, &gamma, 8).unwrap();
        assert!(o.congruent(&s.coeffs[0].0, &gamma, s.coeffs[0].1));
        for n in 2..(o.q as usize) {
            let (c, cert) = &s.coeffs[n - 1];
            assert!(o.is_zero_mod(c, *cert), "coefficient {n} should vanish");
        }
    }

    #[test]
    fn composition_law_mod_p() {
        // [4] o [4] = [16] modulo p, over Q_3.
        let o = LocalCtx::new(3, 1, 1, 20).unwrap();
        let k = o.residue.clone();
        let tp = 12;
        let s4 = GammaSeries::compute(&o, &o.from_int(4), tp).unwrap();
        let s16 = GammaSeries::compute(&o, &o.from_int(16), tp).unwrap();
        let a = s4.reduction_mod_p().unwrap();
        let b = s16.reduction_mod_p().unwrap();
        let comp = compose_mod_p(&k, &a, &a, tp);
        assert_eq!(comp, b);
    }

    #[test]
    fn ramified_context_certifies_fewer_digits_but_still_reduces() {
        let o = LocalCtx::new(3, 2, 1, 20).unwrap();
        let gamma = o.add(&o.one(), &o.pi());
        let s = GammaSeries::compute(&o, &gamma, 10).unwrap();
        assert!(s.verify_functional_equation().unwrap() >= 1);
        let red = s.reduction_mod_p().unwrap();
        assert_eq!(red[0], 1);
    }
}
