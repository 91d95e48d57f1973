//! Truncated arithmetic in the ring of integers O of a p-adic field F.
//!
//! F is described by its unramified part of degree f — generated by a root u
//! of a monic integer lift g(u) of an irreducible polynomial over F_p — and a
//! totally ramified part of degree e cut out by an Eisenstein polynomial E(y)
//! with integer coefficients. The uniformizer is y itself, written pi in the
//! API. Values are polynomials in y (degree < e) with coefficients that are
//! polynomials in u (degree < f) over Z / p^M0, where M0 is chosen so that
//! the context certifies `pi_prec` digits in the pi-adic sense.
//!
//! The ring operations here are exact in O / p^M0. Loss of certified digits
//! (one per division by pi) is the caller's responsibility to track; the
//! formal-group code keeps a per-coefficient ledger on top of this module.

use crate::error::{Error, Result};
use crate::field::{Field, FieldCtx};
use num_bigint::BigUint;
use num_traits::{One, Zero};
use std::sync::Arc;

/// One element of O / p^M0: `coeffs[i][j]` is the coefficient of y^i u^j.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OElem {
    pub coeffs: Vec<Vec<BigUint>>,
}

/// Context describing F and the working precision.
pub struct LocalCtx {
    pub p: u64,
    pub e: usize,
    pub f: usize,
    /// q = p^f, the residue field order.
    pub q: u64,
    /// Number of pi-adic digits this context can certify.
    pub pi_prec: usize,
    /// p-adic digits stored per coefficient.
    pub m0: usize,
    /// p^m0.
    pub modulus: BigUint,
    /// Eisenstein polynomial, low degree first, length e + 1, monic.
    pub eisenstein: Vec<i64>,
    /// Monic integer lift of the residue-field modulus, length f + 1.
    pub unram: Vec<u64>,
    /// The residue field F_q as a table-driven field.
    pub residue: Field,
    /// Inverse of the unit -a_0 / p modulo p^m0 (a_0 = constant Eisenstein
    /// coefficient), used when dividing by pi.
    inv_unit_a0: BigUint,
}

impl std::fmt::Debug for LocalCtx {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            fm,
            "LocalCtx(p={}, e={}, f={}, pi_prec={})",
            self.p, self.e, self.f, self.pi_prec
        )
    }
}

pub type Local = Arc<LocalCtx>;

impl LocalCtx {
    /// Builds a context with the default Eisenstein polynomial y^e - p and
    /// the default residue modulus for (p, f).
    pub fn new(p: u64, e: usize, f: usize, pi_prec: usize) -> Result<Local> {
        let mut eis = vec![0i64; e + 1];
        eis[0] = -(p as i64);
        eis[e] = 1;
        let residue = FieldCtx::new(p, f, None)?;
        let unram = {
            let mut g = residue.modulus.clone();
            for c in g.iter_mut() {
                *c %= p;
            }
            g
        };
        Self::with_polynomials(p, e, f, pi_prec, eis, unram)
    }

    /// Builds a context from explicit defining polynomials.
    pub fn with_polynomials(
        p: u64,
        e: usize,
        f: usize,
        pi_prec: usize,
        eisenstein: Vec<i64>,
        unram: Vec<u64>,
    ) -> Result<Local> {
        if e == 0 || f == 0 || pi_prec == 0 {
            return Err(Error::ParameterOutOfRange(
                "e, f and pi_prec must be positive".into(),
            ));
        }
        if eisenstein.len() != e + 1 || eisenstein[e] != 1 {
            return Err(Error::ParameterOutOfRange(format!(
                "Eisenstein polynomial must be monic of degree {e}"
            )));
        }
        let pi64 = p as i64;
        for (i, &a) in eisenstein.iter().enumerate().take(e) {
            if a.rem_euclid(pi64) != 0 {
                return Err(Error::ParameterOutOfRange(format!(
                    "Eisenstein coefficient {i} not divisible by p"
                )));
            }
        }
        if eisenstein[0].rem_euclid(pi64 * pi64) == 0 {
            return Err(Error::ParameterOutOfRange(
                "constant Eisenstein coefficient divisible by p^2".into(),
            ));
        }
        if unram.len() != f + 1 || unram[f] % p != 1 {
            return Err(Error::ParameterOutOfRange(format!(
                "residue modulus must be monic of degree {f}"
            )));
        }
        let residue = FieldCtx::new(p, f, Some(unram.iter().map(|&c| c % p).collect()))?;
        let m0 = pi_prec.div_ceil(e) + 1;
        let modulus = BigUint::from(p).pow(m0 as u32);
        // -a_0 = p * unit with the unit an ordinary integer; invert it mod
        // p^m0 by Euler's theorem.
        let unit_a0 = {
            let v = (-eisenstein[0]) / pi64;
            if v >= 0 {
                BigUint::from(v as u64) % &modulus
            } else {
                (&modulus - BigUint::from(v.unsigned_abs()) % &modulus) % &modulus
            }
        };
        let phi = &modulus - &modulus / p;
        let inv_unit_a0 = unit_a0.modpow(&(&phi - BigUint::one()), &modulus);
        Ok(Arc::new(LocalCtx {
            p,
            e,
            f,
            q: p.pow(f as u32),
            pi_prec,
            m0,
            modulus,
            eisenstein,
            unram,
            residue,
            inv_unit_a0,
        }))
    }

    pub fn zero(&self) -> OElem {
        OElem {
            coeffs: vec![vec![BigUint::zero(); self.f]; self.e],
        }
    }

    pub fn one(&self) -> OElem {
        self.from_int(1)
    }

    pub fn from_int(&self, n: i64) -> OElem {
        let mut x = self.zero();
        x.coeffs[0][0] = self.int_to_mod(n);
        x
    }

    /// The uniformizer.
    pub fn pi(&self) -> OElem {
        if self.e == 1 {
            // y is a root of y + a_0, so pi = -a_0 as a constant.
            self.from_int(-self.eisenstein[0])
        } else {
            let mut x = self.zero();
            x.coeffs[1][0] = BigUint::one();
            x
        }
    }

    /// The class of u, generating the unramified part.
    pub fn unram_gen(&self) -> OElem {
        let mut x = self.zero();
        if self.f == 1 {
            x.coeffs[0][0] = BigUint::zero();
        } else {
            x.coeffs[0][1] = BigUint::one();
        }
        x
    }

    fn madd(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a + b) % &self.modulus
    }
    fn msub(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a + &self.modulus - (b % &self.modulus)) % &self.modulus
    }
    fn mmul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.modulus
    }

    pub fn add(&self, a: &OElem, b: &OElem) -> OElem {
        let mut out = self.zero();
        for i in 0..self.e {
            for j in 0..self.f {
                out.coeffs[i][j] = self.madd(&a.coeffs[i][j], &b.coeffs[i][j]);
            }
        }
        out
    }

    pub fn sub(&self, a: &OElem, b: &OElem) -> OElem {
        let mut out = self.zero();
        for i in 0..self.e {
            for j in 0..self.f {
                out.coeffs[i][j] = self.msub(&a.coeffs[i][j], &b.coeffs[i][j]);
            }
        }
        out
    }

    pub fn neg(&self, a: &OElem) -> OElem {
        self.sub(&self.zero(), a)
    }

    /// Product of two u-polynomials, reduced modulo g(u) and p^m0.
    fn f0_mul(&self, a: &[BigUint], b: &[BigUint]) -> Vec<BigUint> {
        let f = self.f;
        let mut prod = vec![BigUint::zero(); 2 * f - 1];
        for (i, ai) in a.iter().enumerate() {
            if ai.is_zero() {
                continue;
            }
            for (j, bj) in b.iter().enumerate() {
                if bj.is_zero() {
                    continue;
                }
                prod[i + j] = self.madd(&prod[i + j], &self.mmul(ai, bj));
            }
        }
        for d in (f..2 * f - 1).rev() {
            let c = std::mem::replace(&mut prod[d], BigUint::zero());
            if c.is_zero() {
                continue;
            }
            for i in 0..f {
                let gi = BigUint::from(self.unram[i]) % &self.modulus;
                let sub = self.mmul(&c, &gi);
                prod[d - f + i] = self.msub(&prod[d - f + i], &sub);
            }
        }
        prod.truncate(f);
        prod
    }

    fn f0_scale(&self, a: &[BigUint], s: &BigUint) -> Vec<BigUint> {
        a.iter().map(|c| self.mmul(c, s)).collect()
    }

    pub fn mul(&self, a: &OElem, b: &OElem) -> OElem {
        let e = self.e;
        let mut prod: Vec<Vec<BigUint>> = vec![vec![BigUint::zero(); self.f]; 2 * e - 1];
        for i in 0..e {
            for ii in 0..e {
                let part = self.f0_mul(&a.coeffs[i], &b.coeffs[ii]);
                for (j, c) in part.into_iter().enumerate() {
                    prod[i + ii][j] = self.madd(&prod[i + ii][j], &c);
                }
            }
        }
        // Reduce modulo E(y): y^e = -(a_{e-1} y^{e-1} + ... + a_0).
        for d in (e..2 * e - 1).rev() {
            let c = std::mem::replace(&mut prod[d], vec![BigUint::zero(); self.f]);
            for i in 0..e {
                let ai = self.int_to_mod(self.eisenstein[i]);
                if ai.is_zero() {
                    continue;
                }
                let sub = self.f0_scale(&c, &ai);
                for (j, s) in sub.into_iter().enumerate() {
                    prod[d - e + i][j] = self.msub(&prod[d - e + i][j], &s);
                }
            }
        }
        prod.truncate(e);
        OElem { coeffs: prod }
    }

    fn int_to_mod(&self, n: i64) -> BigUint {
        if n >= 0 {
            BigUint::from(n as u64) % &self.modulus
        } else {
            (&self.modulus - BigUint::from(n.unsigned_abs()) % &self.modulus) % &self.modulus
        }
    }

    pub fn pow(&self, a: &OElem, mut k: u64) -> OElem {
        let mut acc = self.one();
        let mut base = a.clone();
        while k > 0 {
            if k & 1 == 1 {
                acc = self.mul(&acc, &base);
            }
            base = self.mul(&base, &base);
            k >>= 1;
        }
        acc
    }

    fn vp(&self, c: &BigUint) -> usize {
        if c.is_zero() {
            return self.m0;
        }
        let p = BigUint::from(self.p);
        let mut v = 0;
        let mut x = c.clone();
        while (&x % &p).is_zero() {
            x /= &p;
            v += 1;
            if v >= self.m0 {
                break;
            }
        }
        v
    }

    /// pi-adic valuation of the stored representative, capped at e * m0.
    pub fn valuation(&self, a: &OElem) -> usize {
        let cap = self.e * self.m0;
        let mut v = cap;
        for (i, row) in a.coeffs.iter().enumerate() {
            for c in row {
                let vc = self.e * self.vp(c) + i;
                if vc < v {
                    v = vc;
                }
            }
        }
        v.min(cap)
    }

    pub fn is_zero_mod(&self, a: &OElem, prec: usize) -> bool {
        self.valuation(a) >= prec
    }

    pub fn congruent(&self, a: &OElem, b: &OElem, prec: usize) -> bool {
        self.is_zero_mod(&self.sub(a, b), prec)
    }

    /// Residue of a modulo pi, as a code in the residue field.
    pub fn residue_class(&self, a: &OElem) -> u16 {
        let digits: Vec<u64> = a.coeffs[0]
            .iter()
            .map(|c| (c % BigUint::from(self.p)).to_u64_digits().first().copied().unwrap_or(0))
            .collect();
        self.residue.encode_coeffs(&digits)
    }

    /// Exact division by pi. Requires the stored representative to be
    /// divisible; the caller loses one certified pi-adic digit.
    pub fn div_pi(&self, a: &OElem) -> Result<OElem> {
        if self.valuation(a) == 0 {
            return Err(Error::NotAUnit(
                "division by pi of a unit element".into(),
            ));
        }
        let p = BigUint::from(self.p);
        if self.e == 1 {
            let mut out = self.zero();
            for j in 0..self.f {
                let c = &a.coeffs[0][j];
                if !(c % &p).is_zero() {
                    return Err(Error::PrecisionExhausted(
                        "representative not divisible by pi".into(),
                    ));
                }
                // pi = p * unit with unit = -a_0 / p; dividing by pi divides
                // by p and multiplies by the inverse unit.
                out.coeffs[0][j] = self.mmul(&(c / &p), &self.inv_unit_a0);
            }
            return Ok(out);
        }
        // Write a = c_0 + y * rest. Then a / y = rest + c_0 / y, and
        // 1 / y = h(y) / (-a_0) where h(y) = y^{e-1} + a_{e-1} y^{e-2} + ... + a_1.
        let c0 = &a.coeffs[0];
        for c in c0 {
            if !(c % &p).is_zero() {
                return Err(Error::PrecisionExhausted(
                    "representative not divisible by pi".into(),
                ));
            }
        }
        let scaled: Vec<BigUint> = c0
            .iter()
            .map(|c| self.mmul(&(c / &p), &self.inv_unit_a0))
            .collect();
        let mut out = self.zero();
        for i in 1..self.e {
            out.coeffs[i - 1] = a.coeffs[i].clone();
        }
        // Add scaled * h(y).
        for i in 0..self.e {
            let hi = if i == self.e - 1 {
                1i64
            } else {
                self.eisenstein[i + 1]
            };
            let him = self.int_to_mod(hi);
            if him.is_zero() {
                continue;
            }
            let part = self.f0_scale(&scaled, &him);
            for (j, s) in part.into_iter().enumerate() {
                out.coeffs[i][j] = self.madd(&out.coeffs[i][j], &s);
            }
        }
        Ok(out)
    }

    /// Inverse of a unit, by a residue-field inverse plus Newton lifting.
    pub fn unit_inverse(&self, a: &OElem) -> Result<OElem> {
        if self.valuation(a) != 0 {
            return Err(Error::NotAUnit("inverse of a non-unit".into()));
        }
        let r = self.residue_class(a);
        let r_inv = self.residue.inv(r)?;
        let mut z = self.lift_residue(r_inv);
        let two = self.from_int(2);
        let steps = (usize::BITS - (self.e * self.m0).leading_zeros()) as usize + 1;
        for _ in 0..steps {
            // z <- z * (2 - a z)
            let az = self.mul(a, &z);
            z = self.mul(&z, &self.sub(&two, &az));
        }
        debug_assert!(self.congruent(&self.mul(a, &z), &self.one(), self.pi_prec));
        Ok(z)
    }

    /// Lifts a residue-field code to O with Teichmuller-free digits.
    pub fn lift_residue(&self, code: u16) -> OElem {
        let digits = self.residue.coeffs(code);
        let mut x = self.zero();
        for (j, &d) in digits.iter().enumerate() {
            x.coeffs[0][j] = BigUint::from(d);
        }
        x
    }

    /// The Teichmuller representative of a residue class: the unique lift
    /// fixed by x -> x^q. Obtained by iterating that map to stability.
    pub fn teichmuller(&self, code: u16) -> OElem {
        let mut x = self.lift_residue(code);
        for _ in 0..self.m0 + 2 {
            x = self.pow(&x, self.q);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unramified_q3_basics() {
        let o = LocalCtx::new(3, 1, 1, 8).unwrap();
        let pi = o.pi();
        assert_eq!(o.valuation(&pi), 1);
        assert_eq!(o.valuation(&o.from_int(9)), 2);
        assert_eq!(o.valuation(&o.from_int(5)), 0);
        let x = o.div_pi(&o.from_int(12)).unwrap();
        assert!(o.congruent(&x, &o.from_int(4), o.pi_prec));
    }

    #[test]
    fn ramified_quadratic_over_q3() {
        // E(y) = y^2 - 3: pi^2 = 3.
        let o = LocalCtx::new(3, 2, 1, 8).unwrap();
        let pi = o.pi();
        assert_eq!(o.valuation(&pi), 1);
        let pi2 = o.mul(&pi, &pi);
        assert!(o.congruent(&pi2, &o.from_int(3), o.pi_prec));
        assert_eq!(o.valuation(&o.from_int(3)), 2);
        // (3 + pi) / pi = pi + 1 since 3 / pi = pi.
        let x = o.add(&o.from_int(3), &pi);
        let d = o.div_pi(&x).unwrap();
        assert!(o.congruent(&d, &o.add(&pi, &o.one()), o.pi_prec - 1));
    }

    #[test]
    fn unit_inverse_round_trip() {
        for (p, e, f) in [(2, 1, 1), (3, 1, 1), (3, 2, 1), (2, 1, 2)] {
            let o = LocalCtx::new(p, e, f, 10).unwrap();
            let samples = [
                o.from_int(1),
                o.from_int((p as i64) + 1),
                o.add(&o.one(), &o.mul(&o.pi(), &o.pi())),
                o.add(&o.unram_gen(), &o.one()),
            ];
            for x in samples {
                if o.valuation(&x) != 0 {
                    continue;
                }
                let y = o.unit_inverse(&x).unwrap();
                assert!(o.congruent(&o.mul(&x, &y), &o.one(), o.pi_prec));
            }
        }
    }

    #[test]
    fn teichmuller_is_fixed_by_qth_power() {
        let o = LocalCtx::new(2, 1, 2, 10).unwrap();
        // Nonzero residues of F_4.
        for code in 1..4u16 {
            let t = o.teichmuller(code);
            let tq = o.pow(&t, o.q);
            assert!(o.congruent(&tq, &t, o.pi_prec));
            assert_eq!(o.residue_class(&t), code);
        }
    }

    #[test]
    fn teichmuller_in_q3_is_sign() {
        let o = LocalCtx::new(3, 1, 1, 8).unwrap();
        // The Teichmuller lift of 2 = -1 is -1 itself.
        let t = o.teichmuller(2);
        assert!(o.congruent(&t, &o.from_int(-1), o.pi_prec));
    }

    #[test]
    fn division_by_pi_of_unit_is_rejected() {
        let o = LocalCtx::new(3, 1, 1, 8).unwrap();
        assert!(o.div_pi(&o.from_int(5)).is_err());
    }
}
