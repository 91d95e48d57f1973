//! Arithmetic in small finite fields k = F_p[x]/(modulus).
//!
//! Elements are stored as dense codes 0..p^m (base-p digits are the
//! coefficients of the residue polynomial), and all field operations go
//! through tables precomputed at context construction. This keeps the hot
//! linear-algebra loops elsewhere in the crate allocation-free.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

/// Largest field order for which operation tables are materialized.
const MAX_Q: u64 = 4096;

/// Shipped default moduli, indexed by (p, m). Degree-1 entries use x itself.
fn default_modulus(p: u64, m: usize) -> Option<Vec<u64>> {
    let poly: Vec<u64> = match (p, m) {
        (_, 1) => vec![0, 1],
        (2, 2) => vec![1, 1, 1],
        (2, 3) => vec![1, 1, 0, 1],
        (2, 4) => vec![1, 1, 0, 0, 1],
        (3, 2) => vec![1, 0, 1],
        (3, 3) => vec![1, 2, 0, 1],
        (3, 4) => vec![2, 1, 0, 0, 1],
        (5, 2) => vec![2, 0, 1],
        (7, 2) => vec![1, 0, 1],
        _ => return None,
    };
    Some(poly)
}

/// Context for one finite field. Shared behind `Arc` by everything that
/// carries coefficients in this field.
pub struct FieldCtx {
    pub p: u64,
    pub m: usize,
    pub q: u64,
    /// Monic modulus polynomial, low degree first, length m + 1.
    pub modulus: Vec<u64>,
    add: Vec<u16>,
    mul: Vec<u16>,
    inv: Vec<u16>,
    neg: Vec<u16>,
}

impl fmt::Debug for FieldCtx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldCtx(p={}, m={})", self.p, self.m)
    }
}

impl PartialEq for FieldCtx {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p && self.m == other.m && self.modulus == other.modulus
    }
}
impl Eq for FieldCtx {}

fn poly_trim(v: &mut Vec<u64>) {
    while v.last() == Some(&0) {
        v.pop();
    }
}

fn poly_mul_mod(a: &[u64], b: &[u64], modulus: &[u64], p: u64) -> Vec<u64> {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut prod = vec![0u64; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            prod[i + j] = (prod[i + j] + ai * bj) % p;
        }
    }
    poly_rem(&mut prod, modulus, p);
    prod
}

/// In-place remainder of `a` modulo the monic polynomial `modulus`.
fn poly_rem(a: &mut Vec<u64>, modulus: &[u64], p: u64) {
    let deg_m = modulus.len() - 1;
    while a.len() > deg_m {
        let lead = *a.last().unwrap() % p;
        let shift = a.len() - 1 - deg_m;
        if lead != 0 {
            for (i, &mi) in modulus.iter().enumerate() {
                let idx = shift + i;
                a[idx] = (a[idx] + p * p - (lead * mi) % p) % p;
            }
        }
        a.pop();
    }
    poly_trim(a);
}

fn poly_is_irreducible(poly: &[u64], p: u64) -> bool {
    let deg = poly.len() - 1;
    if deg == 0 {
        return false;
    }
    if deg == 1 {
        return true;
    }
    // Trial division by every monic polynomial of degree 1..=deg/2.
    for d in 1..=deg / 2 {
        let count = p.pow(d as u32);
        for code in 0..count {
            let mut div = Vec::with_capacity(d + 1);
            let mut c = code;
            for _ in 0..d {
                div.push(c % p);
                c /= p;
            }
            div.push(1);
            let mut rem = poly.to_vec();
            // Remainder of poly by div.
            while rem.len() >= div.len() {
                let lead = *rem.last().unwrap() % p;
                let shift = rem.len() - div.len();
                if lead != 0 {
                    for (i, &mi) in div.iter().enumerate() {
                        rem[shift + i] = (rem[shift + i] + p * p - (lead * mi) % p) % p;
                    }
                }
                rem.pop();
                poly_trim(&mut rem);
                if rem.is_empty() {
                    return false;
                }
            }
        }
    }
    true
}

impl FieldCtx {
    /// Builds the field F_p[x]/(modulus); `modulus` defaults per (p, m).
    pub fn new(p: u64, m: usize, modulus: Option<Vec<u64>>) -> Result<Arc<FieldCtx>> {
        if m == 0 {
            return Err(Error::ParameterOutOfRange("extension degree m = 0".into()));
        }
        let primes = [2u64, 3, 5, 7, 11, 13];
        if !primes.contains(&p) {
            return Err(Error::ParameterOutOfRange(format!(
                "characteristic {p} is not a supported prime"
            )));
        }
        let q = p.checked_pow(m as u32).filter(|&q| q <= MAX_Q).ok_or_else(|| {
            Error::ParameterOutOfRange(format!("field order p^m = {p}^{m} too large"))
        })?;
        let modulus = match modulus {
            Some(mut poly) => {
                for c in poly.iter_mut() {
                    *c %= p;
                }
                poly_trim(&mut poly);
                if poly.len() != m + 1 || poly[m] != 1 {
                    return Err(Error::ParameterOutOfRange(format!(
                        "modulus must be monic of degree {m}"
                    )));
                }
                if !poly_is_irreducible(&poly, p) {
                    return Err(Error::ParameterOutOfRange(
                        "modulus polynomial is reducible".into(),
                    ));
                }
                poly
            }
            None => default_modulus(p, m).ok_or_else(|| {
                Error::ParameterOutOfRange(format!("no default modulus shipped for (p, m) = ({p}, {m})"))
            })?,
        };

        let qs = q as usize;
        let mut ctx = FieldCtx {
            p,
            m,
            q,
            modulus,
            add: vec![0; qs * qs],
            mul: vec![0; qs * qs],
            inv: vec![0; qs],
            neg: vec![0; qs],
        };
        let decode = |code: u64| -> Vec<u64> {
            let mut v = Vec::with_capacity(m);
            let mut c = code;
            for _ in 0..m {
                v.push(c % p);
                c /= p;
            }
            poly_trim(&mut v);
            v
        };
        let encode = |poly: &[u64]| -> u64 {
            let mut code = 0;
            for &c in poly.iter().rev() {
                code = code * p + c % p;
            }
            code
        };
        for a in 0..q {
            let pa = decode(a);
            let mut na = pa.clone();
            for c in na.iter_mut() {
                *c = (p - *c) % p;
            }
            poly_trim(&mut na);
            ctx.neg[a as usize] = encode(&na) as u16;
            for b in a..q {
                let pb = decode(b);
                let mut sum: Vec<u64> = (0..m)
                    .map(|i| {
                        (pa.get(i).copied().unwrap_or(0) + pb.get(i).copied().unwrap_or(0)) % p
                    })
                    .collect();
                poly_trim(&mut sum);
                let s = encode(&sum) as u16;
                ctx.add[(a * q + b) as usize] = s;
                ctx.add[(b * q + a) as usize] = s;
                let prod = poly_mul_mod(&pa, &pb, &ctx.modulus, p);
                let pr = encode(&prod) as u16;
                ctx.mul[(a * q + b) as usize] = pr;
                ctx.mul[(b * q + a) as usize] = pr;
            }
        }
        // Inverses by exhaustive search; the tables are tiny.
        for a in 1..q {
            for b in 1..q {
                if ctx.mul[(a * q + b) as usize] == 1 {
                    ctx.inv[a as usize] = b as u16;
                    break;
                }
            }
        }
        Ok(Arc::new(ctx))
    }

    #[inline]
    pub fn add(&self, a: u16, b: u16) -> u16 {
        self.add[a as usize * self.q as usize + b as usize]
    }
    #[inline]
    pub fn sub(&self, a: u16, b: u16) -> u16 {
        self.add(a, self.neg[b as usize])
    }
    #[inline]
    pub fn neg(&self, a: u16) -> u16 {
        self.neg[a as usize]
    }
    #[inline]
    pub fn mul(&self, a: u16, b: u16) -> u16 {
        self.mul[a as usize * self.q as usize + b as usize]
    }
    pub fn inv(&self, a: u16) -> Result<u16> {
        if a == 0 {
            return Err(Error::DivisionByZero);
        }
        Ok(self.inv[a as usize])
    }
    pub fn div(&self, a: u16, b: u16) -> Result<u16> {
        Ok(self.mul(a, self.inv(b)?))
    }
    pub fn pow(&self, a: u16, mut e: i64) -> Result<u16> {
        if a == 0 {
            return if e > 0 {
                Ok(0)
            } else if e == 0 {
                Ok(1)
            } else {
                Err(Error::DivisionByZero)
            };
        }
        let order = self.q as i64 - 1;
        e = e.rem_euclid(order.max(1));
        let mut acc = 1u16;
        let mut base = a;
        let mut k = e as u64;
        while k > 0 {
            if k & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            k >>= 1;
        }
        Ok(acc)
    }

    /// Element from an integer (image of Z in k).
    pub fn from_int(&self, n: i64) -> u16 {
        n.rem_euclid(self.p as i64) as u16
    }

    /// The class of x, a generator of k over F_p when m > 1.
    pub fn gen(&self) -> u16 {
        if self.m == 1 {
            0
        } else {
            self.p as u16
        }
    }

    /// Coefficient vector (length m, low degree first) of a code.
    pub fn coeffs(&self, code: u16) -> Vec<u64> {
        let mut v = Vec::with_capacity(self.m);
        let mut c = code as u64;
        for _ in 0..self.m {
            v.push(c % self.p);
            c /= self.p;
        }
        v
    }

    pub fn encode_coeffs(&self, coeffs: &[u64]) -> u16 {
        let mut code: u64 = 0;
        for &c in coeffs.iter().rev() {
            code = code * self.p + c % self.p;
        }
        code as u16
    }

    /// Absolute Frobenius x -> x^p.
    pub fn frobenius(&self, a: u16) -> u16 {
        self.pow(a, self.p as i64).unwrap_or(0)
    }

    /// A multiplicative generator of k^x (smallest code of maximal order).
    pub fn multiplicative_generator(&self) -> u16 {
        let order = self.q - 1;
        'outer: for a in 1..self.q {
            let mut x = a as u16;
            let mut k = 1;
            while x != 1 {
                x = self.mul(x, a as u16);
                k += 1;
                if k > order {
                    continue 'outer;
                }
            }
            if k == order {
                return a as u16;
            }
        }
        1
    }

    /// Embedding of F_{p^f} = F_p[y]/(sub_modulus) into this field, as a code
    /// table. The generator y is sent to the smallest root of sub_modulus in
    /// k, which pins the embedding deterministically.
    pub fn subfield_embedding(&self, sub_modulus: &[u64]) -> Result<Vec<u16>> {
        let f = sub_modulus.len() - 1;
        if f == 0 || self.m % f != 0 {
            return Err(Error::ParameterOutOfRange(format!(
                "degree {f} does not divide m = {}",
                self.m
            )));
        }
        if sub_modulus == self.modulus.as_slice() {
            return Ok((0..self.q as u16).collect());
        }
        let mut root = None;
        for a in 0..self.q as u16 {
            let mut acc = 0u16;
            for &c in sub_modulus.iter().rev() {
                acc = self.add(self.mul(acc, a), (c % self.p) as u16);
            }
            if acc == 0 {
                root = Some(a);
                break;
            }
        }
        let root = root.ok_or_else(|| {
            Error::ParameterOutOfRange("subfield modulus has no root in k".into())
        })?;
        let sub_q = self.p.pow(f as u32);
        let mut table = vec![0u16; sub_q as usize];
        for code in 0..sub_q {
            let mut c = code;
            let mut digits = Vec::with_capacity(f);
            for _ in 0..f {
                digits.push((c % self.p) as u16);
                c /= self.p;
            }
            let mut acc = 0u16;
            for &d in digits.iter().rev() {
                acc = self.add(self.mul(acc, root), d);
            }
            table[code as usize] = acc;
        }
        Ok(table)
    }

    /// Renders a code as a polynomial in `g`.
    pub fn format_elem(&self, code: u16) -> String {
        if code == 0 {
            return "0".into();
        }
        let coeffs = self.coeffs(code);
        let mut parts = Vec::new();
        for (i, &c) in coeffs.iter().enumerate().rev() {
            if c == 0 {
                continue;
            }
            let part = match (i, c) {
                (0, c) => format!("{c}"),
                (1, 1) => "g".into(),
                (1, c) => format!("{c}g"),
                (i, 1) => format!("g^{i}"),
                (i, c) => format!("{c}g^{i}"),
            };
            parts.push(part);
        }
        parts.join("+")
    }

    /// Parses the `format_elem` grammar (sums of `c`, `cg`, `cg^i`).
    pub fn parse_elem(&self, s: &str) -> Result<u16> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(Error::Parse("empty field element".into()));
        }
        let mut coeffs = vec![0u64; self.m];
        let mut rest = compact.as_str();
        let mut sign = 1i64;
        if let Some(r) = rest.strip_prefix('-') {
            sign = -1;
            rest = r;
        }
        while !rest.is_empty() {
            let end = rest
                .char_indices()
                .skip(1)
                .find(|(_, c)| *c == '+' || *c == '-')
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            let term = &rest[..end];
            let next_sign = if rest[end..].starts_with('-') { -1 } else { 1 };
            rest = rest[end..].trim_start_matches(['+', '-']);
            let (coeff_str, degree) = match term.find('g') {
                None => (term, 0usize),
                Some(pos) => {
                    let deg = match term[pos + 1..].strip_prefix('^') {
                        Some(d) => d
                            .parse::<usize>()
                            .map_err(|_| Error::Parse(format!("bad exponent in '{term}'")))?,
                        None if term[pos + 1..].is_empty() => 1,
                        _ => return Err(Error::Parse(format!("bad term '{term}'"))),
                    };
                    (&term[..pos], deg)
                }
            };
            let coeff: i64 = if coeff_str.is_empty() {
                1
            } else {
                coeff_str
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad coefficient '{coeff_str}'")))?
            };
            if degree >= self.m {
                return Err(Error::Parse(format!(
                    "degree {degree} exceeds field degree {}",
                    self.m
                )));
            }
            let c = (sign * coeff).rem_euclid(self.p as i64) as u64;
            coeffs[degree] = (coeffs[degree] + c) % self.p;
            sign = next_sign;
        }
        Ok(self.encode_coeffs(&coeffs))
    }
}

pub type Field = Arc<FieldCtx>;

/// Owned field element for public API surfaces and tests.
#[derive(Clone)]
pub struct FieldElem {
    pub field: Field,
    pub code: u16,
}

impl FieldElem {
    pub fn new(field: &Field, code: u16) -> Self {
        FieldElem { field: field.clone(), code }
    }
}

impl fmt::Debug for FieldElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.field.format_elem(self.code))
    }
}

impl PartialEq for FieldElem {
    fn eq(&self, other: &Self) -> bool {
        *self.field == *other.field && self.code == other.code
    }
}
impl Eq for FieldElem {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f4_multiplication_table() {
        let k = FieldCtx::new(2, 2, None).unwrap();
        let g = k.gen();
        // g^2 = g + 1 under x^2 + x + 1, and g * (g + 1) = 1.
        assert_eq!(k.mul(g, g), k.add(g, 1));
        assert_eq!(k.mul(g, k.add(g, 1)), 1);
    }

    #[test]
    fn every_nonzero_element_has_inverse() {
        for (p, m) in [(2, 1), (3, 1), (2, 2), (3, 2), (2, 4)] {
            let k = FieldCtx::new(p, m, None).unwrap();
            for a in 1..k.q as u16 {
                let b = k.inv(a).unwrap();
                assert_eq!(k.mul(a, b), 1, "inverse fails in F_{}^{}", p, m);
            }
        }
    }

    #[test]
    fn inverse_matches_bruteforce_search() {
        // Independent check: in F_9 locate inverses by scanning products.
        let k = FieldCtx::new(3, 2, None).unwrap();
        for a in 1..9u16 {
            let mut found = None;
            for b in 1..9u16 {
                if k.mul(a, b) == 1 {
                    found = Some(b);
                    break;
                }
            }
            assert_eq!(found, Some(k.inv(a).unwrap()));
        }
    }

    #[test]
    fn frobenius_is_additive_and_fixes_prime_field() {
        let k = FieldCtx::new(3, 2, None).unwrap();
        for a in 0..9u16 {
            for b in 0..9u16 {
                assert_eq!(
                    k.frobenius(k.add(a, b)),
                    k.add(k.frobenius(a), k.frobenius(b))
                );
            }
        }
        for c in 0..3u16 {
            assert_eq!(k.frobenius(c), c);
        }
    }

    #[test]
    fn reducible_modulus_rejected() {
        // x^2 + 2x + 1 = (x + 1)^2 over F_3.
        assert!(FieldCtx::new(3, 2, Some(vec![1, 2, 1])).is_err());
    }

    #[test]
    fn subfield_embedding_is_ring_hom() {
        // F_4 inside F_16 via x^2 + x + 1.
        let k = FieldCtx::new(2, 4, None).unwrap();
        let table = k.subfield_embedding(&[1, 1, 1]).unwrap();
        let f4 = FieldCtx::new(2, 2, None).unwrap();
        for a in 0..4u16 {
            for b in 0..4u16 {
                assert_eq!(
                    table[f4.mul(a, b) as usize],
                    k.mul(table[a as usize], table[b as usize])
                );
                assert_eq!(
                    table[f4.add(a, b) as usize],
                    k.add(table[a as usize], table[b as usize])
                );
            }
        }
    }

    #[test]
    fn format_parse_round_trip() {
        let k = FieldCtx::new(3, 2, None).unwrap();
        for code in 0..9u16 {
            let s = k.format_elem(code);
            assert_eq!(k.parse_elem(&s).unwrap(), code, "round trip of '{s}'");
        }
        assert_eq!(k.parse_elem("2g + 1").unwrap(), k.add(k.mul(2, k.gen()), 1));
    }

    #[test]
    fn multiplicative_generator_has_full_order() {
        for (p, m) in [(2, 2), (3, 1), (3, 2)] {
            let k = FieldCtx::new(p, m, None).unwrap();
            let g = k.multiplicative_generator();
            let mut x = g;
            let mut n = 1;
            while x != 1 {
                x = k.mul(x, g);
                n += 1;
            }
            assert_eq!(n, k.q - 1);
        }
    }
}
