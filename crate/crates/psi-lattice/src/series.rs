//! Sparse multivariable Laurent series over a finite field k, with the
//! twisted operators used throughout the crate.
//!
//! A series carries a per-variable precision: `prec[d] = Finite(P)` means
//! every term whose d-exponent is >= P has been discarded and is unknown;
//! `Exact` means the stored support is complete in that variable. All
//! arithmetic propagates precision pessimistically, so a stored coefficient
//! is always trustworthy.
//!
//! The operators, per direction d with twist exponent q:
//!
//! * `phi`: substitutes t_d -> t_d^q, acting k-linearly on coefficients.
//! * `psi`: the left inverse of phi determined by Phi(t) = pi t + t^q.
//!   Writing n = mq + i with 0 <= i < q, the monomial t_d^n maps to
//!   (q/pi) t_d^m for i = 0, to 0 for 0 < i < q - 1 and to t_d^m for
//!   i = q - 1. The scalar q/pi reduces to 1 in k exactly when the base
//!   field is Q_p (e = f = 1) and to 0 otherwise; the context records which.
//! * `gamma`: substitutes t_d -> [gamma](t_d) for a multiplication series
//!   computed by [`crate::lubin_tate`].

use crate::error::{Error, Result};
use crate::field::Field;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Per-variable knowledge bound for a series.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Prec {
    /// Terms with exponent >= P in this variable are unknown.
    Finite(i64),
    /// The support is complete in this variable.
    Exact,
}

impl Prec {
    pub fn min(self, other: Prec) -> Prec {
        match (self, other) {
            (Prec::Exact, p) | (p, Prec::Exact) => p,
            (Prec::Finite(a), Prec::Finite(b)) => Prec::Finite(a.min(b)),
        }
    }
    pub fn shift(self, n: i64) -> Prec {
        match self {
            Prec::Exact => Prec::Exact,
            Prec::Finite(a) => Prec::Finite(a + n),
        }
    }
    pub fn allows(self, e: i64) -> bool {
        match self {
            Prec::Exact => true,
            Prec::Finite(p) => e < p,
        }
    }
    pub fn at_least(self, n: i64) -> bool {
        match self {
            Prec::Exact => true,
            Prec::Finite(p) => p >= n,
        }
    }
}

impl PartialOrd for Prec {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Prec {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (Prec::Exact, Prec::Exact) => std::cmp::Ordering::Equal,
            (Prec::Exact, _) => std::cmp::Ordering::Greater,
            (_, Prec::Exact) => std::cmp::Ordering::Less,
            (Prec::Finite(a), Prec::Finite(b)) => a.cmp(b),
        }
    }
}

/// Shared parameters of the series ring k((t_1, ..., t_n)).
#[derive(Debug)]
pub struct SeriesCtx {
    pub field: Field,
    pub nvars: usize,
    /// Twist exponent q = p^f of phi.
    pub q: i64,
    /// Whether q/pi reduces to 1 in k (base field Q_p) rather than 0.
    pub qp: bool,
}

pub type SCtx = Arc<SeriesCtx>;

impl SeriesCtx {
    pub fn new(field: Field, nvars: usize, q: i64, qp: bool) -> SCtx {
        Arc::new(SeriesCtx { field, nvars, q, qp })
    }
}

impl PartialEq for SeriesCtx {
    fn eq(&self, other: &Self) -> bool {
        *self.field == *other.field
            && self.nvars == other.nvars
            && self.q == other.q
            && self.qp == other.qp
    }
}
impl Eq for SeriesCtx {}

/// A sparse Laurent series with per-variable precision.
#[derive(Clone)]
pub struct Series {
    pub ctx: SCtx,
    pub terms: BTreeMap<Vec<i64>, u16>,
    pub prec: Vec<Prec>,
}

impl Series {
    pub fn zero(ctx: &SCtx) -> Series {
        Series {
            ctx: ctx.clone(),
            terms: BTreeMap::new(),
            prec: vec![Prec::Exact; ctx.nvars],
        }
    }

    pub fn zero_prec(ctx: &SCtx, prec: Vec<Prec>) -> Series {
        Series {
            ctx: ctx.clone(),
            terms: BTreeMap::new(),
            prec,
        }
    }

    pub fn constant(ctx: &SCtx, code: u16) -> Series {
        let mut s = Series::zero(ctx);
        if code != 0 {
            s.terms.insert(vec![0; ctx.nvars], code);
        }
        s
    }

    pub fn one(ctx: &SCtx) -> Series {
        Series::constant(ctx, 1)
    }

    pub fn monomial(ctx: &SCtx, exps: &[i64], code: u16) -> Series {
        assert_eq!(exps.len(), ctx.nvars);
        let mut s = Series::zero(ctx);
        if code != 0 {
            s.terms.insert(exps.to_vec(), code);
        }
        s
    }

    /// The variable t_d.
    pub fn var(ctx: &SCtx, d: usize) -> Series {
        let mut e = vec![0; ctx.nvars];
        e[d] = 1;
        Series::monomial(ctx, &e, 1)
    }

    pub fn from_terms<I: IntoIterator<Item = (Vec<i64>, u16)>>(ctx: &SCtx, it: I) -> Series {
        let mut s = Series::zero(ctx);
        for (e, c) in it {
            assert_eq!(e.len(), ctx.nvars);
            if c != 0 {
                let k = &s.ctx.field;
                let cur = s.terms.get(&e).copied().unwrap_or(0);
                let sum = k.add(cur, c);
                if sum == 0 {
                    s.terms.remove(&e);
                } else {
                    s.terms.insert(e, sum);
                }
            }
        }
        s
    }

    fn normalize(&mut self) {
        let prec = self.prec.clone();
        self.terms.retain(|e, c| {
            *c != 0 && e.iter().zip(&prec).all(|(&ed, p)| p.allows(ed))
        });
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, exps: &[i64]) -> u16 {
        self.terms.get(exps).copied().unwrap_or(0)
    }

    /// Smallest exponent of variable d over the support.
    pub fn low(&self, d: usize) -> Option<i64> {
        self.terms.keys().map(|e| e[d]).min()
    }

    /// Lower bound for the d-exponents of all terms, stored or unknown.
    fn low_bound(&self, d: usize) -> i64 {
        const BIG: i64 = i64::MAX / 8;
        let stored = self.low(d).unwrap_or(BIG);
        let tail = match self.prec[d] {
            Prec::Exact => BIG,
            Prec::Finite(p) => p,
        };
        stored.min(tail)
    }

    pub fn meet_prec(&mut self, other: &[Prec]) {
        for (p, o) in self.prec.iter_mut().zip(other) {
            *p = Prec::min(*p, *o);
        }
        self.normalize();
    }

    pub fn truncate(&self, prec: &[Prec]) -> Series {
        let mut s = self.clone();
        s.meet_prec(prec);
        s
    }

    pub fn add(&self, other: &Series) -> Series {
        debug_assert!(*self.ctx == *other.ctx);
        let mut out = self.clone();
        let k = &self.ctx.field;
        for (e, &c) in &other.terms {
            let cur = out.terms.get(e).copied().unwrap_or(0);
            let sum = k.add(cur, c);
            if sum == 0 {
                out.terms.remove(e);
            } else {
                out.terms.insert(e.clone(), sum);
            }
        }
        for d in 0..self.ctx.nvars {
            out.prec[d] = out.prec[d].min(other.prec[d]);
        }
        out.normalize();
        out
    }

    pub fn neg(&self) -> Series {
        let mut out = self.clone();
        let k = &self.ctx.field;
        for c in out.terms.values_mut() {
            *c = k.neg(*c);
        }
        out
    }

    pub fn sub(&self, other: &Series) -> Series {
        self.add(&other.neg())
    }

    pub fn scale(&self, code: u16) -> Series {
        let k = &self.ctx.field;
        if code == 0 {
            return Series::zero_prec(&self.ctx, self.prec.clone());
        }
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = k.mul(*c, code);
        }
        out
    }

    /// Multiplication by a monomial shift (exact operation).
    pub fn shift(&self, exps: &[i64]) -> Series {
        let mut out = Series::zero(&self.ctx);
        out.prec = self
            .prec
            .iter()
            .zip(exps)
            .map(|(p, &e)| p.shift(e))
            .collect();
        out.terms = self
            .terms
            .iter()
            .map(|(e, &c)| (e.iter().zip(exps).map(|(&a, &b)| a + b).collect(), c))
            .collect();
        out
    }

    pub fn mul(&self, other: &Series) -> Series {
        debug_assert!(*self.ctx == *other.ctx);
        let k = &self.ctx.field;
        let n = self.ctx.nvars;
        let mut prec = Vec::with_capacity(n);
        for d in 0..n {
            let pa = self.prec[d].shift(other.low_bound(d).min(i64::MAX / 16));
            let pb = other.prec[d].shift(self.low_bound(d).min(i64::MAX / 16));
            prec.push(pa.min(pb));
        }
        let mut out = Series::zero_prec(&self.ctx, prec);
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &other.terms {
                let prod = k.mul(ca, cb);
                if prod == 0 {
                    continue;
                }
                let e: Vec<i64> = ea.iter().zip(eb).map(|(&a, &b)| a + b).collect();
                let cur = out.terms.get(&e).copied().unwrap_or(0);
                let sum = k.add(cur, prod);
                if sum == 0 {
                    out.terms.remove(&e);
                } else {
                    out.terms.insert(e, sum);
                }
            }
        }
        out.normalize();
        out
    }

    pub fn pow(&self, e: u32) -> Series {
        let mut acc = Series::one(&self.ctx);
        let mut base = self.clone();
        let mut k = e;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            k >>= 1;
        }
        acc
    }

    /// Two series are congruent when they agree below their joint precision.
    pub fn congruent(&self, other: &Series) -> bool {
        self.sub(other).is_zero()
    }

    /// Splits off the unique componentwise-minimal monomial, if the series
    /// is a monomial times a power-series unit: returns (exponents, unit).
    fn monomial_unit(&self) -> Result<(Vec<i64>, Series)> {
        if self.is_zero() {
            return Err(Error::NotInvertible("the zero series".into()));
        }
        let n = self.ctx.nvars;
        let v: Vec<i64> = (0..n).map(|d| self.low(d).unwrap()).collect();
        if !self.terms.contains_key(&v) {
            return Err(Error::NotInvertible(
                "no dominant monomial: componentwise-minimal exponent is not in the support"
                    .into(),
            ));
        }
        let neg: Vec<i64> = v.iter().map(|&e| -e).collect();
        let unit = self.shift(&neg);
        Ok((v, unit))
    }

    /// Inverse, defined when the series is a monomial times a unit of the
    /// power-series ring. The result is certified to
    /// min(target_d, prec_d - 2 v_d) in each variable, where v is the
    /// exponent of the dominant monomial.
    pub fn invert_to(&self, target: &[Prec]) -> Result<Series> {
        let (v, unit) = self.monomial_unit()?;
        let c0 = unit.coeff(&vec![0; self.ctx.nvars]);
        debug_assert_ne!(c0, 0);
        let n = self.ctx.nvars;
        // Certified precision of the result, then of the unit inverse.
        let result_prec: Vec<Prec> = (0..n)
            .map(|d| target[d].min(self.prec[d].shift(-2 * v[d])))
            .collect();
        let unit_prec: Vec<Prec> = (0..n)
            .map(|d| result_prec[d].shift(v[d]))
            .collect();
        let mut span: i64 = 0;
        for d in 0..n {
            match unit_prec[d] {
                Prec::Finite(p) => span += p.max(1),
                Prec::Exact => {
                    // An exact inverse exists only when the unit has no
                    // spread in this direction (then neither does its
                    // inverse); otherwise the tail is infinite.
                    if unit.terms.keys().any(|e| e[d] != 0) {
                        return Err(Error::NotInvertible(
                            "inverse is an infinite series; a finite target precision \
                             is required"
                                .into(),
                        ));
                    }
                }
            }
        }
        let k = &self.ctx.field;
        let mut z = Series::constant(&self.ctx, k.inv(c0)?);
        z.prec = unit_prec.clone();
        let two = Series::constant(&self.ctx, k.from_int(2));
        let u = unit.truncate(&unit_prec);
        let iters = (64 - (span.max(1) as u64).leading_zeros()) as usize + 1;
        for _ in 0..iters {
            let uz = u.mul(&z).truncate(&unit_prec);
            z = z.mul(&two.sub(&uz)).truncate(&unit_prec);
        }
        // Defensive check that the iteration converged in the window.
        let check = u.mul(&z);
        if !check.congruent(&Series::one(&self.ctx)) {
            return Err(Error::NotInvertible(
                "inversion failed to converge in the requested window".into(),
            ));
        }
        let neg: Vec<i64> = v.iter().map(|&e| -e).collect();
        let mut out = z.shift(&neg);
        out.prec = result_prec;
        out.normalize();
        Ok(out)
    }

    /// phi in direction d: t_d -> t_d^q.
    pub fn phi(&self, d: usize) -> Series {
        let q = self.ctx.q;
        let mut out = Series::zero(&self.ctx);
        out.prec = self.prec.clone();
        out.prec[d] = match self.prec[d] {
            Prec::Exact => Prec::Exact,
            Prec::Finite(p) => Prec::Finite(q * (p - 1) + 1),
        };
        out.terms = self
            .terms
            .iter()
            .map(|(e, &c)| {
                let mut e2 = e.clone();
                e2[d] *= q;
                (e2, c)
            })
            .collect();
        out
    }

    /// psi in direction d, the twisted projection onto phi-multiples.
    pub fn psi(&self, d: usize) -> Series {
        let q = self.ctx.q;
        let k = &self.ctx.field;
        let mut out = Series::zero(&self.ctx);
        out.prec = self.prec.clone();
        out.prec[d] = match self.prec[d] {
            Prec::Exact => Prec::Exact,
            Prec::Finite(p) => Prec::Finite(p.div_euclid(q)),
        };
        for (e, &c) in &self.terms {
            let n = e[d];
            let m = n.div_euclid(q);
            let i = n.rem_euclid(q);
            let image = if i == 0 {
                if self.ctx.qp {
                    Some(c)
                } else {
                    None
                }
            } else if i == q - 1 {
                Some(c)
            } else {
                None
            };
            if let Some(cc) = image {
                let mut e2 = e.clone();
                e2[d] = m;
                let cur = out.terms.get(&e2).copied().unwrap_or(0);
                let sum = k.add(cur, cc);
                if sum == 0 {
                    out.terms.remove(&e2);
                } else {
                    out.terms.insert(e2, sum);
                }
            }
        }
        out.normalize();
        out
    }

    /// Substitutes t_d -> S(t_d) for the series S with coefficients
    /// `subs[n-1]` at degree n (as produced by the formal-group code).
    pub fn gamma(&self, d: usize, subs: &[u16]) -> Result<Series> {
        if subs.is_empty() || subs[0] == 0 {
            return Err(Error::NotAUnit(
                "substitution series must start with a unit times t".into(),
            ));
        }
        let tprec = subs.len() as i64;
        let ctx = &self.ctx;
        let mut s = Series::zero(ctx);
        s.prec[d] = Prec::Finite(tprec + 1);
        for (n, &c) in subs.iter().enumerate() {
            if c != 0 {
                let mut e = vec![0; ctx.nvars];
                e[d] = n as i64 + 1;
                s.terms.insert(e, c);
            }
        }
        let mut pow_cache: BTreeMap<i64, Series> = BTreeMap::new();
        pow_cache.insert(0, Series::one(ctx));
        let s_inv = if self.terms.keys().any(|e| e[d] < 0) {
            Some(s.invert_to(&vec![Prec::Exact; ctx.nvars])?)
        } else {
            None
        };
        let mut exps: Vec<i64> = self.terms.keys().map(|e| e[d]).collect();
        exps.sort_unstable();
        exps.dedup();
        for &e in &exps {
            if pow_cache.contains_key(&e) {
                continue;
            }
            let p = if e > 0 {
                let mut best = 0;
                for &k in pow_cache.keys() {
                    if k > best && k < e {
                        best = k;
                    }
                }
                let mut acc = pow_cache[&best].clone();
                for _ in best..e {
                    acc = acc.mul(&s);
                }
                acc
            } else {
                let si = s_inv.as_ref().unwrap();
                let mut best = 0;
                for &k in pow_cache.keys() {
                    if k < best && k > e {
                        best = k;
                    }
                }
                let mut acc = pow_cache[&best].clone();
                for _ in e..best {
                    acc = acc.mul(si);
                }
                acc
            };
            pow_cache.insert(e, p);
        }
        let mut out = Series::zero_prec(ctx, vec![Prec::Exact; ctx.nvars]);
        for (e, &c) in &self.terms {
            let mut rest = e.clone();
            rest[d] = 0;
            let term = Series::monomial(ctx, &rest, c).mul(&pow_cache[&e[d]]);
            out = out.add(&term);
        }
        // The image of the unknown tail t_d^P lands in degree >= P because
        // the substitution series has lower exponent exactly 1; tails in the
        // other variables are untouched.
        out.meet_prec(&self.prec);
        Ok(out)
    }

    /// Writes the series as sum_i t_d^i phi_d(a_i) for 0 <= i < q and
    /// returns the components a_i. This is exact digit extraction on
    /// exponents: the coefficient of t_d^{mq+i} belongs to a_i at t_d^m.
    pub fn decompose_phi(&self, d: usize) -> Vec<Series> {
        let q = self.ctx.q;
        let mut parts: Vec<Series> = (0..q as usize)
            .map(|i| {
                let mut s = Series::zero(&self.ctx);
                s.prec = self.prec.clone();
                s.prec[d] = match self.prec[d] {
                    Prec::Exact => Prec::Exact,
                    // ceil((P - i) / q)
                    Prec::Finite(p) => {
                        Prec::Finite((p - i as i64 + q - 1).div_euclid(q))
                    }
                };
                s
            })
            .collect();
        for (e, &c) in &self.terms {
            let n = e[d];
            let m = n.div_euclid(q);
            let i = n.rem_euclid(q) as usize;
            let mut e2 = e.clone();
            e2[d] = m;
            parts[i].terms.insert(e2, c);
        }
        for p in parts.iter_mut() {
            p.normalize();
        }
        parts
    }

    /// Sends every variable to a single new variable t (exponents add),
    /// producing a series in the given one-variable context.
    pub fn diagonal(&self, target: &SCtx) -> Series {
        assert_eq!(target.nvars, 1);
        let k = &target.field;
        let mut out = Series::zero(target);
        let mut prec = Prec::Exact;
        for d in 0..self.ctx.nvars {
            // A tail t_d^{P_d} maps to degree >= P_d + sum of other lows.
            let others: i64 = (0..self.ctx.nvars)
                .filter(|&d2| d2 != d)
                .map(|d2| self.low_bound(d2).min(0))
                .sum();
            prec = prec.min(self.prec[d].shift(others));
        }
        out.prec = vec![prec];
        for (e, &c) in &self.terms {
            let total: i64 = e.iter().sum();
            let key = vec![total];
            let cur = out.terms.get(&key).copied().unwrap_or(0);
            let sum = k.add(cur, c);
            if sum == 0 {
                out.terms.remove(&key);
            } else {
                out.terms.insert(key, sum);
            }
        }
        out.normalize();
        out
    }

    /// Renders one monomial of this ring ("1", "t^2", "t1^-1 t2").
    pub fn format_monomial(ctx: &SeriesCtx, exps: &[i64]) -> String {
        let mut parts = Vec::new();
        for (d, &e) in exps.iter().enumerate() {
            if e == 0 {
                continue;
            }
            let name = if ctx.nvars == 1 {
                "t".to_string()
            } else {
                format!("t{}", d + 1)
            };
            if e == 1 {
                parts.push(name);
            } else {
                parts.push(format!("{name}^{e}"));
            }
        }
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join(" ")
        }
    }

    pub fn parse_monomial(ctx: &SeriesCtx, s: &str) -> Result<Vec<i64>> {
        let mut exps = vec![0i64; ctx.nvars];
        for part in s.split_whitespace() {
            if part == "1" {
                continue;
            }
            let rest = part
                .strip_prefix('t')
                .ok_or_else(|| Error::Parse(format!("bad monomial '{part}'")))?;
            let (var_str, exp_str) = match rest.find('^') {
                Some(i) => (&rest[..i], &rest[i + 1..]),
                None => (rest, "1"),
            };
            let d = if var_str.is_empty() {
                if ctx.nvars != 1 {
                    return Err(Error::Parse(
                        "monomial 't' is ambiguous with several variables".into(),
                    ));
                }
                0
            } else {
                let idx: usize = var_str
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad variable in '{part}'")))?;
                if idx == 0 || idx > ctx.nvars {
                    return Err(Error::Parse(format!(
                        "variable index {idx} out of range 1..={}",
                        ctx.nvars
                    )));
                }
                idx - 1
            };
            let e: i64 = exp_str
                .parse()
                .map_err(|_| Error::Parse(format!("bad exponent in '{part}'")))?;
            exps[d] += e;
        }
        Ok(exps)
    }
}

impl PartialEq for Series {
    fn eq(&self, other: &Self) -> bool {
        *self.ctx == *other.ctx && self.terms == other.terms && self.prec == other.prec
    }
}
impl Eq for Series {}

impl fmt::Debug for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = &self.ctx.field;
        let mut parts = Vec::new();
        for (e, &c) in &self.terms {
            let mono = Series::format_monomial(&self.ctx, e);
            let coeff = k.format_elem(c);
            let part = match (coeff.as_str(), mono.as_str()) {
                (_, "1") => coeff.clone(),
                ("1", _) => mono.clone(),
                _ if coeff.contains('+') => format!("({coeff}){mono}"),
                _ => format!("{coeff}{mono}"),
            };
            parts.push(part);
        }
        let body = if parts.is_empty() {
            "0".to_string()
        } else {
            parts.join(" + ")
        };
        let mut tails = Vec::new();
        for (d, p) in self.prec.iter().enumerate() {
            if let Prec::Finite(pv) = p {
                let name = if self.ctx.nvars == 1 {
                    "t".into()
                } else {
                    format!("t{}", d + 1)
                };
                tails.push(format!("O({name}^{pv})"));
            }
        }
        if tails.is_empty() {
            write!(f, "{body}")
        } else {
            write!(f, "{body} + {}", tails.join(" + "))
        }
    }
}

/// A dense matrix of series, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct SMat {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<Series>,
}

impl fmt::Debug for SMat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SMat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{:?}", self.at(i, j)))
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl SMat {
    pub fn zero(ctx: &SCtx, rows: usize, cols: usize) -> SMat {
        SMat {
            rows,
            cols,
            entries: vec![Series::zero(ctx); rows * cols],
        }
    }

    pub fn identity(ctx: &SCtx, n: usize) -> SMat {
        let mut m = SMat::zero(ctx, n, n);
        for i in 0..n {
            *m.at_mut(i, i) = Series::one(ctx);
        }
        m
    }

    pub fn from_fn<F: FnMut(usize, usize) -> Series>(rows: usize, cols: usize, mut f: F) -> SMat {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        SMat { rows, cols, entries }
    }

    pub fn at(&self, i: usize, j: usize) -> &Series {
        &self.entries[i * self.cols + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Series {
        &mut self.entries[i * self.cols + j]
    }

    pub fn ctx(&self) -> &SCtx {
        &self.entries[0].ctx
    }

    pub fn add(&self, other: &SMat) -> SMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        SMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).add(other.at(i, j)))
    }

    pub fn sub(&self, other: &SMat) -> SMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        SMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).sub(other.at(i, j)))
    }

    pub fn mul(&self, other: &SMat) -> SMat {
        assert_eq!(self.cols, other.rows);
        let ctx = self.ctx().clone();
        SMat::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = Series::zero(&ctx);
            for l in 0..self.cols {
                acc = acc.add(&self.at(i, l).mul(other.at(l, j)));
            }
            acc
        })
    }

    pub fn mul_vec(&self, v: &[Series]) -> Vec<Series> {
        assert_eq!(self.cols, v.len());
        let ctx = self.ctx().clone();
        (0..self.rows)
            .map(|i| {
                let mut acc = Series::zero(&ctx);
                for l in 0..self.cols {
                    acc = acc.add(&self.at(i, l).mul(&v[l]));
                }
                acc
            })
            .collect()
    }

    pub fn scale(&self, s: &Series) -> SMat {
        SMat::from_fn(self.rows, self.cols, |i, j| self.at(i, j).mul(s))
    }

    pub fn map<F: Fn(&Series) -> Series>(&self, f: F) -> SMat {
        SMat {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    pub fn congruent(&self, other: &SMat) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.congruent(b))
    }

    /// Determinant by cofactor expansion (matrices here are tiny).
    pub fn det(&self) -> Series {
        assert_eq!(self.rows, self.cols);
        let ctx = self.ctx().clone();
        match self.rows {
            0 => Series::one(&ctx),
            1 => self.at(0, 0).clone(),
            n => {
                let mut acc = Series::zero(&ctx);
                for j in 0..n {
                    let minor = self.minor(0, j);
                    let mut term = self.at(0, j).mul(&minor.det());
                    if j % 2 == 1 {
                        term = term.neg();
                    }
                    acc = acc.add(&term);
                }
                acc
            }
        }
    }

    fn minor(&self, row: usize, col: usize) -> SMat {
        let n = self.rows;
        SMat::from_fn(n - 1, n - 1, |i, j| {
            let si = if i < row { i } else { i + 1 };
            let sj = if j < col { j } else { j + 1 };
            self.at(si, sj).clone()
        })
    }

    pub fn adjugate(&self) -> SMat {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        if n == 1 {
            return SMat::identity(self.ctx(), 1);
        }
        SMat::from_fn(n, n, |i, j| {
            // Cofactor C_{j,i} for the transpose of the cofactor matrix.
            let m = self.minor(j, i).det();
            if (i + j) % 2 == 1 {
                m.neg()
            } else {
                m
            }
        })
    }

    /// Inverse via adjugate / determinant; the determinant must be a
    /// monomial times a unit. `target` bounds the precision of 1/det.
    pub fn inverse_to(&self, target: &[Prec]) -> Result<SMat> {
        let det = self.det();
        if det.is_zero() {
            return Err(Error::NotInvertible("matrix determinant vanishes".into()));
        }
        let det_inv = det.invert_to(target)?;
        Ok(self.adjugate().map(|s| s.mul(&det_inv)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldCtx;
    use crate::local::LocalCtx;
    use crate::lubin_tate::{compose_mod_p, GammaSeries};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx1(p: u64, qp: bool) -> SCtx {
        let k = FieldCtx::new(p, 1, None).unwrap();
        SeriesCtx::new(k, 1, p as i64, qp)
    }

    fn random_series(ctx: &SCtx, rng: &mut ChaCha8Rng, span: i64) -> Series {
        let mut s = Series::zero(ctx);
        for _ in 0..8 {
            let e: Vec<i64> = (0..ctx.nvars).map(|_| rng.gen_range(-span..=span)).collect();
            let c = rng.gen_range(0..ctx.field.q) as u16;
            if c != 0 {
                s.terms.insert(e, c);
            }
        }
        s
    }

    #[test]
    fn multiplication_is_associative_and_commutative() {
        let ctx = ctx1(3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let a = random_series(&ctx, &mut rng, 4);
            let b = random_series(&ctx, &mut rng, 4);
            let c = random_series(&ctx, &mut rng, 4);
            assert_eq!(a.mul(&b), b.mul(&a));
            assert_eq!(a.mul(&b).mul(&c), a.mul(&b.mul(&c)));
            assert_eq!(a.mul(&b.add(&c)), a.mul(&b).add(&a.mul(&c)));
        }
    }

    #[test]
    fn precision_law_for_products() {
        let ctx = ctx1(3, true);
        // (1 + O(t^3)) * t^2 = t^2 + O(t^5)
        let mut a = Series::one(&ctx);
        a.prec = vec![Prec::Finite(3)];
        let b = Series::monomial(&ctx, &[2], 1);
        let prod = a.mul(&b);
        assert_eq!(prod.prec, vec![Prec::Finite(5)]);
        assert_eq!(prod.coeff(&[2]), 1);
    }

    #[test]
    fn geometric_series_inverse() {
        let ctx = ctx1(3, true);
        // (1 + t)^{-1} = 1 - t + t^2 - ... truncated at t^6.
        let one_plus_t = Series::one(&ctx).add(&Series::var(&ctx, 0));
        let inv = one_plus_t.invert_to(&[Prec::Finite(6)]).unwrap();
        for n in 0..6 {
            let expect = if n % 2 == 0 { 1 } else { 2 };
            assert_eq!(inv.coeff(&[n]), expect, "coefficient of t^{n}");
        }
        assert!(one_plus_t.mul(&inv).congruent(&Series::one(&ctx)));
    }

    #[test]
    fn laurent_inverse_with_shift() {
        let ctx = ctx1(3, true);
        // x = t^{-2} (1 + t): inverse is t^2 (1 - t + ...).
        let x = Series::from_terms(&ctx, [(vec![-2], 1), (vec![-1], 1)]);
        let inv = x.invert_to(&[Prec::Finite(8)]).unwrap();
        assert!(x.mul(&inv).congruent(&Series::one(&ctx)));
        assert_eq!(inv.low(0), Some(2));
    }

    #[test]
    fn non_dominant_support_is_not_invertible() {
        let k = FieldCtx::new(3, 1, None).unwrap();
        let ctx = SeriesCtx::new(k, 2, 3, true);
        let x = Series::var(&ctx, 0).add(&Series::var(&ctx, 1));
        assert!(x.invert_to(&[Prec::Finite(5), Prec::Finite(5)]).is_err());
    }

    #[test]
    fn psi_on_monomials_follows_the_three_cases() {
        // q = 3 over Q_3: residues 0 and 2 survive, residue 1 dies.
        let ctx = ctx1(3, true);
        let cases = [
            (0i64, Some(0i64)),
            (1, None),
            (2, Some(0)),
            (3, Some(1)),
            (-1, Some(-1)),
            (-3, Some(-1)),
            (-2, None),
        ];
        for (n, img) in cases {
            let x = Series::monomial(&ctx, &[n], 1);
            let y = x.psi(0);
            match img {
                Some(m) => {
                    assert_eq!(y.terms.len(), 1, "psi(t^{n})");
                    assert_eq!(y.coeff(&[m]), 1, "psi(t^{n}) = t^{m}");
                }
                None => assert!(y.is_zero(), "psi(t^{n}) = 0"),
            }
        }
        // Away from Q_p the residue-0 case dies as well.
        let ctx = ctx1(3, false);
        let x = Series::monomial(&ctx, &[3], 1);
        assert!(x.psi(0).is_zero());
        let x = Series::monomial(&ctx, &[5], 1);
        assert_eq!(x.psi(0).coeff(&[1]), 1);
    }

    #[test]
    fn psi_is_left_inverse_of_phi_up_to_the_unit() {
        for qp in [true, false] {
            let ctx = ctx1(3, qp);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..20 {
                let f = random_series(&ctx, &mut rng, 5);
                // psi(t^{q-1} phi(f)) = f always; psi(phi(f)) = (q/pi) f.
                let shifted = f.phi(0).shift(&[ctx.q - 1]);
                assert_eq!(shifted.psi(0), f);
                let direct = f.phi(0).psi(0);
                if qp {
                    assert_eq!(direct, f);
                } else {
                    assert!(direct.is_zero());
                }
            }
        }
    }

    #[test]
    fn projection_formulas() {
        for qp in [true, false] {
            let ctx = ctx1(3, qp);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..25 {
                let f = random_series(&ctx, &mut rng, 4);
                let g = random_series(&ctx, &mut rng, 4);
                // psi(phi(f) g) = f psi(g)
                assert_eq!(f.phi(0).mul(&g).psi(0), f.mul(&g.psi(0)));
                // psi(f phi(g)) = psi(f) g
                assert_eq!(f.mul(&g.phi(0)).psi(0), f.psi(0).mul(&g));
            }
        }
    }

    #[test]
    fn cross_direction_operators_commute() {
        let k = FieldCtx::new(3, 1, None).unwrap();
        let ctx = SeriesCtx::new(k, 2, 3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let f = random_series(&ctx, &mut rng, 4);
            assert_eq!(f.phi(0).phi(1), f.phi(1).phi(0));
            assert_eq!(f.psi(0).psi(1), f.psi(1).psi(0));
            assert_eq!(f.phi(0).psi(1), f.psi(1).phi(0));
        }
    }

    #[test]
    fn phi_decomposition_round_trip() {
        for qp in [true, false] {
            let ctx = ctx1(3, qp);
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            for _ in 0..20 {
                let f = random_series(&ctx, &mut rng, 6);
                let parts = f.decompose_phi(0);
                assert_eq!(parts.len(), 3);
                let mut back = Series::zero(&ctx);
                for (i, p) in parts.iter().enumerate() {
                    back = back.add(&p.phi(0).shift(&[i as i64]));
                }
                assert_eq!(back, f);
                // Components are recovered by the twisted projections:
                // a_i = psi(t^{q-1-i} f).
                for (i, p) in parts.iter().enumerate() {
                    let proj = f.shift(&[ctx.q - 1 - i as i64]).psi(0);
                    if qp {
                        // In the Q_p flavor the projection mixes components:
                        // psi(t^{q-1-i} t^j phi(a_j)) is a_j for j = i but
                        // also t a_j for j = i - 1 mod q shifts; only the
                        // exact identity below is universal.
                        let _ = proj;
                    } else {
                        assert_eq!(&proj, p, "component {i}");
                    }
                }
            }
        }
    }

    #[test]
    fn gamma_substitution_composes() {
        let o = LocalCtx::new(3, 1, 1, 24).unwrap();
        let tp = 10usize;
        let g4 = GammaSeries::compute(&o, &o.from_int(4), tp).unwrap();
        let g7 = GammaSeries::compute(&o, &o.from_int(7), tp).unwrap();
        let g28 = GammaSeries::compute(&o, &o.from_int(28), tp).unwrap();
        let a = g4.reduction_mod_p().unwrap();
        let b = g7.reduction_mod_p().unwrap();
        let ab = g28.reduction_mod_p().unwrap();
        let ctx = ctx1(3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let f = random_series(&ctx, &mut rng, 3);
            let two_step = f.gamma(0, &a).unwrap().gamma(0, &b).unwrap();
            let one_step = f.gamma(0, &ab).unwrap();
            assert!(two_step.congruent(&one_step));
            // Independent route: compose the substitution series first.
            let comp = compose_mod_p(&ctx.field, &a, &b, tp);
            let via_comp = f.gamma(0, &comp).unwrap();
            assert!(two_step.congruent(&via_comp));
        }
    }

    #[test]
    fn gamma_commutes_with_psi() {
        let o = LocalCtx::new(3, 1, 1, 24).unwrap();
        let g = GammaSeries::compute(&o, &o.from_int(4), 12).unwrap();
        let codes = g.reduction_mod_p().unwrap();
        let ctx = ctx1(3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let f = random_series(&ctx, &mut rng, 3);
            let lhs = f.gamma(0, &codes).unwrap().psi(0);
            let rhs = f.psi(0).gamma(0, &codes).unwrap();
            assert!(lhs.congruent(&rhs), "gamma psi != psi gamma on {f:?}");
        }
    }

    #[test]
    fn gamma_commutation_with_phi_via_multiplication_series() {
        let o = LocalCtx::new(3, 1, 1, 24).unwrap();
        let g = GammaSeries::compute(&o, &o.from_int(4), 12).unwrap();
        let codes = g.reduction_mod_p().unwrap();
        let ctx = ctx1(3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let f = random_series(&ctx, &mut rng, 3);
            let lhs = f.phi(0).gamma(0, &codes).unwrap();
            let rhs = f.gamma(0, &codes).unwrap().phi(0);
            assert!(lhs.congruent(&rhs), "gamma phi != phi gamma on {f:?}");
        }
    }

    #[test]
    fn monomial_format_round_trip() {
        let k = FieldCtx::new(3, 1, None).unwrap();
        let ctx2 = SeriesCtx::new(k.clone(), 2, 3, true);
        for exps in [vec![0, 0], vec![1, 0], vec![-2, 3], vec![0, -1]] {
            let s = Series::format_monomial(&ctx2, &exps);
            assert_eq!(Series::parse_monomial(&ctx2, &s).unwrap(), exps, "{s}");
        }
        let ctx1v = SeriesCtx::new(k, 1, 3, true);
        for exps in [vec![0], vec![1], vec![-5], vec![7]] {
            let s = Series::format_monomial(&ctx1v, &exps);
            assert_eq!(Series::parse_monomial(&ctx1v, &s).unwrap(), exps, "{s}");
        }
    }

    #[test]
    fn matrix_inverse_round_trip() {
        let ctx = ctx1(3, true);
        let t = Series::var(&ctx, 0);
        let tinv = Series::monomial(&ctx, &[-1], 1);
        let one = Series::one(&ctx);
        let mut a = SMat::zero(&ctx, 2, 2);
        *a.at_mut(0, 0) = t.clone();
        *a.at_mut(0, 1) = one.clone();
        *a.at_mut(1, 1) = tinv;
        let inv = a.inverse_to(&[Prec::Finite(10)]).unwrap();
        assert!(a.mul(&inv).congruent(&SMat::identity(&ctx, 2)));
        assert!(inv.mul(&a).congruent(&SMat::identity(&ctx, 2)));
        // Singular matrix is rejected.
        let mut s = SMat::zero(&ctx, 2, 2);
        *s.at_mut(0, 0) = t.clone();
        *s.at_mut(1, 0) = t;
        assert!(s.inverse_to(&[Prec::Finite(5)]).is_err());
    }

    #[test]
    fn diagonal_restriction_merges_exponents() {
        let k = FieldCtx::new(3, 1, None).unwrap();
        let ctx2 = SeriesCtx::new(k.clone(), 2, 3, true);
        let ctx1v = SeriesCtx::new(k, 1, 3, true);
        // t1^2 t2^-1 + 2 t1 -> t + 2t.
        let s = Series::from_terms(&ctx2, [(vec![2, -1], 1), (vec![1, 0], 2)]);
        let d = s.diagonal(&ctx1v);
        assert_eq!(d.coeff(&[1]), 0); // 1 + 2 = 0 mod 3
        assert!(d.is_zero());
    }
}
