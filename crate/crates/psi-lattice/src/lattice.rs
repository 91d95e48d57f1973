//! Exact lattice arithmetic over R = k[[t]] inside V = k((t))^r, and the
//! psi fixed-point iterations on lattices of an etale module.
//!
//! A lattice is stored by its canonical basis: a lower-triangular matrix of
//! exact Laurent polynomials whose column j vanishes above row j, carries
//! t^{v_j} on the diagonal, and has every entry below the diagonal reduced
//! modulo t^{v_i} of its row. This form is unique, so lattice equality is
//! literal equality of bases.
//!
//! All computations happen in a finite window: a lattice L with
//! t^N Lambda <= L <= t^{-a} Lambda corresponds to a t-stable subspace of
//! the k-vector space t^{-a} Lambda / t^N Lambda, and sums, intersections,
//! comparisons and quotient invariants are plain linear algebra there. The
//! canonical basis is read off the reduced echelon form of that subspace.
//!
//! Generators with only finitely many certified coefficients are fine: if
//! the true span contains t^N Lambda and the generators are certified past
//! N, the span of their truncations plus t^N Lambda is the true lattice
//! exactly. Every iteration of the engine re-pins its intermediate lattices
//! to exact canonical form this way, so the working precision per step is a
//! constant of the window rather than decaying geometrically.

use crate::error::{Error, Result};
use crate::field::Field;
use crate::phigamma::PhiGammaModule;
use crate::series::{Prec, SCtx, SMat, Series};

/// A row space in reduced echelon form over k, with vectors of fixed width.
#[derive(Clone, Debug)]
pub struct RowSpace {
    pub field: Field,
    pub width: usize,
    /// Rows sorted by pivot position; each pivot entry is 1 and is the only
    /// nonzero entry in its position across rows.
    pub rows: Vec<Vec<u16>>,
    pub pivots: Vec<usize>,
}

impl RowSpace {
    pub fn new(field: Field, width: usize) -> RowSpace {
        RowSpace {
            field,
            width,
            rows: Vec::new(),
            pivots: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Normal form of a vector modulo the row space.
    pub fn reduce(&self, mut v: Vec<u16>) -> Vec<u16> {
        let k = &self.field;
        for (row, &p) in self.rows.iter().zip(&self.pivots) {
            let c = v[p];
            if c != 0 {
                for (vi, ri) in v.iter_mut().zip(row) {
                    *vi = k.sub(*vi, k.mul(c, *ri));
                }
            }
        }
        v
    }

    pub fn contains(&self, v: &[u16]) -> bool {
        self.reduce(v.to_vec()).iter().all(|&c| c == 0)
    }

    /// Inserts a vector; returns whether the dimension grew.
    pub fn insert(&mut self, v: Vec<u16>) -> bool {
        let k = self.field.clone();
        let v = self.reduce(v);
        let Some(lead) = v.iter().position(|&c| c != 0) else {
            return false;
        };
        let inv = k.inv(v[lead]).expect("nonzero lead");
        let normalized: Vec<u16> = v.iter().map(|&c| k.mul(c, inv)).collect();
        for row in self.rows.iter_mut() {
            let c = row[lead];
            if c != 0 {
                for (ri, ni) in row.iter_mut().zip(&normalized) {
                    *ri = k.sub(*ri, k.mul(c, *ni));
                }
            }
        }
        let at = self.pivots.partition_point(|&p| p < lead);
        self.rows.insert(at, normalized);
        self.pivots.insert(at, lead);
        true
    }
}

/// Exponent window [low, high) shared by `rank` coordinates; vectors are
/// flattened with coordinate-major, exponent-minor position order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub rank: usize,
    pub low: i64,
    pub high: i64,
}

impl Window {
    pub fn dim(&self) -> usize {
        self.rank * (self.high - self.low).max(0) as usize
    }
    pub fn span(&self) -> i64 {
        (self.high - self.low).max(0)
    }
    pub fn index(&self, coord: usize, exp: i64) -> usize {
        coord * self.span() as usize + (exp - self.low) as usize
    }
    pub fn position(&self, index: usize) -> (usize, i64) {
        let s = self.span() as usize;
        (index / s, self.low + (index % s) as i64)
    }

    /// Flattens a coordinate vector of series, checking that every
    /// coordinate is certified through the window top and supported no
    /// lower than the window bottom.
    pub fn pack(&self, v: &[Series]) -> Result<Vec<u16>> {
        assert_eq!(v.len(), self.rank);
        let mut out = vec![0u16; self.dim()];
        for (i, s) in v.iter().enumerate() {
            if !s.prec[0].at_least(self.high) {
                return Err(Error::PrecisionExhausted(format!(
                    "coordinate {i} certified to {:?} but the window needs t^{}",
                    s.prec[0], self.high
                )));
            }
            for (e, &c) in &s.terms {
                let exp = e[0];
                if exp >= self.high {
                    continue;
                }
                if exp < self.low {
                    return Err(Error::ParameterOutOfRange(format!(
                        "coordinate {i} has a term t^{exp} below the window bottom t^{}",
                        self.low
                    )));
                }
                out[self.index(i, exp)] = c;
            }
        }
        Ok(out)
    }

    pub fn unpack(&self, ctx: &SCtx, v: &[u16]) -> Vec<Series> {
        let mut out = vec![Series::zero(ctx); self.rank];
        for (idx, &c) in v.iter().enumerate() {
            if c != 0 {
                let (i, e) = self.position(idx);
                let k = &ctx.field;
                let cur = out[i].terms.get(&vec![e]).copied().unwrap_or(0);
                let s = k.add(cur, c);
                if s != 0 {
                    out[i].terms.insert(vec![e], s);
                } else {
                    out[i].terms.remove(&vec![e]);
                }
            }
        }
        out
    }
}

/// A full-rank R-lattice in k((t))^r, in canonical basis form.
#[derive(Clone)]
pub struct Lattice {
    pub ctx: SCtx,
    pub rank: usize,
    /// Canonical basis columns; cols[j][i] is the i-th coordinate of the
    /// j-th basis vector. All entries are exact.
    pub cols: Vec<Vec<Series>>,
    /// Diagonal exponents v_j.
    pub pivots: Vec<i64>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.rank == other.rank
            && self.pivots == other.pivots
            && self
                .cols
                .iter()
                .zip(&other.cols)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.terms == y.terms))
    }
}
impl Eq for Lattice {}

impl std::fmt::Debug for Lattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Lattice rank {} pivots {:?} [", self.rank, self.pivots)?;
        for c in &self.cols {
            let parts: Vec<String> = c.iter().map(|s| format!("{s:?}")).collect();
            writeln!(f, "  ({})", parts.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Lattice {
    /// The standard lattice Lambda = R^r.
    pub fn standard(ctx: &SCtx, rank: usize) -> Lattice {
        let cols = (0..rank)
            .map(|j| {
                (0..rank)
                    .map(|i| {
                        if i == j {
                            Series::one(ctx)
                        } else {
                            Series::zero(ctx)
                        }
                    })
                    .collect()
            })
            .collect();
        Lattice {
            ctx: ctx.clone(),
            rank,
            cols,
            pivots: vec![0; rank],
        }
    }

    /// t^m L.
    pub fn scale_t(&self, m: i64) -> Lattice {
        let shift = [m];
        Lattice {
            ctx: self.ctx.clone(),
            rank: self.rank,
            cols: self
                .cols
                .iter()
                .map(|c| c.iter().map(|s| s.shift(&shift)).collect())
                .collect(),
            pivots: self.pivots.iter().map(|v| v + m).collect(),
        }
    }

    pub fn basis_matrix(&self) -> SMat {
        SMat::from_fn(self.rank, self.rank, |i, j| self.cols[j][i].clone())
    }

    /// Exact inverse of the canonical basis: the determinant of a canonical
    /// basis is the monomial t^{sum v_j}, so adj / det stays polynomial.
    pub fn inverse_basis(&self) -> SMat {
        let total: i64 = self.pivots.iter().sum();
        self.basis_matrix().adjugate().map(|s| s.shift(&[-total]))
    }

    /// Exponent N with t^N Lambda <= L, from the canonical basis.
    pub fn n_bound(&self) -> i64 {
        let total: i64 = self.pivots.iter().sum();
        let inv = self.inverse_basis();
        let min_low = inv
            .entries
            .iter()
            .filter_map(|s| s.low(0))
            .min()
            .unwrap_or(0);
        let _ = total;
        (-min_low).max(0).max(*self.pivots.iter().max().unwrap_or(&0))
    }

    /// Exponent a with L <= t^{-a} Lambda.
    pub fn a_bound(&self) -> i64 {
        let min_low = self
            .cols
            .iter()
            .flatten()
            .filter_map(|s| s.low(0))
            .min()
            .unwrap_or(0);
        (-min_low).max(0)
    }

    /// Builds the lattice generated by the given coordinate vectors plus
    /// the implied tail t^N Lambda certified by an invertible minor.
    pub fn from_generators(ctx: &SCtx, gens: &[Vec<Series>]) -> Result<Lattice> {
        assert_eq!(ctx.nvars, 1, "the lattice engine is one-variable");
        let rank = gens.first().map(|g| g.len()).unwrap_or(0);
        if rank == 0 || gens.iter().any(|g| g.len() != rank) {
            return Err(Error::ParameterOutOfRange(
                "generators must be nonempty vectors of equal length".into(),
            ));
        }
        let n = Self::tail_bound(ctx, gens, rank)?;
        // Certification: truncating every generator at t^n changes it by an
        // element of t^n Lambda <= L, so the span of truncations plus
        // t^n Lambda is exactly L. One extra certified digit is required so
        // the minor valuations used for n were themselves stable.
        for (gi, g) in gens.iter().enumerate() {
            for (ci, s) in g.iter().enumerate() {
                if !s.prec[0].at_least(n + 1) {
                    return Err(Error::PrecisionExhausted(format!(
                        "generator {gi} coordinate {ci} certified to {:?}, need t^{}",
                        s.prec[0],
                        n + 1
                    )));
                }
            }
        }
        let a = gens
            .iter()
            .flatten()
            .filter_map(|s| s.low(0))
            .min()
            .unwrap_or(0)
            .min(0);
        let win = Window {
            rank,
            low: a,
            high: n.max(a),
        };
        let mut space = RowSpace::new(ctx.field.clone(), win.dim());
        for g in gens {
            for j in 0..win.span() {
                let shifted: Vec<Series> = g
                    .iter()
                    .map(|s| s.truncate(&[Prec::Finite(win.high)]).shift(&[j]))
                    .collect();
                // Terms pushed past the top of the window lie in
                // t^N Lambda and are dropped by pack's truncation.
                let mut packed = vec![0u16; win.dim()];
                for (i, s) in shifted.iter().enumerate() {
                    for (e, &c) in &s.terms {
                        if e[0] < win.high {
                            packed[win.index(i, e[0])] = c;
                        }
                    }
                }
                space.insert(packed);
            }
        }
        Ok(Self::from_window_space(ctx, &win, &space))
    }

    /// Smallest valid tail exponent over all invertible r x r minors of the
    /// generator matrix: N = max(0, v(det C) - min v(adj C)) certifies
    /// t^N Lambda <= C R^r.
    fn tail_bound(ctx: &SCtx, gens: &[Vec<Series>], rank: usize) -> Result<i64> {
        let _ = ctx;
        let g = gens.len();
        if g < rank {
            return Err(Error::NotFullRank);
        }
        let mut best: Option<i64> = None;
        let mut saw_uncertain = false;
        let mut subset: Vec<usize> = (0..rank).collect();
        loop {
            let m = SMat::from_fn(rank, rank, |i, j| gens[subset[j]][i].clone());
            let det = m.det();
            if !det.is_zero() {
                let v = det.low(0).unwrap();
                if det.prec[0].at_least(v + 1) {
                    let adj = m.adjugate();
                    let mut adj_ok = true;
                    let mut adj_min = i64::MAX;
                    for s in &adj.entries {
                        if let Some(l) = s.low(0) {
                            if !s.prec[0].at_least(l + 1) {
                                adj_ok = false;
                            }
                            adj_min = adj_min.min(l);
                        }
                    }
                    if adj_min == i64::MAX {
                        adj_min = 0;
                    }
                    if adj_ok {
                        let n = (v - adj_min).max(0);
                        best = Some(best.map_or(n, |b: i64| b.min(n)));
                    } else {
                        saw_uncertain = true;
                    }
                } else {
                    saw_uncertain = true;
                }
            } else if matches!(det.prec[0], Prec::Finite(_)) {
                saw_uncertain = true;
            }
            // Next subset in lexicographic order.
            let mut i = rank;
            loop {
                if i == 0 {
                    return match best {
                        Some(n) => Ok(n),
                        None if saw_uncertain => Err(Error::PrecisionExhausted(
                            "no generator minor has a certified nonzero determinant".into(),
                        )),
                        None => Err(Error::NotFullRank),
                    };
                }
                i -= 1;
                if subset[i] < g - (rank - i) {
                    subset[i] += 1;
                    for j in i + 1..rank {
                        subset[j] = subset[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Reads the canonical basis off a t-stable row space in a window whose
    /// top satisfies t^high Lambda <= L.
    fn from_window_space(ctx: &SCtx, win: &Window, space: &RowSpace) -> Lattice {
        let rank = win.rank;
        let mut pivots = vec![win.high; rank];
        let mut rows: Vec<Option<&Vec<u16>>> = vec![None; rank];
        for (row, &p) in space.rows.iter().zip(&space.pivots) {
            let (i, e) = win.position(p);
            if e < pivots[i] {
                pivots[i] = e;
                rows[i] = Some(row);
            }
        }
        let mut cols = Vec::with_capacity(rank);
        for j in 0..rank {
            match rows[j] {
                None => {
                    let mut col = vec![Series::zero(ctx); rank];
                    col[j] = Series::monomial(ctx, &[win.high], 1);
                    cols.push(col);
                }
                Some(row) => cols.push(win.unpack(ctx, row)),
            }
        }
        Lattice {
            ctx: ctx.clone(),
            rank,
            cols,
            pivots,
        }
    }

    /// The t-stable row space of this lattice in the given window; requires
    /// t^{win.high} Lambda <= L and L <= t^{win.low} Lambda.
    fn window_space(&self, win: &Window) -> RowSpace {
        let mut space = RowSpace::new(self.ctx.field.clone(), win.dim());
        for c in &self.cols {
            for j in 0..win.span() {
                let mut packed = vec![0u16; win.dim()];
                for (i, s) in c.iter().enumerate() {
                    for (e, &cc) in &s.terms {
                        let exp = e[0] + j;
                        if exp < win.high {
                            packed[win.index(i, exp)] = cc;
                        }
                    }
                }
                space.insert(packed);
            }
        }
        space
    }

    pub fn sum(&self, other: &Lattice) -> Result<Lattice> {
        let gens: Vec<Vec<Series>> = self
            .cols
            .iter()
            .chain(other.cols.iter())
            .cloned()
            .collect();
        Lattice::from_generators(&self.ctx, &gens)
    }

    pub fn intersect(&self, other: &Lattice) -> Result<Lattice> {
        let low = (-self.a_bound()).min(-other.a_bound());
        let high = self.n_bound().max(other.n_bound()).max(low);
        let win = Window {
            rank: self.rank,
            low,
            high,
        };
        let a = self.window_space(&win);
        let b = other.window_space(&win);
        // Zassenhaus: echelonize rows [v | v] for v in A and [w | 0] for w
        // in B; rows whose left half vanishes have right halves spanning
        // the intersection.
        let d = win.dim();
        let mut big = RowSpace::new(self.ctx.field.clone(), 2 * d);
        for row in &a.rows {
            let mut v = vec![0u16; 2 * d];
            v[..d].copy_from_slice(row);
            v[d..].copy_from_slice(row);
            big.insert(v);
        }
        for row in &b.rows {
            let mut v = vec![0u16; 2 * d];
            v[..d].copy_from_slice(row);
            big.insert(v);
        }
        let mut inter = RowSpace::new(self.ctx.field.clone(), d);
        for (row, &p) in big.rows.iter().zip(&big.pivots) {
            if p >= d {
                inter.insert(row[d..].to_vec());
            }
        }
        Ok(Self::from_window_space(&self.ctx, &win, &inter))
    }

    /// Columns of other expressed in this basis; integral iff other <= self.
    fn transition(&self, other: &Lattice) -> SMat {
        self.inverse_basis().mul(&other.basis_matrix())
    }

    pub fn contains(&self, other: &Lattice) -> bool {
        let x = self.transition(other);
        x.entries.iter().all(|s| s.low(0).map_or(true, |l| l >= 0))
    }

    /// k-dimension of self / other for other <= self.
    pub fn quotient_dim(&self, other: &Lattice) -> Result<i64> {
        let x = self.transition(other);
        if !x.entries.iter().all(|s| s.low(0).map_or(true, |l| l >= 0)) {
            return Err(Error::NotComparable(
                "quotient requested for a non-sublattice".into(),
            ));
        }
        let det = x.det();
        Ok(det.low(0).expect("transition between full lattices"))
    }

    /// Elementary divisor exponents a_1 <= ... <= a_r of self / other:
    /// a_k = d_k - d_{k-1} with d_k the minimal valuation of a k x k minor
    /// of the transition matrix.
    pub fn quotient_divisors(&self, other: &Lattice) -> Result<Vec<i64>> {
        let x = self.transition(other);
        if !x.entries.iter().all(|s| s.low(0).map_or(true, |l| l >= 0)) {
            return Err(Error::NotComparable(
                "quotient requested for a non-sublattice".into(),
            ));
        }
        let r = self.rank;
        let mut d = vec![0i64; r + 1];
        for k in 1..=r {
            let mut min_v: Option<i64> = None;
            for rows in subsets(r, k) {
                for cols in subsets(r, k) {
                    let m = SMat::from_fn(k, k, |i, j| x.at(rows[i], cols[j]).clone());
                    let det = m.det();
                    if let Some(l) = det.low(0) {
                        min_v = Some(min_v.map_or(l, |b: i64| b.min(l)));
                    }
                }
            }
            d[k] = min_v.ok_or(Error::NotFullRank)?;
        }
        Ok((1..=r).map(|k| d[k] - d[k - 1]).collect())
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - (k - i) {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Driver for the psi fixed-point iterations on lattices of one etale
/// module over k((t)).
pub struct Engine<'a> {
    pub module: &'a PhiGammaModule,
    /// Sandwich exponent: every lattice in the iterations lies between
    /// t^{n+1} Lambda and t^{-n-1} Lambda.
    pub n: i64,
    /// Iteration cap before NonStabilizing is raised.
    pub max_iter: usize,
    /// Whether dsharp reruns its descent from a shifted start and compares.
    pub cross_check: bool,
    a_inv: SMat,
    work_prec: i64,
}

impl<'a> Engine<'a> {
    pub fn new(module: &'a PhiGammaModule) -> Result<Engine<'a>> {
        Self::with_boost(module, 1)
    }

    /// `boost` scales the working precision; retried by the convenience
    /// wrappers when a precision check trips.
    pub fn with_boost(module: &'a PhiGammaModule, boost: i64) -> Result<Engine<'a>> {
        if module.nvars() != 1 {
            return Err(Error::ParameterOutOfRange(
                "the lattice engine works with one-variable modules; collapse first".into(),
            ));
        }
        module.check_etale()?;
        let q = module.ctx.q;
        let r = module.rank as i64;
        let a = &module.phi[0];
        let min_a = a.entries.iter().filter_map(|s| s.low(0)).min().unwrap_or(0);
        let det = a.det();
        let vdet = det.low(0).expect("etale determinant");
        let min_adj = a
            .adjugate()
            .entries
            .iter()
            .filter_map(|s| s.low(0))
            .min()
            .unwrap_or(0);
        let min_a_inv = min_adj - vdet;
        let ceil_div = |num: i64, den: i64| -> i64 { (num + den - 1).div_euclid(den) };
        let n = 1
            .max(ceil_div(1 - min_a, q - 1))
            .max(ceil_div(1 - min_a_inv, q - 1));
        let work_prec = boost * (q + 1) * (2 * r + 2) * (n + 3);
        let a_inv = a.inverse_to(&[Prec::Finite(work_prec)])?;
        let max_iter = (2 * r * (n + 2) + 8) as usize;
        Ok(Engine {
            module,
            n,
            max_iter,
            cross_check: true,
            a_inv,
            work_prec,
        })
    }

    /// The sandwich pair E_0 = t^n Lambda <= E_1 = t^{-n} Lambda.
    pub fn standard_pair(&self) -> (Lattice, Lattice) {
        let l = Lattice::standard(&self.module.ctx, self.module.rank);
        (l.scale_t(self.n), l.scale_t(-self.n))
    }

    /// The lattice generated by psi(L): since R = sum_i t^i phi(R), the
    /// R-span of psi(L) is generated by psi(t^i g) for basis vectors g and
    /// 0 <= i < q.
    pub fn psi_image(&self, l: &Lattice) -> Result<Lattice> {
        let q = self.module.ctx.q;
        let mut gens = Vec::with_capacity(l.cols.len() * q as usize);
        for g in &l.cols {
            for i in 0..q {
                let shifted: Vec<Series> = g.iter().map(|s| s.shift(&[i])).collect();
                gens.push(self.module.apply_psi(0, &shifted, &self.a_inv));
            }
        }
        Lattice::from_generators(&self.module.ctx, &gens)
    }

    fn ascend(&self, start: &Lattice, what: &str) -> Result<Lattice> {
        let mut cur = start.clone();
        for _ in 0..self.max_iter {
            let next = self.psi_image(&cur)?;
            if !next.contains(&cur) {
                return Err(Error::Inconclusive(format!(
                    "{what}: iteration is not increasing; the window is outside the \
                     regime where the ascent is monotone"
                )));
            }
            if next == cur {
                return Ok(cur);
            }
            cur = next;
        }
        Err(Error::NonStabilizing {
            what: what.into(),
            cap: self.max_iter,
        })
    }

    fn descend(&self, start: &Lattice, what: &str) -> Result<Lattice> {
        let mut cur = start.clone();
        for _ in 0..self.max_iter {
            let next = self.psi_image(&cur)?;
            if !cur.contains(&next) {
                return Err(Error::Inconclusive(format!(
                    "{what}: iteration is not decreasing; the window is outside the \
                     regime where the descent is monotone"
                )));
            }
            if next == cur {
                return Ok(cur);
            }
            cur = next;
        }
        Err(Error::NonStabilizing {
            what: what.into(),
            cap: self.max_iter,
        })
    }

    /// The largest lattice on which psi is surjective: ascend from t^n
    /// Lambda to the stable lattice F, then descend from t^{-1} F.
    pub fn dsharp(&self) -> Result<Lattice> {
        let (e0, _) = self.standard_pair();
        let sharp = self.dsharp_from(&e0)?;
        if self.cross_check {
            let sharp2 = self.dsharp_from(&e0.scale_t(1))?;
            if sharp != sharp2 {
                return Err(Error::Inconclusive(
                    "dsharp differs between two start lattices; the iteration \
                     did not converge to a canonical answer"
                        .into(),
                ));
            }
        }
        // The result must be exactly psi-surjective.
        let back = self.psi_image(&sharp)?;
        if back != sharp {
            return Err(Error::Inconclusive(
                "dsharp is not a fixed point of the psi image".into(),
            ));
        }
        Ok(sharp)
    }

    fn dsharp_from(&self, start: &Lattice) -> Result<Lattice> {
        let stable = self.ascend(start, "dsharp ascent")?;
        self.descend(&stable.scale_t(-1), "dsharp descent")
    }

    /// The smallest lattice of the module that is carried into itself by
    /// psi: the ascent L <- L + psi(L) from t * dsharp stabilizes at the
    /// intersection of all lattices L with psi(L) <= L, which is the
    /// canonical sublattice the pair (dsharp, dnatural) refers to.
    /// Returns (dnatural, dsharp).
    pub fn dnatural(&self) -> Result<(Lattice, Lattice)> {
        let sharp = self.dsharp()?;
        let mut cur = sharp.scale_t(1);
        for _ in 0..self.max_iter {
            let img = self.psi_image(&cur)?;
            let next = cur.sum(&img)?;
            if next == cur {
                // Post-conditions: psi-stable and sandwiched.
                if !sharp.contains(&cur) || !cur.contains(&sharp.scale_t(1)) {
                    return Err(Error::Inconclusive(
                        "dnatural escaped the sandwich t dsharp <= dnatural <= dsharp"
                            .into(),
                    ));
                }
                return Ok((cur, sharp));
            }
            cur = next;
        }
        Err(Error::NonStabilizing {
            what: "dnatural ascent".into(),
            cap: self.max_iter,
        })
    }

    /// Number of psi-steps needed to carry x into the psi-stable lattice
    /// `target`. Exact: the induced map on the finite quotient
    /// t^{-B} Lambda / target is iterated as k-linear algebra.
    pub fn attractor_steps(&self, x: &[Series], target: &Lattice) -> Result<usize> {
        let ctx = &self.module.ctx;
        for s in x {
            if s.prec.iter().any(|p| *p != Prec::Exact) {
                return Err(Error::ParameterOutOfRange(
                    "attractor iteration needs an exact starting vector".into(),
                ));
            }
        }
        let img = self.psi_image(target)?;
        if !target.contains(&img) {
            return Err(Error::NotComparable(
                "attractor target is not psi-stable".into(),
            ));
        }
        let x_low = x.iter().filter_map(|s| s.low(0)).min().unwrap_or(0);
        let b = (self.n + 1).max(-x_low).max(target.a_bound());
        let n_t = target.n_bound();
        let q = ctx.q;
        let min_ainv = self
            .a_inv
            .entries
            .iter()
            .filter_map(|s| s.low(0))
            .min()
            .unwrap_or(0);
        // Top of the window: psi maps t^high Lambda into the target.
        let high = q * (n_t + 1 + (-min_ainv).max(0));
        let win = Window {
            rank: self.module.rank,
            low: -b,
            high: high.max(n_t).max(-b),
        };
        if self.work_prec < win.high + 1 {
            return Err(Error::PrecisionExhausted(
                "attractor window exceeds the working precision; boost the engine".into(),
            ));
        }
        let target_space = target.window_space(&win);
        let mut cur = win.pack(&x.iter().map(|s| s.truncate(&[Prec::Finite(win.high)])).collect::<Vec<_>>())?;
        let cap = win.dim() + 1;
        for step in 0..cap {
            if target_space.contains(&cur) {
                return Ok(step);
            }
            let lifted = win.unpack(ctx, &cur);
            let image = self.module.apply_psi(0, &lifted, &self.a_inv);
            let truncated: Vec<Series> = image
                .iter()
                .map(|s| s.truncate(&[Prec::Finite(win.high)]))
                .collect();
            for s in &truncated {
                if !s.prec[0].at_least(win.high) {
                    return Err(Error::PrecisionExhausted(
                        "psi step not certified through the attractor window".into(),
                    ));
                }
                if let Some(l) = s.low(0) {
                    if l < win.low {
                        return Err(Error::Inconclusive(
                            "attractor iterate escaped the window".into(),
                        ));
                    }
                }
            }
            cur = win.pack(&truncated)?;
        }
        Err(Error::NotReached { cap })
    }
}

/// Computes dsharp with automatic precision retries.
pub fn compute_dsharp(module: &PhiGammaModule) -> Result<Lattice> {
    retry(module, |e| e.dsharp())
}

/// Computes (dnatural, dsharp) with automatic precision retries.
pub fn compute_dnatural(module: &PhiGammaModule) -> Result<(Lattice, Lattice)> {
    retry(module, |e| e.dnatural())
}

fn retry<T>(
    module: &PhiGammaModule,
    f: impl Fn(&Engine<'_>) -> Result<T>,
) -> Result<T> {
    let mut boost = 1;
    loop {
        let engine = Engine::with_boost(module, boost)?;
        match f(&engine) {
            Err(Error::PrecisionExhausted(msg)) if boost < 8 => {
                let _ = msg;
                boost *= 2;
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldCtx;
    use crate::series::SeriesCtx;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx1(p: u64, qp: bool) -> SCtx {
        let k = FieldCtx::new(p, 1, None).unwrap();
        SeriesCtx::new(k, 1, p as i64, qp)
    }

    fn col(ctx: &SCtx, entries: &[&[(i64, i64)]]) -> Vec<Series> {
        entries
            .iter()
            .map(|terms| {
                Series::from_terms(
                    ctx,
                    terms
                        .iter()
                        .map(|&(e, c)| (vec![e], ctx.field.from_int(c))),
                )
            })
            .collect()
    }

    #[test]
    fn canonical_form_of_simple_generators() {
        let ctx = ctx1(3, true);
        // g1 = (1, t^-2), g2 = (0, 1): already canonical.
        let gens = vec![
            col(&ctx, &[&[(0, 1)], &[(-2, 1)]]),
            col(&ctx, &[&[], &[(0, 1)]]),
        ];
        let l = Lattice::from_generators(&ctx, &gens).unwrap();
        assert_eq!(l.pivots, vec![0, 0]);
        assert_eq!(l.cols[0][0].coeff(&[0]), 1);
        assert_eq!(l.cols[0][1].coeff(&[-2]), 1);
        assert!(l.cols[1][0].is_zero());
        assert_eq!(l.cols[1][1].coeff(&[0]), 1);
    }

    #[test]
    fn canonical_form_is_generator_independent() {
        let ctx = ctx1(3, true);
        let gens1 = vec![
            col(&ctx, &[&[(0, 1)], &[(-2, 1)]]),
            col(&ctx, &[&[], &[(0, 1)]]),
        ];
        // Shuffled, redundant, and mixed generators of the same lattice.
        let gens2 = vec![
            col(&ctx, &[&[], &[(0, 2)]]),
            col(&ctx, &[&[(0, 2)], &[(-2, 2), (0, 1)]]),
            col(&ctx, &[&[(1, 1)], &[(-1, 1), (3, 2)]]),
        ];
        let l1 = Lattice::from_generators(&ctx, &gens1).unwrap();
        let l2 = Lattice::from_generators(&ctx, &gens2).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn standard_lattice_round_trip() {
        let ctx = ctx1(2, true);
        let l = Lattice::standard(&ctx, 3);
        let re = Lattice::from_generators(&ctx, &l.cols).unwrap();
        assert_eq!(l, re);
        assert_eq!(l.n_bound(), 0);
        assert_eq!(l.a_bound(), 0);
    }

    #[test]
    fn rank_deficient_generators_are_rejected() {
        let ctx = ctx1(3, true);
        let gens = vec![
            col(&ctx, &[&[(0, 1)], &[(0, 1)]]),
            col(&ctx, &[&[(1, 1)], &[(1, 1)]]),
        ];
        assert!(matches!(
            Lattice::from_generators(&ctx, &gens),
            Err(Error::NotFullRank)
        ));
    }

    #[test]
    fn insufficient_precision_is_rejected() {
        let ctx = ctx1(3, true);
        // Pivot structure forces N = 2; generators certified only to t^2
        // cannot be pinned, t^3 can.
        let mut g1 = col(&ctx, &[&[(2, 1)], &[]]);
        let g2 = col(&ctx, &[&[], &[(2, 1)]]);
        g1[0].prec = vec![Prec::Finite(2)];
        assert!(matches!(
            Lattice::from_generators(&ctx, &[g1.clone(), g2.clone()]),
            Err(Error::PrecisionExhausted(_))
        ));
        g1[0].prec = vec![Prec::Finite(3)];
        let l = Lattice::from_generators(&ctx, &[g1, g2]).unwrap();
        assert_eq!(l.pivots, vec![2, 2]);
    }

    #[test]
    fn truncation_past_the_tail_bound_does_not_change_the_lattice() {
        let ctx = ctx1(3, true);
        let gens = vec![
            col(&ctx, &[&[(1, 1), (5, 2)], &[(0, 1)]]),
            col(&ctx, &[&[(2, 1)], &[(3, 1), (7, 1)]]),
        ];
        let exact = Lattice::from_generators(&ctx, &gens).unwrap();
        let truncated: Vec<Vec<Series>> = gens
            .iter()
            .map(|g| {
                g.iter()
                    .map(|s| s.truncate(&[Prec::Finite(exact.n_bound() + 1)]))
                    .collect()
            })
            .collect();
        let pinned = Lattice::from_generators(&ctx, &truncated).unwrap();
        assert_eq!(exact, pinned);
    }

    #[test]
    fn quotient_divisors_of_hand_built_pair() {
        let ctx = ctx1(3, true);
        let top = Lattice::standard(&ctx, 2);
        // M spanned by t^2 e1 and t e1 + t^3 e2: divisors t, t^4.
        let gens = vec![
            col(&ctx, &[&[(2, 1)], &[]]),
            col(&ctx, &[&[(1, 1)], &[(3, 1)]]),
        ];
        let m = Lattice::from_generators(&ctx, &gens).unwrap();
        assert!(top.contains(&m));
        assert_eq!(top.quotient_dim(&m).unwrap(), 5);
        assert_eq!(top.quotient_divisors(&m).unwrap(), vec![1, 4]);
        assert!(matches!(
            m.quotient_dim(&top),
            Err(Error::NotComparable(_))
        ));
    }

    fn random_lattice(ctx: &SCtx, rng: &mut ChaCha8Rng, rank: usize) -> Lattice {
        loop {
            let gens: Vec<Vec<Series>> = (0..rank + 1)
                .map(|_| {
                    (0..rank)
                        .map(|_| {
                            Series::from_terms(
                                ctx,
                                (0..3).map(|_| {
                                    (
                                        vec![rng.gen_range(-3..=3i64)],
                                        rng.gen_range(0..ctx.field.q) as u16,
                                    )
                                }),
                            )
                        })
                        .collect()
                })
                .collect();
            if let Ok(l) = Lattice::from_generators(ctx, &gens) {
                return l;
            }
        }
    }

    #[test]
    fn modular_law_of_sums_and_intersections() {
        let ctx = ctx1(3, true);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..25 {
            let l = random_lattice(&ctx, &mut rng, 2);
            let m = random_lattice(&ctx, &mut rng, 2);
            let s = l.sum(&m).unwrap();
            let i = l.intersect(&m).unwrap();
            assert!(s.contains(&l) && s.contains(&m));
            assert!(l.contains(&i) && m.contains(&i));
            // Second isomorphism theorem on dimensions:
            // dim(L / L cap M) = dim((L + M) / M).
            assert_eq!(
                l.quotient_dim(&i).unwrap(),
                s.quotient_dim(&m).unwrap()
            );
            // Idempotence and absorption.
            assert_eq!(l.sum(&l).unwrap(), l);
            assert_eq!(l.intersect(&l).unwrap(), l);
            assert_eq!(l.sum(&i).unwrap(), l);
            assert_eq!(l.intersect(&s).unwrap(), l);
        }
    }

    #[test]
    fn trivial_rank_one_module_dynamics() {
        // For the unit object, psi acts by the series psi directly: the
        // descending loop pins t^{-1} R and the ascent pins R. Both the
        // Q_p and the non-Q_p flavor give the same pair by direct monomial
        // bookkeeping.
        for p in [2u64, 3] {
            for qp in [true, false] {
                let ctx = ctx1(p, qp);
                let a = SMat::identity(&ctx, 1);
                let m = PhiGammaModule::new(ctx.clone(), p, 1, 1, vec![a], vec![None])
                    .unwrap();
                let (nat, sharp) = compute_dnatural(&m).unwrap();
                let r = Lattice::standard(&ctx, 1);
                assert_eq!(sharp, r.scale_t(-1), "p={p} qp={qp}");
                assert_eq!(nat, r, "p={p} qp={qp}");
                assert_eq!(sharp.quotient_dim(&nat).unwrap(), 1);
            }
        }
    }

    #[test]
    fn rank_one_twist_dynamics() {
        // phi(e) = t^{q-1} e over q = 3: both flavors give
        // dsharp = t^{-2} R, dnatural = t^{-1} R (checked by hand from the
        // monomial action of psi on powers of t).
        for qp in [true, false] {
            let ctx = ctx1(3, qp);
            let mut a = SMat::zero(&ctx, 1, 1);
            *a.at_mut(0, 0) = Series::monomial(&ctx, &[2], 1);
            let m = PhiGammaModule::new(ctx.clone(), 3, 1, 1, vec![a], vec![None]).unwrap();
            let (nat, sharp) = compute_dnatural(&m).unwrap();
            let r = Lattice::standard(&ctx, 1);
            assert_eq!(sharp, r.scale_t(-2), "qp={qp}");
            assert_eq!(nat, r.scale_t(-1), "qp={qp}");
            assert_eq!(sharp.quotient_dim(&nat).unwrap(), 1);
        }
    }

    #[test]
    fn psi_image_respects_the_twisted_scaling() {
        // psi(t^q L) = t psi(L) because psi(phi(t) x) = t psi(x).
        let ctx = ctx1(3, true);
        let t = Series::var(&ctx, 0);
        let mut a = SMat::zero(&ctx, 2, 2);
        *a.at_mut(0, 1) = Series::one(&ctx);
        *a.at_mut(1, 0) = t.clone();
        *a.at_mut(1, 1) = t;
        let m = PhiGammaModule::new(ctx.clone(), 3, 1, 1, vec![a], vec![None]).unwrap();
        let engine = Engine::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..10 {
            let l = random_lattice(&ctx, &mut rng, 2);
            let lhs = engine.psi_image(&l.scale_t(3)).unwrap();
            let rhs = engine.psi_image(&l).unwrap().scale_t(1);
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn attractor_reaches_the_stable_lattice() {
        let ctx = ctx1(3, true);
        let a = SMat::identity(&ctx, 1);
        let m = PhiGammaModule::new(ctx.clone(), 3, 1, 1, vec![a], vec![None]).unwrap();
        let engine = Engine::new(&m).unwrap();
        let (nat, sharp) = engine.dnatural().unwrap();
        let _ = nat;
        // x = t^{-4} e: psi^k multiplies the exponent by ~1/q until it
        // enters t^{-1} R.
        let x = vec![Series::monomial(&ctx, &[-4], 1)];
        let steps = engine.attractor_steps(&x, &sharp).unwrap();
        assert!(steps >= 1 && steps <= 3, "steps = {steps}");
        // A vector already inside needs zero steps.
        let y = vec![Series::monomial(&ctx, &[-1], 1)];
        assert_eq!(engine.attractor_steps(&y, &sharp).unwrap(), 0);
        // A non-psi-stable target is rejected: psi(t^5 R) contains
        // psi(t^6) = t^2, which is outside t^5 R.
        let bad = Lattice::standard(&ctx, 1).scale_t(5);
        assert!(matches!(
            engine.attractor_steps(&x, &bad),
            Err(Error::NotComparable(_))
        ));
    }
}
