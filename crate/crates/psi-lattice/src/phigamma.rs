//! Finitely generated modules over k((t_1, ..., t_n)) carrying commuting
//! semilinear operators phi_d and a Gamma-action, in a fixed basis.
//!
//! Conventions, for a module of rank r with basis e_1, ..., e_r:
//!
//! * the phi-matrix A_d has as its j-th column the coordinates of
//!   phi_d(e_j), so the coordinates of phi_d(x) are A_d * phi_d(coords);
//! * the Gamma-matrix G_d likewise stores gamma_d(e_j) columnwise, so
//!   gamma_d(x) has coordinates G_d * gamma_d(coords);
//! * psi_d(x) has coordinates psi_d(A_d^{-1} * coords), applied entrywise —
//!   this is the unique left inverse of phi_d compatible with the
//!   series-level psi.
//!
//! The coefficient action of phi is k-linear: the Frobenius twist lives
//! entirely in the variables. Etale means every A_d is invertible over the
//! Laurent series field, which the validator checks via a dominant-monomial
//! determinant.

use crate::error::{Error, Result};
use crate::series::{Prec, SCtx, SMat, Series};

/// The Gamma-action in one direction: a topological generator gamma, its
/// substitution series modulo p, the series of its inverse, and its matrix.
#[derive(Clone, Debug)]
pub struct GammaData {
    /// Coefficients of [gamma](t_d) mod p; index n-1 holds degree n.
    pub series: Vec<u16>,
    /// Coefficients of [gamma^{-1}](t_d) mod p.
    pub inv_series: Vec<u16>,
    /// Matrix of gamma on the basis.
    pub mat: SMat,
}

/// An etale module with phi in every direction and an optional Gamma-action.
#[derive(Clone, Debug)]
pub struct PhiGammaModule {
    pub ctx: SCtx,
    /// Parameters (p, e, f) of the base local field; q = p^f.
    pub p: u64,
    pub e: usize,
    pub f: usize,
    pub rank: usize,
    /// One phi-matrix per direction.
    pub phi: Vec<SMat>,
    /// Per-direction Gamma-data; None when the example carries no
    /// Gamma-action.
    pub gamma: Vec<Option<GammaData>>,
}

impl PhiGammaModule {
    pub fn new(
        ctx: SCtx,
        p: u64,
        e: usize,
        f: usize,
        phi: Vec<SMat>,
        gamma: Vec<Option<GammaData>>,
    ) -> Result<PhiGammaModule> {
        if phi.len() != ctx.nvars || gamma.len() != ctx.nvars {
            return Err(Error::ParameterOutOfRange(format!(
                "expected {} operator entries, got {} phi and {} gamma",
                ctx.nvars,
                phi.len(),
                gamma.len()
            )));
        }
        let rank = phi.first().map(|m| m.rows).unwrap_or(0);
        for (d, m) in phi.iter().enumerate() {
            if m.rows != rank || m.cols != rank {
                return Err(Error::ParameterOutOfRange(format!(
                    "phi matrix in direction {d} is not {rank}x{rank}"
                )));
            }
        }
        for (d, g) in gamma.iter().enumerate() {
            if let Some(g) = g {
                if g.mat.rows != rank || g.mat.cols != rank {
                    return Err(Error::ParameterOutOfRange(format!(
                        "gamma matrix in direction {d} is not {rank}x{rank}"
                    )));
                }
            }
        }
        Ok(PhiGammaModule {
            ctx,
            p,
            e,
            f,
            rank,
            phi,
            gamma,
        })
    }

    pub fn nvars(&self) -> usize {
        self.ctx.nvars
    }

    /// Verifies that each phi-matrix is invertible over the series field.
    /// In one variable any nonzero determinant is a monomial times a unit;
    /// in several variables we require a dominant monomial so that inverses
    /// stay computable.
    pub fn check_etale(&self) -> Result<()> {
        for (d, a) in self.phi.iter().enumerate() {
            let det = a.det();
            if det.is_zero() {
                return Err(Error::NotEtale(format!(
                    "phi matrix in direction {d} has zero determinant"
                )));
            }
            let probe = det.invert_to(&vec![Prec::Finite(1); self.ctx.nvars]);
            if probe.is_err() {
                return Err(Error::NotEtale(format!(
                    "phi matrix in direction {d}: determinant has no dominant monomial"
                )));
            }
        }
        Ok(())
    }

    /// A_d^{-1} to the requested precision.
    pub fn phi_inv_matrix(&self, d: usize, target: &[Prec]) -> Result<SMat> {
        self.phi[d].inverse_to(target)
    }

    /// G_d^{-1}, with gamma_d^{-1} applied to its entries: the matrix of the
    /// inverse generator, by the cocycle rule G_{gamma^{-1}} =
    /// gamma^{-1}(G_gamma^{-1}).
    pub fn gamma_inv_matrix(&self, d: usize, target: &[Prec]) -> Result<SMat> {
        let g = self.gamma[d].as_ref().ok_or_else(|| {
            Error::ParameterOutOfRange(format!("no Gamma-data in direction {d}"))
        })?;
        let ginv = g.mat.inverse_to(target)?;
        let mut out = ginv.clone();
        for e in out.entries.iter_mut() {
            *e = e.gamma(d, &g.inv_series)?;
        }
        Ok(out)
    }

    pub fn apply_phi(&self, d: usize, x: &[Series]) -> Vec<Series> {
        let twisted: Vec<Series> = x.iter().map(|s| s.phi(d)).collect();
        self.phi[d].mul_vec(&twisted)
    }

    /// psi_d, given a precomputed inverse of A_d.
    pub fn apply_psi(&self, d: usize, x: &[Series], a_inv: &SMat) -> Vec<Series> {
        let y = a_inv.mul_vec(x);
        y.iter().map(|s| s.psi(d)).collect()
    }

    pub fn apply_gamma(&self, d: usize, x: &[Series]) -> Result<Vec<Series>> {
        let g = self.gamma[d].as_ref().ok_or_else(|| {
            Error::ParameterOutOfRange(format!("no Gamma-data in direction {d}"))
        })?;
        let twisted: Result<Vec<Series>> = x.iter().map(|s| s.gamma(d, &g.series)).collect();
        Ok(g.mat.mul_vec(&twisted?))
    }

    /// Checks every operator commutation the stored data must satisfy:
    /// phi_d phi_d' = phi_d' phi_d, gamma_d phi_d' = phi_d' gamma_d (all
    /// pairs, including d = d'), and gamma_d gamma_d' = gamma_d' gamma_d.
    pub fn check_commutations(&self) -> Result<()> {
        let n = self.ctx.nvars;
        for d in 0..n {
            for d2 in d + 1..n {
                // A_d phi_d(A_d') = A_d' phi_d'(A_d)
                let lhs = self.phi[d].mul(&self.phi[d2].map(|s| s.phi(d)));
                let rhs = self.phi[d2].mul(&self.phi[d].map(|s| s.phi(d2)));
                if !lhs.congruent(&rhs) {
                    return Err(Error::CommutationFailure(format!(
                        "phi_{} and phi_{} do not commute",
                        d + 1,
                        d2 + 1
                    )));
                }
            }
        }
        for d in 0..n {
            let Some(g) = self.gamma[d].as_ref() else {
                continue;
            };
            for d2 in 0..n {
                // G_d gamma_d(A_d') = A_d' phi_d'(G_d)
                let lhs_terms: Result<Vec<Series>> = self.phi[d2]
                    .entries
                    .iter()
                    .map(|s| s.gamma(d, &g.series))
                    .collect();
                let lhs = g.mat.mul(&SMat {
                    rows: self.rank,
                    cols: self.rank,
                    entries: lhs_terms?,
                });
                let rhs = self.phi[d2].mul(&g.mat.map(|s| s.phi(d2)));
                if !lhs.congruent(&rhs) {
                    return Err(Error::CommutationFailure(format!(
                        "gamma_{} and phi_{} do not commute",
                        d + 1,
                        d2 + 1
                    )));
                }
            }
            for d2 in d + 1..n {
                let Some(g2) = self.gamma[d2].as_ref() else {
                    continue;
                };
                let lhs_terms: Result<Vec<Series>> = g2
                    .mat
                    .entries
                    .iter()
                    .map(|s| s.gamma(d, &g.series))
                    .collect();
                let lhs = g.mat.mul(&SMat {
                    rows: self.rank,
                    cols: self.rank,
                    entries: lhs_terms?,
                });
                let rhs_terms: Result<Vec<Series>> = g
                    .mat
                    .entries
                    .iter()
                    .map(|s| s.gamma(d2, &g2.series))
                    .collect();
                let rhs = g2.mat.mul(&SMat {
                    rows: self.rank,
                    cols: self.rank,
                    entries: rhs_terms?,
                });
                if !lhs.congruent(&rhs) {
                    return Err(Error::CommutationFailure(format!(
                        "gamma_{} and gamma_{} do not commute",
                        d + 1,
                        d2 + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full validation: shape, etale-ness, commutations.
    pub fn validate(&self) -> Result<()> {
        self.check_etale()?;
        self.check_commutations()
    }

    /// Collapses all directions onto a single variable t: the composite
    /// phi-matrix is A_1 phi_1(A_2) phi_1 phi_2(A_3) ..., with every
    /// variable then sent to t. Requires etale input (dominant-monomial
    /// determinants survive the substitution). The Gamma-action is dropped.
    ///
    /// Sending every t_d to t intertwines the composite Frobenius with the
    /// one-variable q-power Frobenius (each t_d^q lands on t^q), so the
    /// target context must keep the twist and trace normalization of the
    /// source.
    pub fn diagonal_restriction(&self, target: &SCtx) -> Result<PhiGammaModule> {
        if target.nvars != 1 || target.q != self.ctx.q || target.qp != self.ctx.qp {
            return Err(Error::NotComparable(
                "diagonal restriction needs a one-variable target with the same twist \
                 and trace normalization"
                    .into(),
            ));
        }
        self.check_etale()?;
        let n = self.ctx.nvars;
        let mut acc = self.phi[0].clone();
        for d in 1..n {
            let mut next = self.phi[d].clone();
            for dd in 0..d {
                next = next.map(|s| s.phi(dd));
            }
            acc = acc.mul(&next);
        }
        let collapsed = acc.map(|s| s.diagonal(target));
        PhiGammaModule::new(
            target.clone(),
            self.p,
            self.e,
            self.f,
            vec![collapsed],
            vec![None],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldCtx;
    use crate::local::LocalCtx;
    use crate::lubin_tate::GammaSeries;
    use crate::series::SeriesCtx;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx1(p: u64, qp: bool) -> SCtx {
        let k = FieldCtx::new(p, 1, None).unwrap();
        SeriesCtx::new(k, 1, p as i64, qp)
    }

    fn gamma_data(ctx: &SCtx, p: u64, gamma_int: i64, tprec: usize, mat: SMat) -> GammaData {
        let o = LocalCtx::new(p, 1, 1, tprec + 6).unwrap();
        let g = o.from_int(gamma_int);
        let fwd = GammaSeries::compute(&o, &g, tprec).unwrap();
        let bwd = GammaSeries::compute(&o, &o.unit_inverse(&g).unwrap(), tprec).unwrap();
        let _ = ctx;
        GammaData {
            series: fwd.reduction_mod_p().unwrap(),
            inv_series: bwd.reduction_mod_p().unwrap(),
            mat,
        }
    }

    /// Solves G(t^q) = G(t) u(t)^{q-1} for u = [gamma](t)/t by the
    /// convergent product G = prod_i u(t^{q^i})^{-(q-1)}, truncated.
    fn twist_gamma_matrix(ctx: &SCtx, series: &[u16], window: i64) -> SMat {
        let q = ctx.q;
        let mut u = Series::zero(ctx);
        u.prec = vec![Prec::Finite(series.len() as i64)];
        for (n, &c) in series.iter().enumerate() {
            if c != 0 {
                u.terms.insert(vec![n as i64], c);
            }
        }
        let u_inv = u.invert_to(&[Prec::Finite(window)]).unwrap();
        let factor = u_inv.pow((q - 1) as u32);
        let mut g = Series::one(ctx);
        g.prec = vec![Prec::Finite(window)];
        let mut f = factor;
        let mut level = 1i64;
        while level < window {
            g = g.mul(&f);
            f = f.phi(0);
            level *= q;
        }
        let mut m = SMat::zero(ctx, 1, 1);
        *m.at_mut(0, 0) = g;
        m
    }

    #[test]
    fn unit_object_validates() {
        let ctx = ctx1(3, true);
        let a = SMat::identity(&ctx, 1);
        let g = gamma_data(&ctx, 3, 4, 12, SMat::identity(&ctx, 1));
        let m = PhiGammaModule::new(ctx, 3, 1, 1, vec![a], vec![Some(g)]).unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn rank_one_twist_with_solved_cocycle_validates() {
        let ctx = ctx1(3, true);
        // A = t^{q-1}; the matching Gamma-matrix solves the cocycle
        // equation, computed here by its convergent product.
        let mut a = SMat::zero(&ctx, 1, 1);
        *a.at_mut(0, 0) = Series::monomial(&ctx, &[2], 1);
        let o = LocalCtx::new(3, 1, 1, 40).unwrap();
        let gs = GammaSeries::compute(&o, &o.from_int(4), 30).unwrap();
        let series = gs.reduction_mod_p().unwrap();
        let gmat = twist_gamma_matrix(&ctx, &series, 25);
        let bwd = GammaSeries::compute(&o, &o.unit_inverse(&o.from_int(4)).unwrap(), 30)
            .unwrap()
            .reduction_mod_p()
            .unwrap();
        let g = GammaData {
            series,
            inv_series: bwd,
            mat: gmat,
        };
        let m = PhiGammaModule::new(ctx, 3, 1, 1, vec![a], vec![Some(g)]).unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn wrong_gamma_matrix_fails_commutation() {
        let ctx = ctx1(3, true);
        let mut a = SMat::zero(&ctx, 1, 1);
        *a.at_mut(0, 0) = Series::monomial(&ctx, &[2], 1);
        // G = 1 does not solve the cocycle equation for A = t^2.
        let g = gamma_data(&ctx, 3, 4, 12, SMat::identity(&ctx, 1));
        let m = PhiGammaModule::new(ctx, 3, 1, 1, vec![a], vec![Some(g)]).unwrap();
        assert!(matches!(
            m.check_commutations(),
            Err(Error::CommutationFailure(_))
        ));
    }

    #[test]
    fn degenerate_matrix_is_not_etale() {
        let ctx = ctx1(3, true);
        let t = Series::var(&ctx, 0);
        let mut a = SMat::zero(&ctx, 2, 2);
        *a.at_mut(0, 0) = t.clone();
        *a.at_mut(1, 0) = t.clone();
        *a.at_mut(0, 1) = t.clone();
        *a.at_mut(1, 1) = t;
        let m = PhiGammaModule::new(ctx, 3, 1, 1, vec![a], vec![None]).unwrap();
        assert!(matches!(m.check_etale(), Err(Error::NotEtale(_))));
    }

    #[test]
    fn psi_after_phi_is_the_unit_scalar() {
        for qp in [true, false] {
            let ctx = ctx1(3, qp);
            let t = Series::var(&ctx, 0);
            let mut a = SMat::zero(&ctx, 2, 2);
            *a.at_mut(0, 1) = Series::one(&ctx);
            *a.at_mut(1, 0) = t.clone();
            *a.at_mut(1, 1) = t;
            let m = PhiGammaModule::new(ctx.clone(), 3, 1, 1, vec![a], vec![None]).unwrap();
            m.check_etale().unwrap();
            let a_inv = m.phi_inv_matrix(0, &[Prec::Finite(30)]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            for _ in 0..10 {
                let x: Vec<Series> = (0..2)
                    .map(|_| {
                        Series::from_terms(
                            &ctx,
                            (0..5).map(|_| {
                                (vec![rng.gen_range(-4..=4i64)], rng.gen_range(0..3u16))
                            }),
                        )
                    })
                    .collect();
                let y = m.apply_psi(0, &m.apply_phi(0, &x), &a_inv);
                for (yi, xi) in y.iter().zip(&x) {
                    if qp {
                        assert!(yi.congruent(xi));
                    } else {
                        assert!(yi.truncate(&[Prec::Finite(5)]).is_zero());
                    }
                }
            }
        }
    }

    #[test]
    fn psi_twisted_linearity_over_phi_scalars() {
        let ctx = ctx1(3, true);
        let t = Series::var(&ctx, 0);
        let mut a = SMat::zero(&ctx, 2, 2);
        *a.at_mut(0, 1) = Series::one(&ctx);
        *a.at_mut(1, 0) = t;
        let m = PhiGammaModule::new(ctx.clone(), 3, 1, 1, vec![a], vec![None]).unwrap();
        let a_inv = m.phi_inv_matrix(0, &[Prec::Finite(30)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..10 {
            let s = Series::from_terms(
                &ctx,
                (0..4).map(|_| (vec![rng.gen_range(-3..=3i64)], rng.gen_range(0..3u16))),
            );
            let x: Vec<Series> = (0..2)
                .map(|_| {
                    Series::from_terms(
                        &ctx,
                        (0..4).map(|_| (vec![rng.gen_range(-3..=3i64)], rng.gen_range(0..3u16))),
                    )
                })
                .collect();
            // psi(phi(s) x) = s psi(x)
            let sx: Vec<Series> = x.iter().map(|xi| xi.mul(&s.phi(0))).collect();
            let lhs = m.apply_psi(0, &sx, &a_inv);
            let rhs: Vec<Series> = m.apply_psi(0, &x, &a_inv).iter().map(|y| y.mul(&s)).collect();
            for (l, r) in lhs.iter().zip(&rhs) {
                assert!(l.congruent(r));
            }
        }
    }

    #[test]
    fn two_direction_commutation_and_diagonal() {
        let k = FieldCtx::new(3, 1, None).unwrap();
        let ctx2 = SeriesCtx::new(k.clone(), 2, 3, true);
        let ctx1v = SeriesCtx::new(k, 1, 3, true);
        let mut a1 = SMat::identity(&ctx2, 2);
        *a1.at_mut(0, 0) = Series::var(&ctx2, 0);
        let mut a2 = SMat::identity(&ctx2, 2);
        *a2.at_mut(0, 0) = Series::var(&ctx2, 1);
        let m = PhiGammaModule::new(ctx2.clone(), 3, 1, 1, vec![a1, a2], vec![None, None])
            .unwrap();
        m.validate().unwrap();
        let diag = m.diagonal_restriction(&ctx1v).unwrap();
        assert_eq!(diag.rank, 2);
        assert_eq!(diag.phi[0].at(0, 0).coeff(&[2]), 1);
        assert_eq!(diag.phi[0].at(1, 1).coeff(&[0]), 1);

        // Breaking one entry breaks the phi-phi commutation.
        let mut b1 = SMat::identity(&ctx2, 2);
        *b1.at_mut(0, 0) = Series::var(&ctx2, 0);
        let mut b2 = SMat::identity(&ctx2, 2);
        *b2.at_mut(0, 0) = Series::var(&ctx2, 1);
        *b2.at_mut(0, 1) = Series::one(&ctx2);
        let broken =
            PhiGammaModule::new(ctx2, 3, 1, 1, vec![b1, b2], vec![None, None]).unwrap();
        assert!(matches!(
            broken.check_commutations(),
            Err(Error::CommutationFailure(_))
        ));
    }
}
