//! Deterministic JSON interchange and the batch command-line front end.
//!
//! Everything the thin `psi-lattice` binary does lives here, so the runnable
//! examples and the integration tests can drive the exact same code paths.
//!
//! # File formats
//!
//! Series literals are JSON objects mapping monomial keys to coefficient
//! strings.  With one variable the keys are `"1"`, `"t"`, `"t^-2"`, …; with
//! several they name the variables `t1`, `t2`, … and join factors with a
//! space (`"t1 t2^2"`).  Coefficients use the finite-field element grammar
//! of [`crate::field`] (decimal digits for prime fields, polynomials in `g`
//! for extensions).  A series known only to finite precision is wrapped as
//! `{"terms": {...}, "prec": [..]}` with one entry per variable, `null`
//! meaning exact.
//!
//! A module file looks like
//!
//! ```json
//! {
//!   "ring": {"p": 3, "m": 1, "f": 1, "e": 1},
//!   "rank": 1,
//!   "phi": {"d1": [[{"1": "1"}]]},
//!   "gamma": {"d1": {"series": {...}, "inv_series": {...}, "matrix": [[...]]}}
//! }
//! ```
//!
//! where `ring` describes the coefficient field `k = F_{p^m}` and the local
//! field `F` (residue degree `f`, ramification `e`; the twist is `q = p^f`
//! and the trace normalization is the `F = Q_p` one exactly when
//! `e = f = 1`), `phi` holds one matrix of row-lists per direction, and the
//! optional `gamma` carries the substitution series of the acting unit and
//! its matrix.  Matrices are arrays of rows.
//!
//! A presentation file mirrors the relation sets of the torsion modules:
//!
//! ```json
//! {
//!   "ring": {"p": 3, "m": 1, "f": 1, "e": 1},
//!   "vars": 1,
//!   "generators": ["f", "e"],
//!   "t_action": {"d1": [["0", "0"], ["0", "0"]]},
//!   "unit_action": {"d1": {"unit": "8", "weights": [2, 1], "pi_prec": 48}},
//!   "relations": [
//!     {"dir": 1, "alpha": 0, "gen": "f", "rhs": [{"coeff": "1", "t": [0], "phi": true, "gen": "f"}]}
//!   ]
//! }
//! ```
//!
//! Each relation says `t_dir^alpha phi_dir(gen) = sum of rhs terms`, a term
//! being `coeff * t^texp * phi^{0 or 1}(gen)`.  Directions are 1-based in
//! files (`"d1"`, `"dir": 1`).  The unit label grammar accepts `"teich"`,
//! `"1+p"`, `"(1+p)^2"`, a decimal integer, or raw coordinates
//! (`;`-separated rows of `,`-separated digits in the `x^i pi^j` basis).
//!
//! Reports embed the canonicalized input under `"input"` plus the crate
//! version, and are byte-deterministic for identical inputs.  Exit codes:
//! 0 success, 1 a mathematical check failed (for example `NotEtale`),
//! 2 an operational failure (parse error, precision exhausted).

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::{
    example_a, example_b, example_c, example_d, example_options, exactness_report,
    family_report, subset_name, trivial_rank_one, ExactnessReport, FamilyReport,
};
use crate::dual::{
    derive_module, socle_certified_minimal, splitting_search, DeriveOptions, SequenceReport,
    SplitModules,
};
use crate::error::{Error, Result};
use crate::field::{Field, FieldCtx};
use crate::lattice::{Engine, Lattice};
use crate::local::{Local, LocalCtx, OElem};
use crate::lubin_tate::GammaSeries;
use crate::phigamma::{GammaData, PhiGammaModule};
use crate::presentation::{DirGamma, Pres, Presentation, RTerm, Relation};
use crate::series::{Prec, SCtx, SMat, Series, SeriesCtx};

// ---------------------------------------------------------------------------
// Ring descriptions
// ---------------------------------------------------------------------------

/// The serialized arithmetic context: coefficients in `k = F_{p^m}` and a
/// local field `F` of residue degree `f` and ramification index `e`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct RingJson {
    pub p: u64,
    pub m: usize,
    pub f: usize,
    pub e: usize,
}

impl RingJson {
    pub fn of_module(md: &PhiGammaModule) -> RingJson {
        RingJson {
            p: md.p,
            m: md.ctx.field.m,
            f: md.f,
            e: md.e,
        }
    }

    /// The twist exponent `q = p^f`.
    pub fn q(&self) -> i64 {
        (self.p as i64).pow(self.f as u32)
    }

    /// Whether the trace normalization is the `F = Q_p` one.
    pub fn qp(&self) -> bool {
        self.e == 1 && self.f == 1
    }

    pub fn field(&self) -> Result<Field> {
        FieldCtx::new(self.p, self.m, None)
    }

    pub fn series_ctx(&self, nvars: usize) -> Result<SCtx> {
        Ok(SeriesCtx::new(self.field()?, nvars, self.q(), self.qp()))
    }
}

fn dir_key(d: usize) -> String {
    format!("d{}", d + 1)
}

fn dir_index(key: &str, nvars: usize) -> Result<usize> {
    let n: usize = key
        .strip_prefix('d')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad direction key '{key}'")))?;
    if n == 0 || n > nvars {
        return Err(Error::Parse(format!(
            "direction key '{key}' outside 1..={nvars}"
        )));
    }
    Ok(n - 1)
}

// ---------------------------------------------------------------------------
// Series and matrices
// ---------------------------------------------------------------------------

fn prec_to_json(prec: &[Prec]) -> Value {
    Value::Array(
        prec.iter()
            .map(|p| match p {
                Prec::Exact => Value::Null,
                Prec::Finite(n) => Value::from(*n),
            })
            .collect(),
    )
}

fn prec_from_json(v: &Value, nvars: usize) -> Result<Vec<Prec>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Parse("'prec' must be an array".into()))?;
    if arr.len() != nvars {
        return Err(Error::Parse(format!(
            "'prec' must have {nvars} entries, got {}",
            arr.len()
        )));
    }
    arr.iter()
        .map(|p| match p {
            Value::Null => Ok(Prec::Exact),
            _ => p
                .as_i64()
                .map(Prec::Finite)
                .ok_or_else(|| Error::Parse("'prec' entries must be integers or null".into())),
        })
        .collect()
}

/// Serializes a series as a monomial→coefficient map, wrapped with its
/// precision ledger when any variable is inexact.
pub fn series_to_json(s: &Series) -> Value {
    let ctx = &s.ctx;
    let mut terms = Map::new();
    for (exps, &c) in &s.terms {
        terms.insert(
            Series::format_monomial(ctx, exps),
            Value::String(ctx.field.format_elem(c)),
        );
    }
    if s.prec.iter().all(|p| matches!(p, Prec::Exact)) {
        Value::Object(terms)
    } else {
        let mut m = Map::new();
        m.insert("terms".into(), Value::Object(terms));
        m.insert("prec".into(), prec_to_json(&s.prec));
        Value::Object(m)
    }
}

/// Parses a series literal (plain or precision-wrapped form).
pub fn series_from_json(ctx: &SCtx, v: &Value) -> Result<Series> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse("series literal must be an object".into()))?;
    let (terms, prec) = if obj.contains_key("terms") {
        if obj.len() != 2 || !obj.contains_key("prec") {
            return Err(Error::Parse(
                "wrapped series must have exactly the keys 'terms' and 'prec'".into(),
            ));
        }
        let terms = obj["terms"]
            .as_object()
            .ok_or_else(|| Error::Parse("'terms' must be an object".into()))?;
        (terms, prec_from_json(&obj["prec"], ctx.nvars)?)
    } else {
        (obj, vec![Prec::Exact; ctx.nvars])
    };
    let mut out = Vec::new();
    for (key, val) in terms {
        let exps = Series::parse_monomial(ctx, key)?;
        let code = val
            .as_str()
            .ok_or_else(|| Error::Parse(format!("coefficient of '{key}' must be a string")))?;
        out.push((exps, ctx.field.parse_elem(code)?));
    }
    let mut s = Series::from_terms(ctx, out);
    s.meet_prec(&prec);
    Ok(s)
}

/// Serializes a matrix as an array of rows of series literals.
pub fn mat_to_json(m: &SMat) -> Value {
    Value::Array(
        (0..m.rows)
            .map(|i| {
                Value::Array((0..m.cols).map(|j| series_to_json(m.at(i, j))).collect())
            })
            .collect(),
    )
}

/// Parses a matrix (array of equal-length rows of series literals).
pub fn mat_from_json(ctx: &SCtx, v: &Value) -> Result<SMat> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Parse("matrix must be an array of rows".into()))?;
    if rows.is_empty() {
        return Err(Error::Parse("matrix must have at least one row".into()));
    }
    let cols = rows[0]
        .as_array()
        .ok_or_else(|| Error::Parse("matrix rows must be arrays".into()))?
        .len();
    if cols == 0 {
        return Err(Error::Parse("matrix rows must be nonempty".into()));
    }
    let mut m = SMat::zero(ctx, rows.len(), cols);
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| Error::Parse("matrix rows must be arrays".into()))?;
        if row.len() != cols {
            return Err(Error::Parse("matrix rows have unequal lengths".into()));
        }
        for (j, entry) in row.iter().enumerate() {
            *m.at_mut(i, j) = series_from_json(ctx, entry)?;
        }
    }
    Ok(m)
}

/// A lattice as the list of its canonical basis vectors (columns of the
/// Hermite basis matrix).
fn lattice_basis_json(l: &Lattice) -> Value {
    let b = l.basis_matrix();
    Value::Array(
        (0..b.cols)
            .map(|j| {
                Value::Array((0..b.rows).map(|i| series_to_json(b.at(i, j))).collect())
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Power series over k (gamma substitution data)
// ---------------------------------------------------------------------------

fn power_key(n: usize) -> String {
    if n == 1 {
        "t".into()
    } else {
        format!("t^{n}")
    }
}

fn parse_power_key(key: &str) -> Result<usize> {
    if key == "t" {
        return Ok(1);
    }
    key.strip_prefix("t^")
        .and_then(|s| s.parse().ok())
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Parse(format!("bad power-series key '{key}'")))
}

/// `coeffs[n-1]` holds the degree-`n` coefficient; the series is certified
/// to degree `coeffs.len()`.
fn power_series_to_json(field: &Field, coeffs: &[u16]) -> Value {
    let mut terms = Map::new();
    for (i, &c) in coeffs.iter().enumerate() {
        if c != 0 {
            terms.insert(power_key(i + 1), Value::String(field.format_elem(c)));
        }
    }
    let mut m = Map::new();
    m.insert("terms".into(), Value::Object(terms));
    m.insert("prec".into(), Value::Array(vec![Value::from(coeffs.len() as i64 + 1)]));
    Value::Object(m)
}

fn power_series_from_json(field: &Field, v: &Value) -> Result<Vec<u16>> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse("power series must be an object".into()))?;
    if obj.len() != 2 || !obj.contains_key("terms") || !obj.contains_key("prec") {
        return Err(Error::Parse(
            "power series must have exactly the keys 'terms' and 'prec'".into(),
        ));
    }
    let prec = obj["prec"]
        .as_array()
        .and_then(|a| a.first())
        .and_then(|p| p.as_i64())
        .filter(|&p| p >= 2)
        .ok_or_else(|| Error::Parse("power series 'prec' must be [n] with n >= 2".into()))?;
    let mut coeffs = vec![0u16; prec as usize - 1];
    let terms = obj["terms"]
        .as_object()
        .ok_or_else(|| Error::Parse("'terms' must be an object".into()))?;
    for (key, val) in terms {
        let n = parse_power_key(key)?;
        if n > coeffs.len() {
            return Err(Error::Parse(format!(
                "power-series term '{key}' beyond the declared precision"
            )));
        }
        let code = val
            .as_str()
            .ok_or_else(|| Error::Parse("power-series coefficients must be strings".into()))?;
        coeffs[n - 1] = field.parse_elem(code)?;
    }
    Ok(coeffs)
}

// ---------------------------------------------------------------------------
// Modules
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GammaFile {
    series: Value,
    inv_series: Value,
    matrix: Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModuleFile {
    ring: RingJson,
    rank: usize,
    phi: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<BTreeMap<String, GammaFile>>,
}

/// Canonical JSON form of a module.
pub fn module_to_json(md: &PhiGammaModule) -> Value {
    let ring = RingJson::of_module(md);
    let field = &md.ctx.field;
    let mut phi = BTreeMap::new();
    for (d, a) in md.phi.iter().enumerate() {
        phi.insert(dir_key(d), mat_to_json(a));
    }
    let mut gamma = BTreeMap::new();
    for (d, g) in md.gamma.iter().enumerate() {
        if let Some(g) = g {
            gamma.insert(
                dir_key(d),
                GammaFile {
                    series: power_series_to_json(field, &g.series),
                    inv_series: power_series_to_json(field, &g.inv_series),
                    matrix: mat_to_json(&g.mat),
                },
            );
        }
    }
    let file = ModuleFile {
        ring,
        rank: md.rank,
        phi,
        gamma: if gamma.is_empty() { None } else { Some(gamma) },
    };
    serde_json::to_value(&file).expect("module serialization cannot fail")
}

/// Parses and shape-checks a module file.  Mathematical validity (etale
/// condition, commutation) is checked separately by `validate`.
pub fn module_from_json(v: &Value) -> Result<PhiGammaModule> {
    let file: ModuleFile = serde_json::from_value(v.clone())?;
    let nvars = file.phi.len();
    if nvars == 0 {
        return Err(Error::Parse("module needs at least one phi direction".into()));
    }
    let ctx = file.ring.series_ctx(nvars)?;
    let mut phi = vec![None; nvars];
    for (key, mat) in &file.phi {
        let d = dir_index(key, nvars)?;
        let m = mat_from_json(&ctx, mat)?;
        if m.rows != file.rank || m.cols != file.rank {
            return Err(Error::Parse(format!(
                "phi matrix in '{key}' is {}x{}, expected rank {}",
                m.rows, m.cols, file.rank
            )));
        }
        phi[d] = Some(m);
    }
    let phi: Vec<SMat> = phi
        .into_iter()
        .enumerate()
        .map(|(d, m)| m.ok_or_else(|| Error::Parse(format!("missing phi direction 'd{}'", d + 1))))
        .collect::<Result<_>>()?;
    let mut gamma: Vec<Option<GammaData>> = vec![None; nvars];
    if let Some(gs) = &file.gamma {
        for (key, g) in gs {
            let d = dir_index(key, nvars)?;
            let mat = mat_from_json(&ctx, &g.matrix)?;
            if mat.rows != file.rank || mat.cols != file.rank {
                return Err(Error::Parse(format!(
                    "gamma matrix in '{key}' has the wrong shape"
                )));
            }
            gamma[d] = Some(GammaData {
                series: power_series_from_json(&ctx.field, &g.series)?,
                inv_series: power_series_from_json(&ctx.field, &g.inv_series)?,
                mat,
            });
        }
    }
    PhiGammaModule::new(ctx, file.ring.p, file.ring.e, file.ring.f, phi, gamma)
}

// ---------------------------------------------------------------------------
// Presentations
// ---------------------------------------------------------------------------

fn default_pi_prec() -> usize {
    48
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitActionFile {
    unit: String,
    weights: Vec<i64>,
    #[serde(default = "default_pi_prec")]
    pi_prec: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermFile {
    coeff: String,
    t: Vec<i64>,
    phi: bool,
    gen: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationFile {
    dir: usize,
    alpha: i64,
    gen: String,
    rhs: Vec<TermFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresentationFile {
    ring: RingJson,
    vars: usize,
    generators: Vec<String>,
    t_action: BTreeMap<String, Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unit_action: Option<BTreeMap<String, UnitActionFile>>,
    relations: Vec<RelationFile>,
}

/// Parses a unit label into an element of `O_F`.
pub fn parse_unit(local: &Local, label: &str) -> Result<OElem> {
    let p = local.p as i64;
    match label {
        "teich" => {
            let rf = FieldCtx::new(local.p, local.f, None)?;
            Ok(local.teichmuller(rf.multiplicative_generator()))
        }
        "1+p" => Ok(local.add(&local.one(), &local.from_int(p))),
        "(1+p)^2" => {
            let u = local.add(&local.one(), &local.from_int(p));
            Ok(local.mul(&u, &u))
        }
        _ => {
            if label.contains(',') || label.contains(';') {
                let rows: Vec<&str> = label.split(';').collect();
                let mut coeffs = Vec::new();
                for row in rows {
                    let mut out = Vec::new();
                    for part in row.split(',') {
                        let n: BigUint = part
                            .trim()
                            .parse()
                            .map_err(|_| Error::Parse(format!("bad unit coordinate '{part}'")))?;
                        out.push(n);
                    }
                    coeffs.push(out);
                }
                let probe = local.zero();
                if coeffs.len() != probe.coeffs.len()
                    || coeffs.iter().any(|r| r.len() != probe.coeffs[0].len())
                {
                    return Err(Error::Parse(
                        "unit coordinates do not match the ring shape".into(),
                    ));
                }
                Ok(OElem { coeffs })
            } else {
                let n: i64 = label
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad unit label '{label}'")))?;
                Ok(local.from_int(n))
            }
        }
    }
}

/// Canonical label of a unit: the single coordinate for unramified prime
/// fields, raw coordinates otherwise.
fn unit_label(x: &OElem) -> String {
    if x.coeffs.len() == 1 && x.coeffs[0].len() == 1 {
        x.coeffs[0][0].to_string()
    } else {
        x.coeffs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Canonical JSON form of a presentation.  The local-field shape is taken
/// from the unit action when present; otherwise the minimal shape matching
/// the twist `q` and the trace normalization is recorded.
pub fn presentation_to_json(pres: &Pres) -> Value {
    let ctx = &pres.ctx;
    let field = &ctx.field;
    let (e, f, p) = match pres.gamma.iter().flatten().next() {
        Some(dg) => (dg.local.e, dg.local.f, dg.local.p),
        None => {
            let mut f = 0usize;
            let mut q = ctx.q;
            let p = field.p;
            while q > 1 {
                q /= p as i64;
                f += 1;
            }
            let e = if ctx.qp || f > 1 { 1 } else { 2 };
            (e, f, p)
        }
    };
    let ring = RingJson {
        p,
        m: field.m,
        f,
        e,
    };
    let mut t_action = BTreeMap::new();
    for (d, tm) in pres.t_mats.iter().enumerate() {
        let rows: Vec<Vec<String>> = tm
            .iter()
            .map(|row| row.iter().map(|&c| field.format_elem(c)).collect())
            .collect();
        t_action.insert(dir_key(d), rows);
    }
    let mut unit_action = BTreeMap::new();
    for (d, g) in pres.gamma.iter().enumerate() {
        if let Some(dg) = g {
            unit_action.insert(
                dir_key(d),
                UnitActionFile {
                    unit: unit_label(&dg.gamma),
                    weights: dg.weights.clone(),
                    pi_prec: dg.local.pi_prec,
                },
            );
        }
    }
    let relations = pres
        .relations
        .iter()
        .map(|r| RelationFile {
            dir: r.dir + 1,
            alpha: r.alpha,
            gen: pres.gen_names[r.gen].clone(),
            rhs: r
                .rhs
                .iter()
                .map(|t| TermFile {
                    coeff: field.format_elem(t.coeff),
                    t: t.texp.clone(),
                    phi: t.phi,
                    gen: pres.gen_names[t.gen].clone(),
                })
                .collect(),
        })
        .collect();
    let file = PresentationFile {
        ring,
        vars: ctx.nvars,
        generators: pres.gen_names.clone(),
        t_action,
        unit_action: if unit_action.is_empty() {
            None
        } else {
            Some(unit_action)
        },
        relations,
    };
    serde_json::to_value(&file).expect("presentation serialization cannot fail")
}

/// Parses a presentation file.
pub fn presentation_from_json(v: &Value) -> Result<Pres> {
    let file: PresentationFile = serde_json::from_value(v.clone())?;
    if file.vars == 0 {
        return Err(Error::Parse("'vars' must be at least 1".into()));
    }
    let ctx = file.ring.series_ctx(file.vars)?;
    let field = &ctx.field;
    let dim = file.generators.len();
    let gen_index = |name: &str| -> Result<usize> {
        file.generators
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| Error::Parse(format!("unknown generator '{name}'")))
    };
    let mut t_mats = vec![None; file.vars];
    for (key, rows) in &file.t_action {
        let d = dir_index(key, file.vars)?;
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Parse(format!(
                "t-action matrix in '{key}' must be {dim}x{dim}"
            )));
        }
        let mut tm = vec![vec![0u16; dim]; dim];
        for (i, row) in rows.iter().enumerate() {
            for (j, code) in row.iter().enumerate() {
                tm[i][j] = field.parse_elem(code)?;
            }
        }
        t_mats[d] = Some(tm);
    }
    let t_mats: Vec<Vec<Vec<u16>>> = t_mats
        .into_iter()
        .enumerate()
        .map(|(d, m)| {
            m.ok_or_else(|| Error::Parse(format!("missing t-action direction 'd{}'", d + 1)))
        })
        .collect::<Result<_>>()?;
    let mut gamma: Vec<Option<DirGamma>> = vec![None; file.vars];
    if let Some(ua) = &file.unit_action {
        for (key, g) in ua {
            let d = dir_index(key, file.vars)?;
            if g.weights.len() != dim {
                return Err(Error::Parse(format!(
                    "unit action in '{key}' needs one weight per generator"
                )));
            }
            let local = LocalCtx::new(file.ring.p, file.ring.e, file.ring.f, g.pi_prec)?;
            let unit = parse_unit(&local, &g.unit)?;
            gamma[d] = Some(DirGamma {
                weights: g.weights.clone(),
                local,
                gamma: unit,
            });
        }
    }
    let relations = file
        .relations
        .iter()
        .map(|r| {
            if r.dir == 0 || r.dir > file.vars {
                return Err(Error::Parse(format!(
                    "relation direction {} outside 1..={}",
                    r.dir, file.vars
                )));
            }
            let rhs = r
                .rhs
                .iter()
                .map(|t| {
                    if t.t.len() != file.vars {
                        return Err(Error::Parse(
                            "term exponent vector has the wrong length".into(),
                        ));
                    }
                    Ok(RTerm {
                        coeff: field.parse_elem(&t.coeff)?,
                        texp: t.t.clone(),
                        phi: t.phi,
                        gen: gen_index(&t.gen)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Relation {
                dir: r.dir - 1,
                alpha: r.alpha,
                gen: gen_index(&r.gen)?,
                rhs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Presentation::new(ctx, file.generators.clone(), t_mats, gamma, relations)
}

// ---------------------------------------------------------------------------
// Split bundles
// ---------------------------------------------------------------------------

/// Serializes a derived split (three modules plus the induced maps) so the
/// exactness reports can be recomputed without re-deriving.
pub fn split_modules_to_json(sm: &SplitModules, example: Value) -> Value {
    let mut m = Map::new();
    m.insert("kind".into(), Value::String("bundle".into()));
    m.insert(
        "version".into(),
        Value::String(env!("CARGO_PKG_VERSION").into()),
    );
    m.insert("example".into(), example);
    m.insert("left".into(), module_to_json(&sm.left));
    m.insert("total".into(), module_to_json(&sm.total));
    m.insert("right".into(), module_to_json(&sm.right));
    m.insert("iota".into(), mat_to_json(&sm.iota));
    m.insert("proj".into(), mat_to_json(&sm.proj));
    Value::Object(m)
}

/// Parses a bundle file back into a split.  Returns the split and the
/// echoed example description.
pub fn split_modules_from_json(v: &Value) -> Result<(SplitModules, Value)> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse("bundle must be an object".into()))?;
    if obj.get("kind").and_then(|k| k.as_str()) != Some("bundle") {
        return Err(Error::Parse("not a bundle file (missing kind)".into()));
    }
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "kind" | "version" | "example" | "left" | "total" | "right" | "iota" | "proj"
        ) {
            return Err(Error::Parse(format!("unknown bundle field '{key}'")));
        }
    }
    let get = |k: &str| -> Result<&Value> {
        obj.get(k)
            .ok_or_else(|| Error::Parse(format!("bundle is missing '{k}'")))
    };
    let left = module_from_json(get("left")?)?;
    let total = module_from_json(get("total")?)?;
    let right = module_from_json(get("right")?)?;
    let ctx = total.ctx.clone();
    let iota = mat_from_json(&ctx, get("iota")?)?;
    let proj = mat_from_json(&ctx, get("proj")?)?;
    if iota.rows != total.rank
        || iota.cols != left.rank
        || proj.rows != right.rank
        || proj.cols != total.rank
    {
        return Err(Error::Parse("bundle maps have inconsistent shapes".into()));
    }
    let example = obj.get("example").cloned().unwrap_or(Value::Null);
    Ok((
        SplitModules {
            left,
            total,
            right,
            iota,
            proj,
        },
        example,
    ))
}

// ---------------------------------------------------------------------------
// Report payloads
// ---------------------------------------------------------------------------

fn report_shell(command: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert(
        "version".into(),
        Value::String(env!("CARGO_PKG_VERSION").into()),
    );
    m.insert("command".into(), Value::String(command.into()));
    m
}

fn sequence_report_json(r: &SequenceReport) -> Value {
    let mut m = Map::new();
    m.insert("left_exact".into(), Value::Bool(r.left_exact));
    m.insert(
        "middle_homology_dim".into(),
        Value::from(r.middle_homology_dim),
    );
    m.insert("right_exact".into(), Value::Bool(r.right_exact));
    Value::Object(m)
}

/// JSON form of an exactness report.
pub fn exactness_report_json(r: &ExactnessReport) -> Value {
    let mut m = Map::new();
    m.insert(
        "ranks".into(),
        Value::Array(vec![
            Value::from(r.ranks.0),
            Value::from(r.ranks.1),
            Value::from(r.ranks.2),
        ]),
    );
    m.insert("natural".into(), sequence_report_json(&r.natural));
    m.insert("sharp".into(), sequence_report_json(&r.sharp));
    m.insert(
        "left_sharp_is_natural".into(),
        Value::Bool(r.left_sharp_is_natural),
    );
    m.insert(
        "right_sharp_is_natural".into(),
        Value::Bool(r.right_sharp_is_natural),
    );
    m.insert(
        "gap_dims".into(),
        Value::Array(vec![
            Value::from(r.gap_dims.0),
            Value::from(r.gap_dims.1),
            Value::from(r.gap_dims.2),
        ]),
    );
    m.insert(
        "total_natural_is_standard".into(),
        Value::Bool(r.total_natural_is_standard),
    );
    Value::Object(m)
}

/// JSON form of a lattice-family report.
pub fn family_report_json(r: &FamilyReport) -> Value {
    let field_fmt = |c: &u16| c.to_string();
    let mut m = Map::new();
    m.insert("p".into(), Value::from(r.p));
    m.insert(
        "c".into(),
        Value::Array(r.c.iter().map(|c| Value::String(field_fmt(c))).collect()),
    );
    m.insert(
        "m".into(),
        Value::Array(r.m.iter().map(|&w| Value::from(w)).collect()),
    );
    m.insert("certified_level".into(), Value::from(r.certified_level));
    let members: Vec<Value> = r
        .members
        .iter()
        .map(|mem| {
            let mut mm = Map::new();
            mm.insert(
                "killed".into(),
                Value::Array(
                    mem.killed
                        .iter()
                        .map(|&mask| Value::String(subset_name(mask)))
                        .collect(),
                ),
            );
            mm.insert("killed_dim".into(), Value::from(mem.killed_dim));
            mm.insert(
                "psi_surjective".into(),
                Value::Array(mem.psi_surjective.iter().map(|&b| Value::Bool(b)).collect()),
            );
            Value::Object(mm)
        })
        .collect();
    m.insert("members".into(), Value::Array(members));
    m.insert(
        "pairwise_distinct".into(),
        Value::Bool(r.pairwise_distinct),
    );
    m.insert("order_reversed".into(), Value::Bool(r.order_reversed));
    m.insert(
        "minimal_certificate".into(),
        Value::Bool(r.minimal_certificate),
    );
    m.insert(
        "maximal_psi_surjective".into(),
        Value::Bool(r.maximal_psi_surjective),
    );
    Value::Object(m)
}

/// The canonical-lattice payload for a one-variable module, with measured
/// stabilization data: `n0` is the largest observed orbit-entry index of
/// the window basis, `m0` the sandwich exponent of the iteration window,
/// and `saturation_steps` the measured length of the saturation ascent
/// (re-counted independently and cross-checked against the engine).
pub fn lattice_payload(module: &PhiGammaModule) -> Result<Map<String, Value>> {
    let engine = Engine::new(module)?;
    let (natural, sharp) = engine.dnatural()?;
    let mut cur = sharp.scale_t(1);
    let mut saturation_steps = 0usize;
    loop {
        let next = cur.sum(&engine.psi_image(&cur)?)?;
        if next == cur {
            break;
        }
        cur = next;
        saturation_steps += 1;
        if saturation_steps > engine.max_iter {
            return Err(Error::NonStabilizing {
                what: "saturation recount".into(),
                cap: engine.max_iter,
            });
        }
    }
    if cur != natural {
        return Err(Error::Inconclusive(
            "saturation recount disagrees with the engine".into(),
        ));
    }
    let ctx = &module.ctx;
    let mut n0 = 0usize;
    for j in 0..module.rank {
        let mut x = vec![Series::zero(ctx); module.rank];
        x[j] = Series::monomial(ctx, &[-engine.n], 1);
        n0 = n0.max(engine.attractor_steps(&x, &sharp)?);
    }
    let mut m = Map::new();
    m.insert("dsharp_basis".into(), lattice_basis_json(&sharp));
    m.insert("dnatural_basis".into(), lattice_basis_json(&natural));
    m.insert(
        "quotient_dim".into(),
        Value::from(sharp.quotient_dim(&natural)?),
    );
    let mut stab = Map::new();
    stab.insert("n0".into(), Value::from(n0));
    stab.insert("m0".into(), Value::from(engine.n));
    stab.insert("saturation_steps".into(), Value::from(saturation_steps));
    m.insert("stabilization".into(), Value::Object(stab));
    Ok(m)
}

// ---------------------------------------------------------------------------
// Error classification
// ---------------------------------------------------------------------------

/// The enum-variant name, used as the stable machine-readable error kind.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DivisionByZero => "DivisionByZero",
        Error::NotAUnit(_) => "NotAUnit",
        Error::PrecisionExhausted(_) => "PrecisionExhausted",
        Error::NotInvertible(_) => "NotInvertible",
        Error::NotEtale(_) => "NotEtale",
        Error::CommutationFailure(_) => "CommutationFailure",
        Error::NotFullRank => "NotFullRank",
        Error::NotComparable(_) => "NotComparable",
        Error::NonStabilizing { .. } => "NonStabilizing",
        Error::NonTerminatingRewrite(_) => "NonTerminatingRewrite",
        Error::NotAdmissible(_) => "NotAdmissible",
        Error::RankExtractionUnstable(_) => "RankExtractionUnstable",
        Error::Inconclusive(_) => "Inconclusive",
        Error::NotEquivariant(_) => "NotEquivariant",
        Error::ParameterOutOfRange(_) => "ParameterOutOfRange",
        Error::NotReached { .. } => "NotReached",
        Error::NoSplittingUpTo { .. } => "NoSplittingUpTo",
        Error::Io(_) => "Io",
        Error::Json(_) => "Json",
        Error::Parse(_) => "Parse",
    }
}

/// Exit code classification: 1 for mathematical verdicts (the input fails a
/// check), 2 for operational failures (bad files, exhausted budgets).
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NotEtale(_)
        | Error::CommutationFailure(_)
        | Error::NotEquivariant(_)
        | Error::NotAdmissible(_)
        | Error::NotFullRank
        | Error::NotInvertible(_)
        | Error::NotComparable(_)
        | Error::NotAUnit(_)
        | Error::DivisionByZero
        | Error::NoSplittingUpTo { .. } => 1,
        _ => 2,
    }
}

fn error_report(command: &str, e: &Error) -> Value {
    let mut m = report_shell(command);
    let mut err = Map::new();
    err.insert("kind".into(), Value::String(error_kind(e).into()));
    err.insert("message".into(), Value::String(e.to_string()));
    m.insert("error".into(), Value::Object(err));
    m.insert("verdict".into(), Value::String("failed".into()));
    Value::Object(m)
}

// ---------------------------------------------------------------------------
// Command implementations
// ---------------------------------------------------------------------------

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// The one true report rendering: pretty-printed JSON with sorted/stable
/// keys and a trailing newline, identical bytes for identical values.
pub fn render_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports are serializable");
    s.push('\n');
    s
}

fn validate_cmd(path: &Path) -> Result<Value> {
    let v = read_json(path)?;
    let module = module_from_json(&v)?;
    let mut rep = report_shell("validate");
    rep.insert("input".into(), module_to_json(&module));
    module.validate()?;
    rep.insert("verdict".into(), Value::String("ok".into()));
    Ok(Value::Object(rep))
}

fn psi_cmd(path: &Path, prec: i64) -> Result<Value> {
    let v = read_json(path)?;
    let module = module_from_json(&v)?;
    module.check_etale()?;
    let ctx = &module.ctx;
    let target = vec![Prec::Finite(prec); ctx.nvars];
    let mut rep = report_shell("psi");
    rep.insert("input".into(), module_to_json(&module));
    let mut per_dir = Map::new();
    for d in 0..ctx.nvars {
        let a_inv = module.phi_inv_matrix(d, &target)?;
        let mut out = SMat::zero(ctx, module.rank, module.rank);
        for j in 0..module.rank {
            let mut x = vec![Series::zero(ctx); module.rank];
            x[j] = Series::one(ctx);
            let y = module.apply_psi(d, &x, &a_inv);
            for (i, yi) in y.into_iter().enumerate() {
                *out.at_mut(i, j) = yi.truncate(&target);
            }
        }
        per_dir.insert(dir_key(d), mat_to_json(&out));
    }
    rep.insert("psi_of_basis".into(), Value::Object(per_dir));
    rep.insert("verdict".into(), Value::String("ok".into()));
    Ok(Value::Object(rep))
}

fn lattice_cmd(command: &str, path: &Path) -> Result<Value> {
    let v = read_json(path)?;
    let module = module_from_json(&v)?;
    let mut rep = report_shell(command);
    rep.insert("input".into(), module_to_json(&module));
    for (k, val) in lattice_payload(&module)? {
        rep.insert(k, val);
    }
    rep.insert("verdict".into(), Value::String("ok".into()));
    Ok(Value::Object(rep))
}

fn dual_cmd(path: &Path, opts: &DeriveOptions, certify_level: u32) -> Result<Value> {
    let v = read_json(path)?;
    let pres = presentation_from_json(&v)?;
    let mut rep = report_shell("dual");
    rep.insert("input".into(), presentation_to_json(&pres));
    let derived = derive_module(&pres, opts)?;
    rep.insert("module".into(), module_to_json(&derived.module));
    rep.insert("rank".into(), Value::from(derived.rank));
    rep.insert("prec".into(), Value::from(derived.prec));
    rep.insert(
        "socle_certificate".into(),
        Value::Bool(socle_certified_minimal(&pres, certify_level)?),
    );
    rep.insert("verdict".into(), Value::String("ok".into()));
    Ok(Value::Object(rep))
}

fn report_exactness_cmd(path: &Path, splitting_bound: Option<i64>) -> Result<Value> {
    let v = read_json(path)?;
    let (sm, example) = split_modules_from_json(&v)?;
    let mut rep = report_shell("report-exactness");
    rep.insert("input".into(), Value::String(path.display().to_string()));
    rep.insert("example".into(), example);
    let ex = exactness_report(&sm)?;
    rep.insert("exactness".into(), exactness_report_json(&ex));
    if let Some(bound) = splitting_bound {
        rep.insert("splitting".into(), splitting_verdict(&sm, bound)?);
    }
    rep.insert("verdict".into(), Value::String("ok".into()));
    Ok(Value::Object(rep))
}

fn splitting_verdict(sm: &SplitModules, bound: i64) -> Result<Value> {
    let mut m = Map::new();
    match splitting_search(sm, bound) {
        Ok(section) => {
            m.insert("split".into(), Value::Bool(true));
            m.insert("section".into(), mat_to_json(&section));
        }
        Err(Error::NoSplittingUpTo { bound }) => {
            m.insert("split".into(), Value::Bool(false));
            m.insert("certified_bound".into(), Value::from(bound));
        }
        Err(e) => return Err(e),
    }
    Ok(Value::Object(m))
}

fn lubin_tate_cmd(a: &LubinTateArgs) -> Result<Value> {
    let local = LocalCtx::new(a.p, a.e, a.f, a.tprec + 2)?;
    let unit = parse_unit(&local, &a.gamma)?;
    let series = GammaSeries::compute(&local, &unit, a.tprec)?;
    let certified = series.verify_functional_equation()?;
    let k = FieldCtx::new(a.p, a.f, None)?;
    let reduced = series.reduction_in_field(&k)?;
    let mut rep = report_shell("lubin-tate");
    let mut input = Map::new();
    input.insert("ring".into(), serde_json::to_value(RingJson {
        p: a.p,
        m: a.f,
        f: a.f,
        e: a.e,
    })?);
    input.insert("tprec".into(), Value::from(a.tprec as i64));
    input.insert("gamma".into(), Value::String(a.gamma.clone()));
    rep.insert("input".into(), Value::Object(input));
    rep.insert("unit".into(), Value::String(unit_label(&unit)));
    // Phi(t) = pi t + t^q reduces to t^q; recomputed, not asserted.
    let mut phi = Map::new();
    let pi_red = local.residue_class(&local.pi());
    if pi_red != 0 {
        phi.insert(power_key(1), Value::String(k.format_elem(pi_red)));
    }
    phi.insert(
        power_key(local.q as usize),
        Value::String(k.format_elem(1)),
    );
    rep.insert("phi_mod_pi".into(), Value::Object(phi));
    rep.insert(
        "series_mod_pi".into(),
        power_series_to_json(&k, &reduced),
    );
    rep.insert(
        "certified_pi_digits".into(),
        Value::from(certified as i64),
    );
    rep.insert("verdict".into(), Value::String("ok".into()));
    Ok(Value::Object(rep))
}

fn parse_int_list(s: &str) -> Result<Vec<i64>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad integer '{part}'")))
        })
        .collect()
}

fn example_cmd(a: &ExampleArgs) -> Result<Value> {
    let p = a.p;
    let field = FieldCtx::new(p, 1, None)?;
    let mut rep = report_shell("example");
    let mut params = Map::new();
    params.insert("letter".into(), Value::String(a.letter.clone()));
    params.insert("p".into(), Value::from(p));
    match a.letter.as_str() {
        "a" => {
            let vars = a.vars;
            let broadcast = |list: Vec<i64>| -> Result<Vec<i64>> {
                if list.len() == vars {
                    Ok(list)
                } else if list.len() == 1 {
                    Ok(vec![list[0]; vars])
                } else {
                    Err(Error::ParameterOutOfRange(format!(
                        "--c and --m need {vars} entries for --vars {vars}"
                    )))
                }
            };
            let c_ints = broadcast(parse_int_list(a.c.as_deref().unwrap_or("1"))?)?;
            let m_ints = broadcast(parse_int_list(a.m.as_deref().unwrap_or("0"))?)?;
            let c: Vec<u16> = c_ints.iter().map(|&n| field.from_int(n)).collect();
            params.insert("vars".into(), Value::from(vars as i64));
            params.insert(
                "c".into(),
                Value::Array(c_ints.iter().map(|&n| Value::from(n)).collect()),
            );
            params.insert(
                "m".into(),
                Value::Array(m_ints.iter().map(|&n| Value::from(n)).collect()),
            );
            rep.insert("input".into(), Value::Object(params));
            if a.emit_bundle.is_some() {
                return Err(Error::ParameterOutOfRange(
                    "example a has no sub/total/quotient split to bundle".into(),
                ));
            }
            if vars == 1 {
                let pres = example_a(p, &c, &m_ints, &BTreeSet::new())?;
                let opts = example_options(a.target_prec.unwrap_or(64));
                let derived = derive_module(&pres, &opts)?;
                rep.insert("module".into(), module_to_json(&derived.module));
                let mut lat = Map::new();
                for (k, v) in lattice_payload(&derived.module)? {
                    lat.insert(k, v);
                }
                rep.insert("lattices".into(), Value::Object(lat));
                rep.insert(
                    "socle_certificate".into(),
                    Value::Bool(socle_certified_minimal(&pres, a.level.unwrap_or(4))?),
                );
            } else {
                let fam = family_report(p, &c, &m_ints, a.level.unwrap_or(3))?;
                rep.insert("lattice_family".into(), family_report_json(&fam));
            }
        }
        "b" | "c" | "d" => {
            let (split, default_prec) = match a.letter.as_str() {
                "b" => {
                    let alpha = field.from_int(a.alpha);
                    params.insert("alpha".into(), Value::from(a.alpha));
                    params.insert("a".into(), Value::from(a.a));
                    (example_b(p, alpha, a.a)?, 150)
                }
                "c" => {
                    params.insert("s".into(), Value::from(a.s));
                    params.insert("a".into(), Value::from(a.a));
                    (example_c(p, a.s, a.a)?, 220)
                }
                _ => {
                    params.insert("kappa".into(), Value::from(a.kappa));
                    params.insert("s".into(), Value::from(a.s));
                    (example_d(p, a.kappa, a.s)?, 220)
                }
            };
            let params = Value::Object(params);
            rep.insert("input".into(), params.clone());
            let opts = example_options(a.target_prec.unwrap_or(default_prec));
            let triple = split.derive(&opts)?;
            let sm = triple.split_modules();
            if let Some(path) = &a.emit_bundle {
                let bundle = split_modules_to_json(&sm, params.clone());
                fs::write(path, render_json(&bundle))?;
            }
            let ex = exactness_report(&sm)?;
            rep.insert("exactness".into(), exactness_report_json(&ex));
            if a.letter == "b" {
                rep.insert(
                    "socle_certificate".into(),
                    Value::Bool(socle_certified_minimal(&split.total, a.level.unwrap_or(4))?),
                );
                rep.insert(
                    "remark".into(),
                    Value::String(
                        "informational: the left constituent is the twist of the right one \
                         by the reduced cyclotomic character"
                            .into(),
                    ),
                );
            }
            if a.letter == "d" {
                let q = p as i64;
                let bound = a.bound.unwrap_or(2 * (q + 2));
                rep.insert("splitting".into(), splitting_verdict(&sm, bound)?);
                if a.s == 0 {
                    rep.insert(
                        "remark".into(),
                        Value::String(
                            "informational: at s = 0 the non-splitting is the module-side \
                             counterpart of a degeneracy criterion that is not computed here"
                                .into(),
                        ),
                    );
                }
            }
        }
        other => {
            return Err(Error::ParameterOutOfRange(format!(
                "unknown example letter '{other}' (expected a, b, c or d)"
            )));
        }
    }
    rep.insert("verdict".into(), Value::String("ok".into()));
    Ok(Value::Object(rep))
}

/// Builds the canonical trivial rank-one module file content.  Used by the
/// shipped fixtures and their regression tests.
pub fn trivial_fixture_json(p: u64, qp: bool) -> Result<Value> {
    Ok(module_to_json(&trivial_rank_one(p, qp)?))
}

// ---------------------------------------------------------------------------
// The command line
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "psi-lattice",
    version,
    about = "Canonical psi-stable lattices in mod-p etale phi/Gamma-modules",
    after_help = "Reports are byte-deterministic JSON; exit codes: 0 ok, 1 failed \
                  mathematical check, 2 operational error.  The randomized test \
                  suites honor the PSI_LATTICE_SEED environment variable."
)]
struct Cli {
    /// Write the report here instead of stdout (with several inputs: a
    /// directory receiving one `<stem>.report.json` per input).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Process several input files concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct FileArgs {
    /// Input file(s).
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Args)]
struct DualArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Certified t-precision of the derived phi-matrices.
    #[arg(long, default_value_t = 64)]
    target_prec: i64,
    /// Certified t-precision of the derived unit matrices.
    #[arg(long, default_value_t = 40)]
    gamma_prec: i64,
    /// Depth of directly measured unit-matrix coefficients.
    #[arg(long, default_value_t = 8)]
    gamma_seed: usize,
    /// Cap on the expansion level of the window.
    #[arg(long, default_value_t = 12)]
    level_cap: u32,
    /// Window level for the socle-generation certificate.
    #[arg(long, default_value_t = 4)]
    certify_level: u32,
}

#[derive(Args)]
struct PsiArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Output precision of the computed psi-images.
    #[arg(long, default_value_t = 16)]
    prec: i64,
}

#[derive(Args)]
struct ExampleArgs {
    /// Which worked example: a, b, c or d.
    letter: String,
    /// The prime p (the examples use q = p).
    #[arg(long, default_value_t = 3)]
    p: u64,
    /// Number of variables for example a.
    #[arg(long, default_value_t = 1)]
    vars: usize,
    /// Comma-separated coefficients for example a.
    #[arg(long)]
    c: Option<String>,
    /// Comma-separated unit weights for example a.
    #[arg(long)]
    m: Option<String>,
    /// Extension coefficient for example b (as an integer mod p).
    #[arg(long, default_value_t = 1)]
    alpha: i64,
    /// Twist parameter a for examples b and c.
    #[arg(long, default_value_t = 0)]
    a: i64,
    /// Shift parameter s for examples c and d.
    #[arg(long, default_value_t = 0)]
    s: i64,
    /// Weight parameter kappa for example d.
    #[arg(long, default_value_t = 1)]
    kappa: i64,
    /// Support bound for the splitting search of example d
    /// (default 2(q+2)).
    #[arg(long)]
    bound: Option<i64>,
    /// Which report to compute (informational; the letter decides).
    #[arg(long)]
    report: Option<String>,
    /// Also write a bundle file with the derived split for
    /// `report-exactness`.
    #[arg(long)]
    emit_bundle: Option<PathBuf>,
    /// Override the derived target precision.
    #[arg(long)]
    target_prec: Option<i64>,
    /// Window level for family enumeration / socle certificates.
    #[arg(long)]
    level: Option<u32>,
}

#[derive(Args)]
struct LubinTateArgs {
    /// The prime p.
    #[arg(long, default_value_t = 3)]
    p: u64,
    /// Ramification index of F.
    #[arg(long, default_value_t = 1)]
    e: usize,
    /// Residue degree of F.
    #[arg(long, default_value_t = 1)]
    f: usize,
    /// t-adic precision of the multiplication series.
    #[arg(long, default_value_t = 32)]
    tprec: usize,
    /// The acting unit: teich, 1+p, (1+p)^2, an integer, or coordinates.
    #[arg(long, default_value = "1+p")]
    gamma: String,
}

#[derive(Args)]
struct ReportExactnessArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Also run the splitting search with this support bound.
    #[arg(long)]
    splitting_bound: Option<i64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a module file: shapes, etale condition, commutation.
    Validate(FileArgs),
    /// Apply psi to the standard basis of a module.
    Psi(PsiArgs),
    /// Compute the maximal stable lattice of a one-variable module.
    Dsharp(FileArgs),
    /// Compute the minimal stable lattice of a one-variable module.
    Dnatural(FileArgs),
    /// Derive the module dual to a finitely presented torsion module.
    Dual(DualArgs),
    /// Run one of the worked examples a-d.
    Example(ExampleArgs),
    /// Print the Lubin-Tate multiplication series of a unit.
    #[command(name = "lubin-tate")]
    LubinTate(LubinTateArgs),
    /// Recompute exactness (and optionally splitting) from a bundle file.
    #[command(name = "report-exactness")]
    ReportExactness(ReportExactnessArgs),
}

fn finish(command: &str, r: Result<Value>) -> (i32, String) {
    match r {
        Ok(v) => (0, render_json(&v)),
        Err(e) => (exit_code_for(&e), render_json(&error_report(command, &e))),
    }
}

/// Runs a per-file command over the batch, `jobs` files at a time, and
/// delivers the outputs in input order.
fn run_batch<F>(files: &[PathBuf], jobs: usize, output: &Option<PathBuf>, f: F) -> i32
where
    F: Fn(&Path) -> (i32, String) + Sync,
{
    let jobs = jobs.max(1);
    let mut results: Vec<Option<(i32, String)>> = Vec::new();
    results.resize_with(files.len(), || None);
    if jobs == 1 || files.len() <= 1 {
        for (i, path) in files.iter().enumerate() {
            results[i] = Some(f(path));
        }
    } else {
        let slots: Vec<std::sync::Mutex<Option<(i32, String)>>> =
            files.iter().map(|_| std::sync::Mutex::new(None)).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(files.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= files.len() {
                        break;
                    }
                    *slots[i].lock().unwrap() = Some(f(&files[i]));
                });
            }
        });
        for (i, slot) in slots.into_iter().enumerate() {
            results[i] = slot.into_inner().unwrap();
        }
    }
    let mut code = 0;
    for (path, result) in files.iter().zip(results) {
        let (c, text) = result.expect("every batch slot is filled");
        code = code.max(c);
        if let Err(e) = deliver(path, files.len() > 1, output, &text) {
            eprintln!("cannot write report for {}: {e}", path.display());
            code = code.max(2);
        }
    }
    code
}

fn deliver(
    input: &Path,
    many: bool,
    output: &Option<PathBuf>,
    text: &str,
) -> std::io::Result<()> {
    match (many, output) {
        (false, None) => {
            print!("{text}");
            Ok(())
        }
        (false, Some(path)) => fs::write(path, text),
        (true, maybe_dir) => {
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "report".into());
            let name = format!("{stem}.report.json");
            let target = match maybe_dir {
                Some(dir) => dir.join(name),
                None => input.with_file_name(name),
            };
            fs::write(target, text)
        }
    }
}

fn run_single(output: &Option<PathBuf>, r: (i32, String)) -> i32 {
    let (code, text) = r;
    match output {
        None => print!("{text}"),
        Some(path) => {
            if let Err(e) = fs::write(path, &text) {
                eprintln!("cannot write report: {e}");
                return 2;
            }
        }
    }
    code
}

/// Parses the argument list and runs the selected command.  Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let output = cli.output;
    let jobs = cli.jobs;
    match cli.cmd {
        Cmd::Validate(a) => run_batch(&a.files, jobs, &output, |p| {
            finish("validate", validate_cmd(p))
        }),
        Cmd::Psi(a) => run_batch(&a.files, jobs, &output, |p| {
            finish("psi", psi_cmd(p, a.prec))
        }),
        Cmd::Dsharp(a) => run_batch(&a.files, jobs, &output, |p| {
            finish("dsharp", lattice_cmd("dsharp", p))
        }),
        Cmd::Dnatural(a) => run_batch(&a.files, jobs, &output, |p| {
            finish("dnatural", lattice_cmd("dnatural", p))
        }),
        Cmd::Dual(a) => {
            let opts = DeriveOptions {
                target_prec: a.target_prec,
                gamma_prec: a.gamma_prec,
                gamma_seed: a.gamma_seed,
                level_cap: a.level_cap,
            };
            run_batch(&a.files, jobs, &output, |p| {
                finish("dual", dual_cmd(p, &opts, a.certify_level))
            })
        }
        Cmd::Example(a) => run_single(&output, finish("example", example_cmd(&a))),
        Cmd::LubinTate(a) => run_single(&output, finish("lubin-tate", lubin_tate_cmd(&a))),
        Cmd::ReportExactness(a) => run_batch(&a.files, jobs, &output, |p| {
            finish(
                "report-exactness",
                report_exactness_cmd(p, a.splitting_bound),
            )
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::rank_one_product;

    fn trivial(p: u64, qp: bool) -> PhiGammaModule {
        trivial_rank_one(p, qp).unwrap()
    }

    #[test]
    fn module_json_roundtrip_is_canonical() {
        for md in [trivial(2, true), trivial(3, false)] {
            let v = module_to_json(&md);
            let back = module_from_json(&v).unwrap();
            assert_eq!(v, module_to_json(&back));
            let text = render_json(&v);
            assert_eq!(text, render_json(&module_to_json(&back)));
        }
    }

    #[test]
    fn module_json_rejects_unknown_fields() {
        let mut v = module_to_json(&trivial(3, true));
        v.as_object_mut()
            .unwrap()
            .insert("surprise".into(), Value::Null);
        assert!(matches!(module_from_json(&v), Err(Error::Json(_))));
    }

    #[test]
    fn series_json_preserves_precision() {
        let md = trivial(3, true);
        let ctx = &md.ctx;
        let mut s = Series::from_terms(ctx, [(vec![-1], 2u16), (vec![2], 1u16)]);
        s.meet_prec(&[Prec::Finite(5)]);
        let v = series_to_json(&s);
        let back = series_from_json(ctx, &v).unwrap();
        assert!(back.congruent(&s));
        assert_eq!(back.prec, vec![Prec::Finite(5)]);
        assert_eq!(v, series_to_json(&back));
    }

    #[test]
    fn presentation_json_roundtrip() {
        let pres = example_a(3, &[1], &[0], &BTreeSet::new()).unwrap();
        let v = presentation_to_json(&pres);
        let back = presentation_from_json(&v).unwrap();
        assert_eq!(v, presentation_to_json(&back));
        assert_eq!(pres.gen_names, back.gen_names);
        assert_eq!(pres.t_mats, back.t_mats);
        assert_eq!(pres.nilpotency, back.nilpotency);
    }

    #[test]
    fn two_variable_monomial_keys_roundtrip() {
        let one = trivial(3, true);
        let md = rank_one_product(&one, &one).unwrap();
        let v = module_to_json(&md);
        let back = module_from_json(&v).unwrap();
        assert_eq!(v, module_to_json(&back));
    }

    #[test]
    fn trivial_module_lattice_payload_has_gap_one() {
        let payload = lattice_payload(&trivial(3, true)).unwrap();
        assert_eq!(payload["quotient_dim"], Value::from(1i64));
    }

    #[test]
    fn error_classification_separates_math_from_io() {
        assert_eq!(exit_code_for(&Error::NotEtale("x".into())), 1);
        assert_eq!(exit_code_for(&Error::Parse("x".into())), 2);
        assert_eq!(exit_code_for(&Error::PrecisionExhausted("x".into())), 2);
        assert_eq!(error_kind(&Error::NotFullRank), "NotFullRank");
    }
}
