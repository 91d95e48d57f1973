//! Temporary timing probe for the heavy example runs (deleted before release).

use std::time::Instant;

use psi_lattice::corpus::{example_b, example_c, example_d, example_options, exactness_report};
use psi_lattice::dual::splitting_search;
use psi_lattice::lattice::{Engine, Lattice};
use psi_lattice::series::Prec;

#[test]
#[ignore]
fn probe_b_sharp_detail() {
    let split = example_b(3, 1, 0).unwrap();
    let triple = split.derive(&example_options(150)).unwrap();
    let module = &triple.total.module;
    let ctx = &module.ctx;
    let engine = Engine::new(module).unwrap();
    println!("n = {}, max_iter = {}", engine.n, engine.max_iter);
    let trunc = |l: &Lattice| {
        l.basis_matrix()
            .map(|s| s.truncate(&[Prec::Finite(6)]))
            .entries
            .clone()
    };
    println!("A = {:?}", module.phi[0].map(|s| s.truncate(&[Prec::Finite(8)])).entries);
    let std_l = Lattice::standard(ctx, module.rank);
    let sharp = engine.dsharp().unwrap();
    println!(
        "engine sharp: dim over std = {:?}, basis = {:?}",
        sharp.quotient_dim(&std_l),
        trunc(&sharp)
    );
    // Ascent fixed point F from t^n Lambda.
    let (e0, e1) = engine.standard_pair();
    let mut f = e0.clone();
    for _ in 0..engine.max_iter {
        let next = engine.psi_image(&f).unwrap();
        if next == f {
            break;
        }
        f = next;
    }
    let f_fixed = engine.psi_image(&f).unwrap() == f;
    println!(
        "ascent F: fixed={f_fixed}, dim over std = {:?}, basis = {:?}",
        f.quotient_dim(&std_l),
        trunc(&f)
    );
    // Direct descents from deeper starts.
    for extra in 0..4i64 {
        let start = e1.scale_t(-extra);
        let mut cur = start.clone();
        let mut steps = 0usize;
        let mut ok = true;
        loop {
            let next = engine.psi_image(&cur).unwrap();
            if !cur.contains(&next) {
                println!("extra={extra}: NOT DECREASING at step {steps}");
                ok = false;
                break;
            }
            if next == cur {
                break;
            }
            cur = next;
            steps += 1;
            if steps > 80 {
                println!("extra={extra}: no stabilization");
                ok = false;
                break;
            }
        }
        if ok {
            println!(
                "extra={extra}: steps={steps}, == engine sharp: {}, contains sharp: {}, dim over std: {:?}",
                cur == sharp,
                cur.contains(&sharp),
                cur.quotient_dim(&std_l)
            );
        }
    }
    // Candidate enlargement in the iota direction: sharp + t^{-2} iota-column.
    let iota_col: Vec<_> = (0..module.rank)
        .map(|i| triple.iota.at(i, 0).shift(&[-2]))
        .collect();
    println!(
        "iota col (shifted -2) = {:?}",
        iota_col.iter().map(|s| s.truncate(&[Prec::Finite(5)])).collect::<Vec<_>>()
    );
    let mut gens: Vec<Vec<_>> = sharp.cols.clone();
    gens.push(iota_col);
    let big = Lattice::from_generators(ctx, &gens).unwrap();
    let big_img = engine.psi_image(&big).unwrap();
    println!(
        "big = sharp + t^-2 iota: dim over std = {:?}, psi(big) == big: {}, big contains psi(big): {}, psi(big) contains big: {}",
        big.quotient_dim(&std_l),
        big_img == big,
        big.contains(&big_img),
        big_img.contains(&big)
    );
}

#[test]
#[ignore]
fn probe_b() {
    let t0 = Instant::now();
    let split = example_b(3, 1, 0).unwrap();
    let triple = split.derive(&example_options(150)).unwrap();
    println!("b: derive {:?}", t0.elapsed());
    let t1 = Instant::now();
    let rep = exactness_report(&triple.split_modules()).unwrap();
    println!("b: report {:?} -> {rep:?}", t1.elapsed());
}

#[test]
#[ignore]
fn probe_b_control() {
    let t0 = Instant::now();
    let split = example_b(3, 0, 0).unwrap();
    let triple = split.derive(&example_options(150)).unwrap();
    let rep = exactness_report(&triple.split_modules()).unwrap();
    println!("b0: total {:?} -> {rep:?}", t0.elapsed());
}

#[test]
#[ignore]
fn probe_c_kernel() {
    use std::collections::BTreeMap;

    use psi_lattice::presentation::{sparse_kernel, Expansion};
    let split = example_c(3, 0, 0).unwrap();
    let level: u32 = std::env::var("PROBE_LEVEL")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let exp = Expansion::new(&split.total, level).unwrap();
    let field = exp.pres.ctx.field.clone();
    let name = |m: &psi_lattice::presentation::Mono| {
        format!(
            "t^{} phi^{} {}",
            m.r(0),
            m.j(0),
            exp.pres.gen_names[m.gen()]
        )
    };
    let window: Vec<_> = exp
        .basis
        .iter()
        .copied()
        .filter(|m| m.level() < exp.max_level)
        .collect();
    let mut images: Vec<BTreeMap<usize, u16>> = Vec::new();
    for &m in &window {
        let mut single = psi_lattice::presentation::Elem::new();
        single.insert(m, 1);
        let img = exp.apply_phi(0, &single).unwrap();
        let mut v = BTreeMap::new();
        for (&m2, &c) in &img {
            v.insert(exp.index[&m2], c);
        }
        images.push(v);
    }
    let kernel = sparse_kernel(&field, &images);
    println!("window {}, kernel dim {}", window.len(), kernel.len());
    for kv in kernel.iter().take(4) {
        let desc: Vec<String> = kv
            .iter()
            .map(|(&i, &c)| format!("{}*[{}]", c, name(&window[i])))
            .collect();
        println!("kernel combo: {}", desc.join(" + "));
        // Show the phi image of each monomial in the combo.
        for (&i, _) in kv.iter() {
            let mut single = psi_lattice::presentation::Elem::new();
            single.insert(window[i], 1);
            let img = exp.apply_phi(0, &single).unwrap();
            let d: Vec<String> = img
                .iter()
                .map(|(m2, &c)| format!("{}*[{}]", c, name(m2)))
                .collect();
            println!("  phi({}) = {}", name(&window[i]), d.join(" + "));
        }
    }
}

#[test]
#[ignore]
fn probe_c() {
    for s in [0i64, 1] {
        let t0 = Instant::now();
        let split = example_c(3, s, 0).unwrap();
        let triple = split.derive(&example_options(220)).unwrap();
        println!("c s={s}: derive {:?}", t0.elapsed());
        let t1 = Instant::now();
        let rep = exactness_report(&triple.split_modules()).unwrap();
        println!("c s={s}: report {:?} -> {rep:?}", t1.elapsed());
    }
}

#[test]
#[ignore]
fn probe_d() {
    for (kappa, s) in [(1i64, 0i64), (2, 1)] {
        let t0 = Instant::now();
        let split = example_d(3, kappa, s).unwrap();
        let triple = split.derive(&example_options(220)).unwrap();
        println!("d ({kappa},{s}): derive {:?}", t0.elapsed());
        let t1 = Instant::now();
        let res = splitting_search(&triple.split_modules(), 10);
        println!(
            "d ({kappa},{s}): search {:?} -> {:?}",
            t1.elapsed(),
            res.err()
        );
    }
}
