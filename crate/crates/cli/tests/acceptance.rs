//! Acceptance gate: every headline requirement runs here, printing one
//! PASS/FAIL line per criterion (run with `--nocapture` to see them on
//! success).

use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eqfree_core::*;

fn criterion(name: &str, ok: bool, detail: &str) {
    if ok {
        println!("PASS: {name} ({detail})");
    } else {
        println!("FAIL: {name} ({detail})");
        panic!("{name}: {detail}");
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_eqfree")
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("eqfree-acceptance-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Run the CLI, returning (exit code, stdout).
fn run_cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(bin()).args(args).output().expect("spawn eqfree");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn parse_field(stdout: &str, key: &str) -> Option<f64> {
    for line in stdout.lines() {
        if let Some(rest) = line.split(&format!("{key} = ")).nth(1) {
            let tok = rest.split(|c: char| c == ',' || c == ' ').next()?;
            if let Ok(v) = tok.parse::<f64>() {
                return Some(v);
            }
        }
    }
    None
}

fn analyze_gamma(config: &str, tag: &str) -> f64 {
    let dir = fresh_dir(tag);
    let cfg = config_path(config);
    let (code, stdout) = run_cli(&[
        "analyze",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "analyze {config} exited {code}\n{stdout}");
    parse_field(&stdout, "gamma").expect("gamma line in analyze output")
}

#[test]
fn duffing_state_dependent_storage_gain() {
    let start = std::time::Instant::now();
    let gamma = analyze_gamma("duffing.json", "duf-sd");
    let secs = start.elapsed().as_secs_f64();
    criterion(
        "duffing state-dependent storage gain in [0.10, 0.16]",
        (0.10..=0.16).contains(&gamma) && secs < 300.0,
        &format!("gamma = {gamma:.5}, {secs:.1}s"),
    );
}

#[test]
fn duffing_constant_storage_gain_and_conservativeness() {
    let gamma_const = analyze_gamma("duffing-constM.json", "duf-c");
    let gamma_sd = analyze_gamma("duffing.json", "duf-sd2");
    criterion(
        "duffing constant storage gain in [0.37, 0.47]",
        (0.37..=0.47).contains(&gamma_const),
        &format!("gamma = {gamma_const:.5}"),
    );
    criterion(
        "constant storage more conservative than state-dependent",
        gamma_const > gamma_sd,
        &format!("{gamma_const:.5} > {gamma_sd:.5}"),
    );
}

#[test]
fn duffing_dset_within_reference_bounds() {
    let dir = fresh_dir("dset");
    let cfg = config_path("duffing.json");
    let (code, _stdout) = run_cli(&[
        "dset",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(dir.join("dset.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let lo: Vec<f64> = v["lo"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let hi: Vec<f64> = v["hi"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let reference = [0.011, 0.23];
    let mut ok = true;
    for d in 0..2 {
        for est in [lo[d].abs(), hi[d].abs()] {
            ok &= (est - reference[d]).abs() <= 0.10 * reference[d];
        }
    }
    criterion(
        "one-step increment box within 10% per bound of reference",
        ok,
        &format!(
            "[{:.6}, {:.6}] x [{:.6}, {:.6}]",
            lo[0], hi[0], lo[1], hi[1]
        ),
    );
}

/// Discrete-time LTI system as expression trees.
fn lti_system(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> DtSystem {
    let n_x = a.nrows();
    let n_w = b.ncols();
    let n_z = c.nrows();
    let states: Vec<String> = (0..n_x).map(|i| format!("x{}", i + 1)).collect();
    let inputs: Vec<String> = (0..n_w).map(|i| format!("w{}", i + 1)).collect();
    let state_refs: Vec<&str> = states.iter().map(|s| s.as_str()).collect();
    let input_refs: Vec<&str> = inputs.iter().map(|s| s.as_str()).collect();
    let vars = VarSpace::new(&state_refs, &input_refs, n_z).unwrap();
    let lin = |ra: &[f64], rb: &[f64]| -> Expr {
        let mut terms: Vec<String> = Vec::new();
        for (j, v) in ra.iter().enumerate() {
            terms.push(format!("({v:.17e})*x{}", j + 1));
        }
        for (j, v) in rb.iter().enumerate() {
            terms.push(format!("({v:.17e})*w{}", j + 1));
        }
        parse(&terms.join(" + "), &vars).unwrap()
    };
    let f: Vec<Expr> = (0..n_x)
        .map(|i| {
            let ra: Vec<f64> = a.row(i).iter().copied().collect();
            let rb: Vec<f64> = b.row(i).iter().copied().collect();
            lin(&ra, &rb)
        })
        .collect();
    let h: Vec<Expr> = (0..n_z)
        .map(|i| {
            let rc: Vec<f64> = c.row(i).iter().copied().collect();
            let rd: Vec<f64> = d.row(i).iter().copied().collect();
            lin(&rc, &rd)
        })
        .collect();
    DtSystem::new(vars, f, h).unwrap()
}

/// Frequency-sweep H-infinity norm over the unit circle.
fn hinf_oracle(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    samples: usize,
) -> f64 {
    use nalgebra::Complex;
    let n = a.nrows();
    let ac = a.map(|v| Complex::new(v, 0.0));
    let bc = b.map(|v| Complex::new(v, 0.0));
    let cc = c.map(|v| Complex::new(v, 0.0));
    let dc = d.map(|v| Complex::new(v, 0.0));
    let mut best = 0.0f64;
    for k in 0..samples {
        let th = std::f64::consts::PI * (k as f64) / ((samples - 1) as f64);
        let z = Complex::new(th.cos(), th.sin());
        let zi = DMatrix::from_diagonal_element(n, n, z) - &ac;
        let g = &cc * zi.lu().solve(&bc).unwrap() + &dc;
        let sv = g.singular_values();
        best = best.max(sv.iter().cloned().fold(0.0, f64::max));
    }
    best
}

fn min_l2_gain(sys: &DtSystem) -> SolveResult {
    let n = sys.vars.n_vars();
    let region = BoxRegion::new(vec![-1.0; n], vec![1.0; n]).unwrap();
    let dset = estimate_dset(sys, &Grid::uniform(region.clone(), 5), 1.0).unwrap();
    let emb = build_identity_embedding(sys, &region, &dset).unwrap();
    let basis = StorageBasis::constant(sys.vars.names());
    let p_grid = Grid::uniform(emb.map.p_box.clone(), 2);
    let prob = assemble_incremental_l2(&emb, &basis, &p_grid, 2, 1e-8).unwrap();
    solve(&prob).unwrap()
}

#[test]
fn lti_gains_match_hinf_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let n = rng.gen_range(1..=4usize);
        let n_w = rng.gen_range(1..=2usize);
        let n_z = rng.gen_range(1..=2usize);
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let rho = a
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max);
        if rho > 0.0 {
            a *= 0.8 / rho.max(0.8);
        }
        let b = DMatrix::from_fn(n, n_w, |_, _| rng.gen_range(-1.0..1.0));
        let c = DMatrix::from_fn(n_z, n, |_, _| rng.gen_range(-1.0..1.0));
        let d = DMatrix::from_fn(n_z, n_w, |_, _| rng.gen_range(-1.0..1.0));
        let res = min_l2_gain(&lti_system(&a, &b, &c, &d));
        assert_eq!(res.status, SolveStatus::Feasible, "trial {trial}");
        let gamma = res.gamma.unwrap();
        let oracle = hinf_oracle(&a, &b, &c, &d, 10_000);
        worst = worst.max((gamma - oracle).abs() / oracle.max(1e-12));
    }
    criterion(
        "20 random stable LTI gains within 0.5% of frequency sweep",
        worst < 5e-3,
        &format!("worst relative error {worst:.2e}"),
    );

    let one = DMatrix::from_element(1, 1, 1.0);
    let res = min_l2_gain(&lti_system(
        &DMatrix::from_element(1, 1, 0.5),
        &one,
        &one,
        &DMatrix::zeros(1, 1),
    ));
    let gamma = res.gamma.unwrap();
    let m = gamma / res.m[0][(0, 0)];
    criterion(
        "scalar instance gamma = 2 +/- 0.002 with storage m = 2 +/- 0.05",
        (gamma - 2.0).abs() < 2e-3 && (m - 2.0).abs() < 0.05,
        &format!("gamma = {gamma:.5}, m = {m:.4}"),
    );
}

#[test]
fn id_inequality_reproduction() {
    let dir = fresh_dir("verify");
    let cfg = config_path("duffing.json");
    let (code, _) = run_cli(&[
        "analyze",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let cert = dir.join("certificate.json");
    let (code, stdout) = run_cli(&[
        "verify",
        cfg.to_str().unwrap(),
        cert.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    let min_margin = parse_field(&stdout, "min margin").expect("min margin line");
    let final_dist = parse_field(&stdout, "final distance").expect("final distance field");
    criterion(
        "incremental dissipation margin >= -1e-6 over the scenario pair",
        code == 0 && min_margin >= -1e-6,
        &format!("min margin = {min_margin:.3e}, exit {code}"),
    );
    criterion(
        "trajectory pair converges: final distance < 1e-3",
        final_dist < 1e-3,
        &format!("final distance = {final_dist:.3e}"),
    );
}

fn duffing_rk4() -> DtSystem {
    let vars = VarSpace::new(&["x1", "x2"], &["w"], 1).unwrap();
    let f1 = parse("x2", &vars).unwrap();
    let f2 = parse("-8*x1 - 10*x1^3 - 4*x2 + w", &vars).unwrap();
    let h = parse("x1", &vars).unwrap();
    let ct = CtSystem::new(vars, vec![f1, f2], vec![h]).unwrap();
    rk4_discretize(&ct, 0.01)
}

#[test]
fn property_velocity_residual() {
    let sys = duffing_rk4();
    let jac = SystemJacobians::new(&sys);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_r = 0.0f64;
    for _ in 0..1000 {
        let xa = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let xb = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let wa = DVector::from_element(1, rng.gen_range(-1.0..1.0));
        let wb = DVector::from_element(1, rng.gen_range(-1.0..1.0));
        let r = velocity_residual(&sys, &jac, &xa, &wa, &xb, &wb, 16).unwrap();
        max_r = max_r.max(r);
    }
    criterion(
        "velocity-form residual < 1e-9 over 1000 random segments",
        max_r < 1e-9,
        &format!("max residual {max_r:.3e}"),
    );
}

/// Random expression over `n_vars` variables using only operations that are
/// smooth everywhere (finite-difference friendly).
fn random_expr(rng: &mut ChaCha8Rng, n_vars: usize, depth: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.3) {
        return if rng.gen_bool(0.5) {
            Expr::Var(rng.gen_range(0..n_vars))
        } else {
            Expr::Const(rng.gen_range(-2.0..2.0))
        };
    }
    use eqfree_core::expr::{BinOp, UnOp};
    let sub = |rng: &mut ChaCha8Rng| Box::new(random_expr(rng, n_vars, depth - 1));
    match rng.gen_range(0..6) {
        0 => Expr::Bin(BinOp::Add, sub(rng), sub(rng)),
        1 => Expr::Bin(BinOp::Sub, sub(rng), sub(rng)),
        2 => Expr::Bin(BinOp::Mul, sub(rng), sub(rng)),
        3 => Expr::Un(UnOp::Sin, sub(rng)),
        4 => Expr::Un(UnOp::Tanh, sub(rng)),
        _ => Expr::Pow(sub(rng), 2),
    }
}

#[test]
fn property_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n_vars = rng.gen_range(1..=3usize);
        let e = random_expr(&mut rng, n_vars, 4);
        let vals: Vec<f64> = (0..n_vars).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for j in 0..n_vars {
            let g = e.diff(j).eval(&vals).unwrap();
            let h = 1e-6;
            let mut vp = vals.clone();
            let mut vm = vals.clone();
            vp[j] += h;
            vm[j] -= h;
            let fd = (e.eval(&vp).unwrap() - e.eval(&vm).unwrap()) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    criterion(
        "exact derivatives match central differences (rel < 1e-6)",
        worst < 1e-6,
        &format!("worst relative error {worst:.3e}"),
    );
}

#[test]
fn property_geodesic_energy_bounds() {
    // Constant metric: geodesic energy equals the quadratic form exactly.
    let m0 = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0]);
    let sys = duffing_rk4();
    let region = BoxRegion::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let dset = estimate_dset(&sys, &Grid::uniform(region.clone(), 7), 1.05).unwrap();
    let emb = build_identity_embedding(&sys, &region, &dset).unwrap();
    let basis_c = StorageBasis::constant(sys.vars.names());
    let metric_c = StorageMetric::new(vec![m0.clone()], basis_c, &emb.map, StorageForm::Direct, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst_eq = 0.0f64;
    let mut ok_bound = true;
    for _ in 0..20 {
        let a = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let d = &b - &a;
        let quad = (d.transpose() * &m0 * &d)[(0, 0)];
        let e = incremental_storage(&metric_c, &b, &a, DEFAULT_SEGMENTS).unwrap();
        worst_eq = worst_eq.max((e - quad).abs());
    }
    criterion(
        "constant-metric geodesic equals the quadratic form (1e-10)",
        worst_eq < 1e-10,
        &format!("worst deviation {worst_eq:.3e}"),
    );

    // State-dependent metric: geodesic never beats the straight line.
    let basis_s = StorageBasis::parse(
        &["p1".into(), "p2".into(), "p3".into()],
        &["p1^2".into()],
    )
    .unwrap();
    let coeffs = vec![DMatrix::identity(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5])];
    let metric_s = StorageMetric::new(coeffs, basis_s, &emb.map, StorageForm::Direct, 1.0);
    for _ in 0..20 {
        let a = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let straight = path_energy(
            &metric_s,
            &PiecewisePath::straight(&a, &b, DEFAULT_SEGMENTS),
        )
        .unwrap();
        let (_, geo) = geodesic(&metric_s, &a, &b, DEFAULT_SEGMENTS).unwrap();
        ok_bound &= geo <= straight + 1e-12;
    }
    criterion(
        "geodesic energy never exceeds straight-line energy",
        ok_bound,
        "20 random state pairs",
    );
}

/// Shared feasible Duffing storage for the Lyapunov criteria.
fn duffing_storage() -> (DtSystem, DMatrix<f64>) {
    let sys = duffing_rk4();
    let region = BoxRegion::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let dset = estimate_dset(&sys, &Grid::uniform(region.clone(), 11), 1.05).unwrap();
    let emb = build_identity_embedding(&sys, &region, &dset).unwrap();
    let basis = StorageBasis::constant(sys.vars.names());
    let p_grid = Grid::uniform(emb.map.p_box.clone(), 5);
    let prob = assemble_incremental_l2(&emb, &basis, &p_grid, 3, 1e-6).unwrap();
    let res = solve(&prob).unwrap();
    assert_eq!(res.status, SolveStatus::Feasible);
    let gamma = res.gamma.unwrap();
    let m0 = gamma
        * res.m[0]
            .clone()
            .try_inverse()
            .expect("storage invertible at the optimum");
    (sys, m0)
}

#[test]
fn property_shifted_lyapunov_and_level_set() {
    let (sys, m0) = duffing_storage();
    let lyap = ShiftedLyapunov::new(&sys, m0, DVector::zeros(1));
    let x_region = BoxRegion::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
    let set = level_set_fit(&lyap, &x_region, 200).unwrap();
    let w_seq = vec![DVector::zeros(1); 500];
    let mut rng = ChaCha8Rng::seed_from_u64(29);

    let mut monotone = true;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut trials = 0;
    while trials < 50 {
        let x0 = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
        if lyap.eval(&x0).unwrap() > set.level {
            continue;
        }
        trials += 1;
        let traj = simulate(&sys, &x0, &w_seq, 500).unwrap();
        let mut prev = f64::INFINITY;
        for x in &traj.x {
            let v = lyap.eval(x).unwrap();
            if v > prev + 1e-9 {
                monotone = false;
            }
            worst_rise = worst_rise.max(v - prev);
            prev = v;
        }
    }
    criterion(
        "shifted Lyapunov function monotone along 50 unforced trajectories",
        monotone,
        &format!("worst one-step rise {worst_rise:.3e}"),
    );

    let mut contained = true;
    let mut trials = 0;
    while trials < 100 {
        let x0 = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        if lyap.eval(&x0).unwrap() > set.level {
            continue;
        }
        trials += 1;
        let traj = simulate(&sys, &x0, &w_seq, 500).unwrap();
        for x in &traj.x {
            contained &= x_region.contains(x.as_slice(), 1e-12);
        }
    }
    criterion(
        "level-set trajectories never exit the analysis region",
        contained,
        &format!("level = {:.4}, 100 starts", set.level),
    );
}

#[test]
fn property_shifted_gain_arithmetic() {
    let exact = usp_bound(4.0, 0.5, 2.0).unwrap().gamma_tilde == 2.0
        && usp_bound(1.0, 1.0, 0.37).unwrap().gamma_tilde == 0.37
        && usp_bound(3.0, 0.0, 2.0).unwrap().gamma_tilde == 0.0
        && usp_bound(0.0, 1.0, 1.0).is_err();
    criterion(
        "shifted gain bound arithmetic identities exact",
        exact,
        "sqrt(alpha beta^2 gamma^2) on analytic triples",
    );
}
