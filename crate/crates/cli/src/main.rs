//! `eqfree` — batch front end for equilibrium-free stability and
//! performance analysis: analyze a configured system, report its one-step
//! increment set, verify a certificate along simulated trajectory pairs,
//! or just simulate scenarios.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use config::{AnalysisConfig, AnalysisKind, Scenario, SystemKind};
use eqfree_core::{
    assemble_dd_lmi, assemble_incremental_l2, assemble_incremental_passivity, build_embedding,
    estimate_alpha, estimate_dset, parse_with_names, rk4_discretize, simulate, solve, system_hash,
    usp_bound, verify_id, BoxRegion, Certificate, CertificateError, CtSystem, DtSystem, Grid,
    GridEmbedding, LmiError, QsrSupply, RestrictedForm, SimError, SolveResult, SolveStatus,
    StorageBasis, StorageForm, StorageMetric, Trajectory, VarSpace, DEFAULT_QUAD_NODES,
    DEFAULT_SEGMENTS,
};

/// Margins this far below zero are attributed to arithmetic noise rather
/// than a dissipation violation.
const MARGIN_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(
    name = "eqfree",
    version,
    about = "Equilibrium-free stability and performance certification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured analysis and write a certificate.
    Analyze {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Estimate the one-step state-increment box.
    Dset {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Check a certificate's dissipation inequality along scenario pairs.
    Verify {
        config: PathBuf,
        certificate: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Simulate the configured scenarios and write trajectory CSVs.
    Simulate {
        config: PathBuf,
        #[command(flatten)]
        opts: CommonOpts,
    },
}

#[derive(Args)]
struct CommonOpts {
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scheduling grid points per dimension.
    #[arg(long)]
    grid: Option<usize>,
    /// Rate grid points per bounded dimension.
    #[arg(long = "v-grid")]
    v_grid: Option<usize>,
    /// Quadrature nodes for segment-averaged matrices.
    #[arg(long = "quad-nodes")]
    quad_nodes: Option<usize>,
    /// Lower bound enforced on the storage matrix eigenvalues.
    #[arg(long)]
    alpha1: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("analysis infeasible")]
    Infeasible,
    #[error("certificate does not match this system: {0}")]
    HashMismatch(String),
    #[error("{0}")]
    Divergence(String),
    #[error("dissipation margin {0:.6e} is negative beyond tolerance")]
    NegativeMargin(f64),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Infeasible => 3,
            CliError::HashMismatch(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::NegativeMargin(_) => 6,
        }
    }
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Analyze { config, opts } => Loaded::open(&config, &opts).and_then(|l| cmd_analyze(&l)),
        Cmd::Dset { config, opts } => Loaded::open(&config, &opts).and_then(|l| cmd_dset(&l)),
        Cmd::Verify {
            config,
            certificate,
            opts,
        } => Loaded::open(&config, &opts).and_then(|l| cmd_verify(&l, &certificate)),
        Cmd::Simulate { config, opts } => {
            Loaded::open(&config, &opts).and_then(|l| cmd_simulate(&l))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("EQFREE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Config plus everything derived from it that every command needs.
struct Loaded {
    cfg: AnalysisConfig,
    sys: DtSystem,
    /// Sampling time when the model came from discretization.
    ts: Option<f64>,
    /// Stacked (x, w) analysis region.
    full_region: BoxRegion,
    x_region: BoxRegion,
    out_dir: PathBuf,
    quad_nodes: usize,
}

impl Loaded {
    fn open(path: &Path, opts: &CommonOpts) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = AnalysisConfig::from_json(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(n) = opts.grid {
            cfg.grids.p_points = n;
        }
        if let Some(n) = opts.v_grid {
            cfg.grids.v_points = n;
        }
        if let Some(a) = opts.alpha1 {
            cfg.alpha1 = a;
        }
        let quad_nodes = opts.quad_nodes.unwrap_or(DEFAULT_QUAD_NODES);
        if quad_nodes < 2 {
            return Err(CliError::Config("quad-nodes must be at least 2".into()));
        }

        let (sys, ts) = build_system(&cfg)?;
        let n_x = sys.vars.n_x();
        let n_w = sys.vars.n_w();
        check_box(&cfg.region.x.lo, &cfg.region.x.hi, n_x, "region.x")?;
        check_box(&cfg.region.w.lo, &cfg.region.w.hi, n_w, "region.w")?;
        let mut lo = cfg.region.x.lo.clone();
        let mut hi = cfg.region.x.hi.clone();
        lo.extend_from_slice(&cfg.region.w.lo);
        hi.extend_from_slice(&cfg.region.w.hi);
        let full_region = BoxRegion::new(lo, hi).map_err(cfg_err)?;
        let x_region =
            BoxRegion::new(cfg.region.x.lo.clone(), cfg.region.x.hi.clone()).map_err(cfg_err)?;
        for (k, sc) in cfg.scenarios.iter().enumerate() {
            if sc.x0.len() != n_x {
                return Err(CliError::Config(format!(
                    "scenario {k}: x0 has {} entries, the system has {n_x} states",
                    sc.x0.len()
                )));
            }
            if sc.input.len() != n_w {
                return Err(CliError::Config(format!(
                    "scenario {k}: {} input expressions for {n_w} input channels",
                    sc.input.len()
                )));
            }
            if sc.horizon == 0 {
                return Err(CliError::Config(format!("scenario {k}: zero horizon")));
            }
        }
        if cfg.grids.dset_inflation < 1.0 {
            return Err(CliError::Config(
                "grids.dset_inflation must be at least 1".into(),
            ));
        }

        let out_dir = opts
            .out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Loaded {
            cfg,
            sys,
            ts,
            full_region,
            x_region,
            out_dir,
            quad_nodes,
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| CliError::Config(format!("cannot create output directory: {e}")))?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

fn build_system(cfg: &AnalysisConfig) -> Result<(DtSystem, Option<f64>), CliError> {
    let s = &cfg.system;
    let states: Vec<&str> = s.states.iter().map(String::as_str).collect();
    let inputs: Vec<&str> = s.inputs.iter().map(String::as_str).collect();
    if s.h.is_empty() || s.f.is_empty() {
        return Err(CliError::Config("system.f and system.h must be nonempty".into()));
    }
    let vars = VarSpace::new(&states, &inputs, s.h.len()).map_err(cfg_err)?;
    if s.f.len() != s.states.len() {
        return Err(CliError::Config(format!(
            "system.f has {} expressions for {} states",
            s.f.len(),
            s.states.len()
        )));
    }
    let parse_all = |texts: &[String]| -> Result<Vec<_>, CliError> {
        texts
            .iter()
            .map(|t| {
                eqfree_core::parse(t, &vars).map_err(|e| CliError::Config(format!("`{t}`: {e}")))
            })
            .collect()
    };
    let f = parse_all(&s.f)?;
    let h = parse_all(&s.h)?;
    match s.kind {
        SystemKind::Dt => {
            if s.ts.is_some() {
                return Err(CliError::Config(
                    "system.ts is only meaningful for kind `ct-rk4`".into(),
                ));
            }
            Ok((DtSystem::new(vars, f, h).map_err(cfg_err)?, None))
        }
        SystemKind::CtRk4 => {
            let ts = s
                .ts
                .ok_or_else(|| CliError::Config("kind `ct-rk4` requires system.ts".into()))?;
            if !(ts > 0.0 && ts.is_finite()) {
                return Err(CliError::Config(format!("system.ts must be positive, got {ts}")));
            }
            let ct = CtSystem::new(vars, f, h).map_err(cfg_err)?;
            Ok((rk4_discretize(&ct, ts), Some(ts)))
        }
    }
}

fn check_box(lo: &[f64], hi: &[f64], dim: usize, what: &str) -> Result<(), CliError> {
    if lo.len() != dim || hi.len() != dim {
        return Err(CliError::Config(format!(
            "{what}: expected {dim} bounds, got lo {} / hi {}",
            lo.len(),
            hi.len()
        )));
    }
    for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
        if !(l.is_finite() && h.is_finite() && l <= h) {
            return Err(CliError::Config(format!("{what}: bad interval {i}: [{l}, {h}]")));
        }
    }
    Ok(())
}

/// Increment-set estimation plus the scheduling embedding every analysis
/// shares.
fn build_pipeline(l: &Loaded) -> Result<(BoxRegion, GridEmbedding, Vec<String>), CliError> {
    let dgrid = Grid::uniform(l.full_region.clone(), l.cfg.grids.dset_points);
    let dset = estimate_dset(&l.sys, &dgrid, l.cfg.grids.dset_inflation).map_err(cfg_err)?;
    let selection: Vec<String> = match &l.cfg.scheduling {
        Some(names) => names.clone(),
        None => l.sys.vars.names().to_vec(),
    };
    let emb = build_embedding(&l.sys, &l.full_region, &selection, &dset).map_err(cfg_err)?;
    let p_names: Vec<String> = (1..=emb.map.n_p()).map(|i| format!("p{i}")).collect();
    Ok((dset, emb, p_names))
}

fn map_lmi_err(e: LmiError) -> CliError {
    match e {
        LmiError::Solver(msg) => CliError::Solver(msg),
        other => CliError::Config(other.to_string()),
    }
}

fn cmd_analyze(l: &Loaded) -> Result<(), CliError> {
    let (_dset, emb, p_names) = build_pipeline(l)?;
    let basis = StorageBasis::parse(&p_names, &l.cfg.storage_basis).map_err(map_lmi_err)?;
    let p_grid = Grid::uniform(emb.map.p_box.clone(), l.cfg.grids.p_points);
    let v_count = l.cfg.grids.v_points;
    let alpha1 = l.cfg.alpha1;
    let hash = system_hash(&l.sys, l.ts);

    let (name, form, result) = match &l.cfg.analysis {
        AnalysisKind::IncrementalL2 | AnalysisKind::UniversalShiftedL2 { .. } => {
            let name = match l.cfg.analysis {
                AnalysisKind::IncrementalL2 => "incremental-l2",
                _ => "universal-shifted-l2",
            };
            let prob = assemble_incremental_l2(&emb, &basis, &p_grid, v_count, alpha1)
                .map_err(map_lmi_err)?;
            let r = solve(&prob).map_err(map_lmi_err)?;
            (name, StorageForm::Inverse, r)
        }
        AnalysisKind::IncrementalPassivity => {
            let prob = assemble_incremental_passivity(&emb, &basis, &p_grid, v_count, alpha1)
                .map_err(map_lmi_err)?;
            let r = solve(&prob).map_err(map_lmi_err)?;
            ("incremental-passivity", StorageForm::Direct, r)
        }
        AnalysisKind::QsrFeasibility { q, s, r } => {
            let supply = parse_supply(q, s, r, l.sys.vars.n_w(), l.sys.vars.n_z())?;
            let prob = assemble_dd_lmi(&emb, &basis, &supply, &p_grid, v_count, alpha1, false)
                .map_err(map_lmi_err)?;
            let res = solve(&prob).map_err(map_lmi_err)?;
            ("qsr-feasibility", StorageForm::Direct, res)
        }
    };

    let mut cert = Certificate::from_solve(
        name,
        &result,
        basis.texts(),
        form,
        alpha1,
        &l.full_region,
        &p_grid.counts,
        v_count,
        &hash,
    );

    if let AnalysisKind::UniversalShiftedL2 {
        beta,
        alpha_samples,
    } = &l.cfg.analysis
    {
        if result.status != SolveStatus::Infeasible {
            let (alpha, usp) = shifted_bound(l, &result, *beta, *alpha_samples)?;
            cert.alpha = Some(alpha);
            cert.alpha_sampled = Some(true);
            cert.beta = Some(*beta);
            cert.gamma_tilde = Some(usp.gamma_tilde);
        }
    }

    println!("analysis: {name}");
    println!("status: {}", cert.status);
    if let Some(g) = cert.gamma {
        println!("gamma = {g:.5}");
    }
    if let Some(gt) = cert.gamma_tilde {
        println!(
            "alpha = {:.5} (sampled), beta = {:.5}, shifted gain bound = {gt:.5}",
            cert.alpha.unwrap(),
            cert.beta.unwrap()
        );
    }
    let path = l.write("certificate.json", &cert.to_json())?;
    println!("certificate: {}", path.display());

    match result.status {
        SolveStatus::Feasible => Ok(()),
        SolveStatus::Infeasible => Err(CliError::Infeasible),
        SolveStatus::Inaccurate => Err(CliError::Solver(
            "solution failed the eigenvalue post-check".into(),
        )),
    }
}

/// Sampled transfer constant and the combined shifted gain bound for a
/// gain-minimization result.
fn shifted_bound(
    l: &Loaded,
    result: &SolveResult,
    beta: f64,
    alpha_samples: usize,
) -> Result<(f64, eqfree_core::UspBound), CliError> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(CliError::Config(format!("beta must be nonnegative, got {beta}")));
    }
    if alpha_samples < 2 {
        return Err(CliError::Config("alpha_samples must be at least 2".into()));
    }
    let rf = RestrictedForm::identify(&l.sys, &l.full_region).map_err(cfg_err)?;
    let n_z = l.sys.vars.n_z();
    let r = -DMatrix::<f64>::identity(n_z, n_z);
    let alpha = estimate_alpha(
        &rf,
        &r,
        &l.x_region,
        &l.x_region,
        alpha_samples,
        l.quad_nodes,
    )
    .map_err(|e| match e {
        CertificateError::Eval(inner) => CliError::Solver(inner.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let gamma = result
        .gamma
        .ok_or_else(|| CliError::Solver("gain minimization returned no level".into()))?;
    let usp = usp_bound(alpha, beta, gamma).map_err(cfg_err)?;
    Ok((alpha, usp))
}

fn parse_supply(
    q: &[Vec<f64>],
    s: &[Vec<f64>],
    r: &[Vec<f64>],
    n_w: usize,
    n_z: usize,
) -> Result<QsrSupply, CliError> {
    let q = literal_matrix(q, n_w, n_w, "analysis.q")?;
    let s = literal_matrix(s, n_w, n_z, "analysis.s")?;
    let r = literal_matrix(r, n_z, n_z, "analysis.r")?;
    QsrSupply::new(q, s, r).map_err(cfg_err)
}

fn literal_matrix(
    rows: &[Vec<f64>],
    nr: usize,
    nc: usize,
    what: &str,
) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        return Err(CliError::Config(format!("{what}: expected a {nr}x{nc} matrix")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn cmd_dset(l: &Loaded) -> Result<(), CliError> {
    let dgrid = Grid::uniform(l.full_region.clone(), l.cfg.grids.dset_points);
    let dset = estimate_dset(&l.sys, &dgrid, l.cfg.grids.dset_inflation).map_err(cfg_err)?;
    for (i, name) in l.sys.vars.state_names().iter().enumerate() {
        println!("{name}: [{:.6}, {:.6}]", dset.lo[i], dset.hi[i]);
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "lo": dset.lo,
        "hi": dset.hi,
    }))
    .expect("box serialization");
    let path = l.write("dset.json", &json)?;
    println!("dset: {}", path.display());
    Ok(())
}

fn scenario_inputs(sc: &Scenario) -> Result<Vec<DVector<f64>>, CliError> {
    let t_names = vec!["t".to_string()];
    let exprs: Vec<_> = sc
        .input
        .iter()
        .map(|text| {
            parse_with_names(text, &t_names)
                .map_err(|e| CliError::Config(format!("input `{text}`: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let n_w = exprs.len();
    let mut w = Vec::with_capacity(sc.horizon);
    for t in 0..sc.horizon {
        let vals = [t as f64];
        let mut row = DVector::zeros(n_w);
        for (j, e) in exprs.iter().enumerate() {
            row[j] = e
                .eval(&vals)
                .map_err(|err| CliError::Config(format!("input `{}` at t={t}: {err}", sc.input[j])))?;
        }
        w.push(row);
    }
    Ok(w)
}

fn run_scenario(l: &Loaded, idx: usize, sc: &Scenario) -> Result<Trajectory, CliError> {
    let w = scenario_inputs(sc)?;
    let x0 = DVector::from_column_slice(&sc.x0);
    simulate(&l.sys, &x0, &w, sc.horizon).map_err(|e| match e {
        SimError::Divergence { t } => {
            CliError::Divergence(format!("scenario {idx} diverged at step {t}"))
        }
        other => CliError::Config(format!("scenario {idx}: {other}")),
    })
}

fn cmd_simulate(l: &Loaded) -> Result<(), CliError> {
    if l.cfg.scenarios.is_empty() {
        return Err(CliError::Config("no scenarios configured".into()));
    }
    for (idx, sc) in l.cfg.scenarios.iter().enumerate() {
        let traj = run_scenario(l, idx, sc)?;
        let path = l.write(&format!("trajectory_{idx}.csv"), &traj.to_csv(&l.sys.vars))?;
        println!("scenario {idx}: {} steps -> {}", traj.horizon(), path.display());
    }
    Ok(())
}

fn cmd_verify(l: &Loaded, cert_path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(cert_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", cert_path.display())))?;
    let cert = Certificate::from_json(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", cert_path.display())))?;

    let hash = system_hash(&l.sys, l.ts);
    if cert.system_hash != hash {
        return Err(CliError::HashMismatch(format!(
            "certificate was produced for system {} but the config describes {}",
            &cert.system_hash[..12.min(cert.system_hash.len())],
            &hash[..12]
        )));
    }
    if cert.status == "infeasible" {
        return Err(CliError::Config(
            "certificate records an infeasible analysis; nothing to verify".into(),
        ));
    }

    let (_dset, emb, p_names) = build_pipeline(l)?;
    let basis = StorageBasis::parse(&p_names, cert.basis.as_slice()).map_err(map_lmi_err)?;
    let gamma = cert.gamma.unwrap_or(1.0);
    let metric = StorageMetric::new(cert.m_matrices(), basis, &emb.map, cert.storage_form, gamma);

    let n_w = l.sys.vars.n_w();
    let n_z = l.sys.vars.n_z();
    let supply = match cert.analysis.as_str() {
        "incremental-l2" | "universal-shifted-l2" => QsrSupply::l2_gain(gamma, n_w, n_z),
        "incremental-passivity" => QsrSupply::passivity(n_w),
        "qsr-feasibility" => match &l.cfg.analysis {
            AnalysisKind::QsrFeasibility { q, s, r } => parse_supply(q, s, r, n_w, n_z)?,
            _ => {
                return Err(CliError::Config(
                    "certificate uses a literal supply; the config must configure the same \
                     qsr-feasibility analysis"
                        .into(),
                ))
            }
        },
        other => return Err(CliError::Config(format!("unknown analysis kind `{other}`"))),
    };

    let scen = &l.cfg.scenarios;
    if scen.len() < 2 || scen.len() % 2 != 0 {
        return Err(CliError::Config(format!(
            "verification needs scenario pairs (an even count of at least 2), got {}",
            scen.len()
        )));
    }

    let mut min_margin = f64::INFINITY;
    for (k, pair) in scen.chunks(2).enumerate() {
        if pair[0].horizon != pair[1].horizon {
            return Err(CliError::Config(format!(
                "scenario pair {k}: horizons {} and {} differ",
                pair[0].horizon, pair[1].horizon
            )));
        }
        let traj = run_scenario(l, 2 * k, &pair[0])?;
        let traj_ref = run_scenario(l, 2 * k + 1, &pair[1])?;
        for (t, x) in traj.x.iter().chain(traj_ref.x.iter()).enumerate() {
            if !l.x_region.contains(x.as_slice(), 1e-12) {
                println!("warning: pair {k} leaves the analysis region (sample {t})");
                break;
            }
        }
        let report = verify_id(&metric, &supply, &traj, &traj_ref, DEFAULT_SEGMENTS)
            .map_err(|e| CliError::Solver(e.to_string()))?;
        let m = report.min_margin();
        let final_dist = *report.dist.last().unwrap();
        min_margin = min_margin.min(m);
        let path = l.write(&format!("id_report_{k}.csv"), &report.to_csv())?;
        println!(
            "pair {k}: min margin = {m:.6e}, final distance = {final_dist:.6e} -> {}",
            path.display()
        );
    }
    println!("min margin = {min_margin:.6e}");
    if min_margin < -MARGIN_TOL {
        return Err(CliError::NegativeMargin(min_margin));
    }
    Ok(())
}
