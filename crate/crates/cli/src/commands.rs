use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sofrme_core::expansion::{BasisSpec, BasisSystem};
use sofrme_core::fda::{Domain, FunctionalSample};
use sofrme_core::io;
use sofrme_core::mecorrect::{
    fit_lr_ivgmm, fit_qr_cls, fit_qr_simex, me_glm_mem, ClsConfig, IvGmmOptions, MemOptions, ReplicatedSurrogate,
    SimexConfig,
};
use sofrme_core::regress::{fc_beta, fit_glm_sofr, fit_qr_sofr, FitResult, GlmSpec, QrSpec, SofrData};
use sofrme_core::simgen::{generate, ScenarioConfig};
use sofrme_core::{Error, ErrorKind, Result};

use crate::{
    BasisArgs, Cli, Command, FitGlmArgs, FitQrArgs, GlmArgs, MeClsArgs, MeIvArgs, MeMemArgs, MeSimexArgs, Output,
    SimulateArgs,
};

pub const SEED_VAR: &str = "SOFRME_SEED";

/// A library error tagged with the subcommand that raised it.
#[derive(Debug)]
pub struct Failure {
    context: &'static str,
    error: Error,
}

impl Failure {
    pub fn kind(&self) -> ErrorKind {
        self.error.kind()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.context, self.error)
    }
}

pub fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let context = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::FitGlm(_) => "fit-glm",
        Command::FitQr(_) => "fit-qr",
        Command::MeMem(_) => "me-mem",
        Command::MeSimex(_) => "me-simex",
        Command::MeCls(_) => "me-cls",
        Command::MeIv(_) => "me-iv",
    };
    let wrap = |error| Failure { context, error };
    if let Some(n) = cli.threads {
        set_threads(n).map_err(wrap)?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::FitGlm(a) => fit_glm(a),
        Command::FitQr(a) => fit_qr(a),
        Command::MeMem(a) => me_mem(a),
        Command::MeSimex(a) => me_simex(a),
        Command::MeCls(a) => me_cls(a),
        Command::MeIv(a) => me_iv(a),
    }
    .map_err(wrap)
}

fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Seed from the environment, if set.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_VAR}='{v}' is not a non-negative integer"))),
        Err(_) => Ok(None),
    }
}

fn seed(flag: u64) -> Result<u64> {
    Ok(env_seed()?.unwrap_or(flag))
}

/// Pretty JSON with a trailing newline, as written by every subcommand.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit_json<T: Serialize>(value: &T, out: &Output) -> Result<()> {
    let text = to_json(value)?;
    match &out.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn domain(out: &Output) -> Result<Option<Domain>> {
    match out.domain.as_deref() {
        Some([t0, period]) => Domain::new(*t0, *period).map(Some).map_err(|e| Error::Config(format!("--domain: {e}"))),
        Some(_) => Err(Error::Config("--domain takes a start and a period".into())),
        None => Ok(None),
    }
}

fn beta_grid(d: Domain, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("--beta-grid needs at least 2 points, got {n}")));
    }
    Ok(d.uniform_grid(n))
}

fn basis_spec(b: &BasisArgs) -> BasisSpec {
    BasisSpec {
        kind: b.basis,
        order: b.order,
        degree: b.degree,
    }
}

fn glm_spec(g: &GlmArgs) -> Result<GlmSpec> {
    match g.link {
        Some(link) => GlmSpec::new(g.family, link),
        None => Ok(GlmSpec::canonical(g.family)),
    }
}

/// First value column of the response file, in the order of `ids`.
fn load_y(path: &Path, ids: &[String]) -> Result<Vec<f64>> {
    let cols = io::read_columns(path)?;
    let v = io::align(&cols, ids, path)?;
    Ok(v.column(0).iter().copied().collect())
}

fn load_z(path: Option<&Path>, ids: &[String]) -> Result<Option<DMatrix<f64>>> {
    path.map(|p| io::align(&io::read_columns(p)?, ids, p)).transpose()
}

/// Instrument curves reordered to follow `ids`.
fn load_instrument(path: &Path, ids: &[String], d: Option<Domain>) -> Result<FunctionalSample> {
    let (mids, m) = io::read_wide(path, d)?;
    Ok(m.select_rows(&io::row_order(&mids, ids, path)?))
}

fn emit_fit_beta(fit: &FitResult, d: Domain, out: &Output) -> Result<()> {
    if let Some(p) = &out.emit_beta {
        let t = beta_grid(d, out.beta_grid)?;
        io::write_beta_table(p, &t, &fc_beta(fit, 0, &t)?, None)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg_path = a.config.display().to_string();
    let text = std::fs::read_to_string(&a.config).map_err(|source| Error::Io {
        path: cfg_path.clone(),
        source,
    })?;
    let mut cfg = ScenarioConfig::from_json(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{cfg_path}: {msg}")),
        other => other,
    })?;
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    let data = generate(&cfg)?;
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let ids = io::default_ids(cfg.n);
    let mut files = Vec::new();
    let mut record = |name: &str| {
        files.push(name.to_string());
        dir.join(name)
    };
    io::write_wide(record("x.csv"), &ids, &data.x)?;
    io::write_long(record("w.csv"), &ids, &data.w)?;
    io::write_columns(record("y.csv"), &ids, &["y".into()], &DMatrix::from_column_slice(cfg.n, 1, &data.y))?;
    if let Some(z) = &data.z {
        let names: Vec<String> = (1..=z.ncols()).map(|k| format!("z{k}")).collect();
        io::write_columns(record("z.csv"), &ids, &names, z)?;
    }
    if let Some(m) = &data.m {
        io::write_wide(record("m.csv"), &ids, m)?;
    }
    let t = beta_grid(cfg.domain, a.beta_grid)?;
    io::write_table(record("beta_true.csv"), &["t", "beta"], &[&t, &cfg.beta_at(&t)?])?;
    write_text(&record("scenario.json"), &to_json(&cfg)?)?;
    let summary = serde_json::json!({
        "n": cfg.n,
        "m": cfg.m,
        "J": cfg.j,
        "seed": cfg.seed,
        "out_dir": dir.display().to_string(),
        "files": files,
    });
    print!("{}", to_json(&summary)?);
    Ok(())
}

fn fit_glm(a: FitGlmArgs) -> Result<()> {
    let (ids, x) = io::read_wide(&a.x, domain(&a.output)?)?;
    let d = x.domain();
    let y = load_y(&a.data.y, &ids)?;
    let z = load_z(a.data.z.as_deref(), &ids)?;
    let fc = [x];
    let fit = fit_glm_sofr(SofrData::new(&y, &fc).with_z(z.as_ref()), &glm_spec(&a.glm)?, &[basis_spec(&a.basis)])?;
    emit_json(&fit, &a.output)?;
    emit_fit_beta(&fit, d, &a.output)
}

fn fit_qr(a: FitQrArgs) -> Result<()> {
    let (ids, x) = io::read_wide(&a.x, domain(&a.output)?)?;
    let d = x.domain();
    let y = load_y(&a.data.y, &ids)?;
    let z = load_z(a.data.z.as_deref(), &ids)?;
    let fc = [x];
    let fit = fit_qr_sofr(SofrData::new(&y, &fc).with_z(z.as_ref()), &QrSpec::new(a.tau)?, &[basis_spec(&a.basis)])?;
    emit_json(&fit, &a.output)?;
    emit_fit_beta(&fit, d, &a.output)
}

fn read_surrogate(path: &Path, out: &Output) -> Result<(Vec<String>, ReplicatedSurrogate)> {
    io::read_surrogate(path, domain(out)?)
}

fn me_mem(a: MeMemArgs) -> Result<()> {
    let (ids, w) = read_surrogate(&a.w, &a.output)?;
    let y = load_y(&a.data.y, &ids)?;
    let z = load_z(a.data.z.as_deref(), &ids)?;
    let opts = MemOptions {
        method: a.method,
        family: a.family_w,
        d: a.d,
        smooth: a.smooth,
    };
    let fit = me_glm_mem(&y, &w, z.as_ref(), &opts, &glm_spec(&a.glm)?, &basis_spec(&a.basis))?;
    emit_json(&fit, &a.output)?;
    emit_fit_beta(&fit, w.domain(), &a.output)
}

fn me_simex(a: MeSimexArgs) -> Result<()> {
    let cfg = SimexConfig {
        lambda_grid: a.lambda.clone(),
        b: a.b,
        extrapolant: a.extrapolant,
        seed: seed(a.seed)?,
    };
    cfg.validate()?;
    let (ids, w) = read_surrogate(&a.w, &a.output)?;
    let w = w.mean();
    let m = load_instrument(&a.m, &ids, domain(&a.output)?)?;
    let y = load_y(&a.data.y, &ids)?;
    let z = load_z(a.data.z.as_deref(), &ids)?;
    let res = fit_qr_simex(&y, &w, z.as_ref(), &m, &QrSpec::new(a.tau)?, &cfg, &basis_spec(&a.basis), None)?;
    emit_json(&res, &a.output)?;
    emit_fit_beta(&res.fit, w.domain(), &a.output)
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

fn me_cls(a: MeClsArgs) -> Result<()> {
    let (ids, w) = read_surrogate(&a.w, &a.output)?;
    let y = load_y(&a.data.y, &ids)?;
    let z = load_z(a.data.z.as_deref(), &ids)?;
    let kmax = 5.min(w.n().saturating_sub(1)).min(w.m()).max(1);
    let grid_k = a.grid_k.clone().unwrap_or_else(|| (1..=kmax).collect());
    let grid_h = match &a.grid_h {
        Some(h) => h.clone(),
        None => {
            let s = sd(&y);
            if !(s > 0.0) {
                return Err(Error::InvalidInput("response is constant; supply --grid-h".into()));
            }
            [0.05, 0.1, 0.2, 0.4].iter().map(|c| c * s).collect()
        }
    };
    let cfg = ClsConfig {
        grid_k,
        grid_h,
        tau: a.tau,
        seed: seed(a.seed)?,
    };
    let res = fit_qr_cls(&y, &w, z.as_ref(), &cfg)?;
    emit_json(&res, &a.output)?;
    if let Some(p) = &a.output.emit_beta {
        let t = beta_grid(w.domain(), a.output.beta_grid)?;
        let phi = BasisSystem::Fpc(res.basis.clone()).eval(&t)?;
        let k = res.beta_hat.len();
        let beta = phi.columns(0, k) * DVector::from_column_slice(&res.beta_hat);
        io::write_beta_table(p, &t, beta.as_slice(), None)?;
    }
    Ok(())
}

fn me_iv(a: MeIvArgs) -> Result<()> {
    let (ids, w) = read_surrogate(&a.w, &a.output)?;
    let w = w.mean();
    let m = load_instrument(&a.m, &ids, domain(&a.output)?)?;
    let y = load_y(&a.y, &ids)?;
    let opts = IvGmmOptions {
        basis: basis_spec(&a.basis),
        bootstrap: a.bootstrap,
        n_boot: a.n_boot,
        seed: seed(a.seed)?,
        level: a.level,
        intercept: a.intercept,
        t_grid: Some(beta_grid(w.domain(), a.output.beta_grid)?),
    };
    let res = fit_lr_ivgmm(&y, &w, &m, &opts)?;
    emit_json(&res, &a.output)?;
    if let Some(p) = &a.output.emit_beta {
        let band = res.ci.as_ref().map(|c| (c.lower.as_slice(), c.upper.as_slice()));
        io::write_beta_table(p, &res.t_grid, &res.beta_t, band)?;
    }
    Ok(())
}
