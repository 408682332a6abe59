//! One function per subcommand.

use std::time::Instant;

use lcm_core::em::{classify, cem_fixed, em_random, fit_random_restarts, loglik_fixed, loglik_random, EmConfig};
use lcm_core::evaluation::{align_columns, clustering_errors, error_rate, mse};
use lcm_core::selection::{fit_tensor_em, select_l, Criterion, GicReport, PipelineConfig};
use lcm_core::simulate::{
    default_p_floor, gen_responses, gen_truth, run_benchmark, BenchConfig, BenchRow, BenchSetting,
    Membership, SimDesign,
};
use lcm_core::spectral::{tensor_estimate_averaged, PowerConfig};
use lcm_core::{FitResult, MixingWeights, ModelKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::*;
use crate::error::{CliError, Result};
use crate::formats::{read_json, read_responses, write_json, write_responses, FitFile, ParamsFile, TruthFile};
use crate::{ingest, profile};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit(&a),
        Command::Select(a) => select(&a),
        Command::Eval(a) => eval(&a),
        Command::Ingest(a) => ingest_cmd(&a),
        Command::Profile(a) => profile_cmd(&a),
        Command::Benchmark(a) => benchmark(&a),
    }
}

fn design_from(
    n: usize,
    j: usize,
    l: usize,
    model: ModelKind,
    pool: &[f64],
    p_floor: Option<f64>,
    seed: u64,
) -> Result<SimDesign> {
    if j < 3 {
        return Err(CliError::Usage(format!("--j must satisfy J >= 3, got {j}")));
    }
    let design = SimDesign {
        n,
        j,
        l,
        theta_pool: pool.to_vec(),
        model,
        p_floor: p_floor.unwrap_or_else(|| default_p_floor(l)),
        seed,
    };
    design
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(design)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let design = design_from(a.n, a.j, a.l, a.model, &a.theta_pool, a.p_floor, a.seed)?;
    let truth = gen_truth(&design, &mut design.stream(0))?;
    let (r, _) = gen_responses(&truth.theta, &truth.membership, design.n, &mut design.stream(1))?;
    let (p, z) = match &truth.membership {
        Membership::Weights(p) => (Some(p.as_slice().to_vec()), None),
        Membership::Labels(z) => (None, Some(z.to_one_based())),
    };
    write_responses(&a.out, &r)?;
    write_json(
        &a.truth,
        &TruthFile {
            model: design.model,
            p,
            z,
            theta: truth.theta.to_rows(),
            seed: design.seed,
        },
    )
}

fn pipeline(t: &Tuning) -> Result<PipelineConfig> {
    let power = PowerConfig::new(t.k_restarts, t.power_iters).map_err(|e| CliError::Usage(e.to_string()))?;
    let em = EmConfig {
        max_iters: t.max_iters,
        tol: t.tol,
        ..EmConfig::default()
    };
    em.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if t.perms == 0 {
        return Err(CliError::Usage("--perms must be at least 1".into()));
    }
    Ok(PipelineConfig {
        power,
        em,
        n_perms: t.perms,
    })
}

fn fit(a: &FitArgs) -> Result<()> {
    if a.l == 0 {
        return Err(CliError::Usage("--l must be at least 1".into()));
    }
    let cfg = pipeline(&a.tuning)?;
    let init = match (a.method, &a.init) {
        (FitMethod::EmInit, None) => {
            return Err(CliError::Usage("--method em-init requires --init".into()));
        }
        (FitMethod::EmInit, Some(path)) => Some(ParamsFile::load(path)?),
        _ => None,
    };
    let r = read_responses(&a.data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let fixed = a.model == ModelKind::Fixed;
    let result: FitResult = match a.method {
        FitMethod::TensorEm => fit_tensor_em(&r, a.l, a.model, &cfg, &mut rng)?.1,
        FitMethod::EmRandom => {
            if a.restarts == 0 {
                return Err(CliError::Usage("--restarts must be at least 1".into()));
            }
            fit_random_restarts(&r, a.l, a.restarts, fixed, &cfg.em, &mut rng)?
        }
        FitMethod::Tensor => {
            let start = Instant::now();
            let est = tensor_estimate_averaged(&r, a.l, cfg.n_perms, &cfg.power, &mut rng)?;
            let mut out = if fixed {
                let z = classify(&r, &est.theta_hat)?;
                let ll = loglik_fixed(&r, &z, &est.theta_hat)?;
                FitResult::fixed(est.theta_hat, z, ll)
            } else {
                let ll = loglik_random(&r, &est.p_hat, &est.theta_hat)?;
                FitResult::random(est.theta_hat, est.p_hat, ll)
            };
            out.runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            out
        }
        FitMethod::EmInit => {
            let init = init.expect("checked above");
            if init.theta.n_classes() != a.l {
                return Err(CliError::Data(format!(
                    "--init has {} classes, --l is {}",
                    init.theta.n_classes(),
                    a.l
                )));
            }
            if fixed {
                cem_fixed(&r, &MixingWeights::uniform(a.l), &init.theta, &cfg.em)?
            } else {
                let p = init.p.ok_or_else(|| {
                    CliError::Data("--init needs mixing weights \"p\" for the random model".into())
                })?;
                em_random(&r, &p, &init.theta, &cfg.em)?
            }
        }
    };
    write_json(&a.out, &FitFile::new(a.method.name(), &result, a.omit_timing))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn gic_csv(rep: &GicReport) -> String {
    let mut s = String::from("L,loglik,dim,a_n_gic1,gic1,a_n_gic2,gic2,converged,iterations,error\n");
    for row in &rep.rows {
        let ok = row.error.is_none();
        let f = |v: f64| if ok { v.to_string() } else { String::new() };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.n_classes,
            f(row.loglik),
            row.dim,
            rep.a_n_gic1,
            f(row.gic1),
            fmt_opt(rep.a_n_gic2),
            if ok { fmt_opt(row.gic2) } else { String::new() },
            row.converged,
            row.n_iterations,
            row.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        ));
    }
    s
}

fn select(a: &SelectArgs) -> Result<()> {
    if a.l_min == 0 || a.l_min > a.l_max {
        return Err(CliError::Usage(format!(
            "need 1 <= --l-min <= --l-max, got {}..{}",
            a.l_min, a.l_max
        )));
    }
    let cfg = pipeline(&a.tuning)?;
    let r = read_responses(&a.data)?;
    let criterion = match a.criterion {
        CriterionArg::Gic1 => Criterion::Gic1,
        CriterionArg::Gic2 => Criterion::Gic2,
    };
    let cands: Vec<usize> = (a.l_min..=a.l_max).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let rep = select_l(&r, &cands, a.model, criterion, &cfg, &mut rng)?;
    std::fs::write(&a.out, gic_csv(&rep)).map_err(|e| CliError::io(&a.out, e))?;
    println!("selected_L={}", rep.selected_l);
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    mse: Option<f64>,
    n_errors: Option<usize>,
    error_rate: Option<f64>,
    /// 1-based: entry k is the estimated class matched to true class k.
    permutation: Option<Vec<usize>>,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let truth = ParamsFile::load(&a.truth)?;
    let est = ParamsFile::load(&a.est)?;
    let want = |m: Metric| a.metric == Metric::All || a.metric == m;
    let mut report = EvalReport {
        mse: None,
        n_errors: None,
        error_rate: None,
        permutation: None,
    };
    if want(Metric::Mse) {
        let (perm, _) = align_columns(&truth.theta, &est.theta)?;
        report.mse = Some(mse(&truth.theta, &est.theta)?);
        report.permutation = Some(perm.iter().map(|k| k + 1).collect());
    }
    if let (Some(zt), Some(zh)) = (&truth.z, &est.z) {
        if want(Metric::Errors) {
            report.n_errors = Some(clustering_errors(zt, zh)?);
        }
        if want(Metric::Rate) {
            report.error_rate = Some(error_rate(zt, zh)?);
        }
    } else if a.metric == Metric::Errors || a.metric == Metric::Rate {
        return Err(CliError::Data(
            "clustering metrics need class labels \"z\" in both files".into(),
        ));
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn ingest_cmd(a: &IngestArgs) -> Result<()> {
    let raw = ingest::read_raw(&a.raw, a.has_header)?;
    let width = raw.first().map_or(0, Vec::len);
    let key = ingest::read_key(&a.key, width)?;
    let r = ingest::binarize(&raw, &key)?;
    write_responses(&a.out, &r)
}

fn profile_cmd(a: &ProfileArgs) -> Result<()> {
    let est = ParamsFile::load(&a.est)?;
    let groups = profile::read_groups(&a.groups, est.theta.n_items())?;
    let p = profile::profile(&est.theta, &groups, a.mode)?;
    std::fs::write(&a.out, profile::levels_csv(&p)).map_err(|e| CliError::io(&a.out, e))?;
    if let Some(path) = &a.means_out {
        std::fs::write(path, profile::means_csv(&p)).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn bench_csv(rows: &[BenchRow], omit_timing: bool) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["setting_id", "method", "rep", "mse", "loglik", "runtime_ms", "error_rate"])?;
    for row in rows {
        let runtime = if omit_timing { 0.0 } else { row.runtime_ms };
        w.write_record([
            row.setting_id.clone(),
            row.method.to_string(),
            row.rep.to_string(),
            fmt_opt(row.mse),
            fmt_opt(row.loglik),
            runtime.to_string(),
            fmt_opt(row.error_rate),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    let settings: Vec<BenchSetting> = match &a.grid {
        Some(path) => {
            let s: Vec<BenchSetting> = read_json(path)?;
            for st in &s {
                st.design
                    .validate()
                    .map_err(|e| CliError::Usage(format!("setting {}: {e}", st.id)))?;
            }
            s
        }
        None => vec![BenchSetting {
            id: a.id.clone(),
            design: design_from(a.n, a.j, a.l, a.model, &a.theta_pool, a.p_floor, a.seed)?,
        }],
    };
    if a.em_restarts == 0 || a.tensor_perms == 0 {
        return Err(CliError::Usage(
            "--em-restarts and --tensor-perms must be at least 1".into(),
        ));
    }
    let cfg = BenchConfig {
        pipeline: pipeline(&a.tuning)?,
        em_restarts: a.em_restarts,
        tensor_perms: a.tensor_perms,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = a.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = pool.install(|| run_benchmark(&settings, &a.methods, a.reps, &cfg))?;
    for row in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "setting {} rep {} {}: {}",
            row.setting_id,
            row.rep,
            row.method,
            row.error.as_deref().unwrap_or("")
        );
    }
    let bytes = bench_csv(&rows, a.omit_timing)?;
    std::fs::write(&a.out, bytes).map_err(|e| CliError::io(&a.out, e))
}
