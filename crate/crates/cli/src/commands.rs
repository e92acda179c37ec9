use std::path::PathBuf;
use std::sync::Arc;

use serde_json::{json, Value};
use wvcalc::calculus::PolynomialDiagonals;
use wvcalc::gridop::oracle_spectrum;
use wvcalc::sobolev::{project, sobolev_norm, sobolev_partial_sums, weak_derivative_norm, BasisSource, ModalBasis, SpectralCoefficients};
use wvcalc::spde::{check_beta, trace_partial_sum, FieldModel};
use wvcalc::spectral::SpectralProblem;
use wvcalc::stochastic::sample_paths;
use wvcalc::tensor::{build_tensor_basis, nodal_variance_dd, sample_field_dd, tensor_trace_sum, TensorBasis, MAX_DIM};
use wvcalc::trig::TrigEngine;
use wvcalc::verify::{verify_suite, VerifyConfig};
use wvcalc::{EvalMode, Grid, MeasureFunction, Side};

use crate::args::*;
use crate::io::*;

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Spectrum(a) => spectrum(a),
        Command::OracleSpectrum(a) => oracle(a),
        Command::Eigfun(a) => eigfun(a),
        Command::Taylor(a) => taylor(a),
        Command::Trig(a) => trig(a),
        Command::Project(a) => project_cmd(a),
        Command::Norm(a) => norm(a),
        Command::SimulateBw(a) => simulate(a),
        Command::SpdeSample(a) => spde_sample(a),
        Command::TensorSpectrum(a) => tensor_spectrum(a),
        Command::TensorSample(a) => tensor_sample(a),
        Command::Verify(a) => verify(a),
    }
}

fn tol_json(t: &TolArgs) -> Value {
    json!({ "tol_series": t.tol_series, "tol_rank": t.tol_rank })
}

fn spectrum(a: SpectrumArgs) -> CliResult<()> {
    let (w, v) = load_pair(a.measures.w.as_ref(), a.measures.v.as_ref())?;
    let report = SpectralProblem::new(&w, &v)?.find_spectrum(a.zmax, a.tol.tol_rank)?;
    let lambdas = report.lambdas();
    let doc = json!({
        "meta": meta("spectrum", measure_meta(&w, &v), json!({ "zmax": a.zmax, "tolerances": tol_json(&a.tol) })),
        "lambdas": lambdas,
        "report": report,
    });
    write_json(a.out.as_ref(), &doc)
}

fn oracle(a: OracleArgs) -> CliResult<()> {
    let (w, v) = load_pair(a.measures.w.as_ref(), a.measures.v.as_ref())?;
    let (h, kappa) = (a.h, a.kappa);
    let eig = oracle_spectrum(&w, &v, &|_| h, &|_| kappa, a.m, a.modes)?;
    let doc = json!({
        "meta": meta("oracle-spectrum", measure_meta(&w, &v), json!({ "m": a.m, "modes": a.modes, "h": h, "kappa": kappa })),
        "eigenvalues": eig,
    });
    write_json(a.out.as_ref(), &doc)
}

/// Basis on `grid` per the requested source. Auto takes the series
/// eigenfunctions when the scan below `zmax` yields at least `modes` of them.
fn modal_basis(
    w: &MeasureFunction,
    v: &MeasureFunction,
    grid: &Arc<Grid>,
    modes: usize,
    source: Source,
    zmax: f64,
    tol: &TolArgs,
) -> CliResult<ModalBasis> {
    if source == Source::Pencil {
        if modes > grid.n_cells() {
            return Err(CliError::usage(format!("at most {} pencil modes on this grid", grid.n_cells())));
        }
        return Ok(ModalBasis::from_pencil(grid, modes)?);
    }
    let problem = SpectralProblem::new(w, v)?;
    let report = problem.find_spectrum(zmax, tol.tol_rank)?;
    let available = report.lambdas().len();
    if source == Source::Auto && available < modes {
        if modes > grid.n_cells() {
            return Err(CliError::usage(format!("at most {} pencil modes on this grid", grid.n_cells())));
        }
        return Ok(ModalBasis::from_pencil(grid, modes)?);
    }
    let eb = problem.build_eigenbasis(&report, modes, grid)?;
    Ok(ModalBasis::from_eigenbasis(&eb))
}

fn source_name(b: &ModalBasis) -> &'static str {
    match b.source() {
        BasisSource::Series => "series",
        BasisSource::Pencil => "pencil",
    }
}

fn eigfun(a: EigfunArgs) -> CliResult<()> {
    let (w, v) = load_pair(a.measures.w.as_ref(), a.measures.v.as_ref())?;
    let grid = Grid::new(&w, &v, a.m)?;
    let basis = modal_basis(&w, &v, &grid, a.modes, a.source, a.zmax, &a.tol)?;
    let mut header = vec!["x".to_string()];
    header.extend(basis.lambdas().iter().enumerate().map(|(i, _)| format!("nu_{i}")));
    let rows = grid.nodes().iter().enumerate().map(|(j, &x)| {
        let mut r = vec![num(x)];
        r.extend(basis.functions().iter().map(|f| num(f.value(j))));
        r
    });
    write_csv(a.out.as_ref(), &header, rows)
}

fn taylor(a: TaylorArgs) -> CliResult<()> {
    let (w, v) = load_pair(a.measures.w.as_ref(), a.measures.v.as_ref())?;
    let diag = PolynomialDiagonals::new(&w, &v, a.order)?;
    let top = 2 * a.order;
    let chain: Vec<Value> = diag
        .taylor_bound_chain(a.order)
        .into_iter()
        .map(|(n, f2n, bound)| json!({ "n": n, "f_2n": f2n, "bound": bound, "holds": f2n <= bound * (1.0 + 1e-12) }))
        .collect();
    let at_one: Vec<Value> =
        (0..=top).map(|k| json!({ "k": k, "f": diag.f_at_one(k), "g": diag.g_at_one(k) })).collect();
    let table: Vec<Value> = a
        .x
        .iter()
        .map(|&x| json!({ "x": x, "f": (0..=top).map(|k| diag.eval_f(k, x, EvalMode::Value)).collect::<Vec<_>>() }))
        .collect();
    let doc = json!({
        "meta": meta("taylor", measure_meta(&w, &v), json!({ "order": a.order })),
        "at_one": at_one,
        "bound_chain": chain,
        "decay_constant": diag.decay_constant(),
        "diagonal_table": table,
    });
    write_json(a.out.as_ref(), &doc)
}

fn trig(a: TrigArgs) -> CliResult<()> {
    let (w, v) = load_pair(a.measures.w.as_ref(), a.measures.v.as_ref())?;
    let grid = Grid::new(&w, &v, a.m)?;
    let engine = TrigEngine::new(&w, &v)?;
    let q = engine.quartet(a.alpha, a.tol.tol_series, &grid)?;
    let header: Vec<String> = ["x", "Cwv", "Swv", "Cvw", "Svw"].iter().map(|s| s.to_string()).collect();
    let rows = grid.nodes().iter().enumerate().map(|(j, &x)| {
        let mut r = vec![num(x)];
        r.extend(q.iter().map(|t| num(t.values.value(j))));
        r
    });
    write_csv(a.out.as_ref(), &header, rows)
}

fn coefficients(a: &ProjectArgs) -> CliResult<(MeasureFunction, MeasureFunction, ModalBasis, SpectralCoefficients)> {
    let (w, v) = load_pair(a.measures.w.as_ref(), a.measures.v.as_ref())?;
    let grid = Grid::new(&w, &v, a.m)?;
    let basis = modal_basis(&w, &v, &grid, a.modes, a.source, a.zmax, &a.tol)?;
    let f = input_function(&a.f, &grid)?;
    let c = project(&f, &basis)?;
    Ok((w, v, basis, c))
}

fn project_cmd(a: ProjectArgs) -> CliResult<()> {
    let (_, _, _, c) = coefficients(&a)?;
    let header: Vec<String> = ["i", "lambda", "gamma", "alpha"].iter().map(|s| s.to_string()).collect();
    let rows = (0..c.alpha.len()).map(|i| vec![i.to_string(), num(c.lambdas[i]), num(c.gammas[i]), num(c.alpha[i])]);
    write_csv(a.out.as_ref(), &header, rows)
}

fn norm(a: NormArgs) -> CliResult<()> {
    let p = &a.project;
    let (w, v, basis, c) = coefficients(p)?;
    let sums = sobolev_partial_sums(&c, a.s);
    let doc = json!({
        "meta": meta("norm", measure_meta(&w, &v), json!({
            "m": p.m, "modes": p.modes, "source": source_name(&basis), "f": p.f, "tolerances": tol_json(&p.tol),
        })),
        "s": a.s,
        "truncation": c.truncation(),
        "norm": sobolev_norm(&c, a.s),
        "partial_sums": sums,
        "parseval_defect": c.parseval_defect,
        "weak_derivative_norm": weak_derivative_norm(&c),
    });
    write_json(p.out.as_ref(), &doc)
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let (w, v) = load_pair(a.w.as_ref(), a.v.as_ref())?;
    let grid = Grid::new(&w, &v, a.m)?;
    let paths = sample_paths(&grid, a.paths, a.seed)?;
    let header: Vec<String> = ["path", "t", "value", "left_limit"].iter().map(|s| s.to_string()).collect();
    let grid_ref = &grid;
    let rows = paths.iter().enumerate().flat_map(|(k, p)| {
        (0..p.times().len()).map(move |j| {
            let left = if grid_ref.w_atom(j) > 0.0 { num(p.left_limits()[j]) } else { String::new() };
            vec![k.to_string(), num(p.times()[j]), num(p.values()[j]), left]
        })
    });
    write_csv(a.out.as_ref(), &header, rows)
}

fn spde_sample(a: SpdeArgs) -> CliResult<()> {
    // the dimension gate comes before any file is read
    check_beta(a.beta, a.d)?;
    if a.d != 1 {
        return Err(CliError::usage("spde-sample is one-dimensional; use tensor-sample for d > 1"));
    }
    let (w, v) = load_pair(a.measures.w.as_ref(), a.measures.v.as_ref())?;
    let grid = Grid::new(&w, &v, a.m)?;
    let basis = modal_basis(&w, &v, &grid, a.modes, a.source, a.zmax, &a.tol)?;
    let model = FieldModel::constant(&basis, a.kappa, a.beta)?;
    let fields = model.sample_many(a.fields, a.seed);

    let mut header = vec!["x".to_string()];
    header.extend((0..a.fields).map(|k| format!("field_{k}")));
    let rows = grid.nodes().iter().enumerate().map(|(j, &x)| {
        let mut r = vec![num(x)];
        r.extend(fields.iter().map(|f| num(f.field.value(j))));
        r
    });
    write_csv(a.out.as_ref(), &header, rows)?;

    let expected = model.nodal_variance();
    let n = a.fields as f64;
    let nodes: Vec<Value> = grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let vals: Vec<f64> = fields.iter().map(|f| f.field.value(j)).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let second = vals.iter().map(|u| u * u).sum::<f64>() / n;
            json!({ "x": x, "mean": mean, "second_moment": second, "expected_variance": expected[j] })
        })
        .collect();
    let gammas = model.gamma_l();
    let doc = json!({
        "meta": meta("spde-sample", measure_meta(&w, &v), json!({
            "m": a.m, "modes": basis.len(), "source": source_name(&basis), "beta": a.beta, "kappa": a.kappa,
            "fields": a.fields, "seed": a.seed, "tolerances": tol_json(&a.tol),
        })),
        "tail_bound": model.tail_bound(),
        "trace": trace_partial_sum(gammas, 2.0 * a.beta, gammas.len() - 1)?,
        "modes_for_one_percent_tail": model.truncation_for(0.01),
        "nodes": nodes,
    });
    let report = a.report.clone().or_else(|| a.out.as_ref().map(|p| p.with_extension("json")));
    match report {
        Some(p) => write_json(Some(&p), &doc),
        None => Ok(()),
    }
}

fn axis_measures(paths: &[PathBuf], d: usize, role: Side) -> CliResult<Vec<MeasureFunction>> {
    match paths.len() {
        0 => Ok(vec![MeasureFunction::identity(role); d]),
        1 => Ok(vec![load_measure(Some(&paths[0]), role)?; d]),
        n if n == d => paths.iter().map(|p| load_measure(Some(p), role)).collect(),
        n => Err(CliError::usage(format!("{n} measure files given for {d} axes"))),
    }
}

fn tensor_basis(a: &TensorAxes) -> CliResult<(TensorBasis, Value)> {
    if a.d == 0 || a.d > MAX_DIM {
        return Err(CliError::usage(format!("d must be between 1 and {MAX_DIM}")));
    }
    let ws = axis_measures(&a.w, a.d, Side::RightContinuous)?;
    let vs = axis_measures(&a.v, a.d, Side::LeftContinuous)?;
    let mut axes = vec![];
    let mut axis_meta = vec![];
    for (w, v) in ws.iter().zip(&vs) {
        let grid = Grid::new(w, v, a.m)?;
        if a.modes > grid.n_cells() {
            return Err(CliError::usage(format!("at most {} modes per axis on this grid", grid.n_cells())));
        }
        axes.push(ModalBasis::from_pencil(&grid, a.modes)?);
        axis_meta.push(measure_meta(w, v));
    }
    let cutoff = a.cutoff.unwrap_or_else(|| {
        axes.iter().map(|b| b.gammas().last().copied().unwrap_or(1.0)).fold(f64::INFINITY, f64::min)
    });
    let basis = build_tensor_basis(&axes, cutoff)?;
    let settings = json!({ "d": a.d, "m": a.m, "modes_per_axis": a.modes, "cutoff": cutoff });
    Ok((basis, json!({ "axes": axis_meta, "settings": settings })))
}

fn tensor_spectrum(a: TensorSpectrumArgs) -> CliResult<()> {
    let (basis, m) = tensor_basis(&a.axes)?;
    let d = a.axes.d as f64;
    let s = if a.s.is_empty() { vec![d / 2.0, d / 2.0 + 0.5] } else { a.s.clone() };
    let traces: Vec<Value> = s.iter().map(|&s| json!(tensor_trace_sum(&basis, s))).collect();
    let doc = json!({
        "meta": meta("tensor-spectrum", m["axes"].clone(), m["settings"].clone()),
        "count": basis.len(),
        "indices": basis.indices(),
        "traces": traces,
    });
    write_json(a.out.as_ref(), &doc)
}

fn tensor_sample(a: TensorSampleArgs) -> CliResult<()> {
    check_beta(a.beta, a.axes.d)?;
    let (basis, _) = tensor_basis(&a.axes)?;
    let fields = (0..a.fields as u64)
        .map(|k| sample_field_dd(&basis, a.beta, a.seed, k))
        .collect::<wvcalc::Result<Vec<_>>>()?;
    let shape = basis.shape();
    let variance = nodal_variance_dd(&basis, a.beta);
    let mut header: Vec<String> = (0..shape.len()).map(|k| format!("x{k}")).collect();
    header.extend((0..a.fields).map(|k| format!("field_{k}")));
    header.push("expected_variance".into());
    let nodes: Vec<&[f64]> = basis.axes().iter().map(|b| b.grid().nodes()).collect();
    let total: usize = shape.iter().product();
    let rows = (0..total).map(|p| {
        let mut idx = vec![0; shape.len()];
        let mut q = p;
        for k in (0..shape.len()).rev() {
            idx[k] = q % shape[k];
            q /= shape[k];
        }
        let mut r: Vec<String> = idx.iter().enumerate().map(|(k, &i)| num(nodes[k][i])).collect();
        r.extend(fields.iter().map(|f| num(f.values[p])));
        r.push(num(variance[p]));
        r
    });
    write_csv(a.out.as_ref(), &header, rows)
}

fn verify(a: VerifyArgs) -> CliResult<()> {
    let (w, v) = load_pair(a.measures.w.as_ref(), a.measures.v.as_ref())?;
    let cfg = VerifyConfig {
        m: a.m,
        paths: a.paths,
        seed: a.seed,
        z_max: a.zmax,
        tol_series: a.tol.tol_series,
        tol_rank: a.tol.tol_rank,
        ..VerifyConfig::default()
    };
    let report = verify_suite(&w, &v, &cfg)?;
    write_json(a.out.as_ref(), &json!(report))?;
    if report.all_pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report.items.iter().filter(|i| !i.pass).map(|i| i.name.as_str()).collect();
        Err(CliError { kind: "VerificationFailed".into(), message: format!("failed items: {}", failed.join(", ")), code: 2 })
    }
}
