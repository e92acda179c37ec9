use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};
use wvcalc::{Error, FnSide, Grid, GridFunction, MeasureFunction, Side};

/// Failure surfaced to the user: a kind, a message and the exit code.
#[derive(Debug)]
pub struct CliError {
    pub kind: String,
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: "UsageError".into(), message: message.into(), code: 1 }
    }
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { kind: "IoError".into(), message: format!("{}: {e}", path.display()), code: 1 }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { 2 } else { 1 };
        Self { kind: e.kind().into(), message: e.to_string(), code }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Load a measure for the given role. A document written with the other side
/// convention is accepted only when it has no atoms, where the two coincide.
pub fn load_measure(path: Option<&PathBuf>, role: Side) -> CliResult<MeasureFunction> {
    let Some(path) = path else {
        return Ok(MeasureFunction::identity(role));
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let m = MeasureFunction::from_json(&text)?;
    if m.side() == role {
        return Ok(m);
    }
    if m.atoms().is_empty() {
        Ok(m.with_side(role))
    } else {
        let want = if role == Side::RightContinuous { "cadlag (W role)" } else { "caglad (V role)" };
        Err(Error::Invariant(format!("{} has atoms but is not {want}", path.display())).into())
    }
}

pub fn load_pair(w: Option<&PathBuf>, v: Option<&PathBuf>) -> CliResult<(MeasureFunction, MeasureFunction)> {
    Ok((load_measure(w, Side::RightContinuous)?, load_measure(v, Side::LeftContinuous)?))
}

pub fn measure_meta(w: &MeasureFunction, v: &MeasureFunction) -> Value {
    json!({
        "w": { "name": w.name(), "hash": w.content_hash() },
        "v": { "name": v.name(), "hash": v.content_hash() },
    })
}

/// Standard meta block: command, measures and the numeric settings of the run.
pub fn meta(command: &str, measures: Value, settings: Value) -> Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "measures": measures,
        "settings": settings,
    })
}

fn write_bytes(out: Option<&PathBuf>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(bytes).and_then(|_| so.flush()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

pub fn write_json(out: Option<&PathBuf>, v: &Value) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json values always serialize");
    s.push('\n');
    write_bytes(out, s.as_bytes())
}

/// Rows of already formatted fields with a header; '\n' terminated.
pub fn write_csv(out: Option<&PathBuf>, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    let err = |e: csv::Error| CliError::usage(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::usage(format!("csv: {e}")))?;
    write_bytes(out, &bytes)
}

/// Shortest round-trip decimal, switching to exponent form for tiny or huge values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// builtin:NAME or a CSV file with header x,value interpolated linearly onto
/// the grid. Builtins are evaluated exactly at nodes; `step` and `w` carry the
/// jumps of a càglàd step at 1/2 and of W itself.
pub fn input_function(arg: &str, grid: &Arc<Grid>) -> CliResult<GridFunction> {
    if let Some(name) = arg.strip_prefix("builtin:") {
        use std::f64::consts::PI;
        let f = match name {
            "sin" => GridFunction::from_fn(grid, FnSide::Caglad, |x| (2.0 * PI * x).sin()),
            "cos" => GridFunction::from_fn(grid, FnSide::Caglad, |x| (2.0 * PI * x).cos()),
            "hat" => GridFunction::from_fn(grid, FnSide::Caglad, |x| 1.0 - (2.0 * x - 1.0).abs()),
            "poly" => GridFunction::from_fn(grid, FnSide::Caglad, |x| x * (1.0 - x)),
            "step" => {
                let ind = |pred: fn(f64) -> bool| grid.nodes().iter().map(|&x| if pred(x) { 1.0 } else { 0.0 }).collect();
                GridFunction::from_limits(grid.clone(), FnSide::Caglad, ind(|x| x > 0.5), ind(|x| x >= 0.5))
            }
            "w" => GridFunction::measure_w(grid),
            _ => {
                return Err(CliError::usage(format!(
                    "unknown builtin '{name}' (available: sin, cos, hat, poly, step, w)"
                )))
            }
        };
        return Ok(f);
    }
    let path = PathBuf::from(arg);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    let mut pts: Vec<(f64, f64)> = vec![];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::io(&path, e))?;
        let field = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::usage(format!("{}: bad row {:?}", path.display(), rec)))
        };
        pts.push((field(0)?, field(1)?));
    }
    if pts.len() < 2 {
        return Err(CliError::usage(format!("{}: need at least two rows", path.display())));
    }
    if pts.windows(2).any(|p| !(p[1].0 > p[0].0)) {
        return Err(CliError::usage(format!("{}: x must be strictly increasing", path.display())));
    }
    let interp = |x: f64| {
        let k = pts.partition_point(|p| p.0 <= x);
        if k == 0 {
            return pts[0].1;
        }
        if k == pts.len() {
            return pts[k - 1].1;
        }
        let (x0, y0) = pts[k - 1];
        let (x1, y1) = pts[k];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    };
    Ok(GridFunction::from_fn(grid, FnSide::Caglad, interp))
}
