//! Parameter-grid sweeps written as CSV or JSON.

use levelcross::crossings::{mean_rate, variance_rate_asymptotic, CrossingError};
use levelcross::quadrature::QuadratureSpec;
use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::args::{FamilyName, KernelArgs, Quantity, SweepArgs, PARAMS};
use crate::commands::{crossing_failure, kernel, level};
use crate::{emit, Failure};

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

fn units(name: &str) -> &'static str {
    match name {
        "u" | "sigma" => "x",
        "omega0" => "1/time",
        "theta" => "x^2/time^2",
        "tau" | "tau_f" | "tau_e" => "time",
        "mean_rate" | "var_rate" | "var_rate_error" => "1/time",
        "converged" => "bool",
        "error" => "text",
        _ => "1",
    }
}

fn relevant(family: FamilyName, name: &str) -> bool {
    let params: &[&str] = match family {
        FamilyName::Sdho => &["omega0", "zeta", "theta"],
        FamilyName::Ou => &["sigma", "tau_f", "tau_e", "kappa"],
        FamilyName::Rq => &["sigma", "tau", "alpha"],
        FamilyName::Se => &["sigma", "tau"],
    };
    matches!(name, "u" | "psi") || params.contains(&name)
}

/// Parses `NAME:MIN:MAX:POINTS[:lin|log]`.
pub fn parse_axis(text: &str) -> Result<Axis, Failure> {
    let bad = |why: &str| Failure::Usage(format!("axis '{text}': {why}"));
    let parts: Vec<&str> = text.split(':').collect();
    if !(4..=5).contains(&parts.len()) {
        return Err(bad("expected NAME:MIN:MAX:POINTS[:lin|log]"));
    }
    let name = parts[0].trim().replace('-', "_");
    if !(name == "u" || name == "psi" || PARAMS.contains(&name.as_str())) {
        return Err(bad("unknown axis name"));
    }
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad("bounds must be finite numbers"));
    let (lo, hi) = (num(parts[1])?, num(parts[2])?);
    let points: usize = parts[3].trim().parse().map_err(|_| bad("POINTS must be an integer"))?;
    if points < 2 {
        return Err(bad("at least 2 points are required"));
    }
    let log = match parts.get(4).map(|s| s.trim()) {
        None | Some("lin") => false,
        Some("log") => true,
        Some(_) => return Err(bad("spacing must be lin or log")),
    };
    if log && !(lo > 0.0 && hi > 0.0) {
        return Err(bad("log spacing needs positive bounds"));
    }
    let last = (points - 1) as f64;
    let values = (0..points)
        .map(|i| {
            let s = i as f64 / last;
            match i {
                0 => lo,
                _ if i == points - 1 => hi,
                _ if log => (lo.ln() + s * (hi.ln() - lo.ln())).exp(),
                _ => lo + s * (hi - lo),
            }
        })
        .collect();
    Ok(Axis { name, values })
}

struct Point {
    axes: Vec<f64>,
    mean_rate: f64,
    var_rate: f64,
    var_rate_error: f64,
    fano: f64,
    converged: bool,
    error: Option<Failure>,
}

fn evaluate(a: &SweepArgs, axes: &[Axis], at: &[f64], spec: &QuadratureSpec, asymptotic: bool) -> Point {
    let mut p = Point {
        axes: at.to_vec(),
        mean_rate: f64::NAN,
        var_rate: f64::NAN,
        var_rate_error: f64::NAN,
        fano: f64::NAN,
        converged: false,
        error: None,
    };
    let mut kargs: KernelArgs = a.kernel.clone();
    let mut largs = a.level.clone();
    for (axis, &v) in axes.iter().zip(at) {
        match axis.name.as_str() {
            "u" => (largs.u, largs.psi) = (Some(v), None),
            "psi" => (largs.u, largs.psi) = (None, Some(v)),
            name => {
                kargs.set(name, v);
            }
        }
    }
    let k = match kargs.family().and_then(kernel) {
        Ok(k) => k,
        Err(f) => {
            p.error = Some(f);
            return p;
        }
    };
    let u = level(&largs, &k);
    p.mean_rate = mean_rate(&k, u, largs.mode);
    if !asymptotic {
        p.converged = true;
        return p;
    }
    match variance_rate_asymptotic(&k, u, largs.mode, spec) {
        Ok(s) => {
            p.var_rate = s.variance;
            p.var_rate_error = s.diagnostics.error_estimate;
            p.fano = s.fano.unwrap_or(f64::NAN);
            p.converged = true;
        }
        Err(e) => {
            if let CrossingError::NotConverged(s) = &e {
                p.var_rate_error = s.diagnostics.error_estimate;
            }
            p.error = Some(crossing_failure(&e));
        }
    }
    p
}

fn grid(axes: &[Axis]) -> Vec<Vec<f64>> {
    match axes {
        [a] => a.values.iter().map(|&x| vec![x]).collect(),
        [a, b] => a.values.iter().flat_map(|&x| b.values.iter().map(move |&y| vec![x, y])).collect(),
        _ => unreachable!("one or two axes"),
    }
}

fn columns(axes: &[Axis], quantities: &[Quantity]) -> Vec<String> {
    let mut cols: Vec<String> = axes.iter().map(|a| a.name.clone()).collect();
    for q in quantities {
        match q {
            Quantity::MeanRate => cols.push("mean_rate".into()),
            Quantity::VarRate => cols.extend(["var_rate".into(), "var_rate_error".into()]),
            Quantity::Fano => cols.push("fano".into()),
        }
    }
    cols.extend(["converged".into(), "error".into()]);
    cols
}

enum Cell {
    Num(f64),
    Flag(bool),
    Text(String),
}

fn cells(p: &Point, quantities: &[Quantity]) -> Vec<Cell> {
    let mut row: Vec<Cell> = p.axes.iter().map(|&v| Cell::Num(v)).collect();
    for q in quantities {
        match q {
            Quantity::MeanRate => row.push(Cell::Num(p.mean_rate)),
            Quantity::VarRate => row.extend([Cell::Num(p.var_rate), Cell::Num(p.var_rate_error)]),
            Quantity::Fano => row.push(Cell::Num(p.fano)),
        }
    }
    row.push(Cell::Flag(p.converged && p.error.is_none()));
    row.push(Cell::Text(p.error.as_ref().map(|f| f.message().to_string()).unwrap_or_default()));
    row
}

/// 17 significant digits, enough to round-trip any f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn to_csv(header: &str, cols: &[String], rows: &[Vec<Cell>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(cols).expect("in-memory write");
    for row in rows {
        let fields: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Num(v) => format_float(*v),
                Cell::Flag(b) => b.to_string(),
                Cell::Text(t) => t.clone(),
            })
            .collect();
        w.write_record(&fields).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    let mut out = String::from(header);
    for c in cols {
        out.push_str(&format!("# {c} [{}]\n", units(c)));
    }
    out + &body
}

fn to_json(cols: &[String], rows: &[Vec<Cell>]) -> String {
    let objects: Vec<Value> = rows
        .iter()
        .map(|row| {
            let mut m = Map::new();
            for (c, cell) in cols.iter().zip(row) {
                let v = match cell {
                    Cell::Num(v) => Value::from(*v),
                    Cell::Flag(b) => Value::Bool(*b),
                    Cell::Text(t) if t.is_empty() => Value::Null,
                    Cell::Text(t) => Value::String(t.clone()),
                };
                m.insert(c.clone(), v);
            }
            Value::Object(m)
        })
        .collect();
    serde_json::to_string_pretty(&objects).expect("rows serialize") + "\n"
}

pub fn run(a: SweepArgs) -> Result<(), Failure> {
    let axes = a.axis.iter().map(|s| parse_axis(s)).collect::<Result<Vec<_>, _>>()?;
    if !(1..=2).contains(&axes.len()) {
        return Err(Failure::Usage("give one or two --axis".into()));
    }
    if axes.len() == 2 && axes[0].name == axes[1].name {
        return Err(Failure::Usage("the two axes must differ".into()));
    }
    let names: Vec<&str> = axes.iter().map(|x| x.name.as_str()).collect();
    if names.contains(&"u") && names.contains(&"psi") {
        return Err(Failure::Usage("u and psi cannot both be swept".into()));
    }
    for n in &names {
        if !relevant(a.kernel.kernel, n) {
            return Err(Failure::Usage(format!("'{n}' is not a parameter of --kernel {:?}", a.kernel.kernel).to_lowercase()));
        }
    }
    let mut a = a;
    if names.contains(&"kappa") {
        a.kernel.tau_f = None;
    }
    if names.contains(&"tau_f") {
        a.kernel.kappa = None;
    }
    let mut quantities: Vec<Quantity> = Vec::new();
    for q in &a.quantities {
        if !quantities.contains(q) {
            quantities.push(*q);
        }
    }
    let spec = a.quad.spec()?;
    let asymptotic = quantities.iter().any(|q| *q != Quantity::MeanRate);

    let points: Vec<Vec<f64>> = grid(&axes);
    let results: Vec<Point> = points.par_iter().map(|at| evaluate(&a, &axes, at, &spec, asymptotic)).collect();

    let cols = columns(&axes, &quantities);
    let rows: Vec<Vec<Cell>> = results.iter().map(|p| cells(p, &quantities)).collect();
    let json = a.output.json || a.output.out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    let text = if json {
        to_json(&cols, &rows)
    } else {
        let header = format!("# levelcross sweep: kernel {:?}, mode {}\n", a.kernel.kernel, a.level.mode).to_lowercase();
        to_csv(&header, &cols, &rows)
    };
    emit(a.output.out.as_deref(), &text)?;

    let failed: Vec<&Failure> = results.iter().filter_map(|p| p.error.as_ref()).collect();
    match failed.iter().map(|f| f.code()).min() {
        None => Ok(()),
        Some(code) => {
            let message = format!("{} of {} points failed; first: {}", failed.len(), results.len(), failed[0].message());
            Err(if code == 1 { Failure::Usage(message) } else { Failure::Numeric(message) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes_parse_with_exact_endpoints() {
        let a = parse_axis("zeta:0.25:4:5:log").unwrap();
        assert_eq!(a.name, "zeta");
        assert_eq!(a.values.len(), 5);
        assert_eq!((a.values[0], a.values[4]), (0.25, 4.0));
        assert!((a.values[2] - 1.0).abs() < 1e-15);
        let b = parse_axis("tau-f:0:1:3").unwrap();
        assert_eq!((b.name.as_str(), b.values.as_slice()), ("tau_f", &[0.0, 0.5, 1.0][..]));
        for bad in ["u:0:1:1", "u:0:1", "bogus:0:1:2", "u:0:x:2", "u:0:1:2:log", "u:0:1:2:cubic"] {
            assert!(parse_axis(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn grid_is_row_major() {
        let a = Axis { name: "u".into(), values: vec![0.0, 1.0] };
        let b = Axis { name: "zeta".into(), values: vec![2.0, 3.0, 4.0] };
        let g = grid(&[a, b]);
        assert_eq!(g[0], vec![0.0, 2.0]);
        assert_eq!(g[1], vec![0.0, 3.0]);
        assert_eq!(g[3], vec![1.0, 2.0]);
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 6.02214076e23, -2.2250738585072014e-308, f64::MIN_POSITIVE / 3.0] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
        assert!(format_float(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    proptest::proptest! {
        #[test]
        fn any_finite_float_round_trips(bits in proptest::prelude::any::<u64>()) {
            let v = f64::from_bits(bits);
            proptest::prop_assume!(v.is_finite());
            proptest::prop_assert_eq!(format_float(v).parse::<f64>().unwrap().to_bits(), bits);
        }
    }
}
