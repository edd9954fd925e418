//! Delimited panel files. Columns `omega`, `eps`, `Q` and `P` are optional,
//! either absent from the header or left empty, as in revenue-only data.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use revpf_core::{FirmPeriod, Panel};

use crate::error::{CliError, CliResult};

pub const COLUMNS: [&str; 15] =
    ["firm_id", "t", "K", "L", "M", "pL", "pM", "pK", "omega", "eps", "Q", "P", "R", "sL_star", "sM_star"];
const REQUIRED: [&str; 11] = ["firm_id", "t", "K", "L", "M", "pL", "pM", "pK", "R", "sL_star", "sM_star"];

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_panel<W: Write>(panel: &Panel, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Io(format!("writing panel: {e}"));
    w.write_record(COLUMNS).map_err(io)?;
    for o in &panel.obs {
        w.write_record([
            o.firm_id.to_string(),
            o.t.to_string(),
            o.k.to_string(),
            o.l.to_string(),
            o.m.to_string(),
            o.p_l.to_string(),
            o.p_m.to_string(),
            o.p_k.to_string(),
            opt(o.omega),
            opt(o.eps),
            opt(o.q),
            opt(o.p),
            o.r.to_string(),
            o.s_l_star.to_string(),
            o.s_m_star.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("writing panel: {e}")))?;
    Ok(())
}

pub fn write_panel_file(panel: &Panel, path: &Path) -> CliResult<()> {
    let f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_panel(panel, std::io::BufWriter::new(f))
}

pub fn read_panel_file(path: &Path) -> CliResult<Panel> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_panel(f).map_err(|e| match e {
        CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_panel<R: Read>(input: R) -> CliResult<Panel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| CliError::Validation(format!("line 1: unreadable header: {e}")))?.clone();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let Some(name) = COLUMNS.iter().find(|c| **c == h) else {
            return Err(CliError::Validation(format!("line 1: unknown column '{h}'")));
        };
        if index.insert(name, i).is_some() {
            return Err(CliError::Validation(format!("line 1: duplicate column '{h}'")));
        }
    }
    if let Some(missing) = REQUIRED.iter().find(|c| !index.contains_key(**c)) {
        return Err(CliError::Validation(format!("line 1: missing required column '{missing}'")));
    }

    let mut obs = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Validation(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |col: &str, msg: String| CliError::Validation(format!("line {line}: column {col}: {msg}"));
        let cell = |col: &str| index.get(col).and_then(|&i| rec.get(i)).unwrap_or("");
        let int = |col: &str| -> CliResult<i64> {
            let raw = cell(col);
            raw.parse::<i64>().map_err(|_| bad(col, format!("'{raw}' is not an integer")))
        };
        let num = |col: &str| -> CliResult<Option<f64>> {
            let raw = cell(col);
            if raw.is_empty() {
                return Ok(None);
            }
            let x: f64 = raw.parse().map_err(|_| bad(col, format!("'{raw}' is not a number")))?;
            if !x.is_finite() {
                return Err(bad(col, format!("'{raw}' is not finite")));
            }
            Ok(Some(x))
        };
        let positive = |col: &str| -> CliResult<f64> {
            match num(col)? {
                None => Err(bad(col, "value is required".into())),
                Some(x) if x > 0.0 => Ok(x),
                Some(x) => Err(bad(col, format!("{x} must be positive"))),
            }
        };
        let optional_positive = |col: &str| -> CliResult<Option<f64>> {
            match num(col)? {
                Some(x) if x <= 0.0 => Err(bad(col, format!("{x} must be positive"))),
                other => Ok(other),
            }
        };

        let firm = int("firm_id")?;
        let firm_id = u32::try_from(firm).map_err(|_| bad("firm_id", format!("{firm} is out of range")))?;
        let t = int("t")?;
        if !seen.insert((firm_id, t)) {
            return Err(CliError::Validation(format!("line {line}: duplicate row for firm {firm_id} at t={t}")));
        }
        obs.push(FirmPeriod {
            firm_id,
            t,
            k: positive("K")?,
            l: positive("L")?,
            m: positive("M")?,
            p_l: positive("pL")?,
            p_m: positive("pM")?,
            p_k: positive("pK")?,
            omega: num("omega")?,
            eps: num("eps")?,
            q: optional_positive("Q")?,
            p: optional_positive("P")?,
            r: positive("R")?,
            s_l_star: positive("sL_star")?,
            s_m_star: positive("sM_star")?,
        });
    }
    Ok(Panel::new(obs))
}
