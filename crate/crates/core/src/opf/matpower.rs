//! Conversion from MATPOWER `.m` case files.
//!
//! Only the series branch impedance is kept (line charging and shunts are
//! dropped), the voltage band is the tightest common band over all buses,
//! and a zero `rateA` becomes `unlimited_mva`.

use std::collections::BTreeMap;

use super::case::{Bus, Generator, Line, Load, NetworkCase, VoltageLimits};
use crate::error::{Error, Result};

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(k) => &line[..k],
        None => line,
    }
}

type Fields = (BTreeMap<String, f64>, BTreeMap<String, Vec<Vec<f64>>>);

/// Scalars (`mpc.x = v;`) and matrices (`mpc.x = [ ... ];`) of a case file.
fn parse_fields(text: &str) -> Result<Fields> {
    let mut scalars = BTreeMap::new();
    let mut matrices = BTreeMap::new();
    let mut open: Option<(String, Vec<Vec<f64>>)> = None;
    let number = |tok: &str| {
        tok.parse::<f64>()
            .map_err(|_| Error::InvalidCase(format!("cannot parse number '{tok}'")))
    };
    for raw in text.lines() {
        let mut line = strip_comment(raw).trim().to_string();
        if open.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else { continue };
            let Some((name, value)) = rest.split_once('=') else { continue };
            let name = name.trim().to_string();
            let value = value.trim();
            if let Some(body) = value.strip_prefix('[') {
                open = Some((name, Vec::new()));
                line = body.to_string();
            } else {
                let v = value.trim_end_matches(';').trim();
                if let Ok(x) = v.parse::<f64>() {
                    scalars.insert(name, x);
                }
                continue;
            }
        }
        let (name, rows) = open.as_mut().expect("matrix is open");
        let (body, closed) = match line.find(']') {
            Some(k) => (&line[..k], true),
            None => (line.as_str(), false),
        };
        for chunk in body.split(';') {
            let toks: Vec<&str> = chunk.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
            if !toks.is_empty() {
                rows.push(toks.into_iter().map(number).collect::<Result<_>>()?);
            }
        }
        if closed {
            let (name, rows) = (name.clone(), std::mem::take(rows));
            matrices.insert(name, rows);
            open = None;
        }
    }
    if let Some((name, _)) = open {
        return Err(Error::InvalidCase(format!("matrix mpc.{name} is not closed")));
    }
    Ok((scalars, matrices))
}

fn column(row: &[f64], k: usize, what: &str) -> Result<f64> {
    row.get(k)
        .copied()
        .ok_or_else(|| Error::InvalidCase(format!("{what} row has fewer than {} columns", k + 1)))
}

fn bus_id(v: f64) -> Result<u32> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(Error::InvalidCase(format!("bad bus number {v}")))
    }
}

/// Converts a MATPOWER case. Generators and branches with status 0 are
/// skipped; polynomial costs of degree at most two are supported.
pub fn convert(text: &str, name: Option<String>, unlimited_mva: f64) -> Result<NetworkCase> {
    let (scalars, matrices) = parse_fields(text)?;
    let base_mva = scalars.get("baseMVA").copied().unwrap_or(100.0);
    let get = |k: &str| matrices.get(k).ok_or_else(|| Error::InvalidCase(format!("missing mpc.{k}")));
    let bus_rows = get("bus")?;
    let gen_rows = get("gen")?;
    let branch_rows = get("branch")?;
    let cost_rows = matrices.get("gencost");

    let mut buses = Vec::new();
    let mut loads = Vec::new();
    let (mut vmin, mut vmax) = (f64::NEG_INFINITY, f64::INFINITY);
    for row in bus_rows {
        let id = bus_id(column(row, 0, "bus")?)?;
        buses.push(Bus { id });
        let (pd, qd) = (column(row, 2, "bus")?, column(row, 3, "bus")?);
        if pd != 0.0 || qd != 0.0 {
            loads.push(Load { bus: id, p: pd, q: qd });
        }
        vmax = vmax.min(column(row, 11, "bus")?);
        vmin = vmin.max(column(row, 12, "bus")?);
    }

    let mut generators = Vec::new();
    for (k, row) in gen_rows.iter().enumerate() {
        if column(row, 7, "gen")? <= 0.0 {
            continue;
        }
        let (a, b) = match cost_rows.and_then(|c| c.get(k)) {
            Some(c) => {
                if column(c, 0, "gencost")? != 2.0 {
                    return Err(Error::InvalidCase("only polynomial generator costs are supported".into()));
                }
                let ncoef = column(c, 3, "gencost")? as usize;
                let coef: Vec<f64> = (0..ncoef).map(|i| column(c, 4 + i, "gencost")).collect::<Result<_>>()?;
                // Highest degree first; the constant term is irrelevant.
                match ncoef {
                    0 | 1 => (0.0, 0.0),
                    2 => (0.0, coef[0]),
                    3 => (coef[0], coef[1]),
                    _ => return Err(Error::InvalidCase("generator cost degree above two".into())),
                }
            }
            None => (0.0, 0.0),
        };
        generators.push(Generator {
            bus: bus_id(column(row, 0, "gen")?)?,
            a,
            b,
            pmin: column(row, 9, "gen")?,
            pmax: column(row, 8, "gen")?,
            qmin: column(row, 4, "gen")?,
            qmax: column(row, 3, "gen")?,
        });
    }

    let mut lines = Vec::new();
    for row in branch_rows {
        if row.len() > 10 && row[10] <= 0.0 {
            continue;
        }
        let (r, x) = (column(row, 2, "branch")?, column(row, 3, "branch")?);
        let d = r * r + x * x;
        if d == 0.0 {
            return Err(Error::InvalidCase("branch with zero impedance".into()));
        }
        let rate = column(row, 5, "branch")?;
        lines.push(Line {
            from: bus_id(column(row, 0, "branch")?)?,
            to: bus_id(column(row, 1, "branch")?)?,
            g: r / d,
            b_susceptance: -x / d,
            k_max: if rate > 0.0 { rate } else { unlimited_mva },
        });
    }

    let case = NetworkCase {
        name,
        base_mva,
        buses,
        generators,
        lines,
        voltage: VoltageLimits { vmin, vmax },
        loads,
    };
    case.validate()?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE3: &str = r#"
function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	90	30	0	0	1	1	0	230	1	1.1	0.9;
	3	1	100	35	0	0	1	1	0	230	1	1.05	0.95;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10;
	3	0	0	300	-300	1	100	0	250	10;
];
mpc.branch = [
	1	2	0.01	0.085	0	250	250	250	0	0	1;
	2	3	0.02	0.1	0	0	0	0	0	0	1;
];
mpc.gencost = [
	2	0	0	3	0.11	5	150;
	2	0	0	3	0.085	1.2	600;
];
"#;

    #[test]
    fn converts_small_case() {
        let case = convert(CASE3, Some("case3".into()), 1e3).unwrap();
        assert_eq!(case.base_mva, 100.0);
        assert_eq!(case.buses.len(), 3);
        assert_eq!(case.generators.len(), 1, "out-of-service generator is skipped");
        assert_eq!(case.generators[0].a, 0.11);
        assert_eq!(case.generators[0].b, 5.0);
        assert_eq!(case.loads.len(), 2);
        assert_eq!(case.voltage.vmin, 0.95);
        assert_eq!(case.voltage.vmax, 1.05);
        let l = &case.lines[0];
        let d = 0.01f64.powi(2) + 0.085f64.powi(2);
        assert!((l.g - 0.01 / d).abs() < 1e-12);
        assert!((l.b_susceptance + 0.085 / d).abs() < 1e-12);
        assert_eq!(case.lines[1].k_max, 1e3);
    }

    #[test]
    fn unclosed_matrix_is_an_error() {
        assert!(convert("mpc.bus = [\n1 2 3;\n", None, 1.0).is_err());
    }
}
