use std::io::{Read, Write};

use super::{DiversityError, LagrangeSet, ReturnMatrix};

fn csv_err(e: impl std::fmt::Display) -> DiversityError {
    DiversityError::Csv(e.to_string())
}

/// Writes a return matrix with a header row `row,c0,c1,...`.
pub fn write_return_matrix_csv<W: Write>(r: &ReturnMatrix, w: W) -> Result<(), DiversityError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["row".to_string()];
    header.extend((0..r.k()).map(|c| format!("c{c}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for row in 0..r.k() {
        let mut rec = vec![row.to_string()];
        rec.extend(r.row(row).iter().map(|v| format!("{v:?}")));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush().map_err(csv_err)
}

pub fn read_return_matrix_csv<R: Read>(rdr: R) -> Result<ReturnMatrix, DiversityError> {
    let mut rdr = csv::Reader::from_reader(rdr);
    let k = rdr.headers().map_err(csv_err)?.len().saturating_sub(1);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let idx: usize = rec.get(0).unwrap_or("").parse().map_err(csv_err)?;
        if idx != n {
            return Err(DiversityError::Csv(format!("row index {idx} at position {n}")));
        }
        rows.push(rec.iter().skip(1).map(|s| s.parse::<f64>().map_err(csv_err)).collect::<Result<_, _>>()?);
    }
    ReturnMatrix::from_rows(&rows)
}

/// Writes multipliers in long form: `kind,i,j,value` with `kind` one of
/// `tau`, `alpha1`, `alpha2`.
pub fn write_lagrange_csv<W: Write>(a: &LagrangeSet, w: W) -> Result<(), DiversityError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["kind", "i", "j", "value"]).map_err(csv_err)?;
    wtr.write_record(["tau", "", "", &format!("{:?}", a.tau)]).map_err(csv_err)?;
    wtr.write_record(["k", "", "", &a.k().to_string()]).map_err(csv_err)?;
    for i in 0..a.k() {
        for j in 0..a.k() {
            if i != j {
                for (kind, v) in [("alpha1", a.alpha1(i, j)), ("alpha2", a.alpha2(i, j))] {
                    wtr.write_record([kind, &i.to_string(), &j.to_string(), &format!("{v:?}")])
                        .map_err(csv_err)?;
                }
            }
        }
    }
    wtr.flush().map_err(csv_err)
}

pub fn read_lagrange_csv<R: Read>(rdr: R) -> Result<LagrangeSet, DiversityError> {
    let mut rdr = csv::Reader::from_reader(rdr);
    let mut tau = None;
    let mut set: Option<LagrangeSet> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |n: usize| rec.get(n).unwrap_or("");
        match field(0) {
            "tau" => tau = Some(field(3).parse::<f64>().map_err(csv_err)?),
            "k" => {
                let k: usize = field(3).parse().map_err(csv_err)?;
                let t = tau.ok_or_else(|| DiversityError::Csv("tau must precede k".into()))?;
                set = Some(LagrangeSet::new(k, t));
            }
            kind @ ("alpha1" | "alpha2") => {
                let s = set.as_mut().ok_or_else(|| DiversityError::Csv("k must precede multipliers".into()))?;
                let i: usize = field(1).parse().map_err(csv_err)?;
                let j: usize = field(2).parse().map_err(csv_err)?;
                let v: f64 = field(3).parse().map_err(csv_err)?;
                if i >= s.k() || j >= s.k() || i == j {
                    return Err(DiversityError::Index { i, j, k: s.k() });
                }
                if kind == "alpha1" {
                    s.set_alpha1(i, j, v);
                } else {
                    s.set_alpha2(i, j, v);
                }
            }
            other => return Err(DiversityError::Csv(format!("unknown row kind {other:?}"))),
        }
    }
    set.ok_or_else(|| DiversityError::Csv("missing k row".into()))
}
