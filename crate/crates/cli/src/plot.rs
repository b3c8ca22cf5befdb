//! Tidy `series, x, y, y_err` tables from a finished run.

use std::path::Path;

use meanfield_core::extended::parse as parse_ext;

use crate::error::{CliError, CliResult};
use crate::output::{read_manifest, write_manifest, FileEntry, Manifest, Staging};

/// One row of a tidy table; `y_err` is empty when there is none.
struct Row {
    series: String,
    x: f64,
    y: f64,
    y_err: Option<f64>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(dir: &Path, name: &str) -> CliResult<Table> {
        let p = dir.join(name);
        let mut r = csv::Reader::from_path(&p)
            .map_err(|e| CliError::task(format!("missing input {}: {e}", p.display())))?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::task(format!("column '{name}' not found")))
    }

    /// Parsed column; unparsable or empty cells are `None`.
    fn values(&self, name: &str) -> CliResult<Vec<Option<f64>>> {
        let i = self.col(name)?;
        Ok(self.rows.iter().map(|r| parse_ext(&r[i])).collect())
    }

    fn strings(&self, name: &str) -> CliResult<Vec<String>> {
        let i = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }
}

/// Rows for the finite points of one series.
fn series(name: &str, x: &[Option<f64>], y: &[Option<f64>], err: Option<&[Option<f64>]>) -> Vec<Row> {
    let mut out = Vec::new();
    for i in 0..x.len() {
        if let (Some(xv), Some(yv)) = (x[i], y[i]) {
            if xv.is_finite() && yv.is_finite() {
                out.push(Row { series: name.to_string(), x: xv, y: yv, y_err: err.and_then(|e| e[i]) });
            }
        }
    }
    out
}

fn write_rows(st: &mut Staging, name: &str, rows: &[Row]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(st.path(name))?;
    w.write_record(["series", "x", "y", "y_err"])?;
    for r in rows {
        w.write_record([r.series.clone(), format!("{:?}", r.x), format!("{:?}", r.y), r.y_err.map(|e| format!("{e:?}")).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-box values from `gamma.csv` / `g_by_k.csv`, one series per `k`.
fn by_k(t: &Table) -> CliResult<Vec<Row>> {
    let ks = t.strings("k")?;
    let l = t.values("lambda")?;
    let v = t.values("value_per_volume")?;
    let e = t.values("replica_std")?;
    let mut labels: Vec<String> = Vec::new();
    for k in &ks {
        if !labels.contains(k) {
            labels.push(k.clone());
        }
    }
    let mut rows = Vec::new();
    for label in labels {
        let idx: Vec<usize> = (0..ks.len()).filter(|&i| ks[i] == label).collect();
        let pick = |c: &[Option<f64>]| idx.iter().map(|&i| c[i]).collect::<Vec<_>>();
        rows.extend(series(&format!("k={label}"), &pick(&l), &pick(&v), Some(&pick(&e))));
    }
    Ok(rows)
}

fn g_rows(dir: &Path) -> CliResult<Vec<Row>> {
    let t = Table::read(dir, "g.csv")?;
    Ok(series("g_est", &t.values("lambda")?, &t.values("g")?, Some(&t.values("replica_spread")?)))
}

/// Writes the plot tables for the run in `dir` into `dir/plot` and returns
/// their names.
pub fn emit_plot_data(dir: &Path) -> CliResult<Vec<String>> {
    let manifest = read_manifest(dir)?;
    let out = dir.join("plot");
    let mut st = Staging::new(&out)?;
    match manifest.task.as_str() {
        "energy" => {}
        "zeta" => {
            let t = Table::read(dir, "zeta.csv")?;
            let r = t.values("r")?;
            let mut rows = series("zeta", &r, &t.values("value")?, Some(&t.values("error")?));
            rows.extend(series("tail_bound", &r, &t.values("tail_bound")?, None));
            write_rows(&mut st, "zeta.csv", &rows)?;
        }
        "gamma" => write_rows(&mut st, "gamma.csv", &by_k(&Table::read(dir, "gamma.csv")?)?)?,
        "g_profile" => {
            let mut rows = g_rows(dir)?;
            rows.extend(by_k(&Table::read(dir, "g_by_k.csv")?)?);
            write_rows(&mut st, "g_profile.csv", &rows)?;
        }
        "f_profile" => {
            let mut rows = g_rows(dir)?;
            rows.extend(by_k(&Table::read(dir, "g_by_k.csv")?)?);
            write_rows(&mut st, "g_profile.csv", &rows)?;
            let f = Table::read(dir, "f.csv")?;
            write_rows(&mut st, "f_profile.csv", &series("f_est", &f.values("t")?, &f.values("f")?, None))?;
        }
        "meanfield" => {
            let t = Table::read(dir, "meanfield.csv")?;
            let x = position_column(&t)?;
            let mut rows = series("density", &x, &t.values("density")?, None);
            rows.extend(series("potential", &x, &t.values("u_potential")?, None));
            write_rows(&mut st, "meanfield.csv", &rows)?;
        }
        "converge" => {
            let t = Table::read(dir, "trend.csv")?;
            let eps = t.values("eps")?;
            let mut rows = series("scaled_value", &eps, &t.values("scaled_value")?, None);
            rows.extend(series("continuum", &eps, &t.values("continuum_value")?, None));
            rows.extend(series("mass", &eps, &t.values("mass")?, None));
            rows.extend(series("mass_bound", &eps, &t.values("mass_bound")?, None));
            rows.extend(series("l1_distance", &eps, &t.values("l1_distance")?, None));
            write_rows(&mut st, "convergence.csv", &rows)?;
            let d = Table::read(dir, "density.csv")?;
            let x = position_column(&d)?;
            let mut rows = Vec::new();
            for name in d.header.iter().filter(|h| *h == "continuum" || h.starts_with("eps=")) {
                rows.extend(series(name, &x, &d.values(name)?, None));
            }
            write_rows(&mut st, "density.csv", &rows)?;
        }
        "verify" => {
            let t = Table::read(dir, "sandwich.csv")?;
            let l = t.values("lambda")?;
            let mut rows = series("H*", &l, &t.values("h_star")?, None);
            rows.extend(series("g_est", &l, &t.values("g")?, Some(&t.values("uncertainty")?)));
            rows.extend(series("upper_bound", &l, &t.values("g_upper")?, None));
            write_rows(&mut st, "sandwich.csv", &rows)?;
            let f = Table::read(dir, "f.csv")?;
            write_rows(&mut st, "f_profile.csv", &series("f_est", &f.values("t")?, &f.values("f")?, None))?;
        }
        other => return Err(CliError::task(format!("unknown task '{other}' in the manifest"))),
    }
    let outputs: Vec<FileEntry> = st.commit()?;
    let names = outputs.iter().map(|e| e.path.clone()).collect();
    let plot_manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        task: format!("plotdata:{}", manifest.task),
        seed: manifest.seed,
        spec_sha256: manifest.spec_sha256,
        inputs: manifest.outputs,
        outputs,
    };
    write_manifest(&out, &plot_manifest)?;
    Ok(names)
}

/// `x0` in one dimension; the cell index otherwise.
fn position_column(t: &Table) -> CliResult<Vec<Option<f64>>> {
    if t.header.iter().any(|h| h == "x1") {
        Ok((0..t.rows.len()).map(|i| Some(i as f64)).collect())
    } else {
        t.values("x0")
    }
}
