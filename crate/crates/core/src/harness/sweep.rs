use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::config::RunConfig;
use super::run::{run_averaged_with, AveragedSeries, Problem};
use crate::algorithms::Algorithm;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::topology::TopologyKind;

pub const CSV_HEADER: &str = "round,eta,loss_mean,loss_std,consensus_error_mean,consensus_error_std,grad_norm_sq_mean,grad_norm_sq_std,loss_local_avg_mean";
pub const MANIFEST_HEADER: &str = "cell_id,algorithm,topology,noise_var,mu,seed_list,csv_path";
pub const MANIFEST_FILE: &str = "manifest.csv";
/// Template configuration written next to the manifest.
pub const CONFIG_FILE: &str = "config.txt";

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_cell_csv(series: &AveragedSeries) -> String {
    let mut out = String::with_capacity(200 * (series.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &series.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            fmt_f64(r.eta),
            fmt_f64(r.loss_mean),
            fmt_f64(r.loss_std),
            fmt_f64(r.consensus_error_mean),
            fmt_f64(r.consensus_error_std),
            fmt_f64(r.grad_norm_sq_mean),
            fmt_f64(r.grad_norm_sq_std),
            fmt_f64(r.loss_local_avg_mean),
        );
    }
    out
}

/// Read one numeric column (by header name) from a per-cell CSV, skipping
/// the initial-state row.
pub fn read_csv_column(text: &str, column: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidConfig("empty csv".into()))?;
    let idx = header
        .split(',')
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::InvalidConfig(format!("csv has no `{column}` column")))?;
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.first().map(|f| f.trim()) == Some("-1") {
            continue;
        }
        let v = fields
            .get(idx)
            .and_then(|f| f.trim().parse::<f64>().ok())
            .ok_or_else(|| Error::InvalidConfig(format!("bad csv row {}", k + 2)))?;
        out.push(v);
    }
    Ok(out)
}

/// Axes of a sweep. An empty axis keeps the template's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepAxes {
    pub algorithms: Vec<Algorithm>,
    pub topologies: Vec<TopologyKind>,
    pub noise_vars: Vec<f64>,
    pub mus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: String,
    pub config: RunConfig,
}

fn axis<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
    if values.is_empty() {
        vec![fallback]
    } else {
        values.to_vec()
    }
}

pub fn cell_id(index: usize, c: &RunConfig) -> String {
    format!(
        "{index:03}-{}-{}-var{}-mu{}",
        c.algorithm, c.topology, c.noise_var, c.mu
    )
}

/// Cartesian product of the axes, algorithm-major.
pub fn cells(template: &RunConfig, axes: &SweepAxes) -> Vec<Cell> {
    let mut out = Vec::new();
    for alg in axis(&axes.algorithms, template.algorithm) {
        for topo in axis(&axes.topologies, template.topology) {
            for var in axis(&axes.noise_vars, template.noise_var) {
                for mu in axis(&axes.mus, template.mu) {
                    let config = RunConfig {
                        algorithm: alg,
                        topology: topo,
                        noise_var: var,
                        mu,
                        ..template.clone()
                    };
                    out.push(Cell {
                        id: cell_id(out.len(), &config),
                        config,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub cell_id: String,
    pub algorithm: Algorithm,
    pub topology: TopologyKind,
    pub noise_var: f64,
    pub mu: f64,
    /// `seed:repeat` for every repeat, `;`-separated.
    pub seed_list: String,
    pub csv_path: String,
}

impl ManifestRow {
    pub fn for_cell(cell: &Cell) -> Self {
        let c = &cell.config;
        let seed_list = (0..c.repeats)
            .map(|r| format!("{}:{r}", c.seed))
            .collect::<Vec<_>>()
            .join(";");
        Self {
            cell_id: cell.id.clone(),
            algorithm: c.algorithm,
            topology: c.topology,
            noise_var: c.noise_var,
            mu: c.mu,
            seed_list,
            csv_path: format!("{}.csv", cell.id),
        }
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.cell_id, self.algorithm, self.topology, self.noise_var, self.mu, self.seed_list, self.csv_path
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(Error::InvalidConfig(format!("manifest row needs 7 fields: `{line}`")));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad number `{s}` in manifest")))
        };
        Ok(Self {
            cell_id: f[0].to_string(),
            algorithm: f[1].parse()?,
            topology: f[2].parse()?,
            noise_var: num(f[3])?,
            mu: num(f[4])?,
            seed_list: f[5].to_string(),
            csv_path: f[6].to_string(),
        })
    }

    /// Seed and repeat count encoded in `seed_list`.
    pub fn seed_and_repeats(&self) -> Result<(u64, usize)> {
        let bad = || Error::InvalidConfig(format!("bad seed list `{}`", self.seed_list));
        let mut seed = None;
        let mut count = 0;
        for (k, item) in self.seed_list.split(';').enumerate() {
            let (s, r) = item.split_once(':').ok_or_else(bad)?;
            let s: u64 = s.parse().map_err(|_| bad())?;
            let r: usize = r.parse().map_err(|_| bad())?;
            if r != k || seed.is_some_and(|prev| prev != s) {
                return Err(bad());
            }
            seed = Some(s);
            count += 1;
        }
        Ok((seed.ok_or_else(bad)?, count))
    }
}

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(Error::InvalidConfig("manifest header missing".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(ManifestRow::parse_line)
        .collect()
}

/// Run every cell (in parallel) against one shared dataset. Returns the
/// manifest rows alongside each cell's averaged series.
pub fn run_cells(template: &RunConfig, axes: &SweepAxes) -> Result<Vec<(ManifestRow, AveragedSeries)>> {
    template.validate()?;
    let dataset = Arc::new(Dataset::generate(
        template.samples,
        template.dim,
        template.label_noise,
        template.seed,
    )?);
    let cells = cells(template, axes);
    par::map_slice(&cells, |cell| {
        let problem = Problem::with_dataset(&cell.config, Arc::clone(&dataset))?;
        let series = run_averaged_with(&problem, &cell.config)?;
        Ok((ManifestRow::for_cell(cell), series))
    })
    .into_iter()
    .collect()
}

/// Run a sweep and write one CSV per cell plus `manifest.csv` into `out_dir`.
pub fn sweep(template: &RunConfig, axes: &SweepAxes, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    let results = run_cells(template, axes)?;
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(results.len());
    for (row, series) in results {
        fs::write(out_dir.join(&row.csv_path), format_cell_csv(&series))?;
        rows.push(row);
    }
    fs::write(out_dir.join(MANIFEST_FILE), format_manifest(&rows))?;
    fs::write(out_dir.join(CONFIG_FILE), template.to_file_text())?;
    Ok(rows)
}

/// Read the template and manifest that [`sweep`] wrote into `dir`.
pub fn load_sweep(dir: &Path) -> Result<(RunConfig, Vec<ManifestRow>)> {
    let mut template = RunConfig::default();
    template.apply_file_text(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let rows = parse_manifest(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    Ok((template, rows))
}

/// Re-run every cell of the sweep in `dir` and compare each CSV byte for
/// byte with the file on disk. Returns `(cell_id, identical)` per cell.
pub fn check_sweep(dir: &Path) -> Result<Vec<(String, bool)>> {
    let (template, rows) = load_sweep(dir)?;
    rows.iter()
        .map(|row| {
            let on_disk = fs::read(dir.join(&row.csv_path))?;
            let fresh = rerun_cell(&template, row)?;
            Ok((row.cell_id.clone(), on_disk == fresh.as_bytes()))
        })
        .collect()
}

/// Recreate the configuration of a manifest cell from the template that
/// produced the sweep.
pub fn cell_config(template: &RunConfig, row: &ManifestRow) -> Result<RunConfig> {
    let (seed, repeats) = row.seed_and_repeats()?;
    Ok(RunConfig {
        algorithm: row.algorithm,
        topology: row.topology,
        noise_var: row.noise_var,
        mu: row.mu,
        seed,
        repeats,
        ..template.clone()
    })
}

/// Re-run one manifest cell and return its CSV text.
pub fn rerun_cell(template: &RunConfig, row: &ManifestRow) -> Result<String> {
    let config = cell_config(template, row)?;
    let problem = Problem::build(&config)?;
    Ok(format_cell_csv(&run_averaged_with(&problem, &config)?))
}
