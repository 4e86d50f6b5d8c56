//! Runs a resolved config, writes its CSVs and manifest, and renders a text summary.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::config::to_kv;
use crate::error::{Error, Result};
use crate::experiments::{
    compare_nesterov, run_trajectory, sweep_delta, sweep_r, write_compare_csv, write_fits_csv, write_sweep_csv,
    write_trajectory_csv, ExperimentConfig, Family,
};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok((path, BufWriter::new(f)))
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map(|k| k.to_string()).unwrap_or_else(|| "never".into())
}

pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    let mut s = String::new();
    match cfg.family {
        Family::Trajectory => {
            let runs = run_trajectory(cfg)?;
            let (path, w) = create(dir, "trajectory.csv")?;
            write_trajectory_csv(&runs, w)?;
            files.push(path);
            writeln!(
                s,
                "{:>4} {:>6} {:>22} {:>9} {:>9} {:>9} {:>13} {:>9}",
                "run", "seed", "noise", "delta_a", "delta_b", "R", "plateau_err", "no_accum"
            )
            .unwrap();
            for r in &runs {
                writeln!(
                    s,
                    "{:>4} {:>6} {:>22} {:>9} {:>9} {:>9} {:>13.4e} {:>9.3}",
                    r.run_id,
                    r.seed,
                    r.kind.label(),
                    r.kind.delta_a(),
                    r.kind.delta_b(),
                    r.r,
                    r.plateau_error,
                    r.no_accumulation_ratio
                )
                .unwrap();
            }
        }
        Family::DeltaSweep | Family::RSweep => {
            let results = if cfg.family == Family::DeltaSweep {
                sweep_delta(cfg)?
            } else {
                sweep_r(cfg)?
            };
            let (path, w) = create(dir, "sweep.csv")?;
            write_sweep_csv(&results, w)?;
            files.push(path);
            let (path, w) = create(dir, "fits.csv")?;
            write_fits_csv(&results, w)?;
            files.push(path);
            for res in &results {
                writeln!(s, "{}", res.fits.first().map(|f| f.label.as_str()).unwrap_or("")).unwrap();
                writeln!(s, "  {:>10} {:>13} {:>13} {:>13}", res.param.as_str(), "err_f", "std_f", "err_x").unwrap();
                for i in 0..res.grid.len() {
                    writeln!(
                        s,
                        "  {:>10} {:>13.4e} {:>13.4e} {:>13.4e}",
                        res.grid[i], res.error_mean[i], res.error_std[i], res.arg_error_mean[i]
                    )
                    .unwrap();
                }
                for fit in &res.fits {
                    let c = fit.report.coefficients;
                    writeln!(
                        s,
                        "  fit {:<10} target {} coef [{:.4e}, {:.4e}, {:.4e}] r2 {:.4} {}{}",
                        fit.report.model.as_str(),
                        fit.label.rsplit(':').next().unwrap_or(""),
                        c[0],
                        c[1],
                        c[2],
                        fit.report.r_squared,
                        fit.report
                            .loglog_slope
                            .map(|v| format!("slope {v:.3} "))
                            .unwrap_or_default(),
                        fit.report.status.as_str()
                    )
                    .unwrap();
                }
            }
        }
        Family::CompareNesterov => {
            let runs = compare_nesterov(cfg)?;
            let (path, w) = create(dir, "compare.csv")?;
            write_compare_csv(&runs, w)?;
            files.push(path);
            writeln!(
                s,
                "{:>6} {:>13} {:>9} {:>14} {:>9}",
                "seed", "cg_plateau", "cg_entry", "nesterov_entry", "ratio"
            )
            .unwrap();
            for r in &runs {
                writeln!(
                    s,
                    "{:>6} {:>13.4e} {:>9} {:>14} {:>9.2}",
                    r.seed,
                    r.cg_plateau,
                    fmt_opt(r.cg_entry),
                    fmt_opt(r.nesterov_entry),
                    r.speedup()
                )
                .unwrap();
            }
        }
    }

    let manifest = dir.join("manifest.txt");
    let mut text = String::from("# files\n");
    for f in &files {
        text.push_str(&format!("{}\n", f.file_name().unwrap().to_string_lossy()));
    }
    text.push_str("manifest.txt\n# resolved config\n");
    text.push_str(&to_kv(cfg));
    std::fs::write(&manifest, text).map_err(|e| Error::Io(format!("{}: {e}", manifest.display())))?;
    files.push(manifest);
    Ok(RunOutput { files, summary: s })
}
