use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{Cell, EvalSummary};
use crate::augment::NoiseKind;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::track::{CHANNEL_NAMES, N_CHANNELS};

/// `100 * (new - base) / base`.
pub fn relative_improvement(new: f64, base: f64) -> Result<f64> {
    if base == 0.0 || !base.is_finite() || !new.is_finite() {
        return Err(Error::DegenerateInput(format!(
            "relative improvement needs a finite non-zero base, got {base}"
        )));
    }
    Ok(100.0 * (new - base) / base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRow {
    pub label: String,
    pub new: f64,
    pub base: f64,
    pub percent: f64,
}

/// Reads `label,new,base` rows (with header) and adds the percentage.
pub fn relative_table_from_csv(text: &str) -> Result<Vec<RelativeRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::InvalidInput(format!("row {rec:?} needs label,new,base")))?
                .trim()
                .parse()
                .map_err(|e| Error::InvalidInput(format!("row {rec:?}: {e}")))
        };
        let (new, base) = (num(1)?, num(2)?);
        out.push(RelativeRow {
            label: rec.get(0).unwrap_or_default().trim().to_string(),
            new,
            base,
            percent: relative_improvement(new, base)?,
        });
    }
    Ok(out)
}

/// Which rows a report should contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGrid {
    pub scenarios: Vec<Scenario>,
    pub noises: Vec<NoiseKind>,
    pub snrs: Vec<f64>,
    pub include_clean: bool,
}

impl Default for ReportGrid {
    fn default() -> Self {
        Self {
            scenarios: vec![Scenario::SiO, Scenario::SiseP, Scenario::SiseM],
            noises: vec![NoiseKind::Nonbabble, NoiseKind::Babble],
            snrs: vec![-5.0, 0.0, 5.0, 10.0],
            include_clean: true,
        }
    }
}

impl ReportGrid {
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        if self.include_clean {
            cells.push(Cell::CLEAN);
        }
        for n in &self.noises {
            for s in &self.snrs {
                cells.push(Cell {
                    noise: Some(*n),
                    snr_db: Some(*s),
                });
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiRow {
    pub noise: String,
    pub snr_db: Option<f64>,
    pub model: Scenario,
    pub values: Vec<Option<f64>>,
    pub avg_all: Option<f64>,
    /// No evaluation output existed for this cell.
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeRow {
    pub noise: String,
    pub snr_db: f64,
    /// `noisy` for the unprocessed input, otherwise a scenario name.
    pub model: String,
    pub pesq: Option<f64>,
    pub csig: Option<f64>,
    pub cbak: Option<f64>,
    pub covl: Option<f64>,
    pub stoi: Option<f64>,
    pub snr_gain_median: Option<f64>,
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTables {
    pub si: Vec<SiRow>,
    pub se: Vec<SeRow>,
}

fn noise_label(c: &Cell) -> String {
    c.noise.map_or("clean".into(), |n| n.as_str().to_string())
}

/// Assembles inversion and enhancement tables over `grid`; absent cells
/// become rows flagged `missing` with empty values.
pub fn build_report(grid: &ReportGrid, summaries: &[EvalSummary]) -> Result<ReportTables> {
    let cells = grid.cells();
    if grid.scenarios.is_empty() || cells.is_empty() {
        return Err(Error::InvalidInput("report grid is empty".into()));
    }
    let find = |s: Scenario| summaries.iter().find(|x| x.scenario == s);
    let mut si = Vec::new();
    for cell in &cells {
        for &s in grid.scenarios.iter().filter(|s| s.uses_si_loss()) {
            let r = find(s).and_then(|x| x.cell(*cell)).and_then(|c| c.ppmc.as_ref());
            let values = r.map_or(vec![None; N_CHANNELS], |r| r.values.clone());
            let defined: Vec<f64> = values.iter().flatten().copied().collect();
            si.push(SiRow {
                noise: noise_label(cell),
                snr_db: cell.snr_db,
                model: s,
                avg_all: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                values,
                missing: r.is_none(),
            });
        }
    }
    let mut se = Vec::new();
    for cell in cells.iter().filter(|c| c.noise.is_some()) {
        let snr = cell.snr_db.expect("noisy cell");
        let se_models: Vec<Scenario> = grid.scenarios.iter().copied().filter(|s| s.uses_se_loss()).collect();
        if se_models.is_empty() {
            continue;
        }
        let noisy = se_models
            .iter()
            .filter_map(|s| find(*s).and_then(|x| x.cell(*cell)).and_then(|c| c.se.as_ref()))
            .next();
        se.push(SeRow {
            noise: noise_label(cell),
            snr_db: snr,
            model: "noisy".into(),
            pesq: None,
            csig: None,
            cbak: None,
            covl: None,
            stoi: noisy.map(|s| s.stoi_input),
            snr_gain_median: noisy.map(|_| 0.0),
            missing: noisy.is_none(),
        });
        for s in se_models {
            let r = find(s).and_then(|x| x.cell(*cell)).and_then(|c| c.se.as_ref());
            let ext = |k: &str| r.and_then(|r| r.external.get(k).copied());
            se.push(SeRow {
                noise: noise_label(cell),
                snr_db: snr,
                model: s.as_str().into(),
                pesq: ext("pesq"),
                csig: ext("csig"),
                cbak: ext("cbak"),
                covl: ext("covl"),
                stoi: r.map(|r| r.stoi_enhanced),
                snr_gain_median: r.map(|r| r.snr_gain_median),
                missing: r.is_none(),
            });
        }
    }
    Ok(ReportTables { si, se })
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| format!("{v}"))
}

impl ReportTables {
    pub fn si_csv(&self) -> String {
        let mut s = String::from("snr_db,noise,model,");
        s.push_str(&CHANNEL_NAMES.join(","));
        s.push_str(",avg_all,missing\n");
        for r in &self.si {
            let vals: Vec<String> = r.values.iter().map(|v| cell(*v)).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                cell(r.snr_db),
                r.noise,
                r.model,
                vals.join(","),
                cell(r.avg_all),
                r.missing
            );
        }
        s
    }

    pub fn se_csv(&self) -> String {
        let mut s = String::from("snr_db,noise,model,pesq,csig,cbak,covl,stoi,snr_gain_median,missing\n");
        for r in &self.se {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.snr_db,
                r.noise,
                r.model,
                cell(r.pesq),
                cell(r.csig),
                cell(r.cbak),
                cell(r.covl),
                cell(r.stoi),
                cell(r.snr_gain_median),
                r.missing
            );
        }
        s
    }

    /// Writes `si_table.csv`, `se_table.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("si_table.csv", self.si_csv()),
            ("se_table.csv", self.se_csv()),
            ("report.json", serde_json::to_string_pretty(self)?),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{CellResult, PpmcMode, PpmcReport};

    #[test]
    fn relative_improvement_basics() {
        assert!((relative_improvement(1.5, 1.0).unwrap() - 50.0).abs() < 1e-12);
        assert!((relative_improvement(0.5, 1.0).unwrap() + 50.0).abs() < 1e-12);
        assert!(matches!(relative_improvement(1.0, 0.0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn relative_csv() {
        let rows = relative_table_from_csv("label,new,base\na,3,2\nb, 1 ,4\n").unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].percent - 50.0).abs() < 1e-12);
        assert!((rows[1].percent + 75.0).abs() < 1e-12);
        assert!(relative_table_from_csv("label,new,base\nz,1,0\n").is_err());
    }

    fn summary(s: Scenario, grid: &ReportGrid, skip: usize) -> EvalSummary {
        let cells = grid
            .cells()
            .into_iter()
            .skip(skip)
            .enumerate()
            .map(|(i, cell)| {
                let values: Vec<Option<f64>> = (0..10).map(|c| Some(0.5 + 0.01 * (c + i) as f64)).collect();
                CellResult {
                    cell,
                    n_utterances: 3,
                    ppmc: Some(PpmcReport {
                        avg_all: values.iter().flatten().sum::<f64>() / 10.0,
                        values,
                        n_undefined: 0,
                        mode: PpmcMode::Corpus,
                    }),
                    se: None,
                }
            })
            .collect();
        EvalSummary {
            scenario: s,
            ppmc_mode: PpmcMode::Corpus,
            cells,
        }
    }

    #[test]
    fn grid_arithmetic_and_gaps() {
        let grid = ReportGrid {
            include_clean: false,
            ..Default::default()
        };
        let sums = vec![summary(Scenario::SiO, &grid, 0), summary(Scenario::SiseM, &grid, 2)];
        let t = build_report(&grid, &sums).unwrap();
        assert_eq!(t.si.len(), 3 * 2 * 4);
        let missing: Vec<&SiRow> = t.si.iter().filter(|r| r.missing).collect();
        // SISE-P absent entirely, SISE-M missing its first two cells.
        assert_eq!(missing.len(), 8 + 2);
        for r in t.si.iter().filter(|r| !r.missing) {
            let mean = r.values.iter().flatten().sum::<f64>() / 10.0;
            assert!((r.avg_all.unwrap() - mean).abs() < 1e-12);
        }
        let csv = t.si_csv();
        assert_eq!(csv.lines().count(), 1 + 24);
        assert!(csv.lines().next().unwrap().contains("TTCD"));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let grid = ReportGrid {
            scenarios: vec![],
            ..Default::default()
        };
        assert!(build_report(&grid, &[]).is_err());
    }
}
