use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::external::{external_scores, ExternalScores, ScorerAdapter};
use super::ppmc::{ppmc, PpmcMode, PpmcReport};
use super::stoi::stoi;
use crate::augment::{CorpusManifest, ManifestEntry, NoiseKind, Split};
use crate::error::{Error, Result};
use crate::model::SiseModel;
use crate::scenario::Scenario;
use crate::signal::wav::{write_wav, WavFormat};
use crate::signal::{measure_snr, Waveform};
use crate::track::ArticulatoryTrack;
use crate::train::load_entry;

/// One test condition; `noise = None` is the clean set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub noise: Option<NoiseKind>,
    pub snr_db: Option<f64>,
}

impl Cell {
    pub const CLEAN: Cell = Cell { noise: None, snr_db: None };

    pub fn label(&self) -> String {
        match (self.noise, self.snr_db) {
            (Some(k), Some(s)) => format!("{}@{s}", k.as_str()),
            _ => "clean".into(),
        }
    }

    fn of(e: &ManifestEntry) -> Self {
        Cell {
            noise: e.noise_kind,
            snr_db: e.snr_db,
        }
    }

    fn key(&self) -> (u8, i64) {
        let k = match self.noise {
            None => 0,
            Some(NoiseKind::Nonbabble) => 1,
            Some(NoiseKind::Babble) => 2,
            Some(NoiseKind::Combined) => 3,
        };
        (k, self.snr_db.map_or(i64::MIN, |s| (s * 1000.0).round() as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeCellSummary {
    pub stoi_input: f64,
    pub stoi_enhanced: f64,
    /// Share of utterances whose STOI improved.
    pub stoi_improved_fraction: f64,
    pub snr_input_median: f64,
    pub snr_enhanced_median: f64,
    pub snr_gain_median: f64,
    /// Means of the external scores; absent when no scorer ran.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub external: BTreeMap<String, f64>,
    pub external_status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub n_utterances: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppmc: Option<PpmcReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<SeCellSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scenario: Scenario,
    pub ppmc_mode: PpmcMode,
    pub cells: Vec<CellResult>,
}

impl EvalSummary {
    pub fn cell(&self, cell: Cell) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.cell.key() == cell.key())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&s)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub ppmc_mode: PpmcMode,
    pub adapter: Option<ScorerAdapter>,
    /// Scratch directory for files handed to the external scorer.
    pub scratch: Option<std::path::PathBuf>,
}

/// Per-utterance outputs kept for figures and further analysis.
#[derive(Debug, Clone)]
pub struct UtteranceOutput {
    pub key: String,
    pub utterance_id: String,
    pub cell: Cell,
    pub clean: Waveform,
    pub input: Waveform,
    pub enhanced: Option<Waveform>,
    pub estimate: Option<ArticulatoryTrack>,
    pub reference: ArticulatoryTrack,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn snr_of(clean: &Waveform, est: &Waveform) -> Result<f64> {
    let resid: Vec<f64> = est.samples().iter().zip(clean.samples()).map(|(e, c)| e - c).collect();
    measure_snr(clean, &Waveform::at_16k(resid)?)
}

/// Runs `model` (after the optional enhancer) on every test entry.
pub fn run_model(
    model: &SiseModel,
    preprocessor: Option<&SiseModel>,
    manifest: &CorpusManifest,
    split: Split,
) -> Result<Vec<UtteranceOutput>> {
    manifest
        .split(split)
        .map(|e| {
            let u = load_entry(manifest, e, true)?;
            let input = u.input().clone();
            let enhanced = if model.heads.se {
                Some(model.se_forward(&input)?.enhanced)
            } else {
                preprocessor.map(|p| p.se_forward(&input).map(|o| o.enhanced)).transpose()?
            };
            let estimate = if model.heads.si {
                let src = if model.heads.se { &input } else { enhanced.as_ref().unwrap_or(&input) };
                Some(model.si_forward(src)?)
            } else {
                None
            };
            let reference = ArticulatoryTrack::new(u.track.clone(), crate::track::TRACK_FRAME_RATE)?;
            Ok(UtteranceOutput {
                key: u.key,
                utterance_id: u.utterance_id,
                cell: Cell::of(e),
                clean: u.clean,
                input,
                enhanced,
                estimate: estimate.map(|t| t.fitted(reference.frames())),
                reference,
            })
        })
        .collect()
}

fn external_for(outs: &[&UtteranceOutput], opts: &EvalOptions) -> Result<(BTreeMap<String, f64>, String)> {
    let Some(adapter) = &opts.adapter else {
        return Ok((BTreeMap::new(), "unavailable".into()));
    };
    let scratch = opts
        .scratch
        .clone()
        .unwrap_or_else(|| std::env::temp_dir().join("sise-scorer"));
    std::fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for o in outs {
        let c = scratch.join(format!("{}_clean.wav", o.key));
        let d = scratch.join(format!("{}_enhanced.wav", o.key));
        write_wav(&c, &o.clean, WavFormat::Float32)?;
        write_wav(&d, o.enhanced.as_ref().expect("enhanced"), WavFormat::Float32)?;
        let s: ExternalScores = external_scores(&c, &d, Some(adapter))?;
        for (name, v) in [("pesq", s.pesq), ("csig", s.csig), ("cbak", s.cbak), ("covl", s.covl)] {
            if let Some(v) = v {
                let e = sums.entry(name.to_string()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    Ok((
        sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        "ok".into(),
    ))
}

/// Groups outputs by condition and scores each group.
pub fn summarize(scenario: Scenario, outputs: &[UtteranceOutput], opts: &EvalOptions) -> Result<EvalSummary> {
    let mut groups: BTreeMap<(u8, i64), Vec<&UtteranceOutput>> = BTreeMap::new();
    for o in outputs {
        groups.entry(o.cell.key()).or_default().push(o);
    }
    let mut cells = Vec::new();
    for outs in groups.values() {
        let cell = outs[0].cell;
        let ppmc = if outs.iter().all(|o| o.estimate.is_some()) {
            let est: Vec<ArticulatoryTrack> = outs.iter().map(|o| o.estimate.clone().expect("checked")).collect();
            let gt: Vec<ArticulatoryTrack> = outs.iter().map(|o| o.reference.clone()).collect();
            Some(ppmc(&est, &gt, opts.ppmc_mode)?)
        } else {
            None
        };
        let se = if cell.noise.is_some() && outs.iter().all(|o| o.enhanced.is_some()) {
            let mut si = Vec::new();
            let mut se = Vec::new();
            let mut snr_in = Vec::new();
            let mut snr_out = Vec::new();
            for o in outs {
                let enh = o.enhanced.as_ref().expect("checked");
                si.push(stoi(&o.clean, &o.input)?);
                se.push(stoi(&o.clean, enh)?);
                snr_in.push(snr_of(&o.clean, &o.input)?);
                snr_out.push(snr_of(&o.clean, enh)?);
            }
            let n = outs.len() as f64;
            let improved = si.iter().zip(&se).filter(|(a, b)| b > a).count() as f64 / n;
            let gains: Vec<f64> = snr_out.iter().zip(&snr_in).map(|(o, i)| o - i).collect();
            let (external, external_status) = external_for(outs, opts)?;
            Some(SeCellSummary {
                stoi_input: si.iter().sum::<f64>() / n,
                stoi_enhanced: se.iter().sum::<f64>() / n,
                stoi_improved_fraction: improved,
                snr_input_median: median(snr_in),
                snr_enhanced_median: median(snr_out),
                snr_gain_median: median(gains),
                external,
                external_status,
            })
        } else {
            None
        };
        cells.push(CellResult {
            cell,
            n_utterances: outs.len(),
            ppmc,
            se,
        });
    }
    Ok(EvalSummary {
        scenario,
        ppmc_mode: opts.ppmc_mode,
        cells,
    })
}
