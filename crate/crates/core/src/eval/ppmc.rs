use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::{ArticulatoryTrack, CHANNEL_NAMES, N_CHANNELS};

/// How frames are grouped before correlating.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PpmcMode {
    /// Concatenate every utterance per channel, then correlate once.
    #[default]
    Corpus,
    /// Correlate each utterance, then average.
    PerUtterance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpmcReport {
    /// One value per channel; `None` when the correlation is undefined.
    pub values: Vec<Option<f64>>,
    /// Mean of the defined values.
    pub avg_all: f64,
    pub n_undefined: usize,
    pub mode: PpmcMode,
}

impl PpmcReport {
    pub fn get(&self, channel: &str) -> Option<f64> {
        crate::track::channel_index(channel).and_then(|i| self.values[i])
    }
}

/// Pearson correlation, `None` for a (near-)constant series.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let den = (saa * sbb).sqrt();
    let scale = ma.abs().max(mb.abs()).max(1.0);
    if den <= 1e-12 * scale * scale * n {
        return None;
    }
    Some((sab / den).clamp(-1.0, 1.0))
}

fn summarize(values: Vec<Option<f64>>, mode: PpmcMode) -> PpmcReport {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let n_undefined = values.len() - defined.len();
    for (i, v) in values.iter().enumerate() {
        if v.is_none() {
            log::warn!("PPMC for {} is undefined (constant series) and left out of avg_all", CHANNEL_NAMES[i]);
        }
    }
    let avg_all = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    PpmcReport {
        values,
        avg_all,
        n_undefined,
        mode,
    }
}

pub fn ppmc(est: &[ArticulatoryTrack], gt: &[ArticulatoryTrack], mode: PpmcMode) -> Result<PpmcReport> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::InvalidInput(format!(
            "ppmc needs matched non-empty sets, got {} and {}",
            est.len(),
            gt.len()
        )));
    }
    for (i, (e, g)) in est.iter().zip(gt).enumerate() {
        if e.frames() != g.frames() {
            return Err(Error::InvalidInput(format!(
                "utterance {i}: {} estimated frames vs {} reference frames",
                e.frames(),
                g.frames()
            )));
        }
    }
    let values = match mode {
        PpmcMode::Corpus => (0..N_CHANNELS)
            .map(|c| {
                let a: Vec<f64> = est.iter().flat_map(|t| t.channel(c).to_vec()).collect();
                let b: Vec<f64> = gt.iter().flat_map(|t| t.channel(c).to_vec()).collect();
                pearson(&a, &b)
            })
            .collect(),
        PpmcMode::PerUtterance => (0..N_CHANNELS)
            .map(|c| {
                let per: Vec<f64> = est
                    .iter()
                    .zip(gt)
                    .filter_map(|(e, g)| pearson(&e.channel(c).to_vec(), &g.channel(c).to_vec()))
                    .collect();
                (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
            })
            .collect(),
    };
    Ok(summarize(values, mode))
}
