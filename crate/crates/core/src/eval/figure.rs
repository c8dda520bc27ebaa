//! Raster figure: clean, noisy and enhanced spectrograms stacked above one
//! articulatory channel with reference and estimated trajectories.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{SpectrogramGeometry, StftPlan, Waveform};
use crate::track::{ArticulatoryTrack, CHANNEL_NAMES};

const WIDTH: u32 = 800;
const PANEL_H: u32 = 180;
const MARGIN: u32 = 8;
const FLOOR_DB: f64 = -80.0;

/// Line colors for estimates, in order; the reference is drawn in black.
const PALETTE: [[u8; 3]; 4] = [[214, 39, 40], [31, 119, 180], [44, 160, 44], [148, 103, 189]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelKind {
    Spectrogram,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub kind: PanelKind,
    pub title: String,
    /// `x, y, width, height` in pixels.
    pub rect: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureLayout {
    pub width: u32,
    pub height: u32,
    pub panels: Vec<Panel>,
    /// Legend: line label and RGB color, reference first.
    pub legend: Vec<(String, [u8; 3])>,
}

impl FigureLayout {
    pub fn count(&self, kind: PanelKind) -> usize {
        self.panels.iter().filter(|p| p.kind == kind).count()
    }
}

pub struct FigureInput<'a> {
    pub clean: &'a Waveform,
    pub noisy: &'a Waveform,
    pub enhanced: &'a Waveform,
    pub channel: usize,
    pub reference: &'a ArticulatoryTrack,
    pub estimates: Vec<(String, &'a ArticulatoryTrack)>,
}

fn log_spectrogram(w: &Waveform) -> Result<Vec<Vec<f64>>> {
    let plan = StftPlan::new(SpectrogramGeometry::canonical())?;
    let spec = plan.analyze(w.samples());
    Ok(spec
        .outer_iter()
        .map(|row| row.iter().map(|c| 20.0 * (c.norm() + 1e-10).log10()).collect())
        .collect())
}

/// Dark blue through teal to yellow.
fn colormap(v: f64) -> Rgb<u8> {
    let stops = [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];
    let x = v.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (stops[i][k] * (1.0 - f) + stops[i + 1][k] * f).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        for oy in 0..2 {
            let py = y + oy;
            if x >= 0 && py >= 0 && (x as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(x as u32, py as u32, color);
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Draws the figure and writes it as PNG.
pub fn render_figure(input: &FigureInput<'_>, path: &Path) -> Result<FigureLayout> {
    if input.channel >= CHANNEL_NAMES.len() {
        return Err(Error::InvalidInput(format!("no channel {}", input.channel)));
    }
    let n = input.clean.len();
    if input.noisy.len() != n || input.enhanced.len() != n {
        return Err(Error::InvalidInput("figure signals must have equal lengths".into()));
    }
    let inner_w = WIDTH - 2 * MARGIN;
    let height = 4 * PANEL_H + 5 * MARGIN;
    let mut img = RgbImage::from_pixel(WIDTH, height, Rgb([255, 255, 255]));
    let mut panels = Vec::new();

    let specs = [
        ("clean", log_spectrogram(input.clean)?),
        ("noisy", log_spectrogram(input.noisy)?),
        ("enhanced", log_spectrogram(input.enhanced)?),
    ];
    let peak = specs
        .iter()
        .flat_map(|(_, s)| s.iter().flatten())
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    for (p, (title, spec)) in specs.iter().enumerate() {
        let y0 = MARGIN + p as u32 * (PANEL_H + MARGIN);
        let (frames, bins) = (spec.len(), spec[0].len());
        for px in 0..inner_w {
            let t = (px as usize * frames / inner_w as usize).min(frames - 1);
            for py in 0..PANEL_H {
                let k = ((PANEL_H - 1 - py) as usize * bins / PANEL_H as usize).min(bins - 1);
                let v = (spec[t][k] - peak - FLOOR_DB) / -FLOOR_DB;
                img.put_pixel(MARGIN + px, y0 + py, colormap(v));
            }
        }
        panels.push(Panel {
            kind: PanelKind::Spectrogram,
            title: (*title).into(),
            rect: [MARGIN, y0, inner_w, PANEL_H],
        });
    }

    let y0 = MARGIN + 3 * (PANEL_H + MARGIN);
    let c = input.channel;
    let series: Vec<Vec<f64>> = std::iter::once(input.reference)
        .chain(input.estimates.iter().map(|(_, t)| *t))
        .map(|t| t.channel(c).to_vec())
        .collect();
    let lo = series.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
    for px in 0..inner_w {
        img.put_pixel(MARGIN + px, y0 + PANEL_H - 1, Rgb([160, 160, 160]));
    }
    let mut legend = vec![("reference".to_string(), [0, 0, 0])];
    for (i, s) in series.iter().enumerate() {
        let color = if i == 0 { [0, 0, 0] } else { PALETTE[(i - 1) % PALETTE.len()] };
        if i > 0 {
            legend.push((input.estimates[i - 1].0.clone(), color));
        }
        let pt = |j: usize| {
            let x = MARGIN as f64 + j as f64 * (inner_w - 1) as f64 / (s.len().max(2) - 1) as f64;
            let y = y0 as f64 + 4.0 + (1.0 - (s[j] - lo) / span) * (PANEL_H - 10) as f64;
            (x.round() as i64, y.round() as i64)
        };
        for j in 1..s.len() {
            draw_line(&mut img, pt(j - 1), pt(j), Rgb(color));
        }
    }
    panels.push(Panel {
        kind: PanelKind::Trajectory,
        title: CHANNEL_NAMES[c].into(),
        rect: [MARGIN, y0, inner_w, PANEL_H],
    });

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(FigureLayout {
        width: WIDTH,
        height,
        panels,
        legend,
    })
}
