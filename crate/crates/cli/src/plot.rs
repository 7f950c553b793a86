//! Two-panel PNG: mean L_H (log scale, top) and validation mAP (bottom) per epoch.

use std::path::Path;

use image::{Rgb, RgbImage};
use jmpose_core::train::EpochMetrics;
use jmpose_core::{Error, Result};

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = std::fs::read_to_string(path)?;
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect::<Result<Vec<EpochMetrics>>>()?;
    if rows.is_empty() {
        return Err(Error::Dataset(format!("{} has no metrics", path.display())));
    }
    Ok(rows)
}

const W: u32 = 800;
const H: u32 = 600;
const MARGIN: f64 = 40.0;
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [23, 190, 207]];

struct Panel {
    top: f64,
    bottom: f64,
}

impl Panel {
    fn y(&self, t: f64) -> f64 {
        self.bottom - t * (self.bottom - self.top)
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && (px as u32) < W && (py as u32) < H {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

fn frame(img: &mut RgbImage, p: &Panel) {
    let grey = Rgb([160, 160, 160]);
    let (l, r) = (MARGIN, W as f64 - MARGIN);
    for (a, b) in [((l, p.top), (r, p.top)), ((l, p.bottom), (r, p.bottom)), ((l, p.top), (l, p.bottom)), ((r, p.top), (r, p.bottom))] {
        line(img, a, b, grey);
    }
    for k in 1..4 {
        let y = p.y(k as f64 / 4.0);
        line(img, (l, y), (l + 6.0, y), grey);
    }
}

fn curve(img: &mut RgbImage, p: &Panel, points: &[(f64, f64)], max_epoch: f64, color: Rgb<u8>) {
    let span = W as f64 - 2.0 * MARGIN;
    let map = |(e, t): (f64, f64)| (MARGIN + span * e / max_epoch, p.y(t));
    for w in points.windows(2) {
        line(img, map(w[0]), map(w[1]), color);
    }
    if let [only] = points {
        let (x, y) = map(*only);
        line(img, (x - 2.0, y), (x + 2.0, y), color);
    }
}

pub fn render(runs: &[Vec<EpochMetrics>], out: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let loss = Panel { top: MARGIN, bottom: H as f64 / 2.0 - MARGIN / 2.0 };
    let map = Panel { top: H as f64 / 2.0 + MARGIN / 2.0, bottom: H as f64 - MARGIN };
    frame(&mut img, &loss);
    frame(&mut img, &map);
    let max_epoch = runs.iter().flatten().map(|m| m.epoch).max().unwrap_or(1).max(1) as f64;
    let logs: Vec<f64> = runs.iter().flatten().filter(|m| m.l_h > 0.0).map(|m| m.l_h.log10()).collect();
    let (lo, hi) = logs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    for (i, run) in runs.iter().enumerate() {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        let l: Vec<(f64, f64)> = run.iter().filter(|m| m.l_h > 0.0).map(|m| (m.epoch as f64, (m.l_h.log10() - lo) / range)).collect();
        curve(&mut img, &loss, &l, max_epoch, c);
        let a: Vec<(f64, f64)> = run.iter().filter_map(|m| m.map.map(|v| (m.epoch as f64, v / 100.0))).collect();
        curve(&mut img, &map, &a, max_epoch, c);
    }
    img.save(out)?;
    Ok(())
}
