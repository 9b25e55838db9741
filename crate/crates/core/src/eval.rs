//! Sequences on disk, synthetic sequences, and one-pass-evaluation metrics.
//!
//! Boxes follow the usual benchmark convention: `(x, y, w, h)` with a
//! 1-indexed top-left corner.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{input, size, Error, Result};
use crate::imagery::GrayImage;

pub const PRECISION_THRESHOLDS: usize = 51;
pub const SUCCESS_THRESHOLDS: usize = 21;
const SUCCESS_STEP: f64 = 0.05;
const GT_NAMES: [&str; 2] = ["groundtruth_rect.txt", "groundtruth.txt"];
const FRAME_DIR: &str = "img";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Euclidean distance between box centers.
pub fn center_error(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurves {
    /// Fraction of frames with center error ≤ t, for t = 0, 1, …, 50 px.
    pub precision: Vec<f64>,
    /// Fraction of frames with IoU > t, for t = 0, 0.05, …, 1.
    pub success: Vec<f64>,
    pub precision_at_20: f64,
    pub success_auc: f64,
}

pub fn success_threshold(i: usize) -> f64 {
    i as f64 * SUCCESS_STEP
}

pub fn ope_curves(results: &[BBox], ground_truth: &[BBox]) -> Result<MetricCurves> {
    if results.len() != ground_truth.len() {
        return input(format!(
            "{} result boxes but {} ground-truth boxes",
            results.len(),
            ground_truth.len()
        ));
    }
    if results.is_empty() {
        return input("no frames to evaluate");
    }
    let count = results.len() as f64;
    let errors: Vec<f64> = results.iter().zip(ground_truth).map(|(r, g)| center_error(r, g)).collect();
    let overlaps: Vec<f64> = results.iter().zip(ground_truth).map(|(r, g)| iou(r, g)).collect();
    let precision: Vec<f64> = (0..PRECISION_THRESHOLDS)
        .map(|t| errors.iter().filter(|&&e| e <= t as f64).count() as f64 / count)
        .collect();
    let success: Vec<f64> = (0..SUCCESS_THRESHOLDS)
        .map(|i| {
            let t = success_threshold(i);
            overlaps.iter().filter(|&&o| o > t).count() as f64 / count
        })
        .collect();
    let success_auc = success.iter().sum::<f64>() / success.len() as f64;
    Ok(MetricCurves {
        precision_at_20: precision[20],
        precision,
        success,
        success_auc,
    })
}

impl MetricCurves {
    /// CSV with a `curve,threshold,value` header, one row per threshold, and
    /// two trailing summary rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "curve,threshold,value")?;
        for (t, v) in self.precision.iter().enumerate() {
            writeln!(out, "precision,{t},{v:.6}")?;
        }
        for (i, v) in self.success.iter().enumerate() {
            writeln!(out, "success,{:.2},{v:.6}", success_threshold(i))?;
        }
        writeln!(out, "summary,precision_at_20,{:.6}", self.precision_at_20)?;
        writeln!(out, "summary,success_auc,{:.6}", self.success_auc)?;
        Ok(())
    }
}

/// Parses box lines separated by commas, tabs or spaces. Lines with five
/// fields are result lines (`frame x y w h`) and the leading index is dropped.
pub fn parse_boxes(text: &str, path: &Path) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<f64>().map_err(|e| err(format!("`{f}`: {e}"))))
            .collect::<Result<_>>()?;
        let b = match fields[..] {
            [x, y, w, h] | [_, x, y, w, h] => BBox::new(x, y, w, h),
            _ => return Err(err(format!("expected 4 box fields, found {}", fields.len()))),
        };
        if !(b.w > 0.0 && b.h > 0.0) || ![b.x, b.y].iter().all(|v| v.is_finite()) {
            return Err(err("box must have finite position and positive size".into()));
        }
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn read_boxes(path: &Path) -> Result<Vec<BBox>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    parse_boxes(&text, path)
}

/// Result file: one `frame_index x y w h` line per frame, 1-based.
pub fn write_results<W: Write>(mut out: W, boxes: &[BBox]) -> std::io::Result<()> {
    for (i, b) in boxes.iter().enumerate() {
        writeln!(out, "{} {:.3} {:.3} {:.3} {:.3}", i + 1, b.x, b.y, b.w, b.h)?;
    }
    Ok(())
}

/// Ground-truth file in the ingestion layout: `x,y,w,h` per line.
pub fn write_ground_truth<W: Write>(mut out: W, boxes: &[BBox]) -> std::io::Result<()> {
    for b in boxes {
        writeln!(out, "{},{},{},{}", b.x, b.y, b.w, b.h)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<GrayImage>,
    pub ground_truth: Option<Vec<BBox>>,
}

impl Sequence {
    pub fn new(frames: Vec<GrayImage>, ground_truth: Option<Vec<BBox>>) -> Result<Self> {
        if let Some(gt) = &ground_truth {
            if gt.len() != frames.len() {
                return size(format!(
                    "{} frames but {} ground-truth boxes",
                    frames.len(),
                    gt.len()
                ));
            }
        }
        Ok(Self { frames, ground_truth })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn frame_number(path: &Path) -> Option<u64> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    if !matches!(ext.as_str(), "jpg" | "jpeg" | "png" | "bmp") {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

/// Reads `<dir>/img/NNNN.{jpg,png,bmp}` and `<dir>/groundtruth_rect.txt`.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let gt_path = GT_NAMES
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::NotFound("ground truth".into()))?;
    let img_dir = dir.join(FRAME_DIR);
    if !img_dir.is_dir() {
        return Err(Error::NotFound(format!("frame directory {}", img_dir.display())));
    }
    let mut numbered: Vec<(u64, PathBuf)> = std::fs::read_dir(&img_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| frame_number(&p).map(|n| (n, p)))
        .collect();
    numbered.sort();
    if numbered.is_empty() {
        return Err(Error::NotFound(format!("frames in {}", img_dir.display())));
    }
    let frames = numbered
        .iter()
        .map(|(_, p)| GrayImage::load(p))
        .collect::<Result<Vec<_>>>()?;
    let boxes = read_boxes(&gt_path)?;
    if boxes.len() != frames.len() {
        return size(format!(
            "{} frames but {} ground-truth lines in {}",
            frames.len(),
            boxes.len(),
            gt_path.display()
        ));
    }
    Sequence::new(frames, Some(boxes))
}

/// Writes frames as `img/0001.png, …` plus `groundtruth_rect.txt`.
pub fn save_sequence(seq: &Sequence, dir: &Path) -> Result<()> {
    let img_dir = dir.join(FRAME_DIR);
    std::fs::create_dir_all(&img_dir)?;
    for (i, f) in seq.frames.iter().enumerate() {
        f.save_png(&img_dir.join(format!("{:04}.png", i + 1)))?;
    }
    if let Some(gt) = &seq.ground_truth {
        let mut buf = Vec::new();
        write_ground_truth(&mut buf, gt)?;
        std::fs::write(dir.join(GT_NAMES[0]), buf)?;
    }
    Ok(())
}

/// A textured square moving on a straight line over a noisy background.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub target_size: usize,
    /// 0-based top-left pixel of the target in the first frame.
    pub start: (i64, i64),
    /// Displacement in pixels per frame.
    pub velocity: (i64, i64),
    /// Half-width of the uniform background noise around mid-gray.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            frames: 100,
            target_size: 40,
            start: (40, 100),
            velocity: (2, 0),
            noise: 0.15,
            seed: 0,
        }
    }
}

const TEXTURE_STREAM: u64 = 0x7465_7874;
const NOISE_STREAM: u64 = 0x6e6f_6973;
const TEXTURE_BLOCK: usize = 8;

/// Blocky random texture, `size × size`, values in `[0.05, 0.95]`.
fn synth_texture(size: usize, seed: u64) -> Vec<f64> {
    let mut rng = crate::seeded_rng(seed, TEXTURE_STREAM);
    let blocks = size.div_ceil(TEXTURE_BLOCK);
    let levels: Vec<f64> = (0..blocks * blocks).map(|_| rng.random_range(0.05..=0.95)).collect();
    let mut tex = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            tex.push(levels[(r / TEXTURE_BLOCK) * blocks + c / TEXTURE_BLOCK]);
        }
    }
    tex
}

pub fn synth_sequence(spec: &SynthSpec) -> Result<Sequence> {
    if spec.frames == 0 || spec.target_size == 0 || spec.width == 0 || spec.height == 0 {
        return input("synthetic sequence needs positive sizes and frame count");
    }
    if !(0.0..=0.5).contains(&spec.noise) {
        return input(format!("noise level {} outside [0, 0.5]", spec.noise));
    }
    let s = spec.target_size as i64;
    let positions: Vec<(i64, i64)> = (0..spec.frames as i64)
        .map(|t| (spec.start.0 + t * spec.velocity.0, spec.start.1 + t * spec.velocity.1))
        .collect();
    for (t, &(x, y)) in positions.iter().enumerate() {
        if x < 0 || y < 0 || x + s > spec.width as i64 || y + s > spec.height as i64 {
            return input(format!("target leaves the frame at frame {}", t + 1));
        }
    }
    let texture = synth_texture(spec.target_size, spec.seed);
    let mut noise_rng = crate::seeded_rng(spec.seed, NOISE_STREAM);
    let mut frames = Vec::with_capacity(spec.frames);
    let mut boxes = Vec::with_capacity(spec.frames);
    for &(x0, y0) in &positions {
        let mut data: Vec<f64> = (0..spec.width * spec.height)
            .map(|_| {
                if spec.noise > 0.0 {
                    0.5 + noise_rng.random_range(-spec.noise..=spec.noise)
                } else {
                    0.5
                }
            })
            .collect();
        let (x0, y0) = (x0 as usize, y0 as usize);
        for r in 0..spec.target_size {
            let row = (y0 + r) * spec.width + x0;
            data[row..row + spec.target_size]
                .copy_from_slice(&texture[r * spec.target_size..(r + 1) * spec.target_size]);
        }
        frames.push(GrayImage::new(spec.width, spec.height, data)?);
        let side = spec.target_size as f64;
        boxes.push(BBox::new(x0 as f64 + 1.0, y0 as f64 + 1.0, side, side));
    }
    Sequence::new(frames, Some(boxes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_error_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(3.0, 4.0, 10.0, 10.0);
        assert_eq!(center_error(&a, &a), 0.0);
        assert_eq!(center_error(&a, &b), 5.0);
        assert_eq!(center_error(&b, &a), 5.0);
    }

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 0.0, 10.0, 10.0)), 0.0);
        assert!((iou(&a, &BBox::new(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_tracking_curves() {
        let gt: Vec<BBox> = (0..5).map(|i| BBox::new(i as f64, 2.0, 20.0, 30.0)).collect();
        let c = ope_curves(&gt, &gt).unwrap();
        assert!(c.precision.iter().all(|&p| p == 1.0));
        assert_eq!(c.precision_at_20, 1.0);
        assert!(c.success[..20].iter().all(|&s| s == 1.0));
        assert_eq!(c.success[20], 0.0);
        assert!((c.success_auc - 20.0 / 21.0).abs() < 1e-15);
    }

    #[test]
    fn displaced_tracking_curves() {
        let gt: Vec<BBox> = (0..3).map(|_| BBox::new(0.0, 0.0, 20.0, 20.0)).collect();
        let res: Vec<BBox> = (0..3).map(|_| BBox::new(25.0, 0.0, 20.0, 20.0)).collect();
        let c = ope_curves(&res, &gt).unwrap();
        assert_eq!(c.precision_at_20, 0.0);
        assert_eq!(c.success_auc, 0.0);
        assert!(ope_curves(&res[..2], &gt).is_err());
    }

    #[test]
    fn four_frame_precision_fixture() {
        let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0); 4];
        let res: Vec<BBox> = [0.0, 10.0, 30.0, 50.0].iter().map(|&d| BBox::new(d, 0.0, 10.0, 10.0)).collect();
        let c = ope_curves(&res, &gt).unwrap();
        assert_eq!(c.precision_at_20, 0.5);
    }

    #[test]
    fn parse_and_errors() {
        let p = Path::new("gt.txt");
        assert_eq!(parse_boxes("10,20,30,40\n", p).unwrap(), vec![BBox::new(10.0, 20.0, 30.0, 40.0)]);
        assert_eq!(parse_boxes("1\t2\t3\t4\n3 5 6 7 8\n", p).unwrap()[1], BBox::new(5.0, 6.0, 7.0, 8.0));
        let err = parse_boxes("1,2,3,4\n1,2,x,4\n", p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_boxes("1,2,0,4\n", p).is_err());
    }

    #[test]
    fn csv_layout() {
        let gt = vec![BBox::new(0.0, 0.0, 10.0, 10.0)];
        let mut out = Vec::new();
        ope_curves(&gt, &gt).unwrap().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 51 + 21 + 2);
        assert!(text.contains("summary,precision_at_20,1.000000"));
    }

    #[test]
    fn synthetic_paths() {
        let spec = SynthSpec { frames: 5, velocity: (0, 0), ..Default::default() };
        let seq = synth_sequence(&spec).unwrap();
        let gt = seq.ground_truth.unwrap();
        assert!(gt.iter().all(|b| *b == gt[0]));

        let spec = SynthSpec { frames: 5, ..Default::default() };
        let gt = synth_sequence(&spec).unwrap().ground_truth.unwrap();
        for w in gt.windows(2) {
            assert_eq!(w[1].x - w[0].x, 2.0);
        }

        let spec = SynthSpec { frames: 2, noise: 0.0, ..Default::default() };
        let seq = synth_sequence(&spec).unwrap();
        let tex = synth_texture(40, spec.seed);
        let f = &seq.frames[1];
        assert_eq!(f.get(0, 0), 0.5);
        assert_eq!(f.get(42, 100), tex[0]);
        assert_eq!(f.get(42 + 39, 139), tex[40 * 40 - 1]);

        let spec = SynthSpec { frames: 200, ..Default::default() };
        assert!(synth_sequence(&spec).is_err());
    }
}
