//! Inference over image folders and the content-preservation report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mutualgan_core::metrics::{mean_abs_diff, miou, psnr, NearestCentroid, PSNR_IDENTICAL_DB};
use mutualgan_core::networks::{attention_map, encoder_forward, generator_forward, Networks, Role};
use mutualgan_core::synth::NUM_CLASSES;
use mutualgan_core::{Graph, Tensor};

use crate::dataset::{image_to_planes, planes_to_image, ImagePool, Manifest, Pool};
use crate::pnm::{self, Image};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AB,
    BA,
}

impl Direction {
    pub fn generator(self) -> Role {
        match self {
            Direction::AB => Role::GenAB,
            Direction::BA => Role::GenBA,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "AB" | "ab" => Ok(Direction::AB),
            "BA" | "ba" => Ok(Direction::BA),
            _ => Err(format!("direction must be AB or BA, got {s:?}")),
        }
    }
}

/// Runs one network on an NCHW batch without recording gradients.
pub fn apply(nets: &Networks, role: Role, x: &Tensor) -> Result<Tensor, Error> {
    let mut g = Graph::new();
    let net = nets.get(role).bind(&mut g, false);
    let input = g.constant(x.clone());
    let y = match role {
        Role::GenAB | Role::GenBA => generator_forward(&mut g, &net, input)?,
        Role::EncA | Role::EncB => encoder_forward(&mut g, &net, input)?,
        _ => return Err(Error::Usage(format!("{} is not an image-to-image network", role.prefix()))),
    };
    Ok(g.value(y).clone())
}

fn image_tensor(img: &Image) -> Tensor {
    let mut v = Vec::with_capacity(3 * img.width * img.height);
    image_to_planes(img, false, &mut v);
    Tensor::new(&[1, 3, img.height, img.width], v).expect("image shape")
}

/// `.ppm` files of a directory in name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let io = |source| Error::Io { path: dir.display().to_string(), source };
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(io)? {
        let p = e.map_err(io)?.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Default)]
pub struct FolderSummary {
    pub written: Vec<PathBuf>,
    /// Inputs that were skipped, with the reason.
    pub failed: Vec<(PathBuf, String)>,
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.display().to_string(), source })
}

/// Applies `f` to every `.ppm` in `input`, writing results under the same names.
///
/// Images whose sides are not multiples of `factor` are skipped and reported.
pub fn translate_dir_with(
    input: &Path,
    output: &Path,
    factor: usize,
    mut f: impl FnMut(&Tensor) -> Result<Tensor, Error>,
) -> Result<FolderSummary, Error> {
    let files = list_images(input)?;
    create_dir(output)?;
    let mut summary = FolderSummary::default();
    for path in files {
        let img = match pnm::read(&path) {
            Ok(img) if img.channels == 3 => img,
            Ok(_) => {
                summary.failed.push((path, "not an RGB image".into()));
                continue;
            }
            Err(e) => {
                summary.failed.push((path, e.to_string()));
                continue;
            }
        };
        if img.height % factor != 0 || img.width % factor != 0 {
            let msg = format!("size {}x{} is not divisible by {factor}", img.height, img.width);
            summary.failed.push((path, msg));
            continue;
        }
        let y = f(&image_tensor(&img))?;
        let dst = output.join(path.file_name().expect("listed file"));
        pnm::write(&dst, &planes_to_image(&y, 0))?;
        summary.written.push(dst);
    }
    Ok(summary)
}

pub fn translate_dir(nets: &Networks, input: &Path, direction: Direction, output: &Path) -> Result<FolderSummary, Error> {
    let factor = nets.arch().generator.spatial_factor();
    translate_dir_with(input, output, factor, |x| apply(nets, direction.generator(), x))
}

fn gray(map: &[f32], h: usize, w: usize) -> Image {
    Image::from_unit(w, h, 1, map)
}

/// Writes `<stem>_enc_b.pgm` (map of `Enc_B(x)`), `<stem>_enc_a.pgm` (map of
/// `Enc_A(G_BA(x))`) and `<stem>_overlay.ppm` (the first map blended at 50% over `x`).
pub fn export_attention(nets: &Networks, input: &Path, output: &Path) -> Result<FolderSummary, Error> {
    let factor = nets.arch().spatial_factor();
    let files = list_images(input)?;
    create_dir(output)?;
    let mut summary = FolderSummary::default();
    for path in files {
        let img = match pnm::read(&path) {
            Ok(img) if img.channels == 3 && img.height % factor == 0 && img.width % factor == 0 => img,
            Ok(img) => {
                let msg = format!("{}x{}x{} is not an RGB image divisible by {factor}", img.height, img.width, img.channels);
                summary.failed.push((path, msg));
                continue;
            }
            Err(e) => {
                summary.failed.push((path, e.to_string()));
                continue;
            }
        };
        let (h, w) = (img.height, img.width);
        let x = image_tensor(&img);
        let map_b = attention_map(&apply(nets, Role::EncB, &x)?, (h, w))?;
        let translated = apply(nets, Role::GenBA, &x)?;
        let map_a = attention_map(&apply(nets, Role::EncA, &translated)?, (h, w))?;
        let overlay: Vec<f32> = img
            .to_unit()
            .chunks_exact(3)
            .zip(map_b.data())
            .flat_map(|(px, &m)| [0.5 * px[0] + 0.5 * m, 0.5 * px[1] + 0.5 * m, 0.5 * px[2] + 0.5 * m])
            .collect();
        let stem = path.file_stem().expect("listed file").to_string_lossy().into_owned();
        let outputs = [
            (format!("{stem}_enc_b.pgm"), gray(map_b.data(), h, w)),
            (format!("{stem}_enc_a.pgm"), gray(map_a.data(), h, w)),
            (format!("{stem}_overlay.ppm"), Image::from_unit(w, h, 3, &overlay)),
        ];
        for (name, im) in outputs {
            let dst = output.join(name);
            pnm::write(&dst, &im)?;
            summary.written.push(dst);
        }
    }
    Ok(summary)
}

/// Metrics of one image against its oracle target.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub l1: f64,
    pub psnr: f64,
    pub miou: f64,
    pub iou: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub translated: Scores,
    pub baseline: Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub translated: Scores,
    pub baseline: Scores,
}

fn score(candidate: &[f32], target: &[f32], mask: &[u8], classifier: &NearestCentroid) -> Result<Scores, Error> {
    let m = miou(&classifier.predict(candidate), mask, NUM_CLASSES)?;
    Ok(Scores { l1: mean_abs_diff(candidate, target)?, psnr: psnr(candidate, target)?, miou: m.mean, iou: m.per_class })
}

/// Per-field means; a class IoU averages the images where the class occurs.
fn aggregate<'a>(scores: impl Iterator<Item = &'a Scores> + Clone) -> Scores {
    let n = scores.clone().count() as f64;
    let mean = |f: fn(&Scores) -> f64| scores.clone().map(f).sum::<f64>() / n;
    let iou = (0..NUM_CLASSES)
        .map(|c| {
            let v: Vec<f64> = scores.clone().filter_map(|s| s.iou[c]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    Scores { l1: mean(|s| s.l1), psnr: mean(|s| s.psnr), miou: mean(|s| s.miou), iou }
}

/// Fits the colour classifier on the domain-A images and masks of `manifest`.
pub fn fit_classifier(manifest: &Manifest) -> Result<NearestCentroid, Error> {
    let images = ImagePool::load(manifest, Pool::A)?;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (name, img) in images.names.iter().zip(&images.images) {
        let mask = manifest.read_image(&manifest.counterpart(name, Pool::Mask)?, 1)?;
        pixels.extend(img.to_unit());
        labels.extend_from_slice(&mask.data);
    }
    Ok(NearestCentroid::fit(&pixels, &labels, NUM_CLASSES)?)
}

/// Scores `G_BA(B)` and untranslated `B` against the paired `A` for every
/// domain-B entry of `val`.
pub fn content_preservation_eval(nets: &Networks, val: &Manifest, classifier: &NearestCentroid) -> Result<EvalReport, Error> {
    let mut rows = Vec::new();
    for rel in val.pool(Pool::B) {
        let img_b = val.read_image(rel, 3)?;
        let img_a = val.read_image(&val.counterpart(rel, Pool::A)?, 3)?;
        let mask = val.read_image(&val.counterpart(rel, Pool::Mask)?, 1)?;
        let out = apply(nets, Role::GenBA, &image_tensor(&img_b))?;
        let translated = planes_to_image(&out, 0).to_unit();
        let target = img_a.to_unit();
        rows.push(EvalRow {
            name: rel.file_name().expect("listed file").to_string_lossy().into_owned(),
            translated: score(&translated, &target, &mask.data, classifier)?,
            baseline: score(&img_b.to_unit(), &target, &mask.data, classifier)?,
        });
    }
    if rows.is_empty() {
        return Err(crate::dataset::DataError::Empty(Pool::B).into());
    }
    let translated = aggregate(rows.iter().map(|r| &r.translated));
    let baseline = aggregate(rows.iter().map(|r| &r.baseline));
    Ok(EvalReport { rows, translated, baseline })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("image,l1,psnr,miou,base_l1,base_psnr,base_miou");
        for prefix in ["iou", "base_iou"] {
            for c in 0..NUM_CLASSES {
                write!(s, ",{prefix}_{c}").unwrap();
            }
        }
        s.push('\n');
        for r in &self.rows {
            let (t, b) = (&r.translated, &r.baseline);
            write!(s, "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}", r.name, t.l1, t.psnr, t.miou, b.l1, b.psnr, b.miou).unwrap();
            for v in t.iou.iter().chain(&b.iou) {
                write!(s, ",{}", opt(*v)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} validation images", self.rows.len()).unwrap();
        writeln!(s, "{:<12}{:>10}{:>10}{:>10}", "", "L1", "PSNR", "mIoU").unwrap();
        for (label, v) in [("translated", &self.translated), ("untranslated", &self.baseline)] {
            writeln!(s, "{label:<12}{:>10.4}{:>10.2}{:>10.4}", v.l1, v.psnr, v.miou).unwrap();
        }
        writeln!(s, "per-class IoU (sky, road, building, vehicle; - = class absent)").unwrap();
        for (label, v) in [("translated", &self.translated), ("untranslated", &self.baseline)] {
            let cells: Vec<String> = v.iou.iter().map(|x| x.map_or("-".into(), |x| format!("{x:.4}"))).collect();
            writeln!(s, "{label:<12}{}", cells.join("  ")).unwrap();
        }
        writeln!(s, "PSNR of identical images is reported as {PSNR_IDENTICAL_DB} dB").unwrap();
        s
    }

    /// Writes `eval.csv` and `eval.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        create_dir(dir)?;
        for (name, text) in [("eval.csv", self.csv()), ("eval.txt", self.table())] {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|source| Error::Io { path: p.display().to_string(), source })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_skips_absent_classes() {
        let s1 = Scores { l1: 1.0, psnr: 10.0, miou: 0.5, iou: vec![Some(1.0), None, Some(0.0), None] };
        let s2 = Scores { l1: 3.0, psnr: 20.0, miou: 1.0, iou: vec![Some(0.5), None, None, None] };
        let a = aggregate([&s1, &s2].into_iter());
        assert_eq!((a.l1, a.psnr, a.miou), (2.0, 15.0, 0.75));
        assert_eq!(a.iou, vec![Some(0.75), None, Some(0.0), None]);
    }

    #[test]
    fn direction_parse() {
        assert_eq!("AB".parse::<Direction>().unwrap(), Direction::AB);
        assert_eq!("ba".parse::<Direction>().unwrap(), Direction::BA);
        assert!("AA".parse::<Direction>().is_err());
    }
}
