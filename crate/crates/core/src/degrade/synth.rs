//! Procedural fixtures and on-disk dataset synthesis.
//!
//! Layout written by [`synth_dataset`]:
//!
//! ```text
//! out/hr/NNNN.png  out/lr/NNNN.png  out/clr_gt/NNNN.png  out/kernels/NNNN.lcet
//! out/manifest.tsv
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{degrade, DegradationSpec, GaussianKernelSpec, KernelShape, Triplet};
use crate::error::{Error, Result};
use crate::io::{load_rgb, read_tensor, save_rgb, write_tensor};
use crate::par;
use crate::tensor::Tensor;

pub const MANIFEST_HEADER: &str = "index\tkind\tsize\tscale\tnoise_sigma\tparams\tseed\tsource";

/// Deterministic `3 x H x W` test image in `[0, 1]`: a colour gradient,
/// a few filled shapes with hard edges, and oriented sinusoidal texture.
pub fn procedural_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [[f64; 3]; 2] = [
        std::array::from_fn(|_| rng.random_range(0.1..0.9)),
        std::array::from_fn(|_| rng.random_range(0.1..0.9)),
    ];
    let gdir = rng.random_range(0.0..PI);
    let n_shapes = rng.random_range(3..7);
    let shapes: Vec<(bool, f64, f64, f64, f64, [f64; 3])> = (0..n_shapes)
        .map(|_| {
            (
                rng.random_bool(0.5),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.35),
                rng.random_range(0.08..0.35),
                std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            )
        })
        .collect();
    let tex_freq = rng.random_range(0.08..0.45);
    let tex_dir = rng.random_range(0.0..PI);
    let tex_amp = rng.random_range(0.05..0.15);
    let (fh, fw) = (h.max(1) as f64, w.max(1) as f64);
    let mut out = Tensor::zeros(&[3, h, w]);
    let d = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / fw, y as f64 / fh);
            let t = (u * gdir.cos() + v * gdir.sin()).clamp(0.0, 1.0);
            let mut px: [f64; 3] = std::array::from_fn(|c| base[0][c] * (1.0 - t) + base[1][c] * t);
            for &(is_rect, cx, cy, rx, ry, col) in &shapes {
                let (dx, dy) = ((u - cx) / rx, (v - cy) / ry);
                let inside = if is_rect {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                } else {
                    dx * dx + dy * dy <= 1.0
                };
                if inside {
                    px = col;
                }
            }
            let phase = (x as f64 * tex_dir.cos() + y as f64 * tex_dir.sin()) * tex_freq * 2.0 * PI;
            let tex = tex_amp * phase.sin();
            for c in 0..3 {
                d[c * h * w + y * w + x] = (px[c] + tex).clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    Isotropic,
    Anisotropic,
}

impl KernelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "isotropic" => Ok(KernelKind::Isotropic),
            "anisotropic" => Ok(KernelKind::Anisotropic),
            _ => Err(Error::invalid("kernel kind", format!("unknown kind `{s}`"))),
        }
    }
}

/// Sampling ranges for blur kernels. Ranges are half-open `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelDistribution {
    pub kind: KernelKind,
    pub sigma: (f64, f64),
    pub lambda: (f64, f64),
    pub theta: (f64, f64),
    pub size: usize,
}

impl KernelDistribution {
    /// Defaults per kind and scale: isotropic sigma in `[0.2, 2.0)` (x2) or
    /// `[0.2, 4.0)` (x4) at size 21; anisotropic lambdas in `[0.6, 5)`,
    /// theta in `[0, pi)`, size 11 (x2) or 31 (x4).
    pub fn defaults(kind: KernelKind, scale: usize) -> Self {
        let x4 = scale >= 4;
        KernelDistribution {
            kind,
            sigma: (0.2, if x4 { 4.0 } else { 2.0 }),
            lambda: (0.6, 5.0),
            theta: (0.0, PI),
            size: match kind {
                KernelKind::Isotropic => 21,
                KernelKind::Anisotropic if x4 => 31,
                KernelKind::Anisotropic => 11,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(self.sigma) || !ok(self.lambda) || !ok(self.theta) || self.sigma.0 <= 0.0 || self.lambda.0 <= 0.0 {
            return Err(Error::invalid("kernel distribution", "ranges must be finite, ordered and positive"));
        }
        if self.size < 3 || self.size % 2 == 0 {
            return Err(Error::invalid("kernel distribution", format!("size {} must be odd and >= 3", self.size)));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> GaussianKernelSpec {
        let draw = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        match self.kind {
            KernelKind::Isotropic => GaussianKernelSpec::isotropic(draw(rng, self.sigma), self.size),
            KernelKind::Anisotropic => {
                let l1 = draw(rng, self.lambda);
                let l2 = draw(rng, self.lambda);
                let th = draw(rng, self.theta);
                GaussianKernelSpec::anisotropic(l1, l2, th, self.size)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub distribution: KernelDistribution,
    pub scale: usize,
    pub noise_sigma: f64,
    pub count: usize,
    pub seed: u64,
    /// HR crop side; procedural images are generated at this size.
    pub hr_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub kernel: GaussianKernelSpec,
    pub scale: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub source: String,
}

fn format_params(k: &GaussianKernelSpec) -> String {
    match k.shape {
        KernelShape::Isotropic { sigma } => format!("sigma={sigma}"),
        KernelShape::Anisotropic { lambda1, lambda2, theta } => {
            format!("lambda1={lambda1};lambda2={lambda2};theta={theta}")
        }
    }
}

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{:04}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.index,
            r.kernel.kind_name(),
            r.kernel.size,
            r.scale,
            r.noise_sigma,
            format_params(&r.kernel),
            r.seed,
            r.source
        );
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>> {
    let bad = |line: usize, msg: &str| Error::Format {
        kind: "manifest",
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let n = i + 2;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad(n, "expected 8 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad(n, "bad integer"));
        let mut params = std::collections::HashMap::new();
        for kv in f[5].split(';') {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(n, "bad params"))?;
            params.insert(k, num(v)?);
        }
        let get = |k: &str| params.get(k).copied().ok_or_else(|| bad(n, "missing kernel parameter"));
        let size = int(f[2])? as usize;
        let kernel = match KernelKind::parse(f[1]).map_err(|_| bad(n, "bad kind"))? {
            KernelKind::Isotropic => GaussianKernelSpec::isotropic(get("sigma")?, size),
            KernelKind::Anisotropic => {
                GaussianKernelSpec::anisotropic(get("lambda1")?, get("lambda2")?, get("theta")?, size)
            }
        };
        rows.push(ManifestRow {
            index: int(f[0])? as usize,
            kernel,
            scale: int(f[3])? as usize,
            noise_sigma: num(f[4])?,
            seed: int(f[6])?,
            source: f[7].to_string(),
        });
    }
    Ok(rows)
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid("synth_dataset", format!("no PNG files in {}", dir.display())));
    }
    Ok(files)
}

fn crop(img: &Tensor<f32>, size: usize, rng: &mut impl Rng, source: &Path) -> Result<Tensor<f32>> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if h < size || w < size {
        return Err(Error::invalid(
            "synth_dataset",
            format!("{} is {h}x{w}, smaller than the {size}x{size} crop", source.display()),
        ));
    }
    let (oy, ox) = (rng.random_range(0..=h - size), rng.random_range(0..=w - size));
    Ok(Tensor::from_fn(&[3, size, size], |i| {
        let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
        img.data()[c * h * w + (oy + y) * w + ox + x]
    }))
}

/// Writes `count` triplets plus their kernels and a manifest. HR images are
/// random crops of the PNGs in `hr_dir` (cycled in sorted order) or, with
/// no directory, procedural images. Image `i` draws everything from its own
/// RNG stream `(seed, i)`.
pub fn synth_dataset(hr_dir: Option<&Path>, cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<ManifestRow>> {
    cfg.distribution.validate()?;
    if cfg.hr_size == 0 || cfg.hr_size % cfg.scale.max(1) != 0 {
        return Err(Error::invalid("synth_dataset", "hr_size must be a positive multiple of the scale"));
    }
    let sources = hr_dir.map(list_pngs).transpose()?;
    let rows = par::map_range(cfg.count, |i| -> Result<ManifestRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let (hr, source) = match &sources {
            Some(files) => {
                let path = &files[i % files.len()];
                let img = load_rgb(path)?;
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                (crop(&img, cfg.hr_size, &mut rng, path)?, name)
            }
            None => {
                let s = rng.random::<u64>();
                (procedural_image(s, cfg.hr_size, cfg.hr_size), format!("procedural:{s}"))
            }
        };
        let kernel = cfg.distribution.sample(&mut rng);
        let noise_seed = rng.random::<u64>();
        let spec = DegradationSpec {
            kernel,
            scale: cfg.scale,
            noise_sigma: cfg.noise_sigma,
            seed: noise_seed,
        };
        spec.validate()?;
        let t = degrade(&hr, &spec)?;
        let stem = format!("{i:04}");
        save_rgb(&out_dir.join("hr").join(format!("{stem}.png")), &t.hr)?;
        save_rgb(&out_dir.join("lr").join(format!("{stem}.png")), &t.lr)?;
        save_rgb(&out_dir.join("clr_gt").join(format!("{stem}.png")), &t.clr_gt)?;
        write_tensor(&out_dir.join("kernels").join(format!("{stem}.lcet")), &kernel.render()?.cast())?;
        Ok(ManifestRow {
            index: i,
            kernel,
            scale: cfg.scale,
            noise_sigma: cfg.noise_sigma,
            seed: noise_seed,
            source,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    crate::io::write_file(&out_dir.join("manifest.tsv"), format_manifest(&rows).as_bytes())?;
    Ok(rows)
}

/// A dataset entry as read back from disk.
#[derive(Clone, Debug)]
pub struct Sample {
    pub row: ManifestRow,
    pub triplet: Triplet<f32>,
    pub kernel: Tensor<f32>,
}

/// Reads every triplet listed in `dir/manifest.tsv`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest = dir.join("manifest.tsv");
    let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let rows = parse_manifest(&text)?;
    par::map_range(rows.len(), |i| {
        let row = rows[i].clone();
        let stem = format!("{:04}", row.index);
        let img = |sub: &str| load_rgb(&dir.join(sub).join(format!("{stem}.png")));
        Ok(Sample {
            triplet: Triplet {
                hr: img("hr")?,
                lr: img("lr")?,
                clr_gt: img("clr_gt")?,
            },
            kernel: read_tensor(&dir.join("kernels").join(format!("{stem}.lcet")))?,
            row,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(count: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            distribution: KernelDistribution::defaults(KernelKind::Isotropic, 2),
            scale: 2,
            noise_sigma: 0.0,
            count,
            seed,
            hr_size: 16,
        }
    }

    #[test]
    fn procedural_image_is_deterministic_and_in_range() {
        let a = procedural_image(9, 20, 24);
        assert_eq!(a.shape(), &[3, 20, 24]);
        assert_eq!(a, procedural_image(9, 20, 24));
        assert_ne!(a, procedural_image(10, 20, 24));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn default_ranges() {
        let d = KernelDistribution::defaults(KernelKind::Anisotropic, 4);
        assert_eq!((d.size, d.lambda), (31, (0.6, 5.0)));
        assert_eq!(KernelDistribution::defaults(KernelKind::Anisotropic, 2).size, 11);
        assert_eq!(KernelDistribution::defaults(KernelKind::Isotropic, 4).sigma, (0.2, 4.0));
    }

    #[test]
    fn manifest_roundtrip() {
        let rows = vec![
            ManifestRow {
                index: 0,
                kernel: GaussianKernelSpec::isotropic(1.25, 21),
                scale: 2,
                noise_sigma: 0.0,
                seed: 7,
                source: "procedural:1".into(),
            },
            ManifestRow {
                index: 1,
                kernel: GaussianKernelSpec::anisotropic(0.7, 4.1, 2.0, 11),
                scale: 4,
                noise_sigma: 0.01,
                seed: 8,
                source: "a.png".into(),
            },
        ];
        assert_eq!(parse_manifest(&format_manifest(&rows)).unwrap(), rows);
        assert!(parse_manifest("nope\n").is_err());
    }

    #[test]
    fn empty_dataset_writes_only_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let rows = synth_dataset(None, &config(0, 1), dir.path()).unwrap();
        assert!(rows.is_empty());
        let text = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(text, format!("{MANIFEST_HEADER}\n"));
        assert!(!dir.path().join("hr").exists());
    }

    #[test]
    fn same_seed_same_manifest_and_loadable() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        synth_dataset(None, &config(3, 5), a.path()).unwrap();
        synth_dataset(None, &config(3, 5), b.path()).unwrap();
        let ma = std::fs::read(a.path().join("manifest.tsv")).unwrap();
        assert_eq!(ma, std::fs::read(b.path().join("manifest.tsv")).unwrap());
        let ds = load_dataset(a.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds[0].triplet.lr.shape(), &[3, 8, 8]);
        assert_eq!(ds[2].kernel.shape(), &[21, 21]);
    }

    #[test]
    fn crops_from_directory_and_rejects_small_images() {
        let src = tempfile::tempdir().unwrap();
        save_rgb(&src.path().join("a.png"), &procedural_image(1, 20, 20)).unwrap();
        let out = tempfile::tempdir().unwrap();
        let rows = synth_dataset(Some(src.path()), &config(2, 3), out.path()).unwrap();
        assert_eq!(rows[1].source, "a.png");
        let mut big = config(1, 3);
        big.hr_size = 24;
        assert!(synth_dataset(Some(src.path()), &big, out.path()).is_err());
    }
}
