//! Intermediate dumps: every pipeline stage written as an 8-bit PNG plus a
//! `diagnostics.json` with all the scalar decisions.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::fusion::{Diagnostics, FusionOutput};
use crate::imgcore::GrayImage;
use crate::io::save_gray;

/// File names written by [`dump_intermediates`], in write order.
pub const DUMP_FILES: [&str; 25] = [
    "t_coarse.png",
    "t_refined.png",
    "CL.png",
    "SL.png",
    "IRp.png",
    "L1.png",
    "L2.png",
    "L3.png",
    "H1.png",
    "H2.png",
    "H3.png",
    "OH1.png",
    "OH2.png",
    "OH3.png",
    "FOH1.png",
    "FOH2.png",
    "FOH3.png",
    "MH1.png",
    "MH2.png",
    "MH3.png",
    "L4.png",
    "FH.png",
    "FL.png",
    "F.png",
    "diagnostics.json",
];

fn offset_half(img: &GrayImage) -> GrayImage {
    img.map(|v| (v + 0.5).clamp(0.0, 1.0))
}

fn normalized(img: &GrayImage) -> GrayImage {
    let max = img.max_value();
    if max > 0.0 {
        img.map(|v| (v / max).clamp(0.0, 1.0))
    } else {
        img.map(|_| 0.0)
    }
}

/// Write every intermediate raster and the diagnostics record into `dir`.
/// High bands are offset by +0.5 and saliency maps max-normalized for
/// visibility. Returns the written paths.
///
/// The output must have been produced with `collect_artifacts` enabled.
pub fn dump_intermediates(dir: &Path, output: &FusionOutput) -> Result<Vec<PathBuf>> {
    let artifacts = output.artifacts.as_deref().ok_or_else(|| {
        crate::error::Error::InvalidParam(
            "dump requested but the pipeline ran without collect_artifacts".into(),
        )
    })?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(DUMP_FILES.len());
    let mut put = |name: &str, img: &GrayImage| -> Result<()> {
        let path = dir.join(name);
        save_gray(&path, img, false)?;
        written.push(path);
        Ok(())
    };

    put("t_coarse.png", artifacts.t_coarse.as_gray())?;
    put("t_refined.png", artifacts.t_refined.as_gray())?;
    put("CL.png", &artifacts.layers.cl)?;
    put("SL.png", &artifacts.layers.sl)?;
    put("IRp.png", &artifacts.layers.ir_p)?;
    for (i, low) in artifacts.bands.low.iter().enumerate() {
        put(&format!("L{}.png", i + 1), low)?;
    }
    for (i, high) in artifacts.bands.high.iter().enumerate() {
        put(&format!("H{}.png", i + 1), &offset_half(high))?;
    }
    for (i, oh) in artifacts.denoised.iter().enumerate() {
        put(&format!("OH{}.png", i + 1), &offset_half(oh))?;
    }
    for (i, foh) in artifacts.gated.iter().enumerate() {
        put(&format!("FOH{}.png", i + 1), &offset_half(foh))?;
    }
    for (i, mh) in artifacts.saliency.iter().enumerate() {
        put(&format!("MH{}.png", i + 1), &normalized(mh))?;
    }
    put("L4.png", &artifacts.energy)?;
    put("FH.png", &offset_half(&artifacts.fused_high))?;
    put("FL.png", &artifacts.fused_low)?;
    put("F.png", &artifacts.fused_luma.clamped_unit())?;

    let json_path = dir.join("diagnostics.json");
    write_diagnostics(&json_path, &output.diagnostics)?;
    written.push(json_path);
    Ok(written)
}

/// Serialize a diagnostics record as pretty JSON (atomic write).
pub fn write_diagnostics(path: &Path, diagnostics: &Diagnostics) -> Result<()> {
    let json = serde_json::to_string_pretty(diagnostics)
        .map_err(|e| crate::error::Error::Numeric(format!("diagnostics serialization: {e}")))?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, json)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a diagnostics record back from JSON.
pub fn read_diagnostics(path: &Path) -> Result<Diagnostics> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| crate::error::Error::InvalidParam(format!("diagnostics parse: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse_pipeline, FusionConfig};
    use crate::imgcore::{GrayImage, RgbImage};

    #[test]
    fn dump_writes_documented_manifest() {
        let vis = RgbImage::from_fn(24, 18, |x, y| {
            let v = (x as f64 / 24.0 + y as f64 / 36.0).clamp(0.0, 1.0);
            (v, v * 0.8, v * 0.6)
        })
        .unwrap();
        let ir = GrayImage::from_fn(24, 18, |x, _| (x as f64 / 24.0).min(1.0)).unwrap();
        let cfg = FusionConfig { collect_artifacts: true, ..FusionConfig::default() };
        let out = fuse_pipeline(&vis, &ir, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let written = dump_intermediates(dir.path(), &out).unwrap();
        assert_eq!(written.len(), DUMP_FILES.len());
        for name in DUMP_FILES {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }

        let parsed = read_diagnostics(&dir.path().join("diagnostics.json")).unwrap();
        assert_eq!(parsed.width, 24);
        assert_eq!(parsed.eta, 0.1);
    }

    #[test]
    fn dump_requires_artifacts() {
        let vis = RgbImage::filled(16, 12, 0.5, 0.5, 0.5).unwrap();
        let ir = GrayImage::filled(16, 12, 0.5).unwrap();
        let out = fuse_pipeline(&vis, &ir, &FusionConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(dump_intermediates(dir.path(), &out).is_err());
    }
}
