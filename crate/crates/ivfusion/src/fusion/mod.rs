//! End-to-end fusion: decomposition, the two fusion paths, reconstruction
//! and recoloring, with a per-run diagnostics record.

pub mod highfreq;
pub mod lowfreq;

pub use highfreq::{
    adaptive_denoise_high, detail_gate, fuse_high, high_band_kappa, kl_divergence, mpc,
    DenoisedBand, GateOutcome, MpcMap, MpcParams,
};
pub use lowfreq::{
    directional_variance, energy_layer, fuse_low, gabor_bank, lowfreq_weights, reconstruct,
    GaborBank, GaborKernel, LowFreqWeights, GABOR_LAMBDA, GABOR_PSI, GABOR_SIGMA_DEFAULT,
    GABOR_TAU, GABOR_THETAS_DEG,
};

use serde::{Deserialize, Serialize};

use crate::decompose::{
    band_decompose, band_kappa, infrared_kappa, preprocess_infrared, split_contrast_structure,
    BandSet, LayerSet, SanfParams,
};
use crate::error::{Error, Result};
use crate::imgcore::{estimate_noise_level, recolor, to_luminance, GrayImage, RgbImage};
use crate::transmission::{
    coarse_transmission, estimate_atmo_light, refine_transmission_traced, BetaParam,
    RegularizerConfig, TransmissionMap,
};

/// Every tunable of the pipeline, with the published defaults.
#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Saliency weight offset in the high-frequency blend.
    pub eta: f64,
    /// Detail-loss gate threshold on the K-L divergence.
    pub kl_threshold: f64,
    /// Coefficient of the high-band denoise strength.
    pub high_kappa_coeff: f64,
    /// Log base of the noise-to-strength mapping.
    pub kappa_log_base: f64,
    /// Monogenic phase-consistency parameters.
    pub mpc: MpcParams,
    /// Gaussian envelope deviation of the Gabor bank.
    pub gabor_sigma: f64,
    /// Transmission model exponent.
    pub beta: BetaParam,
    /// Transmission smoothing solver settings.
    pub regularizer: RegularizerConfig,
    /// Base filter settings (kappa is derived per call site).
    pub sanf: SanfParams,
    /// Blend the gated (possibly denoised) bands instead of the originals.
    pub blend_denoised: bool,
    /// Retain every intermediate raster in the output.
    pub collect_artifacts: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            kl_threshold: 0.05,
            high_kappa_coeff: 0.4,
            kappa_log_base: 5.0,
            mpc: MpcParams::default(),
            gabor_sigma: GABOR_SIGMA_DEFAULT,
            beta: BetaParam::default(),
            regularizer: RegularizerConfig::default(),
            sanf: SanfParams::default(),
            blend_denoised: false,
            collect_artifacts: false,
        }
    }
}

/// Per-band record of the high-frequency path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HighBandDiagnostics {
    pub sigma_high: f64,
    /// Denoise strength, absent when the sigma guard passed the band through.
    pub denoise_kappa: Option<f64>,
    pub kl: f64,
    /// True when the gate kept the original band.
    pub kept_original: bool,
    pub mpc_noise_t: f64,
}

/// Scalars of the low-frequency path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowPathDiagnostics {
    pub v2: f64,
    pub v4: f64,
    pub en2: f64,
    pub en4: f64,
    pub w2: f64,
    pub w4: f64,
}

/// Every scalar decision the pipeline made for one pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub width: usize,
    pub height: usize,
    pub sigma_vis: f64,
    pub sigma_ir: f64,
    pub ir_kappa: Option<f64>,
    pub atmo_light: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Smoothing objective after each outer iteration (non-increasing).
    pub refine_objective: Vec<f64>,
    pub band_sigma: [f64; 3],
    pub band_kappa: [f64; 3],
    pub high_bands: [HighBandDiagnostics; 3],
    pub low_path: LowPathDiagnostics,
    pub eta: f64,
    pub kl_threshold: f64,
    pub blend_denoised: bool,
    /// Effective gain of the high-frequency blend (per-pixel weight sums).
    pub fh_gain_max: f64,
    pub fh_gain_mean: f64,
}

/// Every intermediate raster, for dumps and inspection.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub t_coarse: TransmissionMap,
    pub t_refined: TransmissionMap,
    pub layers: LayerSet,
    pub bands: BandSet,
    pub denoised: [GrayImage; 3],
    pub gated: [GrayImage; 3],
    pub saliency: [GrayImage; 3],
    pub energy: GrayImage,
    pub fused_high: GrayImage,
    pub fused_low: GrayImage,
    pub fused_luma: GrayImage,
}

/// Pipeline output: recolored image, the unclamped fused luminance, the
/// diagnostics record, and (optionally) all intermediates.
#[derive(Debug)]
pub struct FusionOutput {
    pub fused: RgbImage,
    pub fused_luma: GrayImage,
    pub diagnostics: Diagnostics,
    pub artifacts: Option<Box<PipelineArtifacts>>,
}

/// Run the whole fusion chain on a co-registered visible/infrared pair.
pub fn fuse_pipeline(vis: &RgbImage, ir: &GrayImage, cfg: &FusionConfig) -> Result<FusionOutput> {
    if vis.dims() != ir.dims() {
        return Err(Error::mismatch("co-registration check", vis.dims(), ir.dims()));
    }

    // Decomposition.
    let (vis_l, chroma) = to_luminance(vis);
    let sigma_vis = estimate_noise_level(&vis_l);
    let atmo = estimate_atmo_light(vis);
    let t_coarse = coarse_transmission(vis, atmo, cfg.beta);
    let (t_refined, refine_trace) =
        refine_transmission_traced(&t_coarse, &sigma_vis, &vis_l, &cfg.regularizer)?;
    let (cl, sl) = split_contrast_structure(&vis_l, &t_refined)?;

    let sigma_ir = estimate_noise_level(ir).sigma();
    let ir_kappa = infrared_kappa(sigma_ir);
    let ir_p = preprocess_infrared(ir);

    let layers = LayerSet { cl, sl, ir_p };
    let layer_refs = [&layers.cl, &layers.sl, &layers.ir_p];
    let mut band_sigma = [0.0; 3];
    let mut kappas = [0.0; 3];
    for (i, layer) in layer_refs.iter().enumerate() {
        band_sigma[i] = estimate_noise_level(layer).sigma();
        kappas[i] = band_kappa(band_sigma[i]);
    }
    let splits: [(GrayImage, GrayImage); 3] = std::array::from_fn(|i| band_decompose(layer_refs[i]));
    let bands = BandSet {
        low: splits.clone().map(|(l, _)| l),
        high: splits.map(|(_, h)| h),
    };

    // High-frequency path.
    let denoised: [DenoisedBand; 3] =
        std::array::from_fn(|i| adaptive_denoise_high(&bands.high[i], cfg));
    let gates: [GateOutcome; 3] = {
        let mut out = Vec::with_capacity(3);
        for i in 0..3 {
            out.push(detail_gate(&bands.high[i], &denoised[i].band, cfg.kl_threshold)?);
        }
        out.try_into().map_err(|_| Error::Numeric("gate collection".into())).unwrap()
    };
    let saliency: [MpcMap; 3] = std::array::from_fn(|i| mpc(&gates[i].band, &cfg.mpc));

    let blend_bands: [GrayImage; 3] = if cfg.blend_denoised {
        std::array::from_fn(|i| gates[i].band.clone())
    } else {
        bands.high.clone()
    };
    let fused_high = fuse_high(&blend_bands, &saliency, cfg.eta)?;
    let (gain_max, gain_mean) = highfreq::fuse_high_gain(&saliency, cfg.eta);

    // Low-frequency path.
    let energy = energy_layer(&bands.low[0], &bands.low[2])?;
    let bank = gabor_bank(cfg.gabor_sigma)?;
    let weights = lowfreq_weights(&bands.low[1], &energy, &bank)?;
    let fused_low = fuse_low(&bands.low[1], &energy, &weights)?;

    // Reconstruction and recoloring.
    let fused_luma = reconstruct(&fused_high, &fused_low)?;
    let fused = recolor(&fused_luma.clamped_unit(), &chroma)?;

    let diagnostics = Diagnostics {
        width: vis.width(),
        height: vis.height(),
        sigma_vis: sigma_vis.sigma(),
        sigma_ir,
        ir_kappa,
        atmo_light: atmo.min_a,
        beta: cfg.beta.beta,
        lambda: cfg.regularizer.lambda_for(&sigma_vis),
        refine_objective: refine_trace,
        band_sigma,
        band_kappa: kappas,
        high_bands: std::array::from_fn(|i| HighBandDiagnostics {
            sigma_high: denoised[i].sigma,
            denoise_kappa: denoised[i].kappa,
            kl: gates[i].kl,
            kept_original: gates[i].kept_original,
            mpc_noise_t: saliency[i].noise_t,
        }),
        low_path: LowPathDiagnostics {
            v2: weights.v2,
            v4: weights.v4,
            en2: weights.en2,
            en4: weights.en4,
            w2: weights.w2,
            w4: weights.w4,
        },
        eta: cfg.eta,
        kl_threshold: cfg.kl_threshold,
        blend_denoised: cfg.blend_denoised,
        fh_gain_max: gain_max,
        fh_gain_mean: gain_mean,
    };

    let artifacts = if cfg.collect_artifacts {
        Some(Box::new(PipelineArtifacts {
            t_coarse,
            t_refined,
            layers,
            bands,
            denoised: std::array::from_fn(|i| denoised[i].band.clone()),
            gated: std::array::from_fn(|i| gates[i].band.clone()),
            saliency: std::array::from_fn(|i| saliency[i].values.clone()),
            energy,
            fused_high,
            fused_low,
            fused_luma: fused_luma.clone(),
        }))
    } else {
        None
    };

    Ok(FusionOutput { fused, fused_luma, diagnostics, artifacts })
}
