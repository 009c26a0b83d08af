use ivfusion::fusion::{fuse_pipeline, FusionConfig};
use ivfusion::imgcore::{GrayImage, RgbImage};
use ivfusion::degrade::{add_gaussian_noise_gray, add_gaussian_noise_rgb};

fn main() {
    let (w, h) = (640, 480);
    let vis = RgbImage::from_fn(w, h, |x, y| {
        let v = if (x / 80 + y / 60) % 2 == 0 { 0.2 } else { 0.6 };
        (v, v * 0.9, v * 0.75)
    })
    .unwrap();
    let ir = GrayImage::from_fn(w, h, |x, y| {
        0.2 + 0.6 * (-(((x as f64 - 320.0).powi(2) + (y as f64 - 240.0).powi(2)) / 20000.0)).exp()
    })
    .unwrap();
    let nvis = add_gaussian_noise_rgb(&vis, 20.0, 1);
    let nir = add_gaussian_noise_gray(&ir, 20.0, 2);
    let t0 = std::time::Instant::now();
    let _ = fuse_pipeline(&nvis, &nir, &FusionConfig::default()).unwrap();
    println!("640x480 noisy fuse: {:?}", t0.elapsed());
    let t0 = std::time::Instant::now();
    let _ = fuse_pipeline(&vis, &ir, &FusionConfig::default()).unwrap();
    println!("640x480 clean fuse: {:?}", t0.elapsed());
}
