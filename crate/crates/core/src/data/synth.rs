use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// One to three soft colored blobs on a dim background.
    GaussianBlobs,
    /// Oriented sinusoidal gratings.
    Stripes,
}

/// Generates `n` procedural images of shape `[C, H, W]` in `[0, 1]`.
pub fn synth_dataset<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    shape: [usize; 3],
    kind: SynthKind,
) -> Result<ImageDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic dataset size must be positive".into()));
    }
    if shape.contains(&0) {
        return Err(Error::InvalidArgument(format!("image shape {shape:?} has a zero extent")));
    }
    let images = (0..n)
        .map(|_| {
            let data = match kind {
                SynthKind::GaussianBlobs => blobs(rng, shape),
                SynthKind::Stripes => stripes(rng, shape),
            };
            Tensor::new(shape.to_vec(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    ImageDataset::new(images, Split::Train)
}

fn blobs<R: Rng + ?Sized>(rng: &mut R, [c, h, w]: [usize; 3]) -> Vec<f64> {
    let extent = h.max(w) as f64;
    let background: f64 = rng.random_range(0.0..0.2);
    let mut data = vec![background; c * h * w];
    for _ in 0..rng.random_range(1..=3) {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let sigma = rng.random_range(0.12..0.35) * extent;
        let amp: f64 = rng.random_range(0.3..0.9);
        let tint: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.0)).collect();
        for (ch, &t) in tint.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    data[(ch * h + y) * w + x] += amp * t * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    data
}

fn stripes<R: Rng + ?Sized>(rng: &mut R, [c, h, w]: [usize; 3]) -> Vec<f64> {
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let cycles = rng.random_range(0.5..3.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let contrast = rng.random_range(0.5..1.0);
    let tint: Vec<f64> = (0..c).map(|_| rng.random_range(0.6..1.0)).collect();
    let (sin, cos) = angle.sin_cos();
    let extent = h.max(w) as f64;
    let mut data = Vec::with_capacity(c * h * w);
    for &t in &tint {
        for y in 0..h {
            for x in 0..w {
                let u = (x as f64 * cos + y as f64 * sin) / extent;
                let s = (std::f64::consts::TAU * cycles * u + phase).sin();
                data.push((t * (0.5 + 0.5 * contrast * s)).clamp(0.0, 1.0));
            }
        }
    }
    data
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synth_dataset(&mut rng, 0, [1, 8, 8], SynthKind::Stripes).is_err());
    }

    #[test]
    fn reproducible_per_seed() {
        for kind in [SynthKind::GaussianBlobs, SynthKind::Stripes] {
            let a = synth_dataset(&mut ChaCha8Rng::seed_from_u64(5), 20, [3, 8, 8], kind).unwrap();
            let b = synth_dataset(&mut ChaCha8Rng::seed_from_u64(5), 20, [3, 8, 8], kind).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn blob_mean_intensity_is_moderate() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ds = synth_dataset(&mut rng, 1000, [1, 8, 8], SynthKind::GaussianBlobs).unwrap();
        let means: Vec<f64> = ds
            .images()
            .iter()
            .map(|t| t.data().iter().sum::<f64>() / t.len() as f64)
            .collect();
        let overall = means.iter().sum::<f64>() / means.len() as f64;
        assert!(overall > 0.05 && overall < 0.95, "mean {overall}");
        let inside = means.iter().filter(|&&m| m > 0.05 && m < 0.95).count();
        assert!(inside >= 990, "{inside} of 1000 images in range");
    }
}
