//! Deterministic synthetic reef scene used by tests, benches and the demo data.
//!
//! An elliptical reef sits in deep water: ocean (depth falling away from the
//! reef), a fore-reef slope ring, a rock/rubble reef flat, a sandy lagoon with
//! a bright sand flat inside it, and a small island that is masked out.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::raster::{encode_bnd, encode_png, Raster};
use crate::refine::{LabelMap, INVALID};
use crate::fsutil::write_atomic;

pub const SIZE: u32 = 128;
pub const DEFAULT_SEED: u64 = 2023;

/// Geomorphic zone ids in the truth maps.
pub mod geomorphic {
    pub const REEF_FLAT: i32 = 0;
    pub const LAGOON: i32 = 1;
    pub const REEF_SLOPE: i32 = 2;
    pub const OCEAN: i32 = 3;
    pub const CLASSES: [&str; 4] = ["reef flat", "lagoon/plateau", "reef slope", "ocean"];
}

/// Benthic cover ids in the truth maps.
pub mod benthic {
    pub const OCEAN: i32 = 0;
    pub const SAND: i32 = 1;
    pub const ROCK: i32 = 2;
    pub const CLASSES: [&str; 3] = ["ocean", "sand", "rock/rubble"];
}

#[derive(Debug, Clone)]
pub struct SyntheticReef {
    /// RGB in [0,1] (8-bit quantised); island pixels invalid.
    pub mosaic: Raster,
    /// Depth in metres (negative below sea level); island pixels NaN.
    pub bathymetry: Raster,
    pub benthic_truth: LabelMap,
    pub geomorphic_truth: LabelMap,
    /// Pixels of the bright sand flat inside the lagoon.
    pub sand_flat: Vec<bool>,
}

#[derive(Clone, Copy, PartialEq)]
enum Zone {
    Ocean,
    Slope,
    Flat,
    Lagoon,
    SandFlat,
    Island,
}

fn zone_at(x: f64, y: f64) -> (Zone, f64) {
    let (cx, cy, a, b) = (64.0, 64.0, 44.0, 34.0);
    let r = (((x - cx) / a).powi(2) + ((y - cy) / b).powi(2)).sqrt();
    let island = (x - 103.5).powi(2) + (y - 64.0).powi(2) <= 9.0;
    let sand_flat = (x - 54.0).powi(2) + (y - 68.0).powi(2) <= 100.0;
    let zone = if island {
        Zone::Island
    } else if r > 1.25 {
        Zone::Ocean
    } else if r > 1.0 {
        Zone::Slope
    } else if r > 0.78 {
        Zone::Flat
    } else if sand_flat {
        Zone::SandFlat
    } else {
        Zone::Lagoon
    };
    (zone, r)
}

impl SyntheticReef {
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let color_noise = Normal::new(0.0, 4.0).unwrap();
        let depth_noise = Normal::new(0.0, 0.3).unwrap();
        let n = (SIZE * SIZE) as usize;
        let mut rgb = vec![0f32; 3 * n];
        let mut depth = vec![0f32; n];
        let mut mask = vec![true; n];
        let mut benthic_truth = vec![INVALID; n];
        let mut geo_truth = vec![INVALID; n];
        let mut sand_flat = vec![false; n];

        for p in 0..n {
            let (x, y) = ((p % SIZE as usize) as f64 + 0.5, (p / SIZE as usize) as f64 + 0.5);
            let (zone, r) = zone_at(x, y);
            let (base, z, ben, geo): ([f64; 3], f64, i32, i32) = match zone {
                Zone::Ocean => {
                    let t = ((r - 1.25) / 0.9).min(1.0);
                    (
                        [22.0 - 8.0 * t, 52.0 - 14.0 * t, 102.0 - 18.0 * t],
                        -12.0 - 28.0 * t,
                        benthic::OCEAN,
                        geomorphic::OCEAN,
                    )
                }
                Zone::Slope => {
                    let t = (r - 1.0) / 0.25;
                    (
                        [40.0 - 14.0 * t, 78.0 - 20.0 * t, 122.0 - 16.0 * t],
                        -1.5 - 10.5 * t,
                        benthic::OCEAN,
                        geomorphic::REEF_SLOPE,
                    )
                }
                Zone::Flat => ([122.0, 98.0, 72.0], -0.5, benthic::ROCK, geomorphic::REEF_FLAT),
                Zone::Lagoon => ([196.0, 182.0, 138.0], -4.0, benthic::SAND, geomorphic::LAGOON),
                Zone::SandFlat => ([242.0, 236.0, 214.0], -3.0, benthic::SAND, geomorphic::LAGOON),
                Zone::Island => ([0.0; 3], 0.0, INVALID, INVALID),
            };
            // draw noise for every pixel so zones do not shift the stream
            let noise: [f64; 4] = [
                color_noise.sample(&mut rng),
                color_noise.sample(&mut rng),
                color_noise.sample(&mut rng),
                depth_noise.sample(&mut rng),
            ];
            if zone == Zone::Island {
                mask[p] = false;
                continue;
            }
            for b in 0..3 {
                let v = (base[b] + noise[b]).round().clamp(0.0, 255.0);
                rgb[b * n + p] = v as f32 / 255.0;
            }
            depth[p] = (z + noise[3]).min(-0.05) as f32;
            benthic_truth[p] = ben;
            geo_truth[p] = geo;
            sand_flat[p] = zone == Zone::SandFlat;
        }
        Self {
            mosaic: Raster::new(SIZE, SIZE, 3, rgb, mask.clone()).expect("valid mosaic"),
            bathymetry: Raster::new(SIZE, SIZE, 1, depth, mask).expect("valid bathymetry"),
            benthic_truth: LabelMap::new(SIZE, SIZE, benthic_truth).expect("valid truth"),
            geomorphic_truth: LabelMap::new(SIZE, SIZE, geo_truth).expect("valid truth"),
            sand_flat,
        }
    }

    /// Writes `mosaic.png`, `bathymetry.bnd`, `benthic_truth.bnd` and
    /// `geomorphic_truth.bnd` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
        write_atomic(&dir.join("mosaic.png"), &encode_png(&self.mosaic)?)?;
        write_atomic(&dir.join("bathymetry.bnd"), &encode_bnd(&self.bathymetry))?;
        write_atomic(&dir.join("benthic_truth.bnd"), &encode_bnd(&self.benthic_truth.to_raster()))?;
        write_atomic(&dir.join("geomorphic_truth.bnd"), &encode_bnd(&self.geomorphic_truth.to_raster()))?;
        Ok(())
    }
}
