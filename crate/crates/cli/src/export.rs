use std::path::Path;

use dwnet::FeatureMap;
use image::{Rgb, RgbImage};

use crate::fail::{CliResult, Failure};

/// Writes a 3-channel map in `[-1, 1]` as an 8-bit PNG; values outside the
/// range are clipped.
pub fn write_png(path: &Path, map: &FeatureMap<f32>) -> CliResult<()> {
    if map.channels() != 3 {
        return Err(Failure::validation(format!("PNG export needs 3 channels, got {}", map.channels())));
    }
    let byte = |v: f32| (((v + 1.0) * 0.5).clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = RgbImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([byte(map.get(0, y, x)), byte(map.get(1, y, x)), byte(map.get(2, y, x))])
    });
    img.save(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}
