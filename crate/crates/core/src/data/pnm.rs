//! Binary PGM (`P5`, grayscale) / PPM (`P6`, RGB) output for inspecting images.

use std::fs;
use std::path::{Path, PathBuf};

use super::Image;
use crate::error::{Error, Result};

fn to_byte(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(shape: [usize; 3], pixels: &[f64]) -> Result<Vec<u8>> {
    let [h, w, c] = shape;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::input(format!(
                "cannot write {c}-channel image as PGM/PPM"
            )))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&p| to_byte(p)));
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes one image; the format follows the channel count.
pub fn dump_pnm(image: &Image, path: &Path) -> Result<()> {
    write(path, &encode(image.shape(), image.pixels())?)
}

/// Reads a `P5`/`P6` file written by [`dump_pnm`].
pub fn read_pnm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format!("{file}:header"), "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace before the raster
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(Error::format(
                format!("{file}:magic"),
                format!("unsupported magic {other}"),
            ))
        }
    };
    let parse = |s: &str, name: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(format!("{file}:{name}"), format!("bad value {s}")))
    };
    let w = parse(&fields[1], "width")?;
    let h = parse(&fields[2], "height")?;
    if parse(&fields[3], "maxval")? != 255 {
        return Err(Error::format(
            format!("{file}:maxval"),
            "only 8-bit supported",
        ));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != w * h * channels {
        return Err(Error::format(
            format!("{file}:raster"),
            format!(
                "expected {} bytes, found {}",
                w * h * channels,
                raster.len()
            ),
        ));
    }
    Image::new(
        [h, w, channels],
        raster.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Path of the text sidecar written next to a grid image.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("txt")
}

/// Tiles equally shaped images left-to-right, `columns` per row, separated by a
/// one-pixel white border, and writes one annotation line per image to a `.txt`
/// sidecar.
pub fn dump_grid(
    images: &[Image],
    annotations: &[String],
    columns: usize,
    path: &Path,
) -> Result<()> {
    if images.is_empty() {
        return Err(Error::input("grid needs at least one image"));
    }
    if annotations.len() != images.len() {
        return Err(Error::input("one annotation per image is required"));
    }
    let [h, w, c] = images[0].shape();
    if images.iter().any(|im| im.shape() != [h, w, c]) {
        return Err(Error::input("grid images must share a shape"));
    }
    let cols = columns.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let gh = rows * (h + 1) + 1;
    let gw = cols * (w + 1) + 1;
    let mut px = vec![1.0; gh * gw * c];
    for (n, im) in images.iter().enumerate() {
        let oy = 1 + (n / cols) * (h + 1);
        let ox = 1 + (n % cols) * (w + 1);
        for y in 0..h {
            let src = &im.pixels()[y * w * c..(y + 1) * w * c];
            let dst = ((oy + y) * gw + ox) * c;
            px[dst..dst + w * c].copy_from_slice(src);
        }
    }
    write(path, &encode([gh, gw, c], &px)?)?;
    let text: String = annotations
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{i}\t{a}\n"))
        .collect();
    write(&sidecar_path(path), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zeros_and_ones() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.pgm");
        dump_pnm(&Image::zeros([3, 2, 1]), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n2 3\n255\n"));
        assert!(bytes[11..].iter().all(|&b| b == 0));
        dump_pnm(&Image::new([2, 2, 3], vec![1.0; 12]).unwrap(), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n"));
        assert_eq!(&bytes[bytes.len() - 12..], &[255u8; 12]);
    }

    #[test]
    fn random_round_trip_within_one_level() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for (i, c) in [1usize, 3].into_iter().enumerate() {
            let px: Vec<f64> = (0..5 * 7 * c).map(|_| rng.gen()).collect();
            let im = Image::new([5, 7, c], px).unwrap();
            let p = dir.path().join(format!("r{i}.pnm"));
            dump_pnm(&im, &p).unwrap();
            let back = read_pnm(&p).unwrap();
            assert_eq!(back.shape(), im.shape());
            let worst = im
                .pixels()
                .iter()
                .zip(back.pixels())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1.0 / 255.0);
        }
    }

    #[test]
    fn grid_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let ims = vec![Image::zeros([2, 2, 1]); 3];
        let notes: Vec<String> = (0..3).map(|i| format!("note {i}")).collect();
        dump_grid(&ims, &notes, 2, &p).unwrap();
        let g = read_pnm(&p).unwrap();
        assert_eq!(g.shape(), [7, 7, 1]);
        let side = fs::read_to_string(sidecar_path(&p)).unwrap();
        assert_eq!(side.lines().count(), 3);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = dump_pnm(
            &Image::zeros([1, 1, 1]),
            Path::new("/nonexistent/dir/x.pgm"),
        );
        assert!(matches!(r, Err(Error::Io { .. })));
    }
}
