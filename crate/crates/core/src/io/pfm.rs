//! Portable float map (`Pf` grayscale, `PF` colour), 32-bit little-endian on
//! write. Rows are stored bottom-to-top as the format prescribes.
//!
//! Flow fields use three-channel `PF` files with the third channel zero.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::warp::FlowField;

/// Writes interleaved top-to-bottom `data` with 1 or 3 channels.
fn write_raw(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f32],
) -> Result<()> {
    let magic = match channels {
        1 => "Pf",
        3 => "PF",
        _ => {
            return Err(CoreError::Shape(format!(
                "pfm cannot hold {channels} channels"
            )))
        }
    };
    let mut buf = Vec::with_capacity(32 + data.len() * 4);
    write!(buf, "{magic}\n{width} {height}\n-1.0\n").expect("write to vec");
    for row in (0..height).rev() {
        let start = row * width * channels;
        for v in &data[start..start + width * channels] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| CoreError::io(path, e))
}

/// Returns `(width, height, channels, interleaved top-to-bottom data)`.
fn read_raw(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CoreError::format(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(CoreError::format(path, format!("bad magic {other:?}"))),
    };
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| CoreError::format(path, format!("bad dimension {s:?}")))
    };
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let scale: f32 = token()?
        .parse()
        .map_err(|_| CoreError::format(path, "bad scale"))?;
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let n = width * height * channels;
    let payload = bytes
        .get(pos..pos + n * 4)
        .ok_or_else(|| CoreError::format(path, "truncated payload"))?;
    let little = scale < 0.0;
    let mut rows_bottom_up = payload.chunks_exact(4).map(|b| {
        let b = [b[0], b[1], b[2], b[3]];
        if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    });
    let mut data = vec![0.0f32; n];
    for row in (0..height).rev() {
        let start = row * width * channels;
        for v in &mut data[start..start + width * channels] {
            *v = rows_bottom_up.next().expect("payload length checked");
        }
    }
    Ok((width, height, channels, data))
}

pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let (h, w, channels) = img.shape();
    let mut interleaved = vec![0.0f32; img.len()];
    for c in 0..channels {
        for (p, &v) in img.plane(c).iter().enumerate() {
            interleaved[p * channels + c] = v;
        }
    }
    write_raw(path, w, h, channels, &interleaved)
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let (w, h, channels, data) = read_raw(path)?;
    let mut planar = vec![0.0f32; data.len()];
    for p in 0..w * h {
        for c in 0..channels {
            planar[c * w * h + p] = data[p * channels + c];
        }
    }
    Image::new(h, w, channels, planar).map_err(|e| CoreError::format(path, e.to_string()))
}

pub fn write_flow(path: &Path, flow: &FlowField) -> Result<()> {
    let mut data = Vec::with_capacity(flow.dx().len() * 3);
    for (&a, &b) in flow.dx().iter().zip(flow.dy()) {
        data.extend_from_slice(&[a, b, 0.0]);
    }
    write_raw(path, flow.width(), flow.height(), 3, &data)
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let (w, h, channels, data) = read_raw(path)?;
    if channels != 3 {
        return Err(CoreError::format(path, "flow files must be 3-channel PF"));
    }
    let dx = data.iter().step_by(3).copied().collect();
    let dy = data.iter().skip(1).step_by(3).copied().collect();
    FlowField::new(h, w, dx, dy).map_err(|e| CoreError::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let img = Image::from_fn(5, 7, channels, |c, y, x| {
                (c as f32 * 0.37 + y as f32 * 0.011 + x as f32 * 0.0013)
                    .sin()
                    .abs()
            })
            .unwrap();
            let path = dir.path().join(format!("img{channels}.pfm"));
            write_pfm(&path, &img).unwrap();
            assert_eq!(read_pfm(&path).unwrap(), img);
        }
    }

    #[test]
    fn flow_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let flow =
            FlowField::from_fn(4, 6, |y, x| (x as f32 * 0.1 - 0.3, -(y as f32) * 1.7)).unwrap();
        let path = dir.path().join("flow.pfm");
        write_flow(&path, &flow).unwrap();
        assert_eq!(read_flow(&path).unwrap(), flow);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        fs::write(&path, b"P6\n1 1\n255\n").unwrap();
        assert!(matches!(read_pfm(&path), Err(CoreError::Format { .. })));
        fs::write(&path, b"Pf\n4 4\n-1.0\n\0\0").unwrap();
        assert!(matches!(read_pfm(&path), Err(CoreError::Format { .. })));
    }
}
