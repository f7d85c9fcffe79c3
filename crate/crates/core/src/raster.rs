//! Forward samplers: models to grayscale images and resistivity meshes,
//! plus the PGM/PNG and mesh text file formats.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dim, Model, PreparedModel};

/// Lowest and highest representable resistivity, in Ωm.
pub const MIN_RESISTIVITY: f64 = 0.01;
pub const MAX_RESISTIVITY: f64 = 1000.0;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format("image dimensions must be positive".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::Structural {
                what: "image pixels",
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Image2D {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Image2D {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Parses P5 or P2 PGM data. Other maxvals are rescaled to 0..=255.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            // Skip whitespace and comments.
            while pos < bytes.len() {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        let magic = header[0].as_str();
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM header field `{s}`")))
        };
        let (width, height, maxval) = (num(&header[1])?, num(&header[2])?, num(&header[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
        }
        let n = width * height;
        let raw: Vec<usize> = match magic {
            "P5" => {
                // exactly one whitespace byte after maxval
                let data = bytes.get(pos + 1..).unwrap_or(&[]);
                if data.len() < n {
                    return Err(Error::Structural {
                        what: "PGM pixel data",
                        expected: n,
                        actual: data.len(),
                    });
                }
                data[..n].iter().map(|&b| b as usize).collect()
            }
            "P2" => {
                let text = String::from_utf8_lossy(&bytes[pos..]);
                let vals = text
                    .split_ascii_whitespace()
                    .map(num)
                    .collect::<Result<Vec<_>>>()?;
                if vals.len() < n {
                    return Err(Error::Structural {
                        what: "PGM pixel data",
                        expected: n,
                        actual: vals.len(),
                    });
                }
                vals[..n].to_vec()
            }
            other => return Err(Error::Format(format!("not a PGM file (magic `{other}`)"))),
        };
        let pixels = raw
            .into_iter()
            .map(|v| {
                if v > maxval {
                    Err(Error::Format(format!(
                        "PGM sample {v} exceeds maxval {maxval}"
                    )))
                } else if maxval == 255 {
                    Ok(v as u8)
                } else {
                    Ok((v as f64 * 255.0 / maxval as f64).round() as u8)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Image2D::new(width, height, pixels)
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("in-memory png header");
            writer
                .write_image_data(&self.pixels)
                .expect("in-memory png data");
        }
        out
    }

    /// Decodes an 8-bit PNG; color images are converted to luma.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Format("png: image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("png: {e}")))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let data = &buf[..info.buffer_size()];
        let luma = |r: u8, g: u8, b: u8| {
            (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
        };
        let pixels: Vec<u8> = data
            .chunks_exact(channels)
            .map(|px| match channels {
                1 | 2 => px[0],
                _ => luma(px[0], px[1], px[2]),
            })
            .collect();
        Image2D::new(w, h, pixels)
    }

    /// Reads a PGM or PNG file, chosen by content.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"\x89PNG") {
            Image2D::from_png(&bytes)
        } else {
            Image2D::from_pgm(&bytes)
        }
    }

    /// Writes PNG when the extension is `.png`, PGM otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let bytes = if is_png { self.to_png() } else { self.to_pgm() };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Hexahedral mesh of resistivities in Ωm, x fastest, then y, then z (depth).
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh3D {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub values: Vec<f64>,
}

impl Mesh3D {
    pub fn new(nx: usize, ny: usize, nz: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Format("mesh dimensions must be positive".into()));
        }
        if values.len() != nx * ny * nz {
            return Err(Error::Structural {
                what: "mesh values",
                expected: nx * ny * nz,
                actual: values.len(),
            });
        }
        Ok(Mesh3D { nx, ny, nz, values })
    }

    pub fn uniform(nx: usize, ny: usize, nz: usize, resistivity: f64) -> Self {
        Mesh3D {
            nx,
            ny,
            nz,
            values: vec![resistivity; nx * ny * nz],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Header line `nx ny nz`, then one line of `nx` values per (y, z) row.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 20);
        writeln!(out, "{} {} {}", self.nx, self.ny, self.nz).unwrap();
        for row in self.values.chunks(self.nx) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                write!(out, "{v:e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_ascii_whitespace();
        let mut dim = || -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Format("mesh: missing header".into()))?
                .parse()
                .map_err(|_| Error::Format("mesh: bad header".into()))
        };
        let (nx, ny, nz) = (dim()?, dim()?, dim()?);
        let values = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Format(format!("mesh: bad value `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Mesh3D::new(nx, ny, nz, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_text().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mesh3D::from_text(&text)
    }

    /// One image per depth layer, gray = round(255·(log10(res)+2)/5).
    pub fn slices(&self) -> Vec<Image2D> {
        self.values
            .chunks(self.nx * self.ny)
            .map(|layer| Image2D {
                width: self.nx,
                height: self.ny,
                pixels: layer.iter().map(|&r| resistivity_to_gray(r)).collect(),
            })
            .collect()
    }
}

/// `v ↦ round(255 v)`, half away from zero.
#[inline]
pub fn value_to_pixel(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `v ↦ 10^(−2 + 5v)` Ωm.
#[inline]
pub fn value_to_resistivity(v: f64) -> f64 {
    10f64.powf(-2.0 + 5.0 * v.clamp(0.0, 1.0))
}

pub fn resistivity_to_gray(res: f64) -> u8 {
    value_to_pixel((res.log10() + 2.0) / 5.0)
}

/// Cell-center coordinate of cell `i` out of `n`.
#[inline]
pub fn cell_center(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

pub fn rasterize_2d(model: &Model, width: usize, height: usize) -> Result<Image2D> {
    if model.dim != Dim::Two {
        return Err(Error::Dimension("rasterize_2d needs a 2D model".into()));
    }
    let prepared = PreparedModel::new(model);
    let mut pixels = Vec::with_capacity(width * height);
    for j in 0..height {
        let y = cell_center(j, height);
        for i in 0..width {
            pixels.push(value_to_pixel(prepared.value(&[cell_center(i, width), y])));
        }
    }
    Image2D::new(width, height, pixels)
}

pub fn sample_mesh(model: &Model, nx: usize, ny: usize, nz: usize) -> Result<Mesh3D> {
    if model.dim != Dim::Three {
        return Err(Error::Dimension("sample_mesh needs a 3D model".into()));
    }
    let prepared = PreparedModel::new(model);
    let mut values = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        let z = cell_center(k, nz);
        for j in 0..ny {
            let y = cell_center(j, ny);
            for i in 0..nx {
                let v = prepared.value(&[cell_center(i, nx), y, z]);
                values.push(value_to_resistivity(v));
            }
        }
    }
    Mesh3D::new(nx, ny, nz, values)
}
