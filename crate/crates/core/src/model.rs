//! Blob representation and the point-wise value of a blob model.
//!
//! A model is a background value plus an ordered list of diffuse ellipse
//! functions ("blobs"). Every blob parameter is normalized to `[0, 1]`:
//! positions and semi-axes are fractions of the model extent and rotations
//! map linearly onto `[0, π]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Semi-axis sizes below this are replaced by it before division.
pub const MIN_AXIS: f64 = 1e-4;

/// Current model document version.
pub const MODEL_VERSION: u32 = 1;

/// Spatial dimensionality of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn from_usize(dim: usize) -> Result<Self> {
        match dim {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            other => Err(Error::Dimension(format!(
                "unsupported dimensionality {other}"
            ))),
        }
    }

    pub fn as_usize(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Genome entries per blob: 8 in 2D, 12 in 3D.
    pub fn params_per_blob(self) -> usize {
        match self {
            Dim::Two => 8,
            Dim::Three => 12,
        }
    }
}

/// Extra parameters carried by 3D blobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthParams {
    pub z_loc: f64,
    pub z_s: f64,
    pub x_r: f64,
    pub y_r: f64,
}

/// One diffuse ellipse function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// Central intensity.
    pub delta: f64,
    /// Foreground strength.
    pub s: f64,
    /// Edge sharpness; near 0 is very diffuse, near 1 a hard edge.
    pub alpha: f64,
    pub x_loc: f64,
    pub y_loc: f64,
    pub x_s: f64,
    pub y_s: f64,
    /// Rotation about z, 1.0 is a half turn.
    pub z_r: f64,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<DepthParams>,
    /// Set when construction had to clamp an out-of-range parameter.
    #[serde(skip)]
    pub clamped: bool,
}

fn clamp_unit(v: f64, flag: &mut bool) -> f64 {
    if v.is_nan() {
        *flag = true;
        return 0.0;
    }
    if !(0.0..=1.0).contains(&v) {
        *flag = true;
    }
    v.clamp(0.0, 1.0)
}

impl Blob {
    /// Builds a blob from its parameters in genome order
    /// (δ, s, α, x_loc, y_loc, x_s, y_s, z_r [, z_loc, z_s, x_r, y_r]).
    ///
    /// Out-of-range values are clamped into `[0, 1]` and `clamped` is set.
    pub fn from_params(params: &[f64]) -> Result<Self> {
        let dim = match params.len() {
            8 => Dim::Two,
            12 => Dim::Three,
            n => {
                return Err(Error::Structural {
                    what: "blob parameter vector",
                    expected: 8,
                    actual: n,
                })
            }
        };
        let mut flag = false;
        let mut p = [0.0; 12];
        for (dst, &src) in p.iter_mut().zip(params) {
            *dst = clamp_unit(src, &mut flag);
        }
        Ok(Blob {
            delta: p[0],
            s: p[1],
            alpha: p[2],
            x_loc: p[3],
            y_loc: p[4],
            x_s: p[5],
            y_s: p[6],
            z_r: p[7],
            depth: (dim == Dim::Three).then_some(DepthParams {
                z_loc: p[8],
                z_s: p[9],
                x_r: p[10],
                y_r: p[11],
            }),
            clamped: flag,
        })
    }

    /// A round, unrotated 2D blob.
    pub fn disc(delta: f64, s: f64, alpha: f64, center: [f64; 2], radius: f64) -> Self {
        Blob::from_params(&[delta, s, alpha, center[0], center[1], radius, radius, 0.0])
            .expect("eight parameters")
    }

    /// A round, unrotated 3D blob.
    pub fn ball(delta: f64, s: f64, alpha: f64, center: [f64; 3], radius: f64) -> Self {
        Blob::from_params(&[
            delta, s, alpha, center[0], center[1], radius, radius, 0.0, center[2], radius, 0.0, 0.0,
        ])
        .expect("twelve parameters")
    }

    pub fn dim(&self) -> Dim {
        if self.depth.is_some() {
            Dim::Three
        } else {
            Dim::Two
        }
    }

    /// Parameters in genome order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![
            self.delta, self.s, self.alpha, self.x_loc, self.y_loc, self.x_s, self.y_s, self.z_r,
        ];
        if let Some(d) = self.depth {
            out.extend_from_slice(&[d.z_loc, d.z_s, d.x_r, d.y_r]);
        }
        out
    }

    /// Replaces parameter `index` (genome order), clamping into `[0, 1]`.
    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut p = self.params();
        p[index] = value;
        let clamped = self.clamped;
        *self = Blob::from_params(&p).expect("same length");
        self.clamped |= clamped;
    }

    pub fn param(&self, index: usize) -> f64 {
        self.params()[index]
    }

    pub fn center(&self) -> [f64; 3] {
        [self.x_loc, self.y_loc, self.depth.map_or(0.0, |d| d.z_loc)]
    }

    /// Semi-axis sizes (x, y, z); z is 0 for 2D blobs.
    pub fn semi_axes(&self) -> [f64; 3] {
        [self.x_s, self.y_s, self.depth.map_or(0.0, |d| d.z_s)]
    }

    /// Blob-to-world rotation matrix, composed as `Rz · Ry · Rx`.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (xr, yr) = self.depth.map_or((0.0, 0.0), |d| (d.x_r, d.y_r));
        rotation_matrix(xr * PI, yr * PI, self.z_r * PI)
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// `Rz(c) · Ry(b) · Rx(a)`: rotate about x first, then y, then z.
pub(crate) fn rotation_matrix(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

/// Background value plus an ordered list of blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dim: Dim,
    pub background: f64,
    pub blobs: Vec<Blob>,
}

impl Model {
    pub fn blank(dim: Dim, background: f64) -> Self {
        Model {
            dim,
            background: background.clamp(0.0, 1.0),
            blobs: Vec::new(),
        }
    }

    pub fn with_blobs(dim: Dim, background: f64, blobs: Vec<Blob>) -> Result<Self> {
        let mut m = Model::blank(dim, background);
        for b in blobs {
            m.push(b)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, blob: Blob) -> Result<()> {
        if blob.dim() != self.dim {
            return Err(Error::Dimension(format!(
                "{}D blob added to a {}D model",
                blob.dim().as_usize(),
                self.dim.as_usize()
            )));
        }
        self.blobs.push(blob);
        Ok(())
    }

    /// Copy of the model with blob `index` removed.
    pub fn without(&self, index: usize) -> Model {
        let mut m = self.clone();
        m.blobs.remove(index);
        m
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            version: MODEL_VERSION,
            dim: self.dim.as_usize(),
            background: self.background,
            blobs: self.blobs.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model: {e}")))?;
        if doc.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "model: unsupported version {}",
                doc.version
            )));
        }
        let dim = Dim::from_usize(doc.dim)?;
        let mut model = Model::blank(dim, doc.background);
        if !(0.0..=1.0).contains(&doc.background) {
            return Err(Error::Format("model: background outside [0, 1]".into()));
        }
        for blob in doc.blobs {
            // Re-validate through the clamping constructor.
            let checked = Blob::from_params(&blob.params())?;
            model.push(checked)?;
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    version: u32,
    dim: usize,
    background: f64,
    blobs: Vec<Blob>,
}

/// Flat optimizer encoding of a model: `[b, blob_0 params.., blob_1 params..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome {
    pub values: Vec<f64>,
}

impl Genome {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn expected_len(dim: Dim, n_blobs: usize) -> usize {
        1 + n_blobs * dim.params_per_blob()
    }
}

pub fn encode(model: &Model) -> Genome {
    let mut values = Vec::with_capacity(Genome::expected_len(model.dim, model.len()));
    values.push(model.background);
    for b in &model.blobs {
        values.extend(b.params());
    }
    Genome { values }
}

/// Inverse of [`encode`]. Entries outside `[0, 1]` are clamped.
pub fn decode(genome: &[f64], dim: Dim, n_blobs: usize) -> Result<Model> {
    let expected = Genome::expected_len(dim, n_blobs);
    if genome.len() != expected {
        return Err(Error::Structural {
            what: "genome",
            expected,
            actual: genome.len(),
        });
    }
    let per = dim.params_per_blob();
    let mut model = Model::blank(dim, genome[0]);
    for chunk in genome[1..].chunks_exact(per) {
        model.blobs.push(Blob::from_params(chunk)?);
    }
    Ok(model)
}

/// Maps a point into the blob's frame: translate to its center, undo its
/// rotation and divide by the semi-axes. The ellipse boundary maps onto the
/// unit circle (sphere).
pub fn transform_point(blob: &Blob, p: &[f64]) -> Vec<f64> {
    let t = BlobFrame::new(blob).transform(p);
    t[..blob.dim().as_usize()].to_vec()
}

/// `δ / (r^(15α) + 1)` with `r` the squared transformed radius; `0^0 = 1`.
pub fn local_intensity(blob: &Blob, p: &[f64]) -> f64 {
    blob.delta * BlobFrame::new(blob).falloff(p)
}

/// `(s_i / max s)^6`, or all zeros when every strength is zero.
pub fn adjusted_strengths(model: &Model) -> Vec<f64> {
    let max = model.blobs.iter().map(|b| b.s).fold(0.0, f64::max);
    model
        .blobs
        .iter()
        .map(|b| if max > 0.0 { (b.s / max).powi(6) } else { 0.0 })
        .collect()
}

/// Combined model value at `p`, in `[0, 1]`.
pub fn combined_value(model: &Model, p: &[f64]) -> f64 {
    PreparedModel::new(model).value(p)
}

/// Per-blob quantities that do not depend on the query point.
#[derive(Debug, Clone)]
struct BlobFrame {
    center: [f64; 3],
    /// Rows are the world-to-blob rotation (transpose of the blob rotation).
    inverse_rotation: [[f64; 3]; 3],
    inv_axes: [f64; 3],
    exponent: f64,
    three_d: bool,
}

impl BlobFrame {
    fn new(blob: &Blob) -> Self {
        let r = blob.rotation();
        let mut inv = [[0.0; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = r[j][i];
            }
        }
        let axes = blob.semi_axes();
        BlobFrame {
            center: blob.center(),
            inverse_rotation: inv,
            inv_axes: axes.map(|a| 1.0 / a.max(MIN_AXIS)),
            exponent: 15.0 * blob.alpha,
            three_d: blob.depth.is_some(),
        }
    }

    #[inline]
    fn transform(&self, p: &[f64]) -> [f64; 3] {
        let d = [
            p[0] - self.center[0],
            p[1] - self.center[1],
            if self.three_d {
                p[2] - self.center[2]
            } else {
                0.0
            },
        ];
        let r = &self.inverse_rotation;
        if self.three_d {
            [
                (r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2]) * self.inv_axes[0],
                (r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2]) * self.inv_axes[1],
                (r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2]) * self.inv_axes[2],
            ]
        } else {
            [
                (r[0][0] * d[0] + r[0][1] * d[1]) * self.inv_axes[0],
                (r[1][0] * d[0] + r[1][1] * d[1]) * self.inv_axes[1],
                0.0,
            ]
        }
    }

    /// Normalized local intensity `f / δ`.
    #[inline]
    fn falloff(&self, p: &[f64]) -> f64 {
        let t = self.transform(p);
        let r2 = t[0] * t[0] + t[1] * t[1] + t[2] * t[2];
        1.0 / (r2.powf(self.exponent) + 1.0)
    }
}

/// A model with its point-independent terms precomputed, for repeated
/// sampling. Produces exactly the same values as [`combined_value`].
#[derive(Debug, Clone)]
pub struct PreparedModel {
    background: f64,
    frames: Vec<BlobFrame>,
    /// (adjusted strength, δ > 0) per blob.
    weights: Vec<(f64, bool)>,
    weighted_intensity: f64,
}

impl PreparedModel {
    pub fn new(model: &Model) -> Self {
        let strengths = adjusted_strengths(model);
        let weighted_intensity = model
            .blobs
            .iter()
            .zip(&strengths)
            .map(|(b, s)| s * b.delta)
            .sum();
        PreparedModel {
            background: model.background,
            frames: model.blobs.iter().map(BlobFrame::new).collect(),
            weights: model
                .blobs
                .iter()
                .zip(&strengths)
                .map(|(b, &s)| (s, b.delta > 0.0))
                .collect(),
            weighted_intensity,
        }
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        // The background is a dummy blob with f' = b and zero strength.
        let mut bg = self.background;
        let mut fg = 0.0;
        for (frame, &(s, visible)) in self.frames.iter().zip(&self.weights) {
            if !visible {
                continue;
            }
            let f = frame.falloff(p);
            bg += (1.0 - s) * f;
            fg += s * f;
        }
        let v = if self.weighted_intensity > 0.0 {
            bg + fg * (1.0 - bg / self.weighted_intensity)
        } else {
            bg
        };
        v.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob2(x: f64, y: f64, xs: f64, ys: f64, zr: f64) -> Blob {
        Blob::from_params(&[1.0, 1.0, 0.5, x, y, xs, ys, zr]).unwrap()
    }

    #[test]
    fn transform_examples() {
        let b = blob2(0.5, 0.5, 0.25, 0.1, 0.0);
        assert_eq!(transform_point(&b, &[0.5, 0.5]), vec![0.0, 0.0]);
        let t = transform_point(&b, &[0.75, 0.5]);
        assert!((t[0] - 1.0).abs() < 1e-12 && t[1].abs() < 1e-12);
        // z_r = 1 is a half turn
        let b = blob2(0.5, 0.5, 0.25, 0.1, 1.0);
        let t = transform_point(&b, &[0.75, 0.5]);
        assert!((t[0] + 1.0).abs() < 1e-12 && t[1].abs() < 1e-12, "{t:?}");
        // z_r = 0.5 is a quarter turn: world +x is the blob's -y axis
        let b = blob2(0.5, 0.5, 0.25, 0.1, 0.5);
        let t = transform_point(&b, &[0.75, 0.5]);
        assert!(t[0].abs() < 1e-12 && (t[1] + 2.5).abs() < 1e-12, "{t:?}");
    }

    #[test]
    fn zero_axis_uses_floor() {
        let b = blob2(0.5, 0.5, 0.0, 0.1, 0.0);
        let t = transform_point(&b, &[0.5 + 1e-4, 0.5]);
        assert!((t[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn intensity_examples() {
        let mut b = blob2(0.3, 0.6, 0.2, 0.2, 0.0);
        b.delta = 0.8;
        b.alpha = 0.2;
        assert_eq!(local_intensity(&b, &[0.3, 0.6]), 0.8);
        assert!((local_intensity(&b, &[0.5, 0.6]) - 0.4).abs() < 1e-12);
        // r² = 4 at distance two semi-axes
        let v = local_intensity(&b, &[0.7, 0.6]);
        assert!((v - 0.8 / 65.0).abs() < 1e-12);
        b.alpha = 0.0;
        assert_eq!(local_intensity(&b, &[0.3, 0.6]), 0.4);
    }

    #[test]
    fn strength_examples() {
        let mk = |s: &[f64]| Model {
            dim: Dim::Two,
            background: 0.0,
            blobs: s
                .iter()
                .map(|&s| {
                    let mut b = blob2(0.5, 0.5, 0.1, 0.1, 0.0);
                    b.s = s;
                    b
                })
                .collect(),
        };
        assert_eq!(adjusted_strengths(&mk(&[0.5])), vec![1.0]);
        assert_eq!(adjusted_strengths(&mk(&[1.0, 0.5])), vec![1.0, 0.015625]);
        assert_eq!(adjusted_strengths(&mk(&[0.0, 0.0])), vec![0.0, 0.0]);
    }

    #[test]
    fn combined_examples() {
        let blank = Model::blank(Dim::Two, 0.3);
        assert_eq!(combined_value(&blank, &[0.1, 0.9]), 0.3);

        let b = blob2(0.4, 0.4, 0.1, 0.1, 0.0);
        let m = Model::with_blobs(Dim::Two, 0.0, vec![b]).unwrap();
        assert_eq!(combined_value(&m, &[0.4, 0.4]), 1.0);

        let mut b = b;
        b.delta = 0.5;
        let m = Model::with_blobs(Dim::Two, 0.2, vec![b]).unwrap();
        assert!((combined_value(&m, &[0.4, 0.4]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_delta_blob_is_invisible() {
        let mut b = blob2(0.4, 0.4, 0.1, 0.1, 0.0);
        b.delta = 0.0;
        let m = Model::with_blobs(Dim::Two, 0.25, vec![b]).unwrap();
        assert_eq!(combined_value(&m, &[0.4, 0.4]), 0.25);
    }

    #[test]
    fn construction_clamps_and_flags() {
        let b = Blob::from_params(&[1.5, 0.5, -0.1, 0.5, 0.5, 0.1, 0.1, 0.0]).unwrap();
        assert!(b.clamped);
        assert_eq!(b.delta, 1.0);
        assert_eq!(b.alpha, 0.0);
        let ok = Blob::from_params(&[1.0, 0.5, 0.1, 0.5, 0.5, 0.1, 0.1, 0.0]).unwrap();
        assert!(!ok.clamped);
    }

    #[test]
    fn genome_lengths() {
        let blank = Model::blank(Dim::Two, 0.5);
        assert_eq!(encode(&blank).values, vec![0.5]);
        let m = Model::with_blobs(Dim::Two, 0.5, vec![blob2(0.5, 0.5, 0.1, 0.1, 0.0)]).unwrap();
        assert_eq!(encode(&m).len(), 9);
        let err = decode(&[0.5, 0.1], Dim::Two, 1).unwrap_err();
        assert!(err.to_string().contains("expected 9"), "{err}");
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let mut m = Model::blank(Dim::Three, 0.5);
        assert!(m.push(blob2(0.5, 0.5, 0.1, 0.1, 0.0)).is_err());
        assert!(m.push(Blob::ball(0.5, 0.5, 0.5, [0.5; 3], 0.2)).is_ok());
    }

    #[test]
    fn json_round_trip_exact() {
        let m = Model::with_blobs(
            Dim::Three,
            0.123456789012345,
            vec![Blob::ball(0.1, 0.2, 0.3, [0.4, 0.5, 0.6], 0.7)],
        )
        .unwrap();
        let text = m.to_json();
        assert!(text.contains("\"z_loc\""));
        assert_eq!(Model::from_json(&text).unwrap(), m);
        let bad = text.replace("\"background\"", "\"bakground\"");
        assert!(Model::from_json(&bad).is_err());
    }

    #[test]
    fn rotated_3d_axes() {
        // Half a turn about x maps y -> -y.
        let mut b = Blob::ball(1.0, 1.0, 0.5, [0.5, 0.5, 0.5], 0.25);
        b.depth.as_mut().unwrap().x_r = 1.0;
        let t = transform_point(&b, &[0.5, 0.75, 0.5]);
        assert!((t[0]).abs() < 1e-12 && (t[1] + 1.0).abs() < 1e-12 && t[2].abs() < 1e-12);
    }
}
