//! Bit-exact readers and writers for every artifact the tool touches.
//!
//! Images are binary PGM (P5), 16-bit big-endian samples, maxval 65535,
//! intensities mapped linearly to [0,1]. Float maps are PFM: "Pf" for one
//! channel, "PF" for three (normals), scale field −1.0 so samples are
//! little-endian f32, rows stored bottom-up as the format prescribes. Lights
//! are plain CSV, one "sx,sy,sz" row per image, ordered like the
//! lexicographically sorted image filenames. Solver configuration is flat
//! JSON with exactly the `SolverConfig` field names. The iteration trace is
//! CSV with 17-significant-digit floats, so assertions can be made on files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use relief::ipiano::{InnerRecord, SolverConfig};
use relief::{Grid, ImageStack, NormalField};

pub const PGM_MAXVAL: u16 = 65535;

/// Quantizes [0,1] to 16-bit and writes a P5 PGM. Values outside [0,1] are
/// clamped, matching a physical sensor's floor and saturation.
pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    ensure!(
        data.len() == width * height,
        "pgm buffer holds {} samples for {width}×{height}",
        data.len()
    );
    let mut bytes = format!("P5\n{width} {height}\n{PGM_MAXVAL}\n").into_bytes();
    bytes.reserve(2 * data.len());
    for &v in data {
        let q = (v.clamp(0.0, 1.0) * f64::from(PGM_MAXVAL)).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Reads a binary PGM into row-major [0,1] intensities. Accepts 8-bit files
/// too (maxval < 256, one byte per sample); anything this tool wrote is 16-bit.
pub fn read_pgm16(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cur = HeaderCursor::new(&bytes);
    let magic = cur.token().context("pgm header truncated")?;
    ensure!(magic == "P5", "expected P5 magic, found {magic:?}");
    let width: usize = cur.parse().context("pgm width")?;
    let height: usize = cur.parse().context("pgm height")?;
    let maxval: u32 = cur.parse().context("pgm maxval")?;
    ensure!(width > 0 && height > 0, "degenerate pgm size {width}×{height}");
    ensure!((1..=65535).contains(&maxval), "pgm maxval {maxval} outside 1..=65535");
    cur.expect_single_whitespace()?;
    let body = &bytes[cur.pos..];
    let n = width * height;
    let scale = 1.0 / f64::from(maxval);
    let data = if maxval < 256 {
        ensure!(body.len() == n, "pgm body holds {} bytes, expected {n}", body.len());
        body.iter().map(|&b| f64::from(b) * scale).collect()
    } else {
        ensure!(body.len() == 2 * n, "pgm body holds {} bytes, expected {}", body.len(), 2 * n);
        body.chunks_exact(2)
            .map(|p| f64::from(u16::from_be_bytes([p[0], p[1]])) * scale)
            .collect()
    };
    Ok((width, height, data))
}

fn pfm_header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n-1.0\n").into_bytes()
}

/// Writes a single-channel PFM ("Pf", little-endian, bottom-up rows).
pub fn write_pfm_scalar(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    ensure!(
        data.len() == width * height,
        "pfm buffer holds {} samples for {width}×{height}",
        data.len()
    );
    let mut bytes = pfm_header("Pf", width, height);
    bytes.reserve(4 * data.len());
    for v in (0..height).rev() {
        for u in 0..width {
            bytes.extend_from_slice(&(data[v * width + u] as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes a normal field as 3-channel PFM ("PF"), one (x, y, z) triple per
/// pixel, bottom-up rows.
pub fn write_pfm_normals(path: &Path, normals: &NormalField) -> Result<()> {
    let (width, height) = (normals.grid.width(), normals.grid.height());
    let mut bytes = pfm_header("PF", width, height);
    bytes.reserve(12 * normals.n.len());
    for v in (0..height).rev() {
        for u in 0..width {
            for c in normals.n[v * width + u] {
                bytes.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// A decoded PFM: row-major top-down samples, channels interleaved per pixel.
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl PfmImage {
    pub fn scalar(self) -> Result<(usize, usize, Vec<f64>)> {
        ensure!(self.channels == 1, "expected a scalar PFM, found {} channels", self.channels);
        Ok((self.width, self.height, self.data))
    }

    /// Per-pixel triples, renormalized to unit length to undo the f32
    /// quantization of storage.
    pub fn normals(self) -> Result<(usize, usize, Vec<[f64; 3]>)> {
        ensure!(self.channels == 3, "expected a 3-channel PFM, found {}", self.channels);
        let triples = self
            .data
            .chunks_exact(3)
            .enumerate()
            .map(|(j, t)| {
                let norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
                ensure!(norm > 1e-6, "normal at pixel {j} has near-zero length {norm:.3e}");
                Ok([t[0] / norm, t[1] / norm, t[2] / norm])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((self.width, self.height, triples))
    }
}

/// Reads a PFM of either channel count. The sign of the scale field selects
/// the sample byte order; rows arrive bottom-up and are flipped to top-down.
pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cur = HeaderCursor::new(&bytes);
    let magic = cur.token().context("pfm header truncated")?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => bail!("expected Pf or PF magic, found {other:?}"),
    };
    let width: usize = cur.parse().context("pfm width")?;
    let height: usize = cur.parse().context("pfm height")?;
    let scale: f64 = cur.parse().context("pfm scale")?;
    ensure!(width > 0 && height > 0, "degenerate pfm size {width}×{height}");
    ensure!(scale != 0.0 && scale.is_finite(), "pfm scale must be finite and nonzero");
    cur.expect_single_whitespace()?;
    let body = &bytes[cur.pos..];
    let count = width * height * channels;
    ensure!(body.len() == 4 * count, "pfm body holds {} bytes, expected {}", body.len(), 4 * count);
    let little_endian = scale < 0.0;
    let mut bottom_up = Vec::with_capacity(count);
    for p in body.chunks_exact(4) {
        let raw = [p[0], p[1], p[2], p[3]];
        let v = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        ensure!(v.is_finite(), "non-finite sample in {}", path.display());
        bottom_up.push(f64::from(v));
    }
    let row = width * channels;
    let mut data = Vec::with_capacity(count);
    for v in (0..height).rev() {
        data.extend_from_slice(&bottom_up[v * row..(v + 1) * row]);
    }
    Ok(PfmImage { width, height, channels, data })
}

/// Parses a lights CSV: one "sx,sy,sz" row per image, blank lines ignored.
pub fn read_lights_csv(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        ensure!(fields.len() == 3, "line {}: expected sx,sy,sz, found {line:?}", idx + 1);
        let mut row = [0.0; 3];
        for (slot, field) in row.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .with_context(|| format!("line {}: bad number {field:?}", idx + 1))?;
        }
        rows.push(row);
    }
    ensure!(!rows.is_empty(), "no light rows in {}", path.display());
    Ok(rows)
}

/// Loads every `.pgm` in `dir` in lexicographic filename order into one
/// stack. Returns the filenames so manifests can record the pairing with
/// light rows.
pub fn read_image_stack(dir: &Path) -> Result<(Grid, ImageStack, Vec<String>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "pgm"))
        .collect();
    paths.sort();
    ensure!(!paths.is_empty(), "no .pgm images in {}", dir.display());
    let mut planes = Vec::with_capacity(paths.len());
    let mut names = Vec::with_capacity(paths.len());
    let mut dims = None;
    for path in &paths {
        let (w, h, plane) = read_pgm16(path)?;
        match dims {
            None => dims = Some((w, h)),
            Some(d) => ensure!(
                d == (w, h),
                "{} is {w}×{h} but earlier images are {}×{}",
                path.display(),
                d.0,
                d.1
            ),
        }
        planes.push(plane);
        names.push(path.file_name().unwrap().to_string_lossy().into_owned());
    }
    let (w, h) = dims.unwrap();
    let grid = Grid::new(w, h)?;
    let stack = ImageStack::from_planes(grid, &planes)?;
    Ok((grid, stack, names))
}

/// Reads a solver config (flat JSON, missing keys take defaults) and
/// validates it.
pub fn read_config(path: &Path) -> Result<SolverConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let config: SolverConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn csv_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.16e}"))
}

/// Writes the per-iteration trace. Columns are fixed; optional fields (the
/// final stall-check row of each inner loop carries no step data) are empty.
pub fn write_trace_csv(path: &Path, rows: &[InnerRecord]) -> Result<()> {
    let mut text = String::from("k,ell,f_plus_g,L,alpha,beta,delta,Delta,H_delta,q_dot_gradf\n");
    for r in rows {
        writeln!(
            text,
            "{},{},{:.16e},{},{},{},{:.16e},{:.16e},{:.16e},{}",
            r.outer,
            r.inner,
            r.f_plus_g,
            csv_opt(r.l),
            csv_opt(r.alpha),
            csv_opt(r.beta),
            r.delta,
            r.step_sq,
            r.h_delta,
            csv_opt(r.q_dot_gradf),
        )
        .expect("string write is infallible");
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// What a run did: inputs, outputs, configuration snapshot, and phase
/// timings. Every listed output exists once the command returns success.
#[derive(serde::Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs.insert(key.to_string(), path.display().to_string());
    }

    pub fn output(&mut self, key: &str, path: &Path) {
        self.outputs.insert(key.to_string(), path.display().to_string());
    }

    pub fn timing(&mut self, phase: &str, elapsed: std::time::Duration) {
        self.timings_ms.insert(phase.to_string(), elapsed.as_secs_f64() * 1e3);
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Token scanner for PGM/PFM headers: whitespace separates tokens, `#`
/// comments run to end of line (PGM allows them; PFM files in the wild use
/// them too), and the header ends with exactly one whitespace byte before
/// binary data.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderCursor { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_separators();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        ensure!(self.pos > start, "unexpected end of header");
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T>
    where
        T::Err: std::error::Error + Send + Sync + 'static,
    {
        let tok = self.token()?;
        tok.parse().with_context(|| format!("bad header token {tok:?}"))
    }

    fn expect_single_whitespace(&mut self) -> Result<()> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => {
                self.pos += 1;
                Ok(())
            }
            _ => bail!("missing whitespace between header and binary data"),
        }
    }
}
