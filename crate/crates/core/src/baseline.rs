//! Capacity-based separation baseline.
//!
//! The digital reference point: a capacity-achieving channel code delivers
//! `floor(rho * N * log2(1 + SNR))` error-free bits per image, and an image
//! codec spends them. [`capacity_bit_budget`] computes the budget;
//! [`Compressor`] abstracts the codec; [`separation_baseline`] walks the
//! grid levels and reports PSNR where the codec can meet the budget and
//! infeasibility where it cannot (at CIFAR sizes, low grid levels leave
//! fewer bits than a codec's fixed header).
//!
//! The real codec is BPG driven through its command-line tools (`bpgenc`
//! reads PNG, `bpgdec` emits PPM; both formats are handled here without
//! external crates — the PNG writer emits uncompressed deflate blocks,
//! which every decoder accepts). [`MockCompressor`] provides a stand-in
//! with a known rate curve for tests and for environments without BPG.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Error-free bits a capacity-achieving code delivers for `rho * source_dim`
/// complex channel uses at the given SNR.
pub fn capacity_bit_budget(rho: f64, source_dim: usize, snr_db: f64) -> u64 {
    let uses = rho * source_dim as f64;
    let capacity = (1.0 + 10f64.powf(snr_db / 10.0)).log2();
    (uses * capacity).floor() as u64
}

/// PSNR between two byte images (any layout, same length).
pub fn psnr_u8(a: &[u8], b: &[u8]) -> f64 {
    assert_eq!(a.len(), b.len());
    let se: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if se == 0 {
        return f64::INFINITY;
    }
    let mse = se as f64 / a.len() as f64;
    10.0 * (255.0 * 255.0 / mse).log10()
}

/// Channel-major planes (the dataset layout) to interleaved RGB rows.
pub fn planes_to_interleaved(planes: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(planes.len());
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push(planes[(c * h + y) * w + x]);
            }
        }
    }
    out
}

/// Interleaved RGB rows back to channel-major planes.
pub fn interleaved_to_planes(rgb: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0u8; rgb.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[(c * h + y) * w + x] = rgb[(y * w + x) * 3 + c];
            }
        }
    }
    out
}

/// Outcome of compressing one image under a bit budget.
#[derive(Debug, Clone)]
pub enum Compressed {
    /// The codec fit the budget: actual size and the decoded image
    /// (channel-major planes).
    Feasible { bits: u64, planes: Vec<u8> },
    /// Even the codec's smallest output exceeds the budget.
    Infeasible { min_bits: u64 },
}

/// An image codec that can aim at a bit budget.
pub trait Compressor {
    fn name(&self) -> &str;
    /// Compress `planes` (channel-major, `h` x `w`) as close to the budget
    /// as possible without exceeding it.
    fn compress_to_budget(
        &self,
        planes: &[u8],
        h: usize,
        w: usize,
        budget_bits: u64,
    ) -> Result<Compressed>;
}

/// Generic budget search over a quality ladder: qualities are ordered from
/// best (index 0) to worst, sizes nonincreasing along the ladder. Returns
/// the best quality that fits, or the minimum size if none does.
fn best_quality_under_budget(
    sizes_bits: &[u64],
    budget_bits: u64,
) -> std::result::Result<usize, u64> {
    let min = *sizes_bits.last().expect("quality ladder is never empty");
    if min > budget_bits {
        return Err(min);
    }
    // First index (best quality) whose size fits the budget.
    match sizes_bits.iter().position(|&b| b <= budget_bits) {
        Some(q) => Ok(q),
        None => Err(min),
    }
}

// ---------------------------------------------------------------------------
// Minimal PNG writer / PPM reader for the BPG tools' I/O formats.
// ---------------------------------------------------------------------------

fn crc32(data: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &byte in data {
        a = (a + byte as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

fn png_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend((data.len() as u32).to_be_bytes());
    out.extend(kind);
    out.extend(data);
    let mut crc_input = kind.to_vec();
    crc_input.extend(data);
    out.extend(crc32(&crc_input).to_be_bytes());
}

/// Encode interleaved RGB as a valid (uncompressed-deflate) PNG.
pub fn write_png_rgb(rgb: &[u8], h: usize, w: usize) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * h * w);
    let mut out = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    let mut ihdr = Vec::new();
    ihdr.extend((w as u32).to_be_bytes());
    ihdr.extend((h as u32).to_be_bytes());
    ihdr.extend([8, 2, 0, 0, 0]); // 8-bit, truecolor, deflate, none, no interlace
    png_chunk(&mut out, b"IHDR", &ihdr);

    // Raw image data: each scanline prefixed with filter type 0.
    let mut raw = Vec::with_capacity(h * (1 + 3 * w));
    for y in 0..h {
        raw.push(0);
        raw.extend_from_slice(&rgb[y * 3 * w..(y + 1) * 3 * w]);
    }
    // zlib stream with stored (uncompressed) deflate blocks.
    let mut idat = vec![0x78, 0x01];
    let mut chunks = raw.chunks(0xffff).peekable();
    while let Some(block) = chunks.next() {
        let last = chunks.peek().is_none();
        idat.push(if last { 1 } else { 0 });
        let len = block.len() as u16;
        idat.extend(len.to_le_bytes());
        idat.extend((!len).to_le_bytes());
        idat.extend(block);
    }
    idat.extend(adler32(&raw).to_be_bytes());
    png_chunk(&mut out, b"IDAT", &idat);
    png_chunk(&mut out, b"IEND", &[]);
    out
}

/// Parse a binary PPM (P6, maxval 255) into interleaved RGB.
pub fn read_ppm(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
    let bad = |msg: &str| Error::Data(format!("invalid PPM: {msg}"));
    let mut pos = 0usize;
    let mut token = || -> Result<Vec<u8>> {
        // Skip whitespace and `#` comments between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(bytes[start..pos].to_vec())
    };
    if token()? != b"P6" {
        return Err(bad("not P6"));
    }
    let parse = |t: Vec<u8>| -> Result<usize> {
        std::str::from_utf8(&t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("non-numeric header field"))
    };
    let w = parse(token()?)?;
    let h = parse(token()?)?;
    let maxval = parse(token()?)?;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    pos += 1;
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(bad("truncated pixel data"));
    }
    Ok((bytes[pos..pos + need].to_vec(), h, w))
}

// ---------------------------------------------------------------------------
// BPG via its command-line tools.
// ---------------------------------------------------------------------------

/// BPG quantizer ladder, best quality first (bpgenc: lower q = better).
const BPG_QUALITIES: std::ops::RangeInclusive<u32> = 0..=51;

pub struct BpgCompressor {
    encoder: PathBuf,
    decoder: PathBuf,
    workdir: tempfile::TempDir,
}

impl BpgCompressor {
    /// Use explicit tool paths.
    pub fn new(encoder: PathBuf, decoder: PathBuf) -> Result<Self> {
        let workdir = tempfile::tempdir()?;
        Ok(BpgCompressor { encoder, decoder, workdir })
    }

    /// Find `bpgenc`/`bpgdec` on PATH; None when not installed.
    pub fn locate() -> Option<Self> {
        let probe = |name: &str| -> Option<PathBuf> {
            let path = std::env::var_os("PATH")?;
            std::env::split_paths(&path).map(|d| d.join(name)).find(|p| p.is_file())
        };
        let encoder = probe("bpgenc")?;
        let decoder = probe("bpgdec")?;
        BpgCompressor::new(encoder, decoder).ok()
    }

    fn run(&self, cmd: &mut Command) -> Result<()> {
        let out = cmd.output().map_err(|e| {
            Error::CompressorUnavailable(format!(
                "cannot run {:?}: {e}; install libbpg or pass --mock-codec",
                cmd.get_program()
            ))
        })?;
        if !out.status.success() {
            return Err(Error::CompressorUnavailable(format!(
                "{:?} failed: {}",
                cmd.get_program(),
                String::from_utf8_lossy(&out.stderr)
            )));
        }
        Ok(())
    }

    fn encode_at(&self, png: &Path, q: u32) -> Result<Vec<u8>> {
        let bpg = self.workdir.path().join("tmp.bpg");
        self.run(
            Command::new(&self.encoder)
                .arg("-q")
                .arg(q.to_string())
                .arg("-o")
                .arg(&bpg)
                .arg(png),
        )?;
        Ok(std::fs::read(&bpg)?)
    }

    fn decode(&self, bpg_bytes: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
        let bpg = self.workdir.path().join("dec.bpg");
        let ppm = self.workdir.path().join("dec.ppm");
        std::fs::write(&bpg, bpg_bytes)?;
        self.run(Command::new(&self.decoder).arg("-o").arg(&ppm).arg(&bpg))?;
        read_ppm(&std::fs::read(&ppm)?)
    }
}

impl Compressor for BpgCompressor {
    fn name(&self) -> &str {
        "bpg"
    }

    fn compress_to_budget(
        &self,
        planes: &[u8],
        h: usize,
        w: usize,
        budget_bits: u64,
    ) -> Result<Compressed> {
        let png_path = self.workdir.path().join("src.png");
        let mut f = std::fs::File::create(&png_path)?;
        f.write_all(&write_png_rgb(&planes_to_interleaved(planes, h, w), h, w))?;
        drop(f);

        // Size is monotone in the quantizer; binary search the best quality
        // that fits, probing the worst first to detect infeasibility.
        let (q_best, q_worst) = BPG_QUALITIES.into_inner();
        let worst = self.encode_at(&png_path, q_worst)?;
        let min_bits = worst.len() as u64 * 8;
        if min_bits > budget_bits {
            return Ok(Compressed::Infeasible { min_bits });
        }
        let (mut lo, mut hi) = (q_best, q_worst); // invariant: hi fits
        let mut best = worst;
        while lo < hi {
            let mid = (lo + hi) / 2;
            let data = self.encode_at(&png_path, mid)?;
            if data.len() as u64 * 8 <= budget_bits {
                best = data;
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let bits = best.len() as u64 * 8;
        let (rgb, dh, dw) = self.decode(&best)?;
        if (dh, dw) != (h, w) {
            return Err(Error::Data(format!(
                "decoder returned {dh}x{dw} for a {h}x{w} image"
            )));
        }
        Ok(Compressed::Feasible { bits, planes: interleaved_to_planes(&rgb, h, w) })
    }
}

/// Test stand-in with a known rate curve: quality `q` in 0..=8 costs
/// `header + (8 - q) * 96` bits and quantizes pixels to steps of `2^q`.
pub struct MockCompressor {
    pub header_bits: u64,
}

impl Default for MockCompressor {
    fn default() -> Self {
        MockCompressor { header_bits: 160 }
    }
}

impl MockCompressor {
    fn sizes(&self) -> Vec<u64> {
        (0..=8).map(|q| self.header_bits + (8 - q) * 96).collect()
    }
}

impl Compressor for MockCompressor {
    fn name(&self) -> &str {
        "mock"
    }

    fn compress_to_budget(
        &self,
        planes: &[u8],
        _h: usize,
        _w: usize,
        budget_bits: u64,
    ) -> Result<Compressed> {
        let sizes = self.sizes();
        match best_quality_under_budget(&sizes, budget_bits) {
            Err(min_bits) => Ok(Compressed::Infeasible { min_bits }),
            Ok(q) => {
                let step = 1u16 << q;
                let decoded = planes
                    .iter()
                    .map(|&p| {
                        let snapped = (p as u16 / step) * step + step / 2;
                        snapped.min(255) as u8
                    })
                    .collect();
                Ok(Compressed::Feasible { bits: sizes[q], planes: decoded })
            }
        }
    }
}

/// One grid level of the separation baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRow {
    pub codec: String,
    pub level: usize,
    pub rho: f64,
    pub snr_db: f64,
    pub budget_bits: u64,
    pub images: usize,
    /// Images the codec fit under the budget.
    pub feasible: usize,
    /// Mean PSNR over feasible images (absent when none fit).
    pub psnr_db: Option<f64>,
    /// Mean bits actually spent on feasible images.
    pub mean_bits: Option<f64>,
}

/// Evaluate the separation baseline at every grid level for one SNR.
pub fn separation_baseline(
    test: &Dataset,
    cfg: &ExperimentConfig,
    snr_db: f64,
    comp: &dyn Compressor,
    max_images: Option<usize>,
) -> Result<Vec<BaselineRow>> {
    let [c, h, w] = test.shape();
    if c != 3 {
        return Err(Error::Data("separation baseline expects RGB images".into()));
    }
    let dims = cfg.dimensions()?;
    let n = max_images.unwrap_or(usize::MAX).min(test.len());
    if n == 0 {
        return Err(Error::Data("empty test set".into()));
    }
    let mut rows = Vec::with_capacity(cfg.grid.levels);
    for level in 1..=cfg.grid.levels {
        let rho = cfg.grid.rho_at(level);
        let budget = capacity_bit_budget(rho, dims.source_dim, snr_db);
        let mut feasible = 0usize;
        let mut psnr_sum = 0.0;
        let mut bits_sum = 0u64;
        for i in 0..n {
            let planes = test.image_bytes(i);
            match comp.compress_to_budget(planes, h, w, budget)? {
                Compressed::Feasible { bits, planes: decoded } => {
                    feasible += 1;
                    psnr_sum += psnr_u8(planes, &decoded);
                    bits_sum += bits;
                }
                Compressed::Infeasible { .. } => {}
            }
        }
        rows.push(BaselineRow {
            codec: comp.name().to_string(),
            level,
            rho,
            snr_db,
            budget_bits: budget,
            images: n,
            feasible,
            psnr_db: (feasible > 0).then(|| psnr_sum / feasible as f64),
            mean_bits: (feasible > 0).then(|| bits_sum as f64 / feasible as f64),
        });
        log::info!(
            "baseline level {level}: budget {budget} bits, {feasible}/{n} feasible"
        );
    }
    Ok(rows)
}

/// Write baseline rows as CSV with a small metadata header.
pub fn write_baseline_csv(
    path: &Path,
    rows: &[BaselineRow],
    cfg: &ExperimentConfig,
    dataset: &str,
) -> Result<()> {
    let mut text = format!(
        "# config_hash={}\n# dataset={dataset}\n",
        cfg.config_hash()
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Eval(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Eval(e.to_string()))?;
    text.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    std::fs::write(path, text)?;
    Ok(())
}

/// Baseline rows plus the dataset they were computed on.
#[derive(Debug, Clone)]
pub struct BaselineTable {
    pub dataset: String,
    pub rows: Vec<BaselineRow>,
}

/// Read back a CSV written by [`write_baseline_csv`].
pub fn read_baseline_csv(path: &Path) -> Result<BaselineTable> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Eval(format!("cannot read {}: {e}", path.display())))?;
    let mut dataset = String::new();
    let mut body = String::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                if k == "dataset" {
                    dataset = v.to_string();
                }
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut rows = Vec::new();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    for row in r.deserialize() {
        rows.push(row.map_err(|e| Error::Eval(e.to_string()))?);
    }
    Ok(BaselineTable { dataset, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::tests::toy_config;

    #[test]
    fn budget_matches_hand_computed_reference() {
        // 1/8 of a 3072-dimensional source at 7 dB: 384 channel uses at
        // log2(1 + 10^0.7) ~ 2.5880 bits each = 993.78 -> 993.
        assert_eq!(capacity_bit_budget(0.125, 3072, 7.0), 993);
        assert_eq!(capacity_bit_budget(0.0, 3072, 7.0), 0);
        // 384 uses at log2(1.1) bits each: 52.8 floors to 52.
        assert_eq!(capacity_bit_budget(0.125, 3072, -10.0), 52);
        // Tiny rate at very low SNR floors to zero.
        assert_eq!(capacity_bit_budget(0.001, 3072, -30.0), 0);
    }

    #[test]
    fn budget_is_monotone_in_rho_and_snr() {
        let mut prev = 0;
        for l in 1..=8 {
            let b = capacity_bit_budget(l as f64 / 32.0, 3072, 7.0);
            assert!(b >= prev);
            prev = b;
        }
        let mut prev = 0;
        for snr in [-10.0, 0.0, 4.0, 7.0, 10.0, 20.0] {
            let b = capacity_bit_budget(0.125, 3072, snr);
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn psnr_u8_oracle() {
        assert_eq!(psnr_u8(&[1, 2, 3], &[1, 2, 3]), f64::INFINITY);
        // Uniform error of 5: mse = 25, psnr = 10 log10(65025/25).
        let a = [10u8; 100];
        let b = [15u8; 100];
        let expect = 10.0 * (65025.0f64 / 25.0).log10();
        assert!((psnr_u8(&a, &b) - expect).abs() < 1e-12);
    }

    #[test]
    fn interleave_round_trip() {
        let planes: Vec<u8> = (0..3 * 4 * 5).map(|i| i as u8).collect();
        let rgb = planes_to_interleaved(&planes, 4, 5);
        assert_eq!(rgb[0], planes[0]); // r(0,0)
        assert_eq!(rgb[1], planes[20]); // g(0,0)
        assert_eq!(rgb[2], planes[40]); // b(0,0)
        assert_eq!(interleaved_to_planes(&rgb, 4, 5), planes);
    }

    #[test]
    fn quality_search_picks_best_fit() {
        let sizes = [900, 700, 500, 300, 200];
        assert_eq!(best_quality_under_budget(&sizes, 1000), Ok(0));
        assert_eq!(best_quality_under_budget(&sizes, 700), Ok(1));
        assert_eq!(best_quality_under_budget(&sizes, 699), Ok(2));
        assert_eq!(best_quality_under_budget(&sizes, 200), Ok(4));
        assert_eq!(best_quality_under_budget(&sizes, 199), Err(200));
    }

    #[test]
    fn png_writer_emits_recoverable_scanlines() {
        let (h, w) = (3, 130); // wide enough to span two stored blocks? (391+3 bytes)
        let rgb: Vec<u8> = (0..3 * h * w).map(|i| (i % 251) as u8).collect();
        let png = write_png_rgb(&rgb, h, w);
        assert_eq!(&png[..8], &[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a]);

        // Walk the chunks, checking CRCs and harvesting IDAT.
        let mut pos = 8;
        let mut idat = Vec::new();
        let mut kinds = Vec::new();
        while pos < png.len() {
            let len = u32::from_be_bytes(png[pos..pos + 4].try_into().unwrap()) as usize;
            let kind = &png[pos + 4..pos + 8];
            let data = &png[pos + 8..pos + 8 + len];
            let crc = u32::from_be_bytes(png[pos + 8 + len..pos + 12 + len].try_into().unwrap());
            let mut check = kind.to_vec();
            check.extend(data);
            assert_eq!(crc, crc32(&check), "bad CRC in {kind:?}");
            kinds.push(kind.to_vec());
            if kind == b"IDAT" {
                idat.extend_from_slice(data);
            }
            pos += 12 + len;
        }
        assert_eq!(kinds[0], b"IHDR");
        assert_eq!(kinds.last().unwrap(), b"IEND");

        // Unpack the stored deflate blocks and compare with the scanlines.
        let mut raw = Vec::new();
        let mut p = 2; // skip zlib header
        loop {
            let last = idat[p] & 1 == 1;
            let len = u16::from_le_bytes([idat[p + 1], idat[p + 2]]) as usize;
            let nlen = u16::from_le_bytes([idat[p + 3], idat[p + 4]]);
            assert_eq!(!(len as u16), nlen);
            raw.extend_from_slice(&idat[p + 5..p + 5 + len]);
            p += 5 + len;
            if last {
                break;
            }
        }
        assert_eq!(adler32(&raw), u32::from_be_bytes(idat[p..p + 4].try_into().unwrap()));
        let mut expect = Vec::new();
        for y in 0..h {
            expect.push(0);
            expect.extend_from_slice(&rgb[y * 3 * w..(y + 1) * 3 * w]);
        }
        assert_eq!(raw, expect);
    }

    #[test]
    fn ppm_reader_handles_comments_and_rejects_truncation() {
        let mut ppm = b"P6\n# a comment\n 3 2\n255\n".to_vec();
        let rgb: Vec<u8> = (0..18).collect();
        ppm.extend(&rgb);
        let (pixels, h, w) = read_ppm(&ppm).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(pixels, rgb);
        assert!(read_ppm(&ppm[..ppm.len() - 1]).is_err());
        assert!(read_ppm(b"P5\n1 1\n255\nx").is_err());
    }

    #[test]
    fn mock_compressor_obeys_budgets() {
        let comp = MockCompressor::default(); // sizes 928..=160 step 96
        let img = vec![100u8; 3 * 32 * 32];
        match comp.compress_to_budget(&img, 32, 32, 20_000).unwrap() {
            Compressed::Feasible { bits, planes } => {
                assert_eq!(bits, 928); // best quality fits
                assert_eq!(planes, img); // q=0 quantizes to steps of 1
            }
            other => panic!("{other:?}"),
        }
        match comp.compress_to_budget(&img, 32, 32, 100).unwrap() {
            Compressed::Infeasible { min_bits } => assert_eq!(min_bits, 160),
            other => panic!("{other:?}"),
        }
        // Tight budget: coarser quantization, lower fidelity, still under.
        match comp.compress_to_budget(&img, 32, 32, 300).unwrap() {
            Compressed::Feasible { bits, planes } => {
                assert!(bits <= 300);
                assert_ne!(planes, img);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn separation_baseline_reports_feasibility_per_level() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let test = Dataset::synthetic(6, [3, 32, 32], 3);
        // Toy grid at 7 dB: budgets 496/993/1490/1987 bits for rho = l/16.
        // A 700-bit floor makes level 1 infeasible and the rest feasible.
        let comp = MockCompressor { header_bits: 700 };
        let rows = separation_baseline(&test, &cfg, 7.0, &comp, Some(6)).unwrap();
        assert_eq!(rows.len(), cfg.grid.levels);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.level, i + 1);
            assert_eq!(
                row.budget_bits,
                capacity_bit_budget(row.rho, 3072, 7.0)
            );
            assert_eq!(row.images, 6);
        }
        // Budgets grow with level, so feasibility and PSNR are monotone.
        for pair in rows.windows(2) {
            assert!(pair[1].feasible >= pair[0].feasible);
            if let (Some(a), Some(b)) = (pair[0].psnr_db, pair[1].psnr_db) {
                assert!(b >= a);
            }
        }
        assert_eq!(rows[0].feasible, 0, "496-bit budget cannot fit a 700-bit floor");
        assert!(rows[0].psnr_db.is_none());
        assert_eq!(rows[1].feasible, 6);
        assert!(rows[1].psnr_db.unwrap().is_finite());

        // An impossible header makes everything infeasible.
        let comp = MockCompressor { header_bits: 10_000_000 };
        let rows = separation_baseline(&test, &cfg, 7.0, &comp, Some(2)).unwrap();
        assert!(rows.iter().all(|r| r.feasible == 0 && r.psnr_db.is_none()));
    }

    #[test]
    fn baseline_csv_includes_metadata() {
        let cfg = toy_config("adaptive-bandwidth", "varying-features");
        let test = Dataset::synthetic(2, [3, 32, 32], 3);
        let rows =
            separation_baseline(&test, &cfg, 7.0, &MockCompressor::default(), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("baseline.csv");
        write_baseline_csv(&path, &rows, &cfg, "synthetic").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash="));
        assert!(text.contains("codec,level,rho"));
        assert_eq!(text.lines().count(), 2 + 1 + cfg.grid.levels);

        // Read-back inverts the writer, including the Option columns.
        let table = read_baseline_csv(&path).unwrap();
        assert_eq!(table.dataset, "synthetic");
        assert_eq!(table.rows.len(), rows.len());
        for (a, b) in table.rows.iter().zip(&rows) {
            assert_eq!(a.codec, b.codec);
            assert_eq!(a.level, b.level);
            assert_eq!(a.budget_bits, b.budget_bits);
            assert_eq!(a.psnr_db.is_some(), b.psnr_db.is_some());
        }
    }
}
