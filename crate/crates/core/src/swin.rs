//! Swin-transformer backbone: windowed multi-head self-attention with
//! relative position bias, arranged in regular/shifted block pairs, plus the
//! resolution-changing layers (patch embedding, patch merging, patch
//! division).
//!
//! Feature maps flow through the backbone in `(batch, h, w, c)` layout so
//! window partitioning is pure reshape/permute. A block pair applies, with
//! pre-norm and residuals around each half:
//!
//! ```text
//! x = x + W-MSA(LN(x));  x = x + MLP(LN(x))     // regular windows
//! x = x + SW-MSA(LN(x)); x = x + MLP(LN(x))     // windows shifted by w/2
//! ```
//!
//! The shifted half cyclically rolls the map by half a window and masks
//! attention between tokens that were not neighbours before the roll, which
//! is what lets information cross window boundaries. When a map is no larger
//! than one window the shift degenerates: the window shrinks to the map and
//! the shift is dropped (single-window attention is already global). Maps
//! whose sides are not multiples of the window are zero-padded for attention
//! and cropped straight after.

use candle_core::{IndexOp, Tensor};

use crate::error::{Error, Result};
use crate::nn::{Dense, Init, LayerNorm, Mlp, ParamStore, INIT_STD};

/// Fill value for masked attention logits; large enough to zero out the
/// softmax weight at f32 precision.
const MASK_FILL: f64 = -100.0;

/// A `(batch, h, w, c)` feature map plus the backbone stage it belongs to.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    data: Tensor,
    stage: usize,
}

impl FeatureMap {
    pub fn new(data: Tensor, stage: usize) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::Shape(format!(
                "feature map must be (batch, h, w, c), got {:?}",
                data.dims()
            )));
        }
        Ok(FeatureMap { data, stage })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn batch(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn channels(&self) -> usize {
        self.data.dims()[3]
    }
}

/// Split `(b, h, w, c)` into non-overlapping `ws x ws` windows:
/// `(b * h/ws * w/ws, ws*ws, c)`. Requires `ws` to divide both sides.
pub fn window_partition(x: &Tensor, ws: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if h % ws != 0 || w % ws != 0 {
        return Err(Error::Shape(format!(
            "cannot window {h}x{w} map with window {ws}"
        )));
    }
    Ok(x
        .reshape((b, h / ws, ws, w / ws, ws, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b * (h / ws) * (w / ws), ws * ws, c))?)
}

/// Inverse of [`window_partition`].
pub fn window_reverse(windows: &Tensor, ws: usize, h: usize, w: usize) -> Result<Tensor> {
    let (nw, t, c) = windows.dims3()?;
    if t != ws * ws || nw % ((h / ws) * (w / ws)) != 0 {
        return Err(Error::Shape(format!(
            "cannot reassemble {nw} windows of {t} tokens into {h}x{w}"
        )));
    }
    let b = nw / ((h / ws) * (w / ws));
    Ok(windows
        .reshape((b, h / ws, w / ws, ws, ws, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((b, h, w, c))?)
}

/// Flat relative-position index for a `ws x ws` window into a bias table
/// sized for `table_ws >= ws`: entry `(i, j)` is
/// `(dy + table_ws - 1) * (2 table_ws - 1) + (dx + table_ws - 1)` for the
/// offset between tokens `i` and `j`. `ws < table_ws` happens when a feature
/// map is smaller than the configured window; its offsets are a subset of
/// the table's.
fn relative_position_index(ws: usize, table_ws: usize) -> Vec<u32> {
    let t = ws * ws;
    let span = 2 * table_ws as i64 - 1;
    let mut idx = Vec::with_capacity(t * t);
    for i in 0..t {
        let (yi, xi) = (i / ws, i % ws);
        for j in 0..t {
            let (yj, xj) = (j / ws, j % ws);
            let dy = yi as i64 - yj as i64 + table_ws as i64 - 1;
            let dx = xi as i64 - xj as i64 + table_ws as i64 - 1;
            idx.push((dy * span + dx) as u32);
        }
    }
    idx
}

/// Pairwise attention mask for shifted windows on an `h x w` map: logits
/// between tokens from different pre-roll regions get [`MASK_FILL`]. Shape
/// `(windows_per_image, ws*ws, ws*ws)`.
///
/// Region labels are assigned in the *rolled* coordinate system: rolling by
/// `-shift` moves the wrap-around seams to the last `shift` rows/columns, so
/// the three bands `[0, n-ws)`, `[n-ws, n-shift)`, `[n-shift, n)` along each
/// axis separate cells that were not neighbours before the roll. Interior
/// windows land inside one band pair and stay fully open.
fn shift_mask(h: usize, w: usize, ws: usize, shift: usize, dev: &candle_core::Device) -> Result<Tensor> {
    let spans = |n: usize| [(0, n - ws), (n - ws, n - shift), (n - shift, n)];
    let mut region = vec![0f32; h * w];
    let mut id = 0f32;
    for (y0, y1) in spans(h) {
        for (x0, x1) in spans(w) {
            for y in y0..y1 {
                for x in x0..x1 {
                    region[y * w + x] = id;
                }
            }
            id += 1.0;
        }
    }
    let region = Tensor::from_vec(region, (1, h, w, 1), dev)?;
    let windows = window_partition(&region, ws)?; // (nw, t, 1)
    let labels = windows.to_vec3::<f32>()?;
    let t = ws * ws;
    let mut mask = Vec::with_capacity(labels.len() * t * t);
    for win in &labels {
        for i in 0..t {
            for j in 0..t {
                mask.push(if win[i][0] == win[j][0] { 0f32 } else { MASK_FILL as f32 });
            }
        }
    }
    Ok(Tensor::from_vec(mask, (labels.len(), t, t), dev)?)
}

/// Multi-head self-attention inside one window, with a learned relative
/// position bias shared across windows.
pub struct WindowAttention {
    qkv: Dense,
    proj: Dense,
    bias_table: Tensor,
    bias_index: Tensor,
    heads: usize,
    head_dim: usize,
    window: usize,
}

impl WindowAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
    ) -> Result<Self> {
        if dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {dim} not divisible by {heads} heads"
            )));
        }
        let qkv = Dense::new(store, &format!("{name}.qkv"), dim, 3 * dim)?;
        let proj = Dense::new(store, &format!("{name}.proj"), dim, dim)?;
        let table_len = (2 * window - 1) * (2 * window - 1);
        let bias_table = store.take(
            &format!("{name}.rel_bias"),
            &[table_len, heads],
            Init::TruncNormal { std: INIT_STD },
        )?;
        let bias_index = Tensor::from_vec(
            relative_position_index(window, window),
            window * window * window * window,
            store.device(),
        )?;
        Ok(WindowAttention {
            qkv,
            proj,
            bias_table,
            bias_index,
            heads,
            head_dim: dim / heads,
            window,
        })
    }

    /// Relative-position bias `(1, heads, t, t)` for an effective window of
    /// `ws` (`ws < self.window` when the map is smaller than the window).
    fn bias(&self, ws: usize) -> Result<Tensor> {
        let t = ws * ws;
        let index = if ws == self.window {
            self.bias_index.clone()
        } else {
            Tensor::from_vec(
                relative_position_index(ws, self.window),
                t * t,
                self.bias_table.device(),
            )?
        };
        Ok(self
            .bias_table
            .index_select(&index, 0)?
            .reshape((t, t, self.heads))?
            .permute((2, 0, 1))?
            .unsqueeze(0)?)
    }

    /// `windows`: `(num_windows, ws*ws, dim)` for effective window `ws`;
    /// `mask`: optional `(windows_per_image, ws*ws, ws*ws)` additive logit
    /// mask.
    pub fn forward(&self, windows: &Tensor, mask: Option<&Tensor>, ws: usize) -> Result<Tensor> {
        let (nw, t, dim) = windows.dims3()?;
        if t != ws * ws || ws > self.window {
            return Err(Error::Shape(format!(
                "attention got {t} tokens for effective window {ws} (configured {})",
                self.window
            )));
        }
        let qkv = self
            .qkv
            .forward(windows)?
            .reshape((nw, t, 3, self.heads, self.head_dim))?
            .permute((2, 0, 3, 1, 4))?; // (3, nw, heads, t, head_dim)
        let q = (qkv.i(0)?.contiguous()? * (self.head_dim as f64).powf(-0.5))?;
        let k = qkv.i(1)?.contiguous()?;
        let v = qkv.i(2)?.contiguous()?;

        let mut scores = q.matmul(&k.transpose(2, 3)?.contiguous()?)?; // (nw, heads, t, t)
        scores = scores.broadcast_add(&self.bias(ws)?)?;
        if let Some(mask) = mask {
            let per_img = mask.dims()[0];
            let b = nw / per_img;
            scores = scores
                .reshape((b, per_img, self.heads, t, t))?
                .broadcast_add(&mask.reshape((1, per_img, 1, t, t))?)?
                .reshape((nw, self.heads, t, t))?;
        }
        let attn = crate::nn::softmax_last(&scores)?;
        let out = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((nw, t, dim))?;
        self.proj.forward(&out)
    }
}

/// One transformer block: pre-norm attention (optionally shifted) and a
/// pre-norm MLP, each with a residual connection.
struct SwinBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    mlp: Mlp,
    window: usize,
    shifted: bool,
}

impl SwinBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        mlp_ratio: f64,
        shifted: bool,
    ) -> Result<Self> {
        Ok(SwinBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim)?,
            attn: WindowAttention::new(store, &format!("{name}.attn"), dim, heads, window)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(
                store,
                &format!("{name}.mlp"),
                dim,
                (dim as f64 * mlp_ratio).round() as usize,
            )?,
            window,
            shifted,
        })
    }

    /// Effective window and shift for an `h x w` map: maps no larger than
    /// one window use a map-sized window with no shift.
    fn layout(&self, h: usize, w: usize) -> (usize, usize) {
        let ws = self.window.min(h).min(w);
        let shift = if self.shifted && (h > ws || w > ws) { ws / 2 } else { 0 };
        (ws, shift)
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, h, w, _) = x.dims4()?;
        let (ws, shift) = self.layout(h, w);

        let shortcut = x;
        let mut t = self.norm1.forward(x)?;
        // Pad to window multiples; attention runs on the padded map.
        let (hp, wp) = (h.div_ceil(ws) * ws, w.div_ceil(ws) * ws);
        if hp != h {
            t = t.pad_with_zeros(1, 0, hp - h)?;
        }
        if wp != w {
            t = t.pad_with_zeros(2, 0, wp - w)?;
        }
        let mask = if shift > 0 {
            t = t.roll(-(shift as i32), 1)?.roll(-(shift as i32), 2)?;
            Some(shift_mask(hp, wp, ws, shift, t.device())?)
        } else {
            None
        };
        let windows = window_partition(&t, ws)?;
        let attended = self.attn.forward(&windows, mask.as_ref(), ws)?;
        let mut t = window_reverse(&attended, ws, hp, wp)?;
        if shift > 0 {
            t = t.roll(shift as i32, 1)?.roll(shift as i32, 2)?;
        }
        if hp != h {
            t = t.narrow(1, 0, h)?;
        }
        if wp != w {
            t = t.narrow(2, 0, w)?;
        }
        let x = (shortcut + t)?;
        let t = self.mlp.forward(&self.norm2.forward(&x)?)?;
        shortcut_add(&x, &t)
    }
}

fn shortcut_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a + b)?)
}

/// A regular block followed by a shifted block — the unit the stage depths
/// `M_i` count in pairs.
pub struct SwinBlockPair {
    regular: SwinBlock,
    shifted: SwinBlock,
}

impl SwinBlockPair {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        mlp_ratio: f64,
    ) -> Result<Self> {
        Ok(SwinBlockPair {
            regular: SwinBlock::new(store, &format!("{name}.a"), dim, heads, window, mlp_ratio, false)?,
            shifted: SwinBlock::new(store, &format!("{name}.b"), dim, heads, window, mlp_ratio, true)?,
        })
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let out = self.shifted.forward(&self.regular.forward(fm.tensor())?)?;
        FeatureMap::new(out, fm.stage())
    }
}

/// Non-overlapping `p x p` pixel patches, linearly embedded to `dim`.
/// `(b, c_img, H, W)` pixels become a `(b, H/p, W/p, dim)` map.
pub struct PatchEmbed {
    proj: Dense,
    patch: usize,
    in_channels: usize,
}

impl PatchEmbed {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        patch: usize,
        dim: usize,
    ) -> Result<Self> {
        Ok(PatchEmbed {
            proj: Dense::new(store, name, in_channels * patch * patch, dim)?,
            patch,
            in_channels,
        })
    }

    pub fn forward(&self, images: &Tensor) -> Result<FeatureMap> {
        let (b, c, h, w) = images.dims4()?;
        let p = self.patch;
        if c != self.in_channels || h % p != 0 || w % p != 0 {
            return Err(Error::Shape(format!(
                "cannot embed {c}x{h}x{w} images with {p}x{p} patches of {} channels",
                self.in_channels
            )));
        }
        let tokens = images
            .reshape((b, c, h / p, p, w / p, p))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, h / p, w / p, c * p * p))?;
        FeatureMap::new(self.proj.forward(&tokens)?, 0)
    }
}

/// 2x2 token merging: concatenate each 2x2 neighbourhood (4x the input
/// width) and project to `out_dim`. Halves both sides, advances the stage
/// index.
pub struct PatchMerging {
    proj: Dense,
}

impl PatchMerging {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        Ok(PatchMerging { proj: Dense::new(store, name, 4 * in_dim, out_dim)? })
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let (b, h, w, c) = fm.tensor().dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "cannot merge patches of an odd-sized {h}x{w} map"
            )));
        }
        let grouped = fm
            .tensor()
            .reshape((b, h / 2, 2, w / 2, 2, c))?
            .permute((0, 1, 3, 2, 4, 5))?
            .contiguous()?
            .reshape((b, h / 2, w / 2, 4 * c))?;
        FeatureMap::new(self.proj.forward(&grouped)?, fm.stage() + 1)
    }
}

/// Inverse resolution step of [`PatchMerging`]: project c to 4c and pixel-
/// shuffle the four channel groups into a 2x2 spatial neighbourhood. Doubles
/// both sides, decreases the stage index.
pub struct PatchDivision {
    proj: Dense,
}

impl PatchDivision {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(PatchDivision { proj: Dense::new(store, name, dim, 4 * dim)? })
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let expanded = self.proj.forward(fm.tensor())?;
        let (b, h, w, c4) = expanded.dims4()?;
        let c = c4 / 4;
        let out = expanded
            .reshape((b, h, w, 2, 2, c))?
            .permute((0, 1, 3, 2, 4, 5))?
            .contiguous()?
            .reshape((b, 2 * h, 2 * w, c))?;
        FeatureMap::new(out, fm.stage().saturating_sub(1))
    }
}
