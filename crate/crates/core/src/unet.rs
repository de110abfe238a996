//! Configurable U-Net used for both networks of the cascade.
//!
//! Layout for `encoder_channels = [c0, c1, ..., cD]`:
//!
//! ```text
//! enc0:  conv(in -> c0), conv(c0 -> c0)                 full resolution
//! down0: stride-2 conv(c0 -> c0)
//! enc1:  conv(c0 -> c1), conv(c1 -> c1)                 1/2
//! ...
//! decK:  upsample x2, conv(c(K+1) -> cK), concat skip,
//!        conv(2cK -> cK), conv(cK -> cK)
//! head:  1x1 conv(c0 -> out) with bias, producing logits
//! ```
//!
//! Every 3x3 convolution is followed by instance norm and relu. Those
//! convolutions carry no bias: instance norm removes any per-channel offset.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelFileError, Result};
use crate::nn::kernels;
use crate::nn::{Graph, Padding, ParamId, ParamStore, Var};
use crate::tensor::{Shape4, Tensor4};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub in_channels: usize,
    #[serde(default = "default_out_channels")]
    pub out_channels: usize,
    #[serde(default = "default_encoder_channels")]
    pub encoder_channels: Vec<usize>,
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
}

fn default_out_channels() -> usize {
    1
}

fn default_encoder_channels() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

fn default_kernel_size() -> usize {
    3
}

impl UNetConfig {
    pub fn new(in_channels: usize, encoder_channels: Vec<usize>) -> Self {
        Self {
            in_channels,
            out_channels: 1,
            encoder_channels,
            kernel_size: 3,
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Spatial extents accepted by the network must be multiples of this.
    pub fn spatial_factor(&self) -> usize {
        1 << self.depth().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("u-net channel counts must be at least 1"));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::config(
                "u-net encoder_channels must be a non-empty list of positive widths",
            ));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::config("u-net kernel_size must be odd"));
        }
        Ok(())
    }

    /// Canonical `key=value` lines, used by the model file and config hashing.
    pub fn to_canonical_text(&self) -> String {
        let widths: Vec<String> = self
            .encoder_channels
            .iter()
            .map(|c| c.to_string())
            .collect();
        format!(
            "in_channels={}\nout_channels={}\nencoder_channels={}\nkernel_size={}\n",
            self.in_channels,
            self.out_channels,
            widths.join(","),
            self.kernel_size
        )
    }

    fn from_canonical_map(map: &BTreeMap<String, String>) -> Result<Self, ModelFileError> {
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| ModelFileError::BadConfig(format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize, ModelFileError> {
            get(k)?
                .parse()
                .map_err(|_| ModelFileError::BadConfig(format!("bad value for {k}")))
        };
        let encoder_channels = get("encoder_channels")?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| ModelFileError::BadConfig("bad encoder_channels".into()))?;
        let cfg = UNetConfig {
            in_channels: num("in_channels")?,
            out_channels: num("out_channels")?,
            encoder_channels,
            kernel_size: num("kernel_size")?,
        };
        cfg.validate()
            .map_err(|e| ModelFileError::BadConfig(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
struct ConvBlock {
    weight: ParamId,
    scale: ParamId,
    shift: ParamId,
    stride: usize,
}

#[derive(Clone, Debug)]
struct DecoderLevel {
    up: ConvBlock,
    convs: [ConvBlock; 2],
}

#[derive(Clone, Debug)]
struct Layout {
    encoder: Vec<[ConvBlock; 2]>,
    down: Vec<ConvBlock>,
    /// Indexed by the encoder level the decoder stage returns to.
    decoder: Vec<DecoderLevel>,
    head_weight: ParamId,
    head_bias: ParamId,
}

/// Builds the parameter layout, asking `init` for the initial value of each
/// tensor in construction order.
fn build_layout(
    cfg: &UNetConfig,
    store: &mut ParamStore,
    init: &mut dyn FnMut(&str, Shape4, InitKind) -> Tensor4,
) -> Layout {
    let k = cfg.kernel_size;
    let mut block = |store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride| {
        let wname = format!("{name}.weight");
        let weight = store.add(
            &wname,
            init(&wname, Shape4::new(cout, cin, k, k), InitKind::Kaiming),
        );
        let sname = format!("{name}.norm.scale");
        let scale = store.add(
            &sname,
            init(&sname, Shape4::new(1, cout, 1, 1), InitKind::Ones),
        );
        let hname = format!("{name}.norm.shift");
        let shift = store.add(
            &hname,
            init(&hname, Shape4::new(1, cout, 1, 1), InitKind::Zeros),
        );
        ConvBlock {
            weight,
            scale,
            shift,
            stride,
        }
    };

    let widths = &cfg.encoder_channels;
    let mut encoder = Vec::new();
    let mut down = Vec::new();
    let mut cin = cfg.in_channels;
    for (level, &c) in widths.iter().enumerate() {
        if level > 0 {
            let prev = widths[level - 1];
            down.push(block(store, &format!("down{}", level - 1), prev, prev, 2));
            cin = prev;
        }
        let a = block(store, &format!("enc{level}.conv1"), cin, c, 1);
        let b = block(store, &format!("enc{level}.conv2"), c, c, 1);
        encoder.push([a, b]);
    }
    let mut decoder = Vec::new();
    for level in (0..widths.len().saturating_sub(1)).rev() {
        let (c, below) = (widths[level], widths[level + 1]);
        let up = block(store, &format!("dec{level}.up"), below, c, 1);
        let a = block(store, &format!("dec{level}.conv1"), 2 * c, c, 1);
        let b = block(store, &format!("dec{level}.conv2"), c, c, 1);
        decoder.push(DecoderLevel { up, convs: [a, b] });
    }
    decoder.reverse();
    let head_weight = store.add(
        "head.weight",
        init(
            "head.weight",
            Shape4::new(cfg.out_channels, widths[0], 1, 1),
            InitKind::Kaiming,
        ),
    );
    let head_bias = store.add(
        "head.bias",
        init(
            "head.bias",
            Shape4::new(1, cfg.out_channels, 1, 1),
            InitKind::Zeros,
        ),
    );
    Layout {
        encoder,
        down,
        decoder,
        head_weight,
        head_bias,
    }
}

#[derive(Clone, Copy, Debug)]
enum InitKind {
    Kaiming,
    Ones,
    Zeros,
}

/// A realized U-Net: its configuration plus parameters.
#[derive(Clone, Debug)]
pub struct UNetModel {
    config: UNetConfig,
    params: ParamStore,
    layout: Layout,
    /// Hash of the run configuration that produced this model, if any.
    pub run_hash: Option<String>,
}

impl PartialEq for UNetModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// Builds a U-Net with Kaiming-uniform (fan-in) weights drawn from `seed`.
///
/// Values are rounded to `f32`, the precision they are stored at on disk.
pub fn build_unet(config: &UNetConfig, seed: u64) -> Result<UNetModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = |_: &str, shape: Shape4, kind: InitKind| match kind {
        InitKind::Kaiming => {
            let fan_in = (shape.c * shape.h * shape.w) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let data = (0..shape.numel())
                .map(|_| rng.random_range(-bound..bound) as f32 as f64)
                .collect();
            Tensor4::from_vec(shape, data).expect("numel matches")
        }
        InitKind::Ones => Tensor4::full(shape, 1.0),
        InitKind::Zeros => Tensor4::zeros(shape),
    };
    let mut params = ParamStore::new();
    let layout = build_layout(config, &mut params, &mut init);
    Ok(UNetModel {
        config: config.clone(),
        params,
        layout,
        run_hash: None,
    })
}

impl UNetModel {
    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.layout.head_weight, self.layout.head_bias)
    }

    pub fn check_input(&self, shape: Shape4) -> Result<()> {
        if shape.c != self.config.in_channels {
            return Err(Error::config(format!(
                "model expects {} input channels, batch {shape} has {}",
                self.config.in_channels, shape.c
            )));
        }
        let f = self.config.spatial_factor();
        if shape.h == 0 || shape.w == 0 || !shape.h.is_multiple_of(f) || !shape.w.is_multiple_of(f)
        {
            return Err(Error::config(format!(
                "input extent {}x{} is not a multiple of {f} (required by depth {})",
                shape.h,
                shape.w,
                self.config.depth()
            )));
        }
        Ok(())
    }

    fn block(&self, store: &ParamStore, g: &mut Graph, x: Var, b: &ConvBlock) -> Result<Var> {
        let w = g.param(store, b.weight);
        let y = g.conv2d(x, w, None, b.stride, Padding::Same)?;
        let scale = g.param(store, b.scale);
        let shift = g.param(store, b.shift);
        let y = g.instance_norm(y, scale, shift, NORM_EPS)?;
        Ok(g.relu(y))
    }

    /// Appends the network to `g`, returning the logits node.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.forward_graph_with(&self.params, g, x)
    }

    /// As [`forward_graph`](Self::forward_graph) but reading parameter values
    /// from `store`, which must share this model's layout (e.g. a clone of
    /// [`params`](Self::params) under perturbation).
    pub fn forward_graph_with(&self, store: &ParamStore, g: &mut Graph, x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let mut skips = Vec::with_capacity(self.layout.encoder.len());
        let mut h = x;
        for (level, blocks) in self.layout.encoder.iter().enumerate() {
            if level > 0 {
                h = self.block(store, g, h, &self.layout.down[level - 1])?;
            }
            h = self.block(store, g, h, &blocks[0])?;
            h = self.block(store, g, h, &blocks[1])?;
            skips.push(h);
        }
        for level in (0..self.layout.decoder.len()).rev() {
            let stage = &self.layout.decoder[level];
            let up = g.upsample_nearest2(h);
            let up = self.block(store, g, up, &stage.up)?;
            let cat = g.concat_channels(skips[level], up)?;
            h = self.block(store, g, cat, &stage.convs[0])?;
            h = self.block(store, g, h, &stage.convs[1])?;
        }
        let w = g.param(store, self.layout.head_weight);
        let b = g.param(store, self.layout.head_bias);
        g.conv2d(h, w, Some(b), 1, Padding::Valid)
    }

    /// Logits for a batch.
    pub fn forward(&self, batch: &Tensor4) -> Result<Tensor4> {
        let mut g = Graph::new();
        let x = g.input(batch.clone());
        let y = self.forward_graph(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Sigmoid probabilities for a batch.
    pub fn predict_probs(&self, batch: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(batch)?.map(kernels::sigmoid))
    }
}

const MAGIC: &[u8; 4] = b"CTIU";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes `model` to the binary model format.
///
/// ```text
/// "CTIU" | version u32 | config_len u32 | config utf-8 (key=value lines)
///        | param_count u32 | per parameter, sorted by name:
///          name_len u32 | name | n c h w (u32 each) | values (f32 le)
/// ```
/// Integers are little-endian.
pub fn encode_model(model: &UNetModel) -> Vec<u8> {
    let mut text = model.config.to_canonical_text();
    if let Some(h) = &model.run_hash {
        text.push_str(&format!("run_hash={h}\n"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    let mut entries: Vec<_> = model.params.iter().map(|(_, p)| p).collect();
    entries.sort_by(|a, b| a.name().cmp(b.name()));
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for p in entries {
        out.extend_from_slice(&(p.name().len() as u32).to_le_bytes());
        out.extend_from_slice(p.name().as_bytes());
        for d in p.value().shape().as_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value().data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ModelFileError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelFileError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ModelFileError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<UNetModel, ModelFileError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(ModelFileError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| ModelFileError::BadConfig("config is not utf-8".into()))?;
    let mut map = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelFileError::BadConfig(format!("malformed line {line:?}")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let config = UNetConfig::from_canonical_map(&map)?;
    let run_hash = map.get("run_hash").cloned();

    let declared = r.u32("parameter count")? as usize;
    let mut read = BTreeMap::new();
    for _ in 0..declared {
        let name_len = r.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| ModelFileError::Inconsistent("parameter name is not utf-8".into()))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32("parameter shape")? as usize;
        }
        let shape = Shape4::from(dims);
        let raw = r.take(shape.numel() * 4, "parameter values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor4::from_vec(shape, data)
            .map_err(|e| ModelFileError::Inconsistent(e.to_string()))?;
        if read.insert(name.clone(), t).is_some() {
            return Err(ModelFileError::Inconsistent(format!(
                "duplicate parameter {name}"
            )));
        }
    }
    if r.pos != bytes.len() {
        return Err(ModelFileError::Inconsistent(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }

    let mut params = ParamStore::new();
    let mut problem = None;
    let mut init = |name: &str, shape: Shape4, _: InitKind| match read.remove(name) {
        Some(t) if t.shape() == shape => t,
        Some(t) => {
            problem.get_or_insert(format!(
                "parameter {name} has shape {}, config implies {shape}",
                t.shape()
            ));
            Tensor4::zeros(shape)
        }
        None => {
            problem.get_or_insert(format!("parameter {name} missing from file"));
            Tensor4::zeros(shape)
        }
    };
    let layout = build_layout(&config, &mut params, &mut init);
    if params.len() != declared {
        return Err(ModelFileError::Inconsistent(format!(
            "file declares {declared} parameters, config implies {}",
            params.len()
        )));
    }
    if let Some(p) = problem {
        return Err(ModelFileError::Inconsistent(p));
    }
    if let Some(extra) = read.keys().next() {
        return Err(ModelFileError::Inconsistent(format!(
            "unexpected parameter {extra}"
        )));
    }
    Ok(UNetModel {
        config,
        params,
        layout,
        run_hash,
    })
}

/// Writes the model next to `path` and renames it into place, so an
/// interrupted write never leaves a partial file under `path`.
pub fn save_model(model: &UNetModel, path: &Path) -> Result<()> {
    let bytes = encode_model(model);
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<UNetModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_model(&bytes)?)
}
