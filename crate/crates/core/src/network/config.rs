//! Network configurations, their TOML form, and the derived block plan.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunetConfig {
    /// Square network input extent.
    pub input_size: usize,
    /// Half-width of each input frame sequence; each holds `2*delta_t + 1` frames.
    pub delta_t: usize,
    pub init_channels: usize,
    pub init_kernel: usize,
    pub init_padding: usize,
    /// Encoder widths, shallowest first. Each block halves the extent.
    pub down_channels: Vec<usize>,
    /// Decoder widths, deepest first. Each block doubles the extent.
    pub up_channels: Vec<usize>,
    /// Width of the 2x2 convolution feeding the affine head.
    pub affine_channels: usize,
    pub patch: usize,
    pub embed: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl TunetConfig {
    pub fn full() -> Self {
        Self {
            input_size: 256,
            delta_t: 15,
            init_channels: 32,
            init_kernel: 5,
            init_padding: 2,
            down_channels: vec![64, 64, 128, 256, 256, 256, 256],
            up_channels: vec![512, 512, 512, 512, 256, 128, 64],
            affine_channels: 512,
            patch: 16,
            embed: 768,
            heads: 12,
            mlp_ratio: 4,
        }
    }

    pub fn desk() -> Self {
        Self {
            input_size: 64,
            delta_t: 15,
            init_channels: 16,
            init_kernel: 5,
            init_padding: 2,
            down_channels: vec![32, 32, 64, 128, 128],
            up_channels: vec![256, 256, 128, 64, 32],
            affine_channels: 256,
            patch: 4,
            embed: 96,
            heads: 4,
            mlp_ratio: 4,
        }
    }

    /// Both frame sequences, RGB each.
    pub fn in_channels(&self) -> usize {
        2 * (2 * self.delta_t + 1) * 3
    }

    pub fn sequence_len(&self) -> usize {
        2 * self.delta_t + 1
    }

    pub fn token_grid(&self) -> usize {
        self.input_size / self.patch
    }

    pub fn depth(&self) -> usize {
        self.down_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.init_kernel == 0 || 2 * self.init_padding + 1 != self.init_kernel {
            return bad(format!("init kernel {} with padding {} does not preserve size", self.init_kernel, self.init_padding));
        }
        if self.down_channels.is_empty() || self.down_channels.len() != self.up_channels.len() {
            return bad(format!(
                "need matching non-empty encoder/decoder lists, got {} and {}",
                self.down_channels.len(),
                self.up_channels.len()
            ));
        }
        if [self.init_channels, self.affine_channels, self.embed, self.heads, self.mlp_ratio, self.patch]
            .contains(&0)
            || self.down_channels.contains(&0)
            || self.up_channels.contains(&0)
        {
            return bad("channel counts, heads, patch and mlp_ratio must be positive".into());
        }
        if self.input_size != 2 << self.depth() {
            return bad(format!(
                "input size {} must equal 2 * 2^{} so the bottleneck is 2x2",
                self.input_size,
                self.depth()
            ));
        }
        if !self.input_size.is_multiple_of(self.patch) {
            return bad(format!("patch {} does not divide input {}", self.patch, self.input_size));
        }
        if !self.embed.is_multiple_of(self.heads) {
            return bad(format!("{} heads do not divide embedding {}", self.heads, self.embed));
        }
        Ok(())
    }

    /// Block plan for one stage.
    pub fn plan(&self) -> Result<StagePlan> {
        self.validate()?;
        let d = self.depth();
        let g = self.token_grid();
        let fusion = |i: usize, o: usize| (i >= g && o >= g).then(|| FusionStrides { down: i / g, up: o / g });
        let mut downs = Vec::with_capacity(d);
        let mut blocks = 0;
        for j in 1..=d {
            let in_size = self.input_size >> (j - 1);
            let out_size = in_size / 2;
            let f = fusion(in_size, out_size);
            downs.push(BlockPlan {
                name: format!("down{j}"),
                level: j,
                in_size,
                out_size,
                in_channels: if j == 1 { self.init_channels } else { self.down_channels[j - 2] },
                out_channels: self.down_channels[j - 1],
                fusion: f,
                token_block: f.map(|_| post_inc(&mut blocks)),
            });
        }
        let up_out = |j: usize| self.up_channels[d - j];
        let skip = |j: usize| if j == 1 { self.init_channels } else { self.down_channels[j - 2] };
        let mut ups = Vec::with_capacity(d);
        for j in (1..=d).rev() {
            let in_size = self.input_size >> j;
            let out_size = in_size * 2;
            let f = fusion(in_size, out_size);
            ups.push(BlockPlan {
                name: format!("up{j}"),
                level: j,
                in_size,
                out_size,
                in_channels: if j == d { self.down_channels[d - 1] } else { up_out(j + 1) + skip(j + 1) },
                out_channels: up_out(j),
                fusion: f,
                token_block: f.map(|_| post_inc(&mut blocks)),
            });
        }
        Ok(StagePlan {
            downs,
            ups,
            token_blocks: blocks,
            head_channels: up_out(1) + self.init_channels,
        })
    }

    /// Stage output shapes as `(name, [height, width, channels])`, with the
    /// affine head listed as `[2, 3]`.
    pub fn expected_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let plan = self.plan()?;
        let n = self.input_size;
        let mut out = vec![("s1.init".to_string(), vec![n, n, self.init_channels])];
        for s in 1..=2 {
            for b in &plan.downs {
                out.push((format!("s{s}.{}", b.name), vec![b.out_size, b.out_size, b.out_channels]));
            }
            out.push((format!("s{s}.affine"), vec![2, 3]));
            for b in &plan.ups {
                out.push((format!("s{s}.{}", b.name), vec![b.out_size, b.out_size, b.out_channels]));
            }
            out.push((format!("s{s}.warp"), vec![n, n, 2]));
            out.push((format!("s{s}.trans"), vec![n, n, 2]));
        }
        Ok(out)
    }
}

fn post_inc(v: &mut usize) -> usize {
    *v += 1;
    *v - 1
}

/// Pool stride from the block input to the token grid, and upsampling stride
/// from the grid to the block output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FusionStrides {
    pub down: usize,
    pub up: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockPlan {
    pub name: String,
    pub level: usize,
    pub in_size: usize,
    pub out_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub fusion: Option<FusionStrides>,
    /// Index of the transformer block run before this block's fusion.
    pub token_block: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StagePlan {
    pub downs: Vec<BlockPlan>,
    /// Deepest first.
    pub ups: Vec<BlockPlan>,
    pub token_blocks: usize,
    /// Channels entering the dense warp head.
    pub head_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdmConfig {
    pub patch: usize,
    pub embed: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Attention window side in tokens.
    pub window: usize,
    pub mlp_ratio: usize,
    /// Extent used by self-checks; the forward pass accepts any divisible size.
    pub check_size: usize,
}

impl SdmConfig {
    pub fn full() -> Self {
        Self {
            patch: 4,
            embed: 96,
            heads: 3,
            blocks: 4,
            window: 8,
            mlp_ratio: 4,
            check_size: 256,
        }
    }

    pub fn desk() -> Self {
        Self {
            patch: 4,
            embed: 48,
            heads: 3,
            blocks: 2,
            window: 8,
            mlp_ratio: 4,
            check_size: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.patch, self.embed, self.heads, self.blocks, self.window, self.mlp_ratio].contains(&0) {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        if !self.embed.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("{} heads do not divide embedding {}", self.heads, self.embed)));
        }
        self.check_frame(self.check_size, self.check_size)
    }

    pub fn check_frame(&self, h: usize, w: usize) -> Result<()> {
        let unit = self.patch * self.window;
        if !h.is_multiple_of(unit) || !w.is_multiple_of(unit) || h == 0 || w == 0 {
            return Err(Error::Config(format!("frame {h}x{w} not divisible by patch*window = {unit}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub tunet: TunetConfig,
    pub sdm: SdmConfig,
}

impl NetworkConfig {
    pub fn full() -> Self {
        Self {
            tunet: TunetConfig::full(),
            sdm: SdmConfig::full(),
        }
    }

    pub fn desk() -> Self {
        Self {
            tunet: TunetConfig::desk(),
            sdm: SdmConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tunet.validate()?;
        self.sdm.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
