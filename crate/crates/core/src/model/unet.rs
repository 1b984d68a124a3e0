use rand::Rng;
use seaice_nn::{BatchNorm2d, Conv2d, ConvTranspose2, Graph, Mode, ParamStore, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    /// Bilinear ×2 followed by a 3×3 convolution.
    Bilinear,
    /// 2×2 stride-2 transposed convolution.
    Transposed,
}

impl Upsample {
    pub fn as_str(&self) -> &'static str {
        match self {
            Upsample::Bilinear => "bilinear",
            Upsample::Transposed => "transposed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Upsample::Bilinear),
            "transposed" => Ok(Upsample::Transposed),
            _ => Err(Error::Config(format!("unknown upsample mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub upsample: Upsample,
}

impl UNetConfig {
    pub fn desk(in_channels: usize, out_channels: usize) -> Self {
        Self {
            depth: 2,
            base_channels: 8,
            in_channels,
            out_channels,
            upsample: Upsample::Bilinear,
        }
    }

    pub fn full(in_channels: usize, out_channels: usize) -> Self {
        Self {
            depth: 4,
            base_channels: 64,
            ..Self::desk(in_channels, out_channels)
        }
    }

    /// Spatial dims must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("U-Net channel counts must be positive".into()));
        }
        if self.depth > 8 {
            return Err(Error::Config(format!("U-Net depth {} is too large", self.depth)));
        }
        Ok(())
    }
}

/// Two 3×3 convolutions, each followed by batch norm and ReLU.
#[derive(Clone, Debug)]
struct DoubleConv {
    c1: Conv2d,
    n1: BatchNorm2d,
    c2: Conv2d,
    n2: BatchNorm2d,
}

impl DoubleConv {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            c1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, false, rng)?,
            n1: BatchNorm2d::new(store, &format!("{name}.bn1"), cout)?,
            c2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, false, rng)?,
            n2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout)?,
        })
    }

    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.c1.forward(g, store, x)?;
        let y = self.n1.forward(g, store, y, mode)?;
        let y = g.relu(y);
        let y = self.c2.forward(g, store, y)?;
        let y = self.n2.forward(g, store, y, mode)?;
        Ok(g.relu(y))
    }
}

#[derive(Clone, Debug)]
enum UpLayer {
    Bilinear(Conv2d),
    Transposed(ConvTranspose2),
}

#[derive(Clone, Debug)]
struct UpStage {
    up: UpLayer,
    block: DoubleConv,
}

/// Encoder-decoder with skip connections and a 1×1 output convolution.
#[derive(Clone, Debug)]
pub struct UNet {
    pub config: UNetConfig,
    encoders: Vec<DoubleConv>,
    ups: Vec<UpStage>,
    pub head: Conv2d,
}

impl UNet {
    pub fn new<R: Rng>(config: UNetConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let width = |level: usize| config.base_channels << level;
        let mut encoders = Vec::with_capacity(config.depth + 1);
        for level in 0..=config.depth {
            let cin = if level == 0 { config.in_channels } else { width(level - 1) };
            encoders.push(DoubleConv::new(store, &format!("enc{level}"), cin, width(level), rng)?);
        }
        let mut ups = Vec::with_capacity(config.depth);
        for level in (0..config.depth).rev() {
            let (cin, cout) = (width(level + 1), width(level));
            let up = match config.upsample {
                Upsample::Bilinear => UpLayer::Bilinear(Conv2d::new(
                    store,
                    &format!("up{level}.conv"),
                    cin,
                    cout,
                    3,
                    true,
                    rng,
                )?),
                Upsample::Transposed => {
                    UpLayer::Transposed(ConvTranspose2::new(store, &format!("up{level}.convt"), cin, cout, rng)?)
                }
            };
            let block = DoubleConv::new(store, &format!("dec{level}"), 2 * cout, cout, rng)?;
            ups.push(UpStage { up, block });
        }
        let head = Conv2d::new(store, "head", width(0), config.out_channels, 1, true, rng)?;
        Ok(Self {
            config,
            encoders,
            ups,
            head,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let m = self.config.multiple();
        if shape.len() != 4 || shape[1] != self.config.in_channels || shape[2] % m != 0 || shape[3] % m != 0 {
            return Err(Error::Shape(format!(
                "U-Net expects N×{}×H×W with H, W multiples of {m}, got {shape:?}",
                self.config.in_channels
            )));
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut y = x;
        for (level, enc) in self.encoders.iter().enumerate() {
            if level > 0 {
                y = g.maxpool2(y)?;
            }
            y = enc.forward(g, store, y, mode)?;
            if level < self.config.depth {
                skips.push(y);
            }
        }
        for stage in &self.ups {
            y = match &stage.up {
                UpLayer::Bilinear(conv) => {
                    let u = g.upsample2(y)?;
                    conv.forward(g, store, u)?
                }
                UpLayer::Transposed(ct) => ct.forward(g, store, y)?,
            };
            let skip = skips.pop().expect("one skip per level");
            let cat = g.concat_channels(&[skip, y])?;
            y = stage.block.forward(g, store, cat, mode)?;
        }
        Ok(self.head.forward(g, store, y)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use seaice_nn::Tensor;

    #[test]
    fn output_shape_and_divisibility() {
        for up in [Upsample::Bilinear, Upsample::Transposed] {
            let mut store = ParamStore::new();
            let cfg = UNetConfig { upsample: up, ..UNetConfig::desk(5, 3) };
            let net = UNet::new(cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let mut g = Graph::new();
            let x = g.constant(Tensor::full(&[2, 5, 8, 12], 0.5));
            let y = net.forward(&mut g, &mut store, x, Mode::Train).unwrap();
            assert_eq!(g.value(y).shape(), &[2, 3, 8, 12]);
            let bad = g.constant(Tensor::full(&[1, 5, 6, 8], 0.5));
            assert!(net.forward(&mut g, &mut store, bad, Mode::Eval).is_err());
        }
    }
}
