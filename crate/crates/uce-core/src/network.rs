//! A small convolutional segmentation network with dropout after each block.
//!
//! Blocks are plain conv -> relu -> dropout; a 1x1 head maps the last block's
//! channels onto class logits. Every parameter carries a group tag so the
//! harness can scale the head learning rate separately.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamKind};
use crate::tensor::{ops, CompRecord, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UCESEG1\n";

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub block_channels: Vec<usize>,
    pub kernel_size: usize,
    pub dropout_ratio: f32,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(num_classes: usize) -> Self {
        NetworkConfig {
            in_channels: 3,
            num_classes,
            block_channels: vec![16, 32, 32, 16],
            kernel_size: 3,
            dropout_ratio: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need in_channels > 0 and num_classes >= 2, got {} / {}",
                self.in_channels, self.num_classes
            )));
        }
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return Err(Error::Config(
                "block_channels must be non-empty and positive".into(),
            ));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size == 0 {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::Config(format!(
                "dropout_ratio must lie in [0, 1), got {}",
                self.dropout_ratio
            )));
        }
        Ok(())
    }
}

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Head,
}

/// A named trainable tensor with its group tag.
#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub group: ParamGroup,
}

struct Block {
    kernel: Tensor,
    bias: Tensor,
}

/// Whether a forward pass applies dropout.
pub enum ForwardMode<'a> {
    Deterministic,
    Stochastic(&'a mut RngStream),
}

pub struct SegNet {
    in_channels: usize,
    num_classes: usize,
    kernel_size: usize,
    dropout_ratio: f32,
    blocks: Vec<Block>,
    head_kernel: Tensor,
    head_bias: Tensor,
}

impl SegNet {
    /// He fan-in initialization from the init stream; biases start at zero.
    /// Two builds with the same seed produce bit-identical parameters.
    pub fn build(config: &NetworkConfig) -> Result<SegNet> {
        config.validate()?;
        let mut rng = RngStream::new(config.seed, StreamKind::Init);
        let k = config.kernel_size;
        let mut blocks = Vec::with_capacity(config.block_channels.len());
        let mut cin = config.in_channels;
        for &cout in &config.block_channels {
            let fan_in = cin * k * k;
            let std = (2.0 / fan_in as f64).sqrt();
            let data: Vec<f32> = (0..cout * cin * k * k)
                .map(|_| (rng.normal() * std) as f32)
                .collect();
            blocks.push(Block {
                kernel: Tensor::new_unchecked(vec![cout, cin, k, k], data).requiring_grad(),
                bias: Tensor::zeros(&[cout]).requiring_grad(),
            });
            cin = cout;
        }
        let std = (2.0 / cin as f64).sqrt();
        let head_data: Vec<f32> = (0..config.num_classes * cin)
            .map(|_| (rng.normal() * std) as f32)
            .collect();
        Ok(SegNet {
            in_channels: config.in_channels,
            num_classes: config.num_classes,
            kernel_size: k,
            dropout_ratio: config.dropout_ratio,
            blocks,
            head_kernel: Tensor::new_unchecked(vec![config.num_classes, cin, 1, 1], head_data)
                .requiring_grad(),
            head_bias: Tensor::zeros(&[config.num_classes]).requiring_grad(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn dropout_ratio(&self) -> f32 {
        self.dropout_ratio
    }

    pub fn set_dropout_ratio(&mut self, ratio: f32) -> Result<()> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!(
                "dropout_ratio must lie in [0, 1), got {ratio}"
            )));
        }
        self.dropout_ratio = ratio;
        Ok(())
    }

    /// Forward pass producing `[N, C, H, W]` logits. Each block applies
    /// conv -> relu -> dropout; dropout is active only in stochastic mode.
    pub fn forward(
        &self,
        rec: &mut CompRecord,
        images: &Tensor,
        mode: ForwardMode,
    ) -> Result<Tensor> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::Dim(format!(
                "forward wants [N, {}, H, W] images, got {shape:?}",
                self.in_channels
            )));
        }
        if shape[2] < self.kernel_size || shape[3] < self.kernel_size {
            return Err(Error::Precondition(format!(
                "spatial size {}x{} below kernel size {}",
                shape[2], shape[3], self.kernel_size
            )));
        }
        let mut rng = match mode {
            ForwardMode::Deterministic => None,
            ForwardMode::Stochastic(r) => Some(r),
        };
        let mut x = images.clone();
        for block in &self.blocks {
            x = ops::conv2d(rec, &x, &block.kernel, &block.bias)?;
            x = ops::relu(rec, &x)?;
            if let Some(rng) = rng.as_deref_mut() {
                x = ops::dropout(rec, &x, self.dropout_ratio, rng, true)?;
            }
        }
        ops::conv2d(rec, &x, &self.head_kernel, &self.head_bias)
    }

    /// Every trainable tensor exactly once, in stable order.
    pub fn parameters(&self) -> Vec<Param> {
        let mut params = Vec::with_capacity(self.blocks.len() * 2 + 2);
        for (i, block) in self.blocks.iter().enumerate() {
            params.push(Param {
                name: format!("block{i}.kernel"),
                tensor: block.kernel.clone(),
                group: ParamGroup::Backbone,
            });
            params.push(Param {
                name: format!("block{i}.bias"),
                tensor: block.bias.clone(),
                group: ParamGroup::Backbone,
            });
        }
        params.push(Param {
            name: "head.kernel".into(),
            tensor: self.head_kernel.clone(),
            group: ParamGroup::Head,
        });
        params.push(Param {
            name: "head.bias".into(),
            tensor: self.head_bias.clone(),
            group: ParamGroup::Head,
        });
        params
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.numel()).sum()
    }

    /// Reset every parameter gradient to zeros.
    pub fn zero_grads(&self) {
        for p in self.parameters() {
            p.tensor.zero_grad();
        }
    }

    // -- checkpoint format ---------------------------------------------------
    // magic "UCESEG1\n", then for each parameter in parameters() order:
    // name length (u32 LE), UTF-8 name, rank (u32 LE), extents (u32 LE each),
    // raw f32 LE values. Round-trips bit-exactly.

    pub fn save_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for p in self.parameters() {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            let shape = p.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &e in shape {
                w.write_all(&(e as u32).to_le_bytes())?;
            }
            let data = p.tensor.data();
            let mut bytes = Vec::with_capacity(data.len() * 4);
            for v in data.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.save_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Rebuild a network from a checkpoint. The architecture is inferred from
    /// parameter names and shapes; the dropout ratio is not stored in the
    /// checkpoint and starts at zero (see [`SegNet::set_dropout_ratio`]).
    pub fn load_from(r: &mut impl Read) -> Result<SegNet> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint too short for magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let mut entries: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
        loop {
            let mut len4 = [0u8; 4];
            match r.read_exact(&mut len4) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let name_len = u32::from_le_bytes(len4) as usize;
            if name_len > 4096 {
                return Err(Error::Format(format!("implausible name length {name_len}")));
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)
                .map_err(|_| Error::Format("truncated parameter name".into()))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let mut rank4 = [0u8; 4];
            r.read_exact(&mut rank4)
                .map_err(|_| Error::Format("truncated rank".into()))?;
            let rank = u32::from_le_bytes(rank4) as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Format(format!("implausible rank {rank} for {name}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut e4 = [0u8; 4];
                r.read_exact(&mut e4)
                    .map_err(|_| Error::Format("truncated extents".into()))?;
                shape.push(u32::from_le_bytes(e4) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 4];
            r.read_exact(&mut raw)
                .map_err(|_| Error::Format(format!("truncated data for {name}")))?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            entries.push((name, shape, data));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SegNet> {
        let mut r = BufReader::new(File::open(path)?);
        Self::load_from(&mut r)
    }

    fn from_entries(entries: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<SegNet> {
        if entries.len() < 4 || !entries.len().is_multiple_of(2) {
            return Err(Error::Format(format!(
                "checkpoint holds {} entries, expected an even count >= 4",
                entries.len()
            )));
        }
        let n_blocks = entries.len() / 2 - 1;
        let mut blocks = Vec::with_capacity(n_blocks);
        let mut expect_cin: Option<usize> = None;
        let mut kernel_size = 0usize;
        for i in 0..n_blocks {
            let (kname, kshape, kdata) = &entries[2 * i];
            let (bname, bshape, bdata) = &entries[2 * i + 1];
            if kname != &format!("block{i}.kernel") || bname != &format!("block{i}.bias") {
                return Err(Error::Format(format!(
                    "unexpected entry names {kname} / {bname}"
                )));
            }
            if kshape.len() != 4 || bshape.len() != 1 || bshape[0] != kshape[0] {
                return Err(Error::Format(format!("inconsistent shapes for block {i}")));
            }
            if let Some(cin) = expect_cin {
                if kshape[1] != cin {
                    return Err(Error::Format(format!("channel chain broken at block {i}")));
                }
            }
            kernel_size = kshape[2];
            expect_cin = Some(kshape[0]);
            blocks.push(Block {
                kernel: Tensor::from_vec(kshape, kdata.clone())?.requiring_grad(),
                bias: Tensor::from_vec(bshape, bdata.clone())?.requiring_grad(),
            });
        }
        let (hkname, hkshape, hkdata) = &entries[2 * n_blocks];
        let (hbname, hbshape, hbdata) = &entries[2 * n_blocks + 1];
        if hkname != "head.kernel" || hbname != "head.bias" {
            return Err(Error::Format("missing head entries".into()));
        }
        if hkshape.len() != 4
            || hkshape[2] != 1
            || hkshape[3] != 1
            || hkshape[1] != expect_cin.unwrap()
            || hbshape != &vec![hkshape[0]]
        {
            return Err(Error::Format("inconsistent head shapes".into()));
        }
        let in_channels = entries[0].1[1];
        Ok(SegNet {
            in_channels,
            num_classes: hkshape[0],
            kernel_size,
            dropout_ratio: 0.0,
            blocks,
            head_kernel: Tensor::from_vec(hkshape, hkdata.clone())?.requiring_grad(),
            head_bias: Tensor::from_vec(hbshape, hbdata.clone())?.requiring_grad(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            in_channels: 3,
            num_classes: 4,
            block_channels: vec![8],
            kernel_size: 3,
            dropout_ratio: 0.5,
            seed: 21,
        }
    }

    fn param_values(net: &SegNet) -> Vec<Vec<f32>> {
        net.parameters().iter().map(|p| p.tensor.to_vec()).collect()
    }

    #[test]
    fn build_is_seed_deterministic() {
        let cfg = small_config();
        let a = SegNet::build(&cfg).unwrap();
        let b = SegNet::build(&cfg).unwrap();
        assert_eq!(param_values(&a), param_values(&b));

        let mut cfg2 = cfg.clone();
        cfg2.seed = 22;
        let c = SegNet::build(&cfg2).unwrap();
        assert_ne!(param_values(&a), param_values(&c));
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        // blocks [8], C=4: 3*8*3*3 + 8 + 8*4*1*1 + 4 = 260
        let net = SegNet::build(&small_config()).unwrap();
        assert_eq!(net.num_parameters(), 260);
    }

    #[test]
    fn parameter_groups_and_ordering() {
        let net = SegNet::build(&small_config()).unwrap();
        let params = net.parameters();
        assert_eq!(params.len(), 4);
        assert_eq!(params[0].name, "block0.kernel");
        assert_eq!(params[0].group, ParamGroup::Backbone);
        assert_eq!(params[1].group, ParamGroup::Backbone);
        assert_eq!(params[2].name, "head.kernel");
        assert_eq!(params[2].group, ParamGroup::Head);
        assert_eq!(params[3].group, ParamGroup::Head);
    }

    #[test]
    fn deterministic_forward_is_pure() {
        let net = SegNet::build(&small_config()).unwrap();
        let mut rng = RngStream::new(5, StreamKind::Datagen);
        let images = Tensor::new_unchecked(
            vec![2, 3, 6, 6],
            (0..2 * 3 * 36).map(|_| rng.next_f32()).collect(),
        );
        let mut rec = CompRecord::disabled();
        let a = net
            .forward(&mut rec, &images, ForwardMode::Deterministic)
            .unwrap();
        let b = net
            .forward(&mut rec, &images, ForwardMode::Deterministic)
            .unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
        assert_eq!(a.shape(), &[2, 4, 6, 6]);
    }

    #[test]
    fn zero_ratio_stochastic_equals_deterministic() {
        let mut cfg = small_config();
        cfg.dropout_ratio = 0.0;
        let net = SegNet::build(&cfg).unwrap();
        let images = Tensor::ones(&[1, 3, 5, 5]);
        let mut rec = CompRecord::disabled();
        let det = net
            .forward(&mut rec, &images, ForwardMode::Deterministic)
            .unwrap();
        let mut rng = RngStream::new(1, StreamKind::Dropout);
        let sto = net
            .forward(&mut rec, &images, ForwardMode::Stochastic(&mut rng))
            .unwrap();
        assert_eq!(det.to_vec(), sto.to_vec());
    }

    #[test]
    fn distinct_stream_counters_give_distinct_logits() {
        let net = SegNet::build(&small_config()).unwrap();
        let images = Tensor::ones(&[1, 3, 6, 6]);
        let mut rec = CompRecord::disabled();
        let mut rng = RngStream::new(9, StreamKind::Sample);
        let a = net
            .forward(&mut rec, &images, ForwardMode::Stochastic(&mut rng))
            .unwrap();
        let b = net
            .forward(&mut rec, &images, ForwardMode::Stochastic(&mut rng))
            .unwrap();
        assert_ne!(a.to_vec(), b.to_vec());

        // replaying the same stream state reproduces the same mask
        let mut replay = RngStream::new(9, StreamKind::Sample);
        let a2 = net
            .forward(&mut rec, &images, ForwardMode::Stochastic(&mut replay))
            .unwrap();
        assert_eq!(a.to_vec(), a2.to_vec());
    }

    #[test]
    fn deterministic_forward_ignores_dropout_ratio() {
        let mut cfg = small_config();
        cfg.dropout_ratio = 0.0;
        let low = SegNet::build(&cfg).unwrap();
        cfg.dropout_ratio = 0.9;
        let high = SegNet::build(&cfg).unwrap();
        let images = Tensor::ones(&[1, 3, 5, 5]);
        let mut rec = CompRecord::disabled();
        let a = low
            .forward(&mut rec, &images, ForwardMode::Deterministic)
            .unwrap();
        let b = high
            .forward(&mut rec, &images, ForwardMode::Deterministic)
            .unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn forward_rejects_wrong_channels() {
        let net = SegNet::build(&small_config()).unwrap();
        let images = Tensor::ones(&[1, 2, 6, 6]);
        let mut rec = CompRecord::disabled();
        assert!(matches!(
            net.forward(&mut rec, &images, ForwardMode::Deterministic),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = NetworkConfig {
            block_channels: vec![6, 10],
            dropout_ratio: 0.25,
            ..small_config()
        };
        let net = SegNet::build(&cfg).unwrap();
        let mut bytes = Vec::new();
        net.save_to(&mut bytes).unwrap();
        let loaded = SegNet::load_from(&mut bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        loaded.save_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
        assert_eq!(param_values(&net), param_values(&loaded));
        assert_eq!(loaded.num_classes(), 4);
        assert_eq!(loaded.dropout_ratio(), 0.0);
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let mut bytes = b"NOTMAGIC".to_vec();
        bytes.extend_from_slice(&[0u8; 16]);
        assert!(matches!(
            SegNet::load_from(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
