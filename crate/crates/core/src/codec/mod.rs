//! Patch autoencoder carrying images as 16-QAM-ready latents.
//!
//! The encoder embeds each patch, compresses it to a fixed number of latent
//! values, zeroes the latents of masked patches, mixes information across
//! patches and squashes with a sigmoid. The decoder mirrors this. Inference
//! outputs are clamped to `[0, 1]` and rounded to 8 bits; training works on
//! the unclamped output.

mod alloc_train;
mod checkpoint;
mod loss;
mod model;
mod quant;
mod train;

pub use alloc_train::*;
pub use checkpoint::*;
pub use loss::*;
pub use model::*;
pub use quant::*;
pub use train::*;

use crate::error::{shape_err, Error, Result};
use crate::image::ImageTensor;
use crate::link::{transmit, LinkConfig, LinkOutput, Placement};
use crate::power::PowerAllocator;
use crate::preprocess::MaskMatrix;

const FULL: PassOptions = PassOptions { mixing: true };

fn check_mask(model: &CodecModel, m: &MaskMatrix) -> Result<()> {
    if m.patch_mask.len() != model.dims.n_patches {
        return shape_err(model.dims.n_patches, m.patch_mask.len());
    }
    if m.kept_count() == 0 {
        return Err(Error::InvalidInput("every patch is masked; N_U = 0".into()));
    }
    Ok(())
}

/// Encodes an (already masked) image.
pub fn encode(p: &ImageTensor, m: &MaskMatrix, model: &CodecModel) -> Result<LatentBlock> {
    let grid = model.check_image(p)?;
    check_mask(model, m)?;
    let x = image_to_patches(p, &grid);
    let enc = encoder_forward(&model.params, x, &m.patch_mask, FULL);
    Ok(LatentBlock {
        values: flatten(&enc.latent),
    })
}

/// Decodes assuming no patch was masked.
pub fn decode(l: &LatentBlock, model: &CodecModel) -> Result<ImageTensor> {
    let d = model.dims;
    let side = (d.n_patches as f64).sqrt() as usize;
    if side * side != d.n_patches {
        return Err(Error::InvalidInput(
            "non-square patch grid; use decode_masked with an explicit grid".into(),
        ));
    }
    let grid =
        crate::preprocess::partition_dims(side * d.patch_size, side * d.patch_size, d.patch_size)?;
    decode_masked(l, &MaskMatrix::all_ones(grid), model)
}

/// Decodes with the receiver-side mask operation; masked patches come out
/// as whatever the decoder biases produce and are expected to be in-filled.
pub fn decode_masked(l: &LatentBlock, m: &MaskMatrix, model: &CodecModel) -> Result<ImageTensor> {
    let d = model.dims;
    if l.values.len() != d.latent_len() {
        return shape_err(d.latent_len(), l.values.len());
    }
    check_mask(model, m)?;
    if let Some(v) = l.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange(format!("latent {v} outside [0, 1]")));
    }
    let latent = unflatten(&l.values, d.n_patches, d.latent)?;
    let dec = decoder_forward(&model.params, latent, &m.patch_mask, FULL);
    Ok(patches_to_image(&dec.output, &m.grid, d.channels))
}

/// Result of carrying a latent block over a link.
#[derive(Clone, Debug)]
pub struct LatentTransfer {
    pub sent: QuantizedBlock,
    pub received: QuantizedBlock,
    /// Dequantized received latents.
    pub latent: LatentBlock,
    pub link: LinkOutput,
}

/// Quantizes, maps to symbols, transmits and hard-decides. With
/// `Placement::RankOrdered` the symbols are first sorted by significance.
pub fn send_latents(
    l: &LatentBlock,
    dims: &CodecDims,
    link: &LinkConfig,
    placement: Placement,
    allocator: Option<&PowerAllocator>,
    seed: u64,
) -> Result<LatentTransfer> {
    let sent = quantize(l)?;
    let symbols = sent.to_symbols()?;
    let order = match placement {
        Placement::Natural => (0..symbols.len()).collect::<Vec<_>>(),
        Placement::RankOrdered => dims.significance_order(),
    };
    if order.len() != symbols.len() {
        return shape_err(order.len(), symbols.len());
    }
    let stream: Vec<_> = order.iter().map(|&i| symbols[i]).collect();
    let out = transmit(&stream, link, placement, allocator, seed)?;
    let mut rx = vec![num_complex::Complex64::new(0.0, 0.0); symbols.len()];
    for (s, &i) in order.iter().enumerate() {
        rx[i] = out.symbols[s];
    }
    let received = QuantizedBlock::from_symbols(&rx);
    let latent = dequantize(&received)?;
    Ok(LatentTransfer {
        sent,
        received,
        latent,
        link: out,
    })
}
