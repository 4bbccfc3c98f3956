//! The dialogue model: hierarchical encoder, attention decoder, and the
//! two discriminator heads that share the encoder's context state.

pub mod discriminator;
pub mod encoder;
pub mod generator;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{xavier_uniform, ParamGroup, ParameterSet};

pub use discriminator::{
    register_utterance_discriminator, register_word_discriminator, DiscOutput,
    UtteranceDiscriminator, WordDiscOutput, WordDiscriminator,
};
pub use encoder::{register_encoder, ContextEncoding, Encoder, TurnEncoding};
pub use generator::{
    register_generator_head, DecodeMode, DecodeOutput, DecodeSettings, Generator,
};

pub const EMBEDDING: &str = "emb";

/// Shared size parameters of every network component.
#[derive(Debug, Clone, Copy)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub h_dim: usize,
    pub layers: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 {
            return Err(Error::InvalidHyperparameter(format!(
                "vocabulary size must be at least 5, got {}",
                self.vocab_size
            )));
        }
        if self.h_dim == 0 || self.layers == 0 {
            return Err(Error::InvalidHyperparameter(
                "h_dim and layers must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Registers the embedding table, shared by the encoder input, the decoder
/// input, the tied output projection, and the discriminator input. It sits
/// in the generator group: discriminator updates leave it untouched.
pub fn register_embedding<R: Rng>(
    params: &mut ParameterSet,
    dims: &ModelDims,
    rng: &mut R,
) -> Result<()> {
    params.insert(
        EMBEDDING,
        xavier_uniform(rng, vec![dims.vocab_size, dims.h_dim])?,
        ParamGroup::Generator,
    )
}

/// Registers every generator-side parameter: embeddings, encoder, context
/// RNN, decoder, attention, and the output bias.
pub fn register_generator<R: Rng>(
    params: &mut ParameterSet,
    dims: &ModelDims,
    rng: &mut R,
) -> Result<()> {
    dims.validate()?;
    register_embedding(params, dims, rng)?;
    register_encoder(params, dims, rng)?;
    register_generator_head(params, dims, rng)?;
    Ok(())
}
