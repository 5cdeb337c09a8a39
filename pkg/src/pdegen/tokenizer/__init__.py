"""Variational tokenizer for irregularly sampled PDE trajectories."""
from .compressor import (BLOCK_KINDS, Compressor, CompressorConfig, Decompressor, GlobalContext,
                         ResidualBlock)
from .interp import (InterpDecoder, InterpEncoder, InterpolatorConfig, canonical_order,
                     geometry_bias, periodic_distance, positional_encode, regular_grid)
from .train import (VaeTrainConfig, encode_dataset, fit_latent_stats, flat_fields, flat_grid,
                    reconstruction_errors, subsampled_batch, train_vae)
from .vae import (LatentSequence, Tokenizer, TokenizerConfig, VaeOutput, kl_to_standard_normal,
                  relative_mse, vae_loss)
