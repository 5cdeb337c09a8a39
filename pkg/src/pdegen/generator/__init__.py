"""Masked autoregressive flow-matching generator over latent token frames."""
from .flow import (FlowHead, cosine_decode_counts, flow_path, fm_sample, fm_train_loss,
                   time_features)
from .model import (Block, GenConfig, Generator, KvCache, block_causal_mask, patchify,
                    unpatchify)
from .sampling import context_blocks, decode_frame, rollout, rollout_with_context
from .train import GenTrainConfig, random_mask, teacher_forced_loss, train_generator
