from .codec import (
    CodecConfig, CodecParams, code_to_token_feature, decode_pose, encode_tokens,
    joint_shift, joint_shift_jd, local_mlp_block, reconstruct_graph,
)
from .fsq import FSQConfig, bound, code_to_index, fsq_quantize, index_to_code, quantize_ste
from .train import CodecTrainConfig, codebook_usage, reconstruction_loss, train_codec

__all__ = [
    "CodecConfig", "CodecParams", "CodecTrainConfig", "FSQConfig", "bound", "code_to_index",
    "code_to_token_feature", "codebook_usage", "decode_pose", "encode_tokens", "fsq_quantize",
    "index_to_code", "joint_shift", "joint_shift_jd", "local_mlp_block", "quantize_ste",
    "reconstruct_graph", "reconstruction_loss", "train_codec",
]
