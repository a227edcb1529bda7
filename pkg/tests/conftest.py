import numpy as np

from mochastream import model as md
from mochastream.numeric import RngStream


def conditioned_check_model(seed=1, **config_overrides):
    """Build a tiny float64 model whose every parameter has gradient signal
    comfortably above the float64 finite-difference noise floor.

    Fan-in initialization plus the low-selection energy offset leave some
    attention gradients near 1e-12, where central differences are pure
    rounding noise; a fair check needs moderate random weights, an energy
    offset of zero, and strong per-frame saturation spread in the chunk
    energies (the query path of the chunk energy only carries gradient
    through tanh curvature, since window softmaxes kill constant shifts).
    """
    rng = np.random.default_rng(seed)
    base = dict(vocab_size=4, feature_dim=3, encoder_layers=2, encoder_width=4,
                decoder_layers=2, decoder_width=4, embed_dim=2, context_width=3,
                energy_dim=3, num_heads=2, chunk_width=2, pooling_after=(1,),
                pooling_width=2)
    base.update(config_overrides)
    cfg = md.ModelConfig(**base)
    params = md.init_params(cfg, RngStream(7, 0), dtype=np.float64)
    for name, arr in params.items():
        params[name] = rng.uniform(-0.8, 0.8, size=arr.shape)
    params["attn.mono.r"] = np.array(0.0)
    params["attn.mono.g"] = np.array(1.0)
    params["attn.chunk.w_h"] *= 3.0
    params["attn.chunk.v"] *= 2.5
    params["attn.chunk.b"] = rng.uniform(-1.5, 1.5, size=params["attn.chunk.b"].shape)
    params["ctx_proj"] *= 2.0
    return cfg, params, rng
