"""Multilingual encoder-decoder training against a shared latent representation.

Per-language transformer autoencoders are trained jointly on parallel text
with reconstruction and cross-translation losses plus a differentiable
distance that pulls sentence representations from different languages
together. The package covers the whole loop: a small fp64 autodiff core,
the models, BPE data preparation, training with Adam, BLEU and
cross-decoding evaluation, 2-d projections of the latent space, and a CLI.
"""

__version__ = "0.1.0"
