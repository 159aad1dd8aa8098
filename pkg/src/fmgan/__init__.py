"""Adversarial text generation with a feature-mover's distance critic.

Modules: ``ndgrad`` (reverse-mode differentiation on numpy), ``ot``
(IPOT, Sinkhorn and an exact oracle), ``fmd`` (the distance and its
gradients), ``textdata`` (vocabularies, corpora, BLEU), ``nets`` (LSTM
generator and CNN extractor), ``train`` (the alternating min-max loop),
``condext`` (style transfer and deciphering) and ``cli``.
"""

__version__ = "0.1.0"
