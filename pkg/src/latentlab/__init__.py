"""latentlab: latent variable models, classical and deep, at desk scale.

Flat models (probabilistic PCA, Gaussian mixtures, latent classes, item
response), hierarchical Bayes (latent Dirichlet allocation), sequential
models (hidden Markov models, linear dynamical systems), and deep generative
models (VAE, normalizing flows, diffusion, autoregressive, GAN) behind one
set of numeric conventions and a common command-line front end.
"""

__version__ = "0.1.0"

from . import (arm, cli, core, datasets, diffusion, em, flow, gan, irt, lda,
               mixture, nn, ppca, sequential, vae)

__all__ = ["arm", "cli", "core", "datasets", "diffusion", "em", "flow", "gan",
           "irt", "lda", "mixture", "nn", "ppca", "sequential", "vae",
           "__version__"]
