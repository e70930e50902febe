"""picolab: unsupervised skill segmentation with a recurrent mixture of primitives.

Modules
-------
diffcore     reverse-mode autodiff on numpy arrays, Adam, gradient checking
models       primitive policies, recurrent metacontroller, blended actions
training     reconstruction training, behaviour-cloning pretraining, gap discovery
alignment    sketch/path algebra, CTC and TACO lattices, CTC baseline
envsim       blockworld and dialpad demonstration generators
metrics      label accuracy, action MSE, confusion, PCA latent projection
formats      dataset and checkpoint files
experiments  config-driven experiment harness behind the ``picolab`` command
"""

__version__ = "0.1.0"
