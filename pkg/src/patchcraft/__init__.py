"""patchcraft: a self-contained vision-transformer image classification toolkit.

Subpackages: autodiff (tape-based gradients), vit (the transformer model),
data (loading/splitting/augmentation), trainer (Adam training + checkpoints),
svm (linear pixel baseline), cli (command-line harness).
"""

__version__ = "0.1.0"
