"""stseq: a desk-scale lab for spatial-temporal token sequences in a causal LM.

Synthetic videos become per-frame patch tokens laid out jointly with text in
one decoder sequence; training applies dynamic token masking with a
masked-vs-reference reconstruction loss, and a global-local input handles
long horizons. Everything runs on a small tape-based autodiff engine with
compiled hot kernels (numpy fallback selected at import).
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
