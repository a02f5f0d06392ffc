"""Hot numeric kernels behind the differentiable primitives.

Two interchangeable builds live here; ``slnn.backend`` picks one at import
time.  Both operate on C-contiguous float64 arrays and share the exact
conventions:

* convolution is cross-correlation; the caller zero-pads the input and
  passes the padded array,
* transposed convolution assumes kernel extent == stride (no overlap),
* max pooling reports the flat ``row * W + col`` index of each window's
  maximum, first occurrence in row-major scan order on ties.

Each build is deterministic: a given input yields a bit-identical output
on every call.  The two builds agree to floating-point roundoff, not
bit-exactly, because their summation orders differ.
"""

from slnn.backend import USE_NUMBA

if USE_NUMBA:
    from slnn.kernels.numba_impl import (
        conv2d_forward,
        conv2d_grad_input,
        conv2d_grad_kernels,
        deconv2d_forward,
        deconv2d_grad_input,
        deconv2d_grad_kernels,
        maxpool2d_forward,
        maxpool2d_grad,
    )
else:
    from slnn.kernels.numpy_impl import (
        conv2d_forward,
        conv2d_grad_input,
        conv2d_grad_kernels,
        deconv2d_forward,
        deconv2d_grad_input,
        deconv2d_grad_kernels,
        maxpool2d_forward,
        maxpool2d_grad,
    )

__all__ = [
    "conv2d_forward",
    "conv2d_grad_input",
    "conv2d_grad_kernels",
    "deconv2d_forward",
    "deconv2d_grad_input",
    "deconv2d_grad_kernels",
    "maxpool2d_forward",
    "maxpool2d_grad",
]
