"""rnem: unsupervised object grouping and relational dynamics on binary video.

Subpackages cover dense-tensor reverse-mode autodiff (`tensor`), the bouncing
balls simulator and dataset files (`physics`, `data`), the spatial-mixture
probability core (`mixture`), the grouping model with relational interaction
(`model`), training (`trainer`), metrics and rendering (`evaluator`,
`render`), and the command line front end (`cli`).
"""

from .kernels import KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
