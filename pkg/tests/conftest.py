"""Keep BLAS single-threaded: the heavy tests parallelize at the run level,
and oversubscribed BLAS pools on the 2-core CI boxes slow everything down.
Must run before numpy is first imported."""

import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
