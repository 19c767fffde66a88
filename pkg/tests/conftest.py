import os

# Pin BLAS threading before numpy is imported anywhere so timing-sensitive
# tests (scan oracle sweep, benchmark scaling) measure single-thread behavior.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
