import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from nqs_prune.perf import tune_process  # noqa: E402

tune_process(1)
