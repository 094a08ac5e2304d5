import os

# Pin BLAS pools before numpy loads: timing criteria are stated for a single
# thread, and a fixed thread count keeps reductions bit-reproducible.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
