import os
import sys

# Thread pinning has to happen before numpy is imported
if "--deterministic" in sys.argv:
    for var in ("OMP_NUM_THREADS", "MKL_NUM_THREADS", "OPENBLAS_NUM_THREADS"):
        os.environ[var] = "1"

from .launcher import main  # noqa: E402

main()
