from settings import *

# Client threads are exercised explicitly in the suite
FEDSIM_THREADS = 0

# Small batches so chunked evaluation is covered by small test sets
FEDSIM_EVAL_BATCH_SIZE = 7
