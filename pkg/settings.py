import os

SECRET_KEY = "fedsim"
INSTALLED_APPS = [
    "fedsim",
]

# The simulator keeps no state in a database
DATABASES = {}

# Parallel client steps within a round. 0 trains clients serially
FEDSIM_THREADS = os.environ.get("FEDSIM_THREADS") or 0

FEDSIM_OUTPUT_DIR = os.environ.get("FEDSIM_OUTPUT_DIR", "fedsim-output")

FEDSIM_LABEL_COLUMN = "label"

FEDSIM_CHECKPOINTS = False

FEDSIM_EVAL_BATCH_SIZE = 4096

USE_TZ = False
