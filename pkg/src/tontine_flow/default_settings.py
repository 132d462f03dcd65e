"""Default settings for tontine_flow.

Override with a settings module named in ``TONTINE_FLOW_SETTINGS``.
"""

# Directory run artifacts are written to when a config does not name one.
OUTPUT_DIR = "out"

# Desk-scale path counts used when a config omits them.
DESK_TRAIN_PATHS = 4096
DESK_EVAL_PATHS = 4096
DESK_PRICE_PATHS = 4096

# Default role seeds (train, eval, price).
DEFAULT_SEEDS = (0, 1, 2)

# Bins in payout histogram exports.
HISTOGRAM_BINS = 50
