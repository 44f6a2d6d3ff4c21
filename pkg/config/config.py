# Defaults for experiment documents. Any section left out of a config JSON
# falls back to the values here. Environment overrides are read from .env.
import os

from dotenv import load_dotenv

load_dotenv()

# Reproducibility
SEED = 0

# Tensor shape: channels x height x width
CHANNELS = 4
HEIGHT = 64
WIDTH = 64

# DDIM schedule (linear betas)
STEPS = 40
BETA_START = 1e-4
BETA_END = 0.02

# Noise predictor: zero | linear | gaussian_prior
PREDICTOR = {"kind": "gaussian_prior", "mean": 0.0, "variance": 0.8}

# Watermark key
RADIUS = 10
SCALER = 100.0
WATERMARK_CHANNEL = 0

# Detection threshold on the p-value
P0 = 0.01

TRIALS = 100
OUTPUT_DIR = os.getenv("METR_OUTPUT_DIR", "metr-out")

# Scaler search range and g-criterion fit
S_MIN = 60.0
S_MAX = 160.0
S_STEP = 10.0
TUNING_TRIALS = 4
G_K = -2.23e-3
G_B = 0.653

# METR++ signature channel
SIGNATURE_BITS = 48
SIGNATURE_GROUPS = 4

# Worker threads for trial loops
_threads = os.getenv("METR_THREADS", "").strip()
THREADS = int(_threads) if _threads.isdigit() and int(_threads) > 0 else (os.cpu_count() or 1)
