# attend_affect/config.py

# ---------------------
# Numerics
# ---------------------
DTYPE = "float64"
LAYER_NORM_EPS = 1e-5
GRADCHECK_STEP = 1e-5          # h for central differences
GRADCHECK_TOLERANCE = 1e-3     # max relative error accepted for whole models
GRADCHECK_FLOOR = 1e-8         # denominator floor in |a-b| / max(floor, |a|+|b|)
GRADCHECK_KINK_GAP = 1e-3      # one-sided slopes further apart than this straddle a kink
EWE_MIN_WEIGHT_SUM = 1e-6      # |Σw| below this falls back to the unweighted mean

# ---------------------
# Windowing
# ---------------------
MODALITY_ORDER = ("V", "A", "L")        # simple-fusion concatenation order
MFN_MODALITY_ORDER = ("A", "L", "V")    # memory-fusion concatenation order
WINDOW_SECONDS = {"V": 1.0, "A": 1.0, "L": 5.0}   # tau_m per modality
COMMON_WINDOW = 1.0                      # tau, one prediction per second
RATING_PERIOD = 0.5                      # observer annotation rate
WINDOW_EPS = 1e-9                        # guards floor(t / tau) against float noise

# ---------------------
# Embedder (CNN + highway)
# ---------------------
EMBED_DIMS = {"V": 256, "A": 256, "L": 300}
KERNEL_SIZE = 2
CNN_DROPOUT = 0.3
GATE_MODE = "softmax"        # softmax | sigmoid

# ---------------------
# Transformer
# ---------------------
N_HEADS = 8
N_BLOCKS = 6
FFN_MULTIPLIER = 4
TRANSFORMER_DROPOUT = 0.1
POSITIONAL_MODE = "sinusoidal"   # sinusoidal | none
CAUSAL_ATTENTION = False

# ---------------------
# Recurrent decoder and memory fusion
# ---------------------
DECODER_HIDDEN = 128
MEMORY_DIM = 128
MFN_NET_HIDDEN = 128
DMAN_DROPOUT = 0.2
OUTPUT_DROPOUT = 0.5

# ---------------------
# Training
# ---------------------
LEARNING_RATE = 1e-3
MAX_EPOCHS = 50
PATIENCE = 5
CLIP_NORM = 5.0
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# ---------------------
# Synthetic corpus
# ---------------------
SYNTH_FEATURE_DIMS = {"V": 32, "A": 16, "L": 50}
FULL_FEATURE_DIMS = {"V": 1000, "A": 88, "L": 300}
SYNTH_PERIODS = {"V": 0.1, "A": 1.0, "L": 0.3}
WORD_JITTER = 0.1            # +/- uniform jitter on word-event times
CLIP_DURATION_MEAN = 135.0   # 2 min 15 s
CLIP_DURATION_STD = 15.0
CLIP_DURATION_MIN = 30.0
OBSERVERS_PER_CLIP = 20
OBSERVER_NOISE = 0.15
OBSERVER_LAG = 0.5           # seconds
LATENT_STEP = 0.05           # random-walk step std at the 0.1 s latent rate
LATENT_REVERSION = 0.01      # pull towards 0 per latent step; 0 gives a pure walk
LATENT_SMOOTHNESS = 10       # moving-average window, in latent steps
FEATURE_NOISE = 0.3
N_TARGETS = 10
CLIPS_PER_TARGET = 2

# ---------------------
# Splits
# ---------------------
SPLIT_RATIOS = (0.6, 0.2, 0.2)
PARTITIONS = ("train", "val", "test")

# ---------------------
# Command line
# ---------------------
THREADS_ENV = "ATTEND_AFFECT_THREADS"
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
