# Model (desk scale)
DEFAULT_LAYERS = 4
DEFAULT_DIM = 32
DEFAULT_JOINTS = 8
DEFAULT_RAW_FRAMES = 64
DEFAULT_DOWNSAMPLE = 4
DEFAULT_HEADS = 4
DEFAULT_TEXT_DIM = 64
DEFAULT_FF_MULT = 2
DEFAULT_GN_GROUPS = 4
DEFAULT_GCN_LAYERS = 3

# Diffusion
DEFAULT_DIFFUSION_STEPS = 50
DEFAULT_GUIDANCE_SCALE = 4.0
DEFAULT_COND_DROPOUT = 0.1
DEFAULT_SAMPLING_VARIANCE = "posterior"

# Loss
DEFAULT_LAMBDA_FCF = 1.0
DEFAULT_LAMBDA_P = 10.0
FOUR_LAYER_WEIGHTS = (0.1, 0.2, 0.3, 0.4)
PERCEPTUAL_DIM = 64
PERCEPTUAL_SEED = 4242

# CCMD
DEFAULT_CCMD_REDUCTION = 4
DOMAINS = ("temp", "spa", "freq")

# Optimiser
DEFAULT_LR = 1e-4
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8
DEFAULT_WEIGHT_DECAY = 0.01
DEFAULT_BATCH = 8
FULL_SCALE_BATCH = 64
DEFAULT_ITERS = 2000
DEFAULT_LOG_EVERY = 100
DEFAULT_CHECKPOINT_EVERY = 500

# Data and evaluation
DEFAULT_SEED = 0
DEFAULT_CORPUS_SIZE = 64
DEFAULT_NORMALIZE = True
NORM_STD_FLOOR = 0.1
DEFAULT_REPEATS = 20
RETRIEVAL_POOL = 32
DIVERSITY_PAIRS = 32
RIDGE_PENALTY = 1e-2
CONFIDENCE_Z = 1.96

# Environment caps
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_EVAL_WORKERS = 1
MAX_EVAL_WORKERS = 8
DEFAULT_SELFTEST_TRIALS = 100
MAX_SELFTEST_TRIALS = 1000

# File formats
TENSOR_HEADER = "TENSOR v1"
CHECKPOINT_HEADER = "TRIC v1"
SIGNIFICANT_DIGITS = 9
