# config.py - created: 07.03.2025
# config.py - updated: 19.10.2026 - defaults for the soft-identifier recommender pipeline

# Paths
OUTPUT_ROOT = "runs"
OUTPUT_ROOT_ENV = "UNIGREC_OUT"
FIXTURE_DIR = "tests/data"

# Dataset
KCORE = 5
MAX_SEQ_LEN = 20
PAD_ITEM = -1
MIN_USER_INTERACTIONS = 3

# Embeddings
SYNTH_DIM = 64
SYNTH_CLUSTERS = 4
SYNTH_NOISE = 0.1
SYNTH_USERS = 200
SYNTH_CORPUS_ITEMS = 100
SYNTH_MIN_LEN = 8
SYNTH_MAX_LEN = 15
SYNTH_STAY_PROB = 0.8

# Tokenizer (RQ-VAE)
ENCODER_DIMS = [512, 256, 128, 64]
NUM_LEVELS = 3
CODEBOOK_SIZE = 256
CODE_DIM = 32
BETA = 0.25
TAU_MAX = 0.01
TAU_MIN = 0.001
ENTROPY_LOG_BASE = "natural"
DEDUP_SAFETY_FACTOR = 4

# Recommender
D_MODEL = 128
NUM_HEADS = 4
NUM_ENCODER_LAYERS = 2
NUM_DECODER_LAYERS = 2
FF_DIM = 512
DROPOUT = 0.1
BEAM_SIZE = 30
TOP_KS = [5, 10]

# Teacher
TEACHER_DIM = 64
TEACHER_BLOCKS = 2
TEACHER_HEADS = 1
TEACHER_DROPOUT = 0.2
TEACHER_LR = 1e-3
TEACHER_BATCH = 128
TEACHER_EPOCHS = 200
TEACHER_PATIENCE = 10

# Stage 1
PRETRAIN_BATCH = 1024
PRETRAIN_LR = 1e-3
PRETRAIN_EPOCHS = 100
LAMBDA_CU = 1e-4

# Stage 2
JOINT_BATCH = 512
BACKBONE_LR = 5e-3
TOKENIZER_LR = 2e-7
WEIGHT_DECAY = 0.05
JOINT_EPOCHS = 200
PATIENCE = 10
LAMBDA_RECON = 0.5
LAMBDA_CD_T = 0.1
LAMBDA_CD_R = 0.1
TAU_PRIME = 0.07
KL_CLAMP = 1e-10

# Any other constants
SEED = 42
