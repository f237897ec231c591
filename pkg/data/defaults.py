"""Default hyperparameters and experiment sizes."""

# Optimisation and early stopping
LEARNING_RATE = 0.0005
BATCH_SIZE = 64
PATIENCE = 10
MAX_EPOCHS = 200
VALIDATION_FRACTION = 0.1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Losses
SMOOTH_L1_BETA = 0.001

# No-algorithm training
TRAJECTORIES = 10
GUMBEL_TEMPERATURE = 1.0

# Architecture
HIDDEN_DIM = 32
HIDDEN_DIM_NEPP_MULTITASK = 16

# Termination threshold on sigmoid(termination logit) at evaluation time
TERMINATION_THRESHOLD = 0.5

# Graph generation
WEIGHT_LOW = 0.2
WEIGHT_HIGH = 1.0
BA_ATTACHMENT = 4
FAMILIES = ("ER", "BA", "GRID")

# Desk-scale experiment defaults; configs/full.yaml restores the full-size setting
DESK_TRAIN_NODES = 12
DESK_TRAIN_COUNT = 1000
DESK_EVAL_SIZES = (12, 24, 48)
DESK_EVAL_COUNT = 50
