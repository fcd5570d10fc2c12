# Configuration for the MoQE MNIST-parity simulator

import os

VERSION = "0.1.0"

# --- Paths ---
DATA_DIR = os.environ.get("MOQE_DATA_DIR", "data/mnist")
OUT_DIR = os.environ.get("MOQE_OUT_DIR", "runs")

# --- MNIST files ---
# Canonical file names; a trailing ".gz" is also accepted.
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
MNIST_COUNTS = {"train": 60_000, "test": 10_000}
# SHA-256 of the gzipped canonical distribution, as listed in TensorFlow Datasets' MNIST checksums.
# A gzipped file is checked under its own name and its decompressed payload under the bare name;
# `verify-data --write-digests` records payload digests so decompressed copies can be pinned
# with `--digests manifest.json`. Files with no pin fail unless `--allow-unpinned` is given.
MNIST_SHA256 = {
    "train-images-idx3-ubyte.gz": "440fcabf73cc546fa21475e81ea370265605f56be210a4024d2ca8f203523609",
    "train-labels-idx1-ubyte.gz": "3552534a0a558bbed6aed32b30c495cca23d567ec52cac8be1a0730e8010255c",
    "t10k-images-idx3-ubyte.gz": "8d422c7b0a1c1c79245a5bcf07fe86e33eeafee792b84584aec276f5a2dbc4e6",
    "t10k-labels-idx1-ubyte.gz": "f7ae60f92e00ec6debd23a6088c31dbd2371eca3ffa0defaefb259924204aec6",
}
MNIST_FETCH_HINT = (
    "Download the four *-ubyte.gz files of the MNIST distribution (any mirror) into the data directory; "
    "they are read gzipped or uncompressed."
)

# --- Dataset split ---
# Training indices 0..59999 are shuffled with numpy's PCG64 generator seeded through
# SeedSequence(seed) (Generator.permutation, a Fisher-Yates shuffle); the first
# TRAIN_SELECTION_SIZE indices train, the rest are held out.
TRAIN_SELECTION_SIZE = 50_000
HELD_OUT_SIZE = 10_000

# --- Encoding ---
RAW_SIZE = 28
PADDED_SIZE = 32
PAD = 2
NUM_QUBITS = 10
PIXEL_SCALE = 255.0

# --- Simulator ---
MAX_QUBITS = 20
MAX_ORACLE_QUBITS = 12
NORM_TOLERANCE = 1e-10
UNITARY_TOLERANCE = 1e-12

# --- Ansatz ---
SCHEDULE = "ladder21"
NUM_LAYERS = 3
PARAMS_PER_GATE = 4

# --- Gradients ---
GRADIENT_METHOD = "adjoint"
GRADIENT_METHODS = ("adjoint", "param-shift", "finite-diff")
FD_STEP = 1e-5
GRADCHECK_CONFIGS = 20
GRADCHECK_STEPS = (1e-4, 1e-5, 1e-6)
SHIFT_TOLERANCE = 1e-10
FD_TOLERANCE = 1e-6

# --- MoQE training ---
INIT_SCALE = 0.1
CALIBRATION_SIZE = 1024
BATCH_SIZE = 4
EPOCHS = 10
LEARNING_RATE = 0.01
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
SEED = 0
THREADS = 1
EVAL_CHUNK = 512

# --- Reports ---
HIST_RANGE = (-3.0, 3.0)
HIST_BINS = 60

# --- Baselines ---
QUAD_LEARNING_RATE = 0.001
CNN_CONFIG = (8, 8, 8, 8, 4)  # c1, c2, c3, c4, h
CNN_LEARNING_RATE = 0.005
QUANTUM_PARAMS_PER_EXPERT = 252

# --- Reference results ---
# num_experts -> (train acc, test acc, epochs)
REFERENCE_MOQE_RESULTS = {
    1: (0.9066, 0.9060, 39),
    2: (0.9337, 0.9321, 30),
    4: (0.9618, 0.9617, 35),
    8: (0.9686, 0.9706, 20),
    16: (0.9738, 0.9754, 12),
    32: (0.9755, 0.9743, 5),
}
# (c1, c2, c3, c4, h) -> (tabulated classical params, test acc mean, test acc std)
REFERENCE_CNN_RESULTS = {
    (2, 2, 2, 4, 4): (175, 0.9507, 0.0172),
    (2, 4, 4, 4, 4): (465, 0.9711, 0.0083),
    (4, 4, 4, 8, 8): (905, 0.9772, 0.0029),
    (8, 8, 8, 8, 4): (1969, 0.9874, 0.0005),
    (16, 16, 8, 4, 2): (3969, 0.9899, 0.0001),
    (32, 16, 12, 8, 8): (7829, 0.9904, 0.0002),
}
REFERENCE_QUAD_TEST_ACCURACY = 0.98

# --- Logging ---
LOG_LEVEL = os.environ.get("MOQE_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
