import os
from pathlib import Path

# Get absolute path to the instance folder (where this config file is located)
BASE_DIR = Path(__file__).parent.parent.absolute()  # Go up one level from instance/
INSTANCE_DIR = Path(__file__).parent.absolute()     # instance/ directory

LOG_DIR = os.getenv('WEAVES_LOG_DIR', str(BASE_DIR / 'logs'))

# Scheduler: "cooperative" or "preempt:<quantum>" (guest calls between forced switches)
SCHEDULER_POLICY = os.getenv('WEAVES_POLICY', 'cooperative')
DEFAULT_SEED = int(os.getenv('WEAVES_SEED', 42))

# Monitor: None, "stdio", a local socket path, or "http:127.0.0.1:<port>"
MONITOR_TRANSPORT = os.getenv('WEAVES_MONITOR') or None
MONITOR_TIMEOUT = float(os.getenv('WEAVES_MONITOR_TIMEOUT', 10))

# Message fabric: virtual ticks between send and delivery (0 = direct delivery)
FABRIC_LATENCY = int(os.getenv('WEAVES_FABRIC_LATENCY', 0))

# Benchmark settings
BENCH_TARGET_MS = float(os.getenv('WEAVES_BENCH_TARGET_MS', 2000))
BENCH_REPS = int(os.getenv('WEAVES_BENCH_REPS', 3))
BENCH_SLICE_MS = 1.0
BENCH_FLOW_COUNTS = (1, 2, 16, 128)

# Demo settings
SWEEP_GRID = (32, 16, 16)
SWEEP_SWEEPS = 2
SCALE_PLANE = (8, 8)  # (ny, nz) of one slab per VM in the scalability run
SULLIVAN_ROUNDS = 100
SULLIVAN_N2_MAX = 8

# Benchmark ledger - Use absolute path
DB_PATH = INSTANCE_DIR / 'weaves-results.db'
RESULTS_DATABASE_URL = os.getenv('WEAVES_RESULTS_DATABASE_URL', f'sqlite:///{DB_PATH}')

# Logging configuration
LOGGING_CONFIG = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'default': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        },
        'detailed': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - [%(threadName)s] %(funcName)s - %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'level': 'INFO',
            'formatter': 'default',
            'stream': 'ext://sys.stderr',
        },
        'file': {
            'class': 'logging.FileHandler',
            'filename': str(Path(LOG_DIR) / 'weaves.log'),
            'level': 'DEBUG',
            'formatter': 'detailed',
        },
        'error_file': {
            'class': 'logging.FileHandler',
            'filename': str(Path(LOG_DIR) / 'errors.log'),
            'level': 'ERROR',
            'formatter': 'detailed',
        },
    },
    'loggers': {
        '': {  # root logger
            'handlers': ['console'],
            'level': 'WARNING',
        },
        'weaves': {
            'handlers': ['console', 'file', 'error_file'],
            'level': os.getenv('WEAVES_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
        'werkzeug': {  # HTTP monitor request lines
            'handlers': ['file'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}
