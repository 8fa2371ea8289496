from flask import Config, Flask
from dotenv import load_dotenv
from pathlib import Path
import logging
import logging.config
import os

logger = logging.getLogger(__name__)

BASE_DIR = Path(__file__).parent.parent.absolute()
INSTANCE_DIR = BASE_DIR / "instance"

# Used when instance/config.py is missing or broken
DEFAULTS = {
    "SCHEDULER_POLICY": "cooperative",
    "MONITOR_TRANSPORT": None,
    "MONITOR_TIMEOUT": 10.0,
    "DEFAULT_SEED": 42,
    "FABRIC_LATENCY": 0,
    "BENCH_TARGET_MS": 2000.0,
    "BENCH_REPS": 3,
    "BENCH_SLICE_MS": 1.0,
    "BENCH_FLOW_COUNTS": (1, 2, 16, 128),
    "SWEEP_GRID": (32, 16, 16),
    "SWEEP_SWEEPS": 2,
    "SCALE_PLANE": (8, 8),
    "SULLIVAN_ROUNDS": 100,
    "SULLIVAN_N2_MAX": 8,
    "RESULTS_DATABASE_URL": f"sqlite:///{INSTANCE_DIR / 'weaves-results.db'}",
    "LOG_DIR": str(BASE_DIR / "logs"),
    "LOGGING_CONFIG": None,
}


def load_config(path=None) -> Config:
    """Read instance/config.py on top of the defaults."""
    load_dotenv(BASE_DIR / ".env")
    config = Config(str(BASE_DIR), DEFAULTS)
    target = Path(path) if path else INSTANCE_DIR / "config.py"
    try:
        config.from_pyfile(str(target))
        logger.debug(f"Configuration loaded from {target}")
    except Exception as e:
        logger.warning(f"Could not load config file: {e}")
    return config


def configure_logging(config: Config) -> None:
    log_dir = config.get("LOG_DIR")
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
    logging_config = config.get("LOGGING_CONFIG")
    if logging_config:
        logging.config.dictConfig(logging_config)
    else:
        logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def create_app(monitor, config: Config = None) -> Flask:
    """HTTP face of the monitor; every request goes through the same line protocol."""
    app = Flask(__name__, instance_path=str(INSTANCE_DIR))
    app.config.update(config or load_config())
    app.extensions["weaves_monitor"] = monitor

    from .routes import monitor_bp
    app.register_blueprint(monitor_bp)
    logger.info("Monitor blueprint registered")
    return app
