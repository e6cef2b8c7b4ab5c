"""
Runtime settings for prompt_vit_lab.

Per-run hyperparameters live in the experiment config (see prompt_vit_cli.configs);
this module only holds process-wide environment concerns.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# Load environment variables from .env file
load_dotenv(BASE_DIR.parent / ".env")


# Output / data locations
OUTPUT_ROOT = Path(os.environ.get("PROMPT_VIT_OUTPUT_ROOT", BASE_DIR.parent / "runs"))

# Torch intra-op threads (0 = leave torch default)
TORCH_NUM_THREADS = int(os.environ.get("PROMPT_VIT_TORCH_THREADS", "0"))

# Ablation / sweep cell execution: "local" (inline loop) or "celery"
ABLATION_EXECUTOR = os.environ.get("PROMPT_VIT_ABLATION_EXECUTOR", "local")

# Logging
LOG_LEVEL = os.environ.get("PROMPT_VIT_LOG_LEVEL", "INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "format": "%(asctime)s %(levelname)s [%(name)s] %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "default",
            "stream": "ext://sys.stderr",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": LOG_LEVEL,
    },
}

# Celery settings
CELERY_BROKER_URL = os.environ.get("REDIS_URL", "redis://localhost:6380/0")
CELERY_RESULT_BACKEND = os.environ.get("REDIS_URL", "redis://localhost:6380/0")
CELERY_ACCEPT_CONTENT = ["json"]
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"
CELERY_TIMEZONE = "UTC"
CELERY_TASK_TRACK_STARTED = True
CELERY_TASK_TIME_LIMIT = 60 * 60  # one grid cell
