from .base import *

# Grid cells go to the worker pool through the broker
CELERY_TASK_ALWAYS_EAGER = False
