import os

from celery import Celery

os.environ.setdefault("PROMPT_VIT_ENV", "development")

app = Celery("prompt_vit_lab")

# Load CELERY_* names from the settings module
app.config_from_object("prompt_vit_lab.settings", namespace="CELERY")

# Grid-cell tasks live in prompt_vit_bench.tasks
app.autodiscover_tasks(["prompt_vit_bench"])
