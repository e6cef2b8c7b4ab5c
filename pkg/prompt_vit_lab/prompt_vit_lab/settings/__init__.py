import os

if os.environ.get("PROMPT_VIT_ENV", "development") == "product":
    from .product import *
else:
    from .development import *
