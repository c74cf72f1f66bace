"""Pytest wiring: configure Django the way ``manage.py test`` does."""
import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "endosir"))
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "endosir.settings")

import django  # noqa: E402

django.setup()
