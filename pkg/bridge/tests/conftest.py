import pytest

# The engine's suite must stay runnable without the bridge package; skip
# this directory cleanly when it (or torch) is absent.
pytest.importorskip("boxal_bridge")
pytest.importorskip("torch")
