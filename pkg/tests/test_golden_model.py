import hashlib
import json
from pathlib import Path

import numpy as np

from fkkec.mlmodel import apply, load_model, save
from fkkec.simulate import PhantomConfig, generate_phantom

DATA = Path(__file__).parent / "data"
INFO = json.loads((DATA / "golden.json").read_text())


def test_golden_model_loads():
    raw = (DATA / "golden_model.rfmc").read_bytes()
    assert hashlib.sha256(raw).hexdigest() == INFO["model_sha256"]
    model = load_model(DATA / "golden_model.rfmc")
    assert model.k == INFO["model_k"]
    assert float(model.s[0]) == INFO["model_s0"]
    assert save(model) == raw
    assert model.metadata["seed"] == 0


def test_golden_model_applies():
    model = load_model(DATA / "golden_model.rfmc")
    cube, _, _ = generate_phantom(PhantomConfig.from_dict(INFO["config"]))
    out = apply(model, cube)
    assert out.data.shape == cube.data.shape
    assert np.all(np.isfinite(out.data))
