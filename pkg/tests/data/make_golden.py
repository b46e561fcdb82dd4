"""Regenerate the golden cube and model files and their digests.

Run from the repository root: ``python3 tests/data/make_golden.py``.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from fkkec.cubeio import SpectralCube, write_cube
from fkkec.mlmodel import save_model, train
from fkkec.simulate import PhantomConfig, generate_phantom

HERE = Path(__file__).parent
GOLDEN_CONFIG = {"side_scale": 0.1, "n_freq": 64, "freq_start": 500.0, "freq_end": 1800.0,
                 "rng_seed": 11}


def golden_cube():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(2, 3, 4)) + 1j * rng.normal(size=(2, 3, 4))
    mask = np.array([[True, False, True], [False, False, True]])
    return SpectralCube(data, np.array([1.0, 2.5, 4.0, 8.0]), {"roi": mask})


def golden_model():
    cube, ref, _ = generate_phantom(PhantomConfig.from_dict(GOLDEN_CONFIG))
    return train(cube, ref, seed=0)[0]


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def main():
    write_cube(HERE / "golden_cube.rfcb", golden_cube())
    model = golden_model()
    save_model(HERE / "golden_model.rfmc", model)
    info = {"config": GOLDEN_CONFIG,
            "cube_sha256": digest(HERE / "golden_cube.rfcb"),
            "model_sha256": digest(HERE / "golden_model.rfmc"),
            "model_k": model.k,
            "model_s0": float(model.s[0]),
            "cube_first": [float(golden_cube().data[0, 0, 0].real),
                           float(golden_cube().data[0, 0, 0].imag)]}
    (HERE / "golden.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
