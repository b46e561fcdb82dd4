import numpy as np
import pytest

from fkkec.cubeio import SpectralCube
from fkkec.errors import InvalidParameterError
from fkkec.simulate import (SIDE_SCALES, PhantomConfig, add_noise, concentration_map,
                            generate_phantom, pure_species_cube, side_scaled)


def test_base_dimensions(base_phantom):
    cube, ref, truth = base_phantom
    assert (cube.rows, cube.cols, cube.n_freq) == (74, 246, 810)
    assert cube.n_spectra == 18204
    assert cube.freq[0] == -500 and cube.freq[-1] == 2500
    assert ref.values.shape == (810,)
    assert truth.im_chi_ratio.shape == (18204, 810)


@pytest.mark.parametrize("scale,count", [(0.5, 4551), (1, 18204), (2, 72816), (3, 163836),
                                         (4, 291264)])
def test_side_scaled_counts(scale, count):
    assert side_scaled(PhantomConfig(), scale).n_spectra == count
    assert scale in SIDE_SCALES


def test_deterministic():
    cfg = PhantomConfig(side_scale=0.1, rng_seed=7)
    a, ra, _ = generate_phantom(cfg)
    b, rb, _ = generate_phantom(cfg)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(ra.values, rb.values)
    c, _, _ = generate_phantom(PhantomConfig(side_scale=0.1, rng_seed=8))
    assert not np.array_equal(a.data, c.data)


def test_truth_invariants(small_phantom):
    cube, ref, truth = small_phantom
    assert np.all(cube.data >= 0)
    np.testing.assert_allclose(truth.concentrations.sum(-1), 1.0, atol=1e-12)
    assert np.all(truth.concentrations >= 0)
    assert np.all(truth.chi_nr_species >= 0)
    scale, shape = truth.error_model(slice(0, 100))
    assert np.all(scale > 0) and np.all(shape > 0)
    # I_ref = Xi * xi * I_NRB
    np.testing.assert_allclose(scale[:, None] * shape * truth.nrb(slice(0, 100)),
                               np.broadcast_to(ref.values, shape.shape), rtol=1e-12)
    for sp in truth.species:
        for p in sp.peaks:
            assert p.amplitude > 0 and p.width > 0 and 500 <= p.center <= 1700


def test_constant_nrb_no_peaks():
    cfg = PhantomConfig(side_scale=0.1, nrb_mode="constant", ref_mode="constant",
                        peak_counts=(0, 0, 0))
    cube, _, truth = generate_phantom(cfg)
    np.testing.assert_allclose(cube.data, np.broadcast_to(cube.data[..., :1], cube.data.shape),
                               rtol=1e-14)
    assert np.all(truth.im_chi_ratio == 0)
    chi_nr = truth.chi_nr()
    np.testing.assert_allclose(cube.flat(), chi_nr ** 2, rtol=1e-14)


def test_pure_pixels_match_pure_species():
    cfg = PhantomConfig(side_scale=0.1)
    conc = np.zeros((cfg.rows, cfg.cols, 3))
    conc[..., 1] = 1.0
    cube, _, truth = generate_phantom(cfg, concentrations=conc)
    pure = pure_species_cube(truth, 1, (cfg.rows, cfg.cols))
    np.testing.assert_allclose(cube.data, pure.data, rtol=1e-13)


def test_concentration_map_train_mask():
    cfg = PhantomConfig()
    cmap = concentration_map(cfg)
    assert cmap.shape == (74, 246, 3)
    cube, _, _ = generate_phantom(PhantomConfig(side_scale=0.2))
    rows, cols = cube.mask_bounds("train")
    assert rows == slice(0, cube.rows)
    assert cols.start > 0 and cols.stop < cube.cols


def test_invalid_config():
    with pytest.raises(InvalidParameterError):
        PhantomConfig(freq_start=10, freq_end=0)
    with pytest.raises(InvalidParameterError):
        PhantomConfig(peak_band=(-1000, 0))
    with pytest.raises(InvalidParameterError):
        PhantomConfig(nrb_mode="cubic")
    with pytest.raises(InvalidParameterError):
        PhantomConfig(side_scale=0)
    cfg = PhantomConfig(side_scale=0.1)
    assert PhantomConfig.from_dict(cfg.to_dict()) == cfg


def _constant_cube(value, shape=(400, 300, 1)):
    return SpectralCube(np.full(shape, value), np.array([0.0]))


def test_noise_identity():
    cube = _constant_cube(3.0, (2, 2, 1))
    out = add_noise(cube, 0, 0)
    np.testing.assert_array_equal(out.data, cube.data)
    assert out.data is not cube.data


def test_gaussian_noise_statistics():
    out = add_noise(_constant_cube(100.0), 0, 1.0, rng_seed=1).data
    n = out.size
    assert abs(out.mean() - 100.0) < 5 / np.sqrt(n)
    assert out.std() == pytest.approx(1.0, rel=0.03)


def test_poisson_noise_variance():
    out = add_noise(_constant_cube(100.0), 2.0, 0, rng_seed=2).data
    assert out.var() == pytest.approx(200.0, rel=0.05)
    a = add_noise(_constant_cube(100.0, (5, 5, 1)), 2.0, 1.0, rng_seed=3).data
    b = add_noise(_constant_cube(100.0, (5, 5, 1)), 2.0, 1.0, rng_seed=3).data
    np.testing.assert_array_equal(a, b)


def test_noise_errors():
    with pytest.raises(InvalidParameterError):
        add_noise(_constant_cube(1.0, (1, 1, 1)), -1, 0)
    with pytest.raises(InvalidParameterError):
        add_noise(SpectralCube(-np.ones((1, 1, 1)), np.array([0.0])), 1, 0)
