import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paulilab.io import FormatError, read_field, read_particles, write_field, write_particles
from paulilab.kinetic import ParticleEnsemble
from paulilab.spectral import make_grid


def test_real_field_round_trip(tmp_path):
    g = make_grid(2, (8, 16), (1.0, 2.5), origin=(-0.5, 0.25))
    v = np.random.default_rng(0).standard_normal((3,) + g.shape)
    path = tmp_path / "f.pwps"
    write_field(path, g, v, meta={"version": "x", "config_hash": "abc"})
    d = read_field(path)
    assert d.grid == g
    np.testing.assert_array_equal(d.values, v)
    assert d.meta == {"version": "x", "config_hash": "abc"}
    assert d.xi_grid is None and d.hbar is None


def test_complex_phase_field_round_trip(tmp_path):
    g = make_grid(1, 8, 4.0, origin=-2.0)
    xg = make_grid(1, 16, 6.0, origin=-3.0)
    rng = np.random.default_rng(1)
    v = rng.standard_normal((8, 16)) + 1j * rng.standard_normal((8, 16))
    path = tmp_path / "w.pwps"
    write_field(path, g, v, xi_grid=xg, hbar=0.125)
    d = read_field(path)
    assert d.xi_grid == xg and d.hbar == 0.125 and d.meta is None
    np.testing.assert_array_equal(d.values, v)


def test_field_shape_mismatch(tmp_path):
    g = make_grid(1, 8, 1.0)
    with pytest.raises(FormatError):
        write_field(tmp_path / "x.pwps", g, np.zeros(6))


def test_corrupt_files_rejected(tmp_path):
    g = make_grid(1, 8, 1.0)
    path = tmp_path / "f.pwps"
    write_field(path, g, np.zeros(8))
    raw = path.read_bytes()
    (tmp_path / "bad.pwps").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="not a PWPS"):
        read_field(tmp_path / "bad.pwps")
    (tmp_path / "short.pwps").write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="payload"):
        read_field(tmp_path / "short.pwps")
    (tmp_path / "ver.pwps").write_bytes(raw[:4] + (7).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="version"):
        read_field(tmp_path / "ver.pwps")
    with pytest.raises(FormatError):
        read_particles(path)


def test_particle_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    ens = ParticleEnsemble(rng.standard_normal((5, 2)), rng.standard_normal((5, 2)), np.full(5, 0.2),
                           (4.0, 4.0), (-2.0, -2.0))
    path = tmp_path / "p.pwpp"
    write_particles(path, ens, meta={"seed": 3})
    back, meta = read_particles(path, with_meta=True)
    assert meta == {"seed": 3}
    for a in ("x", "p", "w"):
        np.testing.assert_array_equal(getattr(back, a), getattr(ens, a))
    assert tuple(back.box) == (4.0, 4.0) and tuple(back.origin) == (-2.0, -2.0)
    free = ParticleEnsemble(ens.x, ens.p, ens.w)
    write_particles(path, free)
    assert read_particles(path).box is None


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 3), n=st.sampled_from([8, 10, 16]), comps=st.integers(1, 3), cplx=st.booleans(),
       seed=st.integers(0, 2**31))
def test_field_round_trip_property(tmp_path_factory, d, n, comps, cplx, seed):
    g = make_grid(d, n, 1.5)
    rng = np.random.default_rng(seed)
    shape = ((comps,) if comps > 1 else ()) + g.shape
    v = rng.standard_normal(shape) + (1j * rng.standard_normal(shape) if cplx else 0)
    path = tmp_path_factory.mktemp("rt") / "f.pwps"
    write_field(path, g, v)
    np.testing.assert_array_equal(read_field(path).values, v)
