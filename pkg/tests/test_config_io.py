import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvfret import config, io
from nvfret.errors import ConfigError, DataFormatError
from nvfret.fitting import GateSpec
from nvfret.flim import LifetimeMap
from nvfret.grid import FlimCube, IrfSpec, TcspcHistogram, TimeGrid


def test_defaults_round_trip():
    cfg = config.RunConfig()
    assert config.loads(config.dumps(cfg)) == cfg


def test_loads_overrides_and_nested_compositions():
    cfg = config.loads(
        "model.foerster_radius_nm = 20\n"
        "model.distance_exponent = 6\n"
        "grid.bin_width_ps = 64.0\n"
        "scene.on.acceptor_weight = 2.5\n"
        "scene.polygons = [[[0, 0], [4, 0], [2, 3]]]\n"
        "fit.objective = \"weighted-least-squares\"\n"
    )
    assert cfg.model.foerster_radius_nm == 20.0
    assert cfg.model.distance_exponent == 6
    assert cfg.grid.bin_width_ps == 64.0
    assert cfg.scene.on_flake.acceptor_weight == 2.5
    assert cfg.scene.polygons == (((0.0, 0.0), (4.0, 0.0), (2.0, 3.0)),)
    assert config.loads(config.dumps(cfg)) == cfg


@pytest.mark.parametrize("text", [
    "model.no_such_key = 1\n",
    "model.distance_exponent = 5\n",
    "model.foerster_radius_nm = \"far\"\n",
    "grid.n_bins = 10.5\n",
    "fit.components = 3\n",
    "scene.polygons = [1, 2]\n",
    "model.depth_sigma_nm = -1\n",
    "not toml at all = = \n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        config.loads(text)


def test_missing_required_key_is_named(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("grid.n_bins = 512\n")
    with pytest.raises(ConfigError, match="model.foerster_radius_nm"):
        config.load(path, ("model.foerster_radius_nm",))
    with pytest.raises(ConfigError):
        config.load(tmp_path / "absent.toml")


def test_known_keys_cover_every_dumped_key():
    keys = {line.split(" = ")[0] for line in config.dumps(config.RunConfig()).splitlines()}
    assert keys <= set(config.known_keys())


def test_histogram_csv_round_trip(tmp_path):
    grid = TimeGrid(32.0, 50)
    h = TcspcHistogram(grid, np.arange(50))
    path = tmp_path / "h.csv"
    io.write_histogram_csv(h, path)
    text = path.read_text().splitlines()
    assert text[0] == "time_ps,counts" and text[2] == "32,1"
    back = io.read_histogram_csv(path)
    assert back.grid == grid
    np.testing.assert_array_equal(back.counts, h.counts)


@pytest.mark.parametrize("body", [
    "t,counts\n0,1\n32,2\n",
    "time_ps,counts\n0,1\n32,x\n",
    "time_ps,counts\n0,1\n32,-2\n",
    "time_ps,counts\n0,1\n32,2\n70,3\n",
    "time_ps,counts\n5,1\n37,2\n",
    "time_ps,counts\n0,1\n",
])
def test_histogram_csv_errors(tmp_path, body):
    path = tmp_path / "h.csv"
    path.write_text(body)
    with pytest.raises(DataFormatError):
        io.read_histogram_csv(path)


def test_missing_histogram_is_a_format_error(tmp_path):
    with pytest.raises(DataFormatError):
        io.read_histogram_csv(tmp_path / "nope.csv")


def _cube():
    grid = TimeGrid(64.0, 16, 128.0)
    counts = np.arange(3 * 2 * 16, dtype=np.uint32).reshape(2, 3, 16)
    return FlimCube(3, 2, grid, counts, 80.0, {"seed": 4, "photons_per_pixel": 1e4})


def test_cube_round_trip(tmp_path):
    cube = _cube()
    path = tmp_path / "c.bin"
    io.write_cube(cube, path)
    assert path.stat().st_size == cube.counts.size * 4
    back = io.read_cube(path)
    np.testing.assert_array_equal(back.counts, cube.counts)
    assert back.grid == cube.grid and back.pixel_size_nm == 80.0
    assert back.metadata == {"seed": "4", "photons_per_pixel": "10000"}
    # the payload is bin-major within each pixel
    raw = np.fromfile(path, dtype="<u4")
    np.testing.assert_array_equal(raw[16:32], cube.counts[0, 1])


def test_cube_errors(tmp_path):
    path = tmp_path / "c.bin"
    io.write_cube(_cube(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(DataFormatError):
        io.read_cube(path)
    path.write_bytes(raw)
    meta = tmp_path / "c.bin.meta"
    text = meta.read_text()
    meta.write_text(text.replace("endianness=little", "endianness=big"))
    with pytest.raises(DataFormatError):
        io.read_cube(path)
    meta.write_text(text.replace("n_bins=16\n", ""))
    with pytest.raises(DataFormatError, match="n_bins"):
        io.read_cube(path)
    with pytest.raises(DataFormatError):
        io.read_cube(tmp_path / "absent.bin")


def _map():
    return LifetimeMap(
        cls=np.array([[0, 1], [2, 1]], dtype=np.int8),
        tau_slow=np.array([[np.nan, 12.1], [4.2, 11.9]]),
        tau_slow_sigma=np.array([[np.nan, 0.3], [0.2, 0.25]]),
        tau_fast=np.array([[np.nan, np.nan], [0.43, np.nan]]),
        tau_fast_sigma=np.array([[np.nan, np.nan], [0.02, np.nan]]),
        amp_slow=np.array([[np.nan, 50.0], [10.0, 51.0]]),
        amp_fast=np.array([[np.nan, np.nan], [120.0, np.nan]]),
        counts=np.array([[40, 10000], [9999, 10001]]),
        goodness=np.array([[np.nan, 1.01], [0.98, 1.0]]),
        pixel_size_nm=100.0,
        grid=TimeGrid(64.0, 1024),
        irf=IrfSpec(),
        gate=GateSpec(),
    )


def test_map_csv_round_trip(tmp_path):
    m = _map()
    path = tmp_path / "m.csv"
    io.write_map_csv(m, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("row,col,class,tau_slow_ns,tau_slow_sigma,tau_fast_ns,"
                               "tau_fast_sigma,counts,goodness")
    assert lines[1].startswith("0,0,low-signal,,,,,40,")
    back = io.read_map_csv(path)
    np.testing.assert_array_equal(back.cls, m.cls)
    np.testing.assert_array_equal(back.counts, m.counts)
    for name in ("tau_slow", "tau_fast", "amp_fast", "goodness"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    assert back.grid == m.grid and back.irf == m.irf and back.gate == m.gate


def test_map_csv_without_optional_parts(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("row,col,class,tau_slow_ns,tau_slow_sigma,tau_fast_ns,tau_fast_sigma,counts,goodness\n"
                    "0,0,off-flake,12.0,0.3,,,10000,1.0\n")
    m = io.read_map_csv(path)
    assert m.grid is None and np.isnan(m.amp_slow[0, 0])
    path.write_text("row,col,class,tau_slow_ns,tau_slow_sigma,tau_fast_ns,tau_fast_sigma,counts,goodness\n"
                    "0,0,sideways,12.0,0.3,,,10000,1.0\n")
    with pytest.raises(DataFormatError):
        io.read_map_csv(path)


@settings(max_examples=30, deadline=None)
@given(counts=st.lists(st.integers(min_value=0, max_value=2**31), min_size=2, max_size=40),
       width=st.sampled_from([1.0, 16.0, 32.0, 64.0, 250.0]))
def test_histogram_csv_round_trip_property(tmp_path_factory, counts, width):
    path = tmp_path_factory.mktemp("h") / "h.csv"
    h = TcspcHistogram(TimeGrid(width, len(counts)), np.array(counts))
    io.write_histogram_csv(h, path)
    back = io.read_histogram_csv(path)
    np.testing.assert_array_equal(back.counts, h.counts)
    assert back.grid.bin_width_ps == width
