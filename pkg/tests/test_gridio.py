import numpy as np
import pytest
import tifffile

from ntlcut.errors import RasterFormatError
from ntlcut.gridio import read_geotiff, read_grid, read_raster, write_geotiff, write_grid, write_raster
from ntlcut.raster import Raster


@pytest.fixture
def raster():
    v = np.random.default_rng(3).random((37, 53)).astype(np.float32) * 100
    return Raster(v, 0.0041666667, (-12.5, 48.25))


def test_grid_round_trip(tmp_path, raster):
    write_grid(tmp_path / "a.bin", raster)
    back = read_grid(tmp_path / "a.bin")
    assert np.array_equal(back.values, raster.values)
    assert back.pixel_size == raster.pixel_size and back.origin == raster.origin


def test_grid_header_layout(tmp_path):
    r = Raster(np.arange(6, dtype=np.uint8).reshape(2, 3), 0.5, (1.0, 2.0))
    write_grid(tmp_path / "u.bin", r)
    buf = (tmp_path / "u.bin").read_bytes()
    assert buf[:8] == (3).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert buf[32] == 1                      # dtype code for 8-bit
    assert buf[33:] == bytes(range(6))
    assert read_grid(tmp_path / "u.bin").values.dtype == np.uint8


def test_grid_truncated(tmp_path, raster):
    p = tmp_path / "t.bin"
    write_grid(p, raster)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(RasterFormatError):
        read_grid(p)


@pytest.mark.parametrize("tile", [None, 16])
def test_geotiff_round_trip(tmp_path, raster, tile):
    write_geotiff(tmp_path / "a.tif", raster, tile=tile)
    back = read_geotiff(tmp_path / "a.tif")
    assert np.array_equal(back.values, raster.values)
    assert back.pixel_size == pytest.approx(raster.pixel_size, rel=1e-12)
    assert back.origin == pytest.approx(raster.origin)


def test_geotiff_uint8_and_nodata(tmp_path):
    r = Raster(np.array([[0, 255], [7, 9]], np.uint8), 1.0, (0.0, 10.0), nodata=255.0)
    write_raster(tmp_path / "n.tif", r)
    back = read_raster(tmp_path / "n.tif")
    assert back.values.dtype == np.uint8 and back.nodata == 255.0
    assert back.valid_values().tolist() == [0, 7, 9]


def test_geotiff_without_georeference(tmp_path):
    tifffile.imwrite(tmp_path / "plain.tif", np.zeros((4, 4), np.float32))
    with pytest.raises(RasterFormatError):
        read_geotiff(tmp_path / "plain.tif")


def test_geotiff_multiband_rejected(tmp_path):
    tifffile.imwrite(tmp_path / "rgb.tif", np.zeros((4, 4, 3), np.uint8))
    with pytest.raises(RasterFormatError):
        read_geotiff(tmp_path / "rgb.tif")
