"""
Pruebas de los mapas de calor
"""

import numpy as np
import pytest
from lxml import etree

from utils.errors import ConfigError, ShapeError
from utils.heatmap import SVG_NS, emit_heatmap, read_dist_csv, to_gray, write_dist_csv, write_pgm
from utils.trainer import train


def test_uniform_distribution_is_all_white():
    np.testing.assert_array_equal(to_gray(np.full((3, 3), 1 / 9)), np.full((3, 3), 255))


def test_gray_levels_scale_by_maximum():
    gray = to_gray(np.array([[0.0, 0.25], [0.5, 0.25]]))
    np.testing.assert_array_equal(gray, [[0, 128], [255, 128]])
    np.testing.assert_array_equal(to_gray(np.zeros((2, 2))), np.zeros((2, 2)))


def test_pgm_layout(tmp_path):
    gray = np.array([[0, 255, 10]], dtype=np.uint8)
    raw = write_pgm(gray, tmp_path / 'heatmap.pgm').read_bytes()
    assert raw == b'P5\n3 1\n255\n' + bytes([0, 255, 10])


def test_dist_csv_round_trip_and_validation(tmp_path):
    grid = np.array([[0.1, 0.2], [0.3, 0.4]])
    path = write_dist_csv(grid, tmp_path / 'dist.csv')
    np.testing.assert_array_equal(read_dist_csv(path), grid)
    (tmp_path / 'bad.csv').write_text('0.5,0.5\n', encoding='utf-8')
    with pytest.raises(ShapeError):
        read_dist_csv(tmp_path / 'bad.csv')
    (tmp_path / 'negative.csv').write_text('0.5,-0.5\n0.5,0.5\n', encoding='utf-8')
    with pytest.raises(ShapeError):
        read_dist_csv(tmp_path / 'negative.csv')


def test_emit_from_unnormalized_csv(tmp_path):
    write_dist_csv(np.ones((4, 4)), tmp_path / 'dist.csv')
    paths = emit_heatmap(tmp_path / 'dist.csv')
    grid = read_dist_csv(paths['dist'])
    assert grid.sum() == pytest.approx(1.0)
    pixels = paths['pgm'].read_bytes()[len(b'P5\n4 4\n255\n'):]
    assert pixels == bytes([255] * 16)
    svg = etree.parse(str(paths['svg']))
    rects = svg.getroot().findall(f'{{{SVG_NS}}}rect')
    assert len(rects) == 16
    assert rects[0].get('fill') == 'rgb(255,255,255)'


def test_emit_rejects_empty_distribution(tmp_path):
    write_dist_csv(np.zeros((2, 2)), tmp_path / 'dist.csv')
    with pytest.raises(ShapeError):
        emit_heatmap(tmp_path / 'dist.csv')


def test_emit_from_run_directory(make_config):
    run_dir = train(make_config(algo='enn'))
    paths = emit_heatmap(run_dir)
    grid = read_dist_csv(paths['dist'])
    assert grid.shape == (4, 4)
    assert grid.sum() == pytest.approx(1.0, abs=1e-9)
    assert paths['pgm'].read_bytes().startswith(b'P5\n4 4\n255\n')
    assert np.max(to_gray(grid)) == 255


def test_heatmap_requires_a_2d_grid(make_config):
    run_dir = train(make_config(env={'kind': 'bitseq', 'seq_halflen': 2}))
    with pytest.raises(ConfigError):
        emit_heatmap(run_dir)
