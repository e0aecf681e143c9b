import numpy as np
import pytest

from mavsim import run_scenario
from mavsim.plots import PRESETS, UnknownSeriesError, emit_plot_data, parse_columns, select


@pytest.fixture(scope="module")
def log():
    lg, _ = run_scenario({"duration": 2.0, "seed": 3,
                          "sensors": {"ultrasonic": {"dropout_prob": 0.3}}})
    return lg


def test_presets_write_csv_and_png(log, tmp_path):
    for name, preset in PRESETS.items():
        paths = emit_plot_data(log, name, tmp_path)
        assert [p.suffix for p in paths] == [".csv", ".png"]
        text = paths[0].read_text()
        assert text.splitlines()[0] == ",".join(preset.columns)
        assert paths[1].stat().st_size > 1000


def test_round_trip_is_exact(log, tmp_path):
    for name in PRESETS:
        path = emit_plot_data(log, name, tmp_path, png=False)[0]
        back = parse_columns(path.read_text())
        for col, arr in back.items():
            assert np.array_equal(arr, log[col])


def test_height_preset_keeps_zeros(log):
    s = select(log, "height")
    assert list(s) == ["t", "us_down"]
    assert np.any(s["us_down"] == 0.0)


def test_gyro_preset_pairs_rate_with_correction(log):
    assert list(select(log, "gyro")) == ["t", "gyro_x", "dem_roll"]


def test_unknown_and_empty_selection_list_catalog(log):
    with pytest.raises(UnknownSeriesError) as exc:
        select(log, ["t", "altitude"])
    assert "altitude" in str(exc.value) and "us_down" in str(exc.value)
    with pytest.raises(UnknownSeriesError, match="empty selection"):
        select(log, [])
    with pytest.raises(UnknownSeriesError):
        select(log, "fig99")


def test_decimal_format_is_locale_free(log, tmp_path):
    import locale
    try:
        locale.setlocale(locale.LC_NUMERIC, "de_DE.UTF-8")
    except locale.Error:
        pass
    path = emit_plot_data(log, "wall", tmp_path, png=False)[0]
    locale.setlocale(locale.LC_NUMERIC, "C")
    row = path.read_text().splitlines()[5].split(",")
    # a comma decimal separator would split the row into more fields
    assert len(row) == 3
    [float(v) for v in row]
