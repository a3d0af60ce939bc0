"""Sweep harness tests: grid coverage, CSV schema, resume semantics, plotting."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from patchcraft.svgplot import render_sweep_svg
from patchcraft.sweep import (SWEEP_COLUMNS, CompareRow, SweepCsvError,
                              SweepGrid, SweepRow, derive_run_seed,
                              pick_best_settings, read_sweep_csv, run_sweep,
                              write_compare_csv, write_sweep_csv)


def fake_row(point, seed=0, train=0.9, test=0.8, status="ok"):
    layers, patch, heads = point
    return SweepRow(layers, patch, heads,
                    train if status == "ok" else None,
                    test if status == "ok" else None,
                    epochs=1, seed=seed, wall_seconds=0.01, status=status)


def fake_runner(calls):
    def run(grid, point):
        calls.append(point)
        # accuracy derived from the point so reruns are comparable
        layers, patch, heads = point
        return fake_row(point, seed=derive_run_seed(grid.base_seed, *point),
                        train=0.5 + layers / 100, test=0.4 + heads / 100)
    return run


class TestGrid:
    def test_default_grid_has_18_ordered_points(self):
        grid = SweepGrid(data_dir="unused")
        points = grid.points()
        assert len(points) == 18
        assert points[0] == (8, 8, 2)
        assert points[1] == (8, 8, 4)
        assert points[3] == (8, 12, 2)
        assert points[-1] == (12, 16, 8)
        assert points == sorted(points, key=lambda p: (
            grid.layers.index(p[0]), grid.patch_sizes.index(p[1]),
            grid.heads.index(p[2])))

    def test_empty_axis_rejected(self):
        with pytest.raises(ValueError):
            SweepGrid(data_dir="x", heads=())

    def test_run_seed_is_stable_and_decorrelated(self):
        a = derive_run_seed(7, 8, 8, 2)
        assert a == derive_run_seed(7, 8, 8, 2)
        others = {derive_run_seed(7, l, p, h)
                  for l in (8, 12) for p in (8, 12, 16) for h in (2, 4, 8)}
        assert len(others) == 18


class TestSweepCsv:
    def test_header_is_schema_stable(self, tmp_path):
        path = tmp_path / "s.csv"
        write_sweep_csv(path, [fake_row((8, 8, 2))])
        first_line = path.read_text().splitlines()[0]
        assert first_line == "layers,patch_size,heads,train_acc,test_acc,epochs,seed,wall_seconds,status"

    def test_round_trip(self, tmp_path):
        rows = [fake_row((8, 8, 2)), fake_row((8, 8, 4), status="error: boom")]
        path = tmp_path / "s.csv"
        write_sweep_csv(path, rows)
        back = read_sweep_csv(path)
        assert [r.key for r in back] == [(8, 8, 2), (8, 8, 4)]
        assert back[0].train_acc == pytest.approx(0.9)
        assert back[1].train_acc is None
        assert back[1].status == "error: boom"

    def test_empty_file_is_a_parse_error(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(SweepCsvError, match="line 1"):
            read_sweep_csv(path)

    def test_bad_header_is_a_parse_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n")
        with pytest.raises(SweepCsvError, match="line 1"):
            read_sweep_csv(path)

    def test_bad_row_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text(",".join(SWEEP_COLUMNS) + "\n"
                        + "8,8,2,0.9,0.8,1,0,0.01,ok\n"
                        + "8,8,not_an_int,0.9,0.8,1,0,0.01,ok\n")
        with pytest.raises(SweepCsvError, match="line 3"):
            read_sweep_csv(path)

    def test_wrong_field_count_reports_line_number(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text(",".join(SWEEP_COLUMNS) + "\n8,8,2\n")
        with pytest.raises(SweepCsvError, match="line 2"):
            read_sweep_csv(path)


class TestRunSweep:
    def _grid(self, tmp_path):
        return SweepGrid(data_dir=str(tmp_path), patch_sizes=(8, 12), heads=(2, 4),
                         layers=(8,), epochs=1)

    def test_runs_every_point_once(self, tmp_path):
        calls = []
        grid = self._grid(tmp_path)
        rows = run_sweep(grid, tmp_path / "out.csv", run_point=fake_runner(calls))
        assert len(rows) == 4
        assert calls == grid.points()
        assert all(r.status == "ok" for r in rows)

    def test_resume_skips_completed_rows(self, tmp_path):
        grid = self._grid(tmp_path)
        out = tmp_path / "out.csv"
        first_calls = []
        run_sweep(grid, out, run_point=fake_runner(first_calls))

        second_calls = []
        rows = run_sweep(grid, out, run_point=fake_runner(second_calls))
        assert second_calls == []
        assert len(rows) == 4

    def test_deleted_row_is_the_only_rerun(self, tmp_path):
        grid = self._grid(tmp_path)
        out = tmp_path / "out.csv"
        run_sweep(grid, out, run_point=fake_runner([]))

        rows = read_sweep_csv(out)
        removed = rows.pop(1)
        write_sweep_csv(out, rows)

        calls = []
        run_sweep(grid, out, run_point=fake_runner(calls))
        assert calls == [removed.key]

    def test_error_rows_are_rerun_on_resume(self, tmp_path):
        grid = self._grid(tmp_path)
        out = tmp_path / "out.csv"
        write_sweep_csv(out, [fake_row(p, status="error: crashed")
                              for p in grid.points()])
        calls = []
        run_sweep(grid, out, run_point=fake_runner(calls))
        assert calls == grid.points()
        assert all(r.status == "ok" for r in read_sweep_csv(out))

    def test_accuracy_columns_identical_across_reruns(self, tmp_path):
        grid = self._grid(tmp_path)
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        run_sweep(grid, a, run_point=fake_runner([]))
        run_sweep(grid, b, run_point=fake_runner([]))
        assert a.read_text() == b.read_text()

    def test_output_rows_follow_grid_order_even_with_jobs(self, tmp_path):
        # order is asserted on the written file; parallel completion order
        # must not leak into it (single-writer rewrite keeps grid order)
        grid = self._grid(tmp_path)
        out = tmp_path / "out.csv"
        run_sweep(grid, out, run_point=fake_runner([]))
        assert [r.key for r in read_sweep_csv(out)] == grid.points()


class TestCompareHelpers:
    def test_pick_best_by_test_accuracy(self):
        rows = [fake_row((8, 8, 2), test=0.70), fake_row((12, 8, 4), test=0.90),
                fake_row((8, 8, 8), test=0.80), fake_row((8, 12, 2), test=0.99)]
        rows[1] = SweepRow(12, 8, 4, 0.9, 0.90, 1, 0, 0.0, "ok")
        assert pick_best_settings(rows, patch=8, default=(8, 2)) == (12, 4)
        assert pick_best_settings(rows, patch=16, default=(8, 2)) == (8, 2)
        assert pick_best_settings([], patch=8, default=(12, 8)) == (12, 8)

    def test_compare_csv_schema(self, tmp_path):
        path = tmp_path / "cmp.csv"
        write_compare_csv(path, [CompareRow("ViT-8", 0.98, 0.93),
                                 CompareRow("SVM", 0.87, 0.83)])
        lines = path.read_text().splitlines()
        assert lines[0] == "model,train_acc,test_acc"
        assert lines[1] == "ViT-8,0.980000,0.930000"
        assert len(lines) == 3


class TestPlot:
    def _full_rows(self, test_acc=None):
        rows = []
        rng = np.random.default_rng(0)
        for layers in (8, 12):
            for patch in (8, 12, 16):
                for heads in (2, 4, 8):
                    acc = test_acc if test_acc is not None else float(rng.uniform(0.5, 1.0))
                    rows.append(SweepRow(layers, patch, heads, 0.9, acc, 1, 0, 0.1))
        return rows

    def test_six_polylines_for_default_grid(self):
        svg = render_sweep_svg(self._full_rows())
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")
        polylines = [el for el in root.iter() if el.tag.endswith("polyline")]
        assert len(polylines) == 6

    def test_legend_names_every_variant(self):
        svg = render_sweep_svg(self._full_rows())
        for patch in (8, 12, 16):
            for layers in (8, 12):
                assert f"ViT-{patch} (layers={layers})" in svg

    def test_equal_accuracies_give_horizontal_lines(self):
        svg = render_sweep_svg(self._full_rows(test_acc=0.75))
        root = ET.fromstring(svg)
        for el in root.iter():
            if el.tag.endswith("polyline"):
                ys = {pt.split(",")[1] for pt in el.attrib["points"].split()}
                assert len(ys) == 1

    def test_no_plottable_rows_rejected(self):
        with pytest.raises(ValueError, match="plottable"):
            render_sweep_svg([fake_row((8, 8, 2), status="error: x")])

    def test_error_rows_are_excluded(self):
        rows = self._full_rows()
        rows.append(fake_row((12, 16, 8), status="error: x"))
        svg = render_sweep_svg(rows)
        polylines = [el for el in ET.fromstring(svg).iter()
                     if el.tag.endswith("polyline")]
        assert len(polylines) == 6
