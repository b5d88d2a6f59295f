"""Smoke test for the srtlab Python bindings."""

import srtlab_py as s


def main():
    assert s.ast(0.5, 0.8, 600.0) == 600.0
    assert s.propagate_sd(3.0, 4.0) == 5.0
    rmse, bias, r2, n = s.compare([2.0, 1.0, 5.0, 4.0], [1.0, 2.0, 3.0, 4.0])
    assert abs(bias - 0.5) < 1e-9 and abs(r2 - 0.5) < 1e-9 and n == 4
    try:
        s.compare([1.0], [1.0, 2.0])
    except ValueError:
        pass
    else:
        raise AssertionError("length mismatch accepted")

    oracle = s.OracleSurface.worked_example()
    r = s.run_darf_oracle(oracle, -5.0)
    lines = r.trace.splitlines()
    assert lines[1] == "estimate -5.00", lines
    assert "region train 0,6 test -12,-9,-6,-3" in lines
    assert abs(r.srt + 8.52) < 0.01, r
    assert r.budget_s < 35 * 60

    unaided = s.Scenario('id = "u"\nprofile = "N3"\nmasker = "silence"')
    aided = s.Scenario('id = "a"\nprofile = "N3"\nmasker = "silence"\ndevice = "gain:0"\nfitting = "half-gain"')
    assert s.benefit(unaided, -2.0, aided, -8.0) == 6.0
    assert s.initial_estimate("NH", 65.0) == -8.0

    runner = s.Runner(s.Scenario('id = "o"').with_oracle(oracle, -5.0))
    a, b = runner.darf(3), runner.darf(3)
    assert a.srt == b.srt
    _, ref = runner.fade(1)
    table = runner.sweep([120, 240], [20], 2, ref)
    assert len(table.strip().splitlines()) == 4
    print("smoke test passed:", r)


if __name__ == "__main__":
    main()
