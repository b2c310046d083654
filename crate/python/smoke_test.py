"""Smoke test for the llmcc_py extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import llmcc_py as m


def main():
    assert m.bounded_target(500, 0.08) == 460
    assert m.reduction_rate(75.0, 50.0, 100.0) == 0.125
    assert m.calibrate_thresholds([10.0 * i for i in range(1, 12)]) == (60.0, 90.0)
    assert m.percentile([3.0, 1.0, 2.0], 50.0) == 2.0
    try:
        m.calibrate_thresholds([5.0] * 4)
    except ValueError:
        pass
    else:
        raise AssertionError("degenerate series accepted")

    c = m.LinearController(50.0, 100.0)
    for s in range(5):
        c.ingest(s, 50.0)
    assert c.active and c.current_r == 0.05

    trace = m.generate_trace(7, "30:0-2.5,60:2.5,30:0.2")
    assert trace.duration_ms == 120_000 and len(trace) > 0
    assert m.Trace.from_csv(trace.to_csv()).fingerprint == trace.fingerprint

    unbounded = m.simulate(trace, seed=1)
    tbt = [x for x in unbounded.tbt_series() if x is not None]
    t1, t2 = m.calibrate_thresholds(tbt)
    bounded = m.simulate(trace, seed=1, t1_ms=t1, t2_ms=t2)
    report = unbounded.compare(bounded, 0, min(unbounded.horizon_s, bounded.horizon_s))
    assert report["rewritten_requests"] > 0
    assert m.simulate(trace, seed=1).summary() == unbounded.summary()
    print(
        f"ok: {len(trace)} requests, t1={t1:.2f} t2={t2:.2f}, "
        f"energy delta {report['energy_delta_pct']:.1f}%, "
        f"median r {report['median_r_active']:.3f}"
    )


if __name__ == "__main__":
    main()
