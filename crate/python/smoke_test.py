"""Smoke test for the mimopac extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke_test.py`.
"""

import math

import mimopac


def diag(q):
    return [q[i][i].real for i in range(len(q))]


def main():
    h = mimopac.ChannelMatrix(
        [
            [0.0541 - 0.4066j, -0.4339 + 0.0033j],
            [-1.3200 - 0.1872j, 0.8269 - 0.0279j],
        ]
    )
    p = mimopac.PowerConstraint([0.5, 0.5])

    r = mimopac.opt_cov(h, p)
    print(r)
    assert r.converged
    assert abs(r.gap) < 1e-8
    assert all(abs(a - b) < 1e-6 for a, b in zip(diag(r.q), p.powers))
    assert r.slackness is not None and r.slackness < 1e-6
    assert abs(h.rate(r.q) - r.rate) < 1e-12

    mac = mimopac.mac_rate(h, p)
    sum_rate, water_level, _ = mimopac.waterfill_sum(h, p.total)
    assert mac <= r.rate + 1e-9 <= sum_rate + 2e-9
    assert water_level > 0

    pg_rate, _, pg_converged = mimopac.pg_solve(h, p)
    assert pg_converged and abs(pg_rate - r.rate) < 1e-6

    forced = mimopac.forced_eigenbeam(h, p)
    if forced is not None:
        assert forced[0] <= r.rate + 1e-9

    row = mimopac.ChannelMatrix([[1 + 1j, 0.5 - 2j, -0.3j]])
    p3 = mimopac.PowerConstraint([0.2, 0.3, 0.5])
    closed, _ = mimopac.miso_closed_form(row, p3)
    assert abs(mimopac.opt_cov(row, p3).rate - closed) < 1e-8

    wide = mimopac.ChannelMatrix.rayleigh(2, 4, seed=3)
    pw = mimopac.PowerConstraint.equal(4, 1.0)
    rw = mimopac.opt_cov(wide, pw, trace=True)
    assert rw.converged and len(rw.gap_trace) == rw.iterations + 1
    assert rw.rank <= 2

    back = mimopac.ChannelMatrix.from_json(h.to_json())
    assert back.rows() == h.rows()

    try:
        mimopac.ChannelMatrix([[1, 2], [2, 4]])
    except ValueError as e:
        assert "singular value" in str(e)
    else:
        raise AssertionError("rank-deficient channel accepted")

    print(f"rate {r.rate:.6f} nats ({r.rate / math.log(2):.6f} bits), "
          f"mac {mac:.6f}, sum {sum_rate:.6f}")
    print("ok")


if __name__ == "__main__":
    main()
