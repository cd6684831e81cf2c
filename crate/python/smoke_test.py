"""Smoke test for the qsphere_py extension.

Run with ``python python/smoke_test.py`` or ``pytest python/smoke_test.py``
after ``pip install -e crates/qsphere-py --no-build-isolation``.
"""

import json
import math

import qsphere_py as qs


def test_pochhammer():
    # (1/2; 1/2)_inf
    assert math.isclose(qs.qpoch(0.5, 0.5).real, 0.288788095086602421, rel_tol=1e-14)
    assert qs.qpoch(0.5, 0.5, 0) == 1
    assert math.isclose(qs.qpoch(2.0, 0.5, 2).real, (1 - 2.0) * (1 - 1.0), abs_tol=1e-15)


def test_q_binomial():
    a, z, q = 0.7 + 0.2j, 0.4 - 0.3j, 0.6
    lhs = qs.phi([a], [], q, z)
    rhs = qs.qpoch(a * z, q) / qs.qpoch(z, q)
    assert abs(lhs - rhs) <= 1e-12 * abs(rhs)


def test_kernel():
    v = qs.kernel(1, "++", "-q^1", x=0.6)
    assert abs(v - 0.03127553567838105j) < 1e-12
    assert qs.kernel(1, "+-", "+q^0", discrete_n=1) == 0
    try:
        qs.kernel(1, "++", "-q^0", x=0.6)
    except qs.QSphereError as e:
        name, message = e.args
        assert name == "DomainError"
        assert "negative branch" in message
    else:
        raise AssertionError("-q^0 was accepted")


def test_lattice():
    pts = qs.lattice_points(-1, 1)
    assert set(pts) == {"+q^-1", "+q^0", "+q^1", "-q^1"}


def test_forward_grading():
    f = {"q": 0.5, "window": {"k_min": -3, "k_max": 3},
         "even": [{"sign": -1, "k": 2, "re": 1.0, "im": 0.0}], "odd": []}
    field = json.loads(qs.forward(json.dumps(f), nodes=8, n_max=2))
    for entry in field["principal"]:
        # layout (+,+), (-,+), (+,-), (-,-): the even part sits on the diagonal
        assert entry["m"][1] == [0.0, 0.0] and entry["m"][2] == [0.0, 0.0]


def test_verify():
    cfg = json.loads(qs.default_config())
    cfg["draws"]["qseries"] = 20
    cfg["draws"]["continuation"] = 10
    a = qs.verify(["qseries"], json.dumps(cfg))
    b = qs.verify(["qseries"], json.dumps(cfg))
    assert a == b
    report = json.loads(a)
    assert report["passed"] is True
    assert report["config"]["draws"]["qseries"] == 20


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
