import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from geoquant import exprlang as el
from geoquant.exprlang import BinOp, Call, Const, Neg, Num, Pow, Var

VARS = ["x1", "x2", "th1", "th2", "s"]

leaves = st.one_of(
    st.builds(Num, st.floats(0, 10, allow_nan=False).map(lambda v: complex(round(v, 3)))),
    st.sampled_from(VARS).map(Var),
    st.sampled_from(["i", "pi"]).map(Const),
)


def _extend(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(BinOp, st.sampled_from("+-*/"), children, children),
        st.builds(Pow, children, st.integers(-3, 4)),
        st.builds(Call, st.sampled_from(el.FUNCTIONS), children),
    )


exprs = st.recursive(leaves, _extend, max_leaves=12)


def test_parse_examples():
    e = el.parse("2+sin(2*pi*th1)")
    assert el.evaluate(e, {"th1": 0.0}) == 2
    e = el.parse("i*(1+x1^2)")
    assert el.evaluate(e, {"x1": 2.0}) == 5j
    assert el.evaluate(el.parse("2^3"), {}) == 8
    assert el.evaluate(el.parse("exp(0)"), {}) == 1


def test_precedence_and_associativity():
    ev = lambda t: el.evaluate(el.parse(t), {})
    assert ev("2-3-4") == -5
    assert ev("8/4/2") == 1
    assert ev("2*3^2") == 18
    assert ev("-2^2") == -4
    assert ev("(-2)^2") == 4
    assert ev("2^-1") == 0.5
    assert ev("1+2*3") == 7


def test_parse_error_offsets():
    with pytest.raises(el.ParseError) as exc:
        el.parse("sin(")
    assert exc.value.offset == 4
    with pytest.raises(el.ParseError) as exc:
        el.parse("1 + $")
    assert exc.value.offset == 4
    with pytest.raises(el.ParseError) as exc:
        el.parse("x1^1.5")
    assert exc.value.offset == 3


def test_unknown_identifier_and_dimension():
    with pytest.raises(el.ParseError):
        el.parse("foo(x1)")
    with pytest.raises(el.ParseError):
        el.parse("y1")
    with pytest.raises(el.ParseError) as exc:
        el.parse("x1 + x2", n=1)
    assert exc.value.offset == 5
    el.parse("x2 + th2", n=2)


def test_eval_errors():
    with pytest.raises(el.EvalError):
        el.evaluate(el.parse("x1 + 1"), {})
    with pytest.raises(el.EvalError, match="division by zero"):
        el.evaluate(el.parse("1/ (x1-x1)"), {"x1": 0.3})
    with pytest.raises(el.EvalError):
        el.evaluate(el.parse("x1^-2"), {"x1": 0.0})


def test_evaluate_broadcasts():
    v = el.evaluate(el.parse("x1*th1"), {"x1": np.arange(3.0), "th1": 2.0})
    assert np.array_equal(v, [0, 2, 4])


def test_diff_examples():
    d = el.diff(el.parse("sin(2*pi*th1)"), "th1")
    th = np.linspace(0, 1, 7)
    assert np.allclose(el.evaluate(d, {"th1": th}), 2 * math.pi * np.cos(2 * math.pi * th))
    assert el.diff(el.parse("cos(th1)*exp(th2)"), "x1") == el.ZERO


@settings(max_examples=200, deadline=None)
@given(exprs)
def test_print_parse_round_trip(e):
    text = el.to_string(e)
    e2 = el.parse(text)
    assert e2 == e
    assert el.to_string(e2) == text


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="x1th2+-*/^()sinco .0123456789", max_size=20))
def test_parse_print_parse_idempotent(text):
    try:
        e = el.parse(text)
    except el.ParseError:
        return
    assert el.parse(el.to_string(e)) == e


@settings(max_examples=150, deadline=None)
@given(exprs, st.sampled_from(VARS), st.integers(0, 2**31 - 1))
def test_diff_against_central_differences(e, var, seed):
    rng = np.random.default_rng(seed)
    pts = {v: rng.uniform(-1, 1, 100) for v in VARS}
    h = 1e-6
    d = el.diff(e, var)
    try:
        with np.errstate(all="ignore"):
            up = el.evaluate(e, {**pts, var: pts[var] + h})
            dn = el.evaluate(e, {**pts, var: pts[var] - h})
            up2 = el.evaluate(e, {**pts, var: pts[var] + 2 * h})
            dn2 = el.evaluate(e, {**pts, var: pts[var] - 2 * h})
            exact = el.evaluate(d, pts)
    except el.EvalError:
        assume(False)
    fd = (up - dn) / (2 * h)
    fd2 = (up2 - dn2) / (4 * h)
    ok = np.isfinite(fd) & np.isfinite(fd2) & np.isfinite(exact) & (np.abs(exact) < 1e4)
    # stay away from branch cuts of sqrt and near-singular points
    base = el.evaluate(e, pts)
    ok &= np.abs(base) < 1e4
    assume(ok.sum() >= 50)
    # FD error is O(h^2 f''') plus roundoff O(eps |f| / h); the truncation
    # part is estimated per point from the 2h step (Richardson)
    trunc = np.abs(fd2 - fd) / 3
    tol = 1e-6 * np.maximum(1, np.abs(exact)) + 1e-9 * np.abs(base) / h + 2 * trunc
    good = np.abs(fd - exact)[ok] <= tol[ok]
    assert good.mean() >= 0.95


def test_diff_on_builtin_families():
    from geoquant.families import SPECS

    rng = np.random.default_rng(1)
    for name, spec in SPECS.items():
        n = spec["n"]
        xs, ths = el.var_names(n)
        for row in spec["a0"]:
            for entry in row:
                e = el.parse(entry, n)
                pts = {v: rng.uniform(-0.5, 0.5, 100) for v in xs + ths + ["s"]}
                for v in xs + ths:
                    h = 1e-5
                    fd = (el.evaluate(e, {**pts, v: pts[v] + h}) - el.evaluate(e, {**pts, v: pts[v] - h})) / (2 * h)
                    ex = el.evaluate(el.diff(e, v), pts)
                    assert np.allclose(fd, ex, rtol=1e-6, atol=1e-6), (name, entry, v)


def test_substitute_and_free_vars():
    e = el.parse("x1*th1 + s")
    assert el.free_vars(e) == {"x1", "th1", "s"}
    e2 = el.substitute(e, {"x1": el.parse("2*th1")})
    assert el.free_vars(e2) == {"th1", "s"}
    assert el.evaluate(e2, {"th1": 3.0, "s": 1.0}) == 19
