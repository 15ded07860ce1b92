"""Built-in test families A(s) = s A0 + s^2 R used by tests, configs and the CLI."""

from __future__ import annotations

from .compat_structures import SpadeFamily

# H(theta) = c (cos 2 pi th - cos 4 pi th): zero mean, H(0) = H'(0) = 0, so
# the base point (0, 0, t=0) is fixed by the F-hat shift.
H_COEF = 0.005
_HESS_H = f"{H_COEF}*(16*pi^2*cos(4*pi*th1) - 4*pi^2*cos(2*pi*th1))"

SPECS = {
    # A = s i: the flat model, exactly the frozen family
    "flat": dict(n=1, a0=[["i"]]),
    # Q0 independent of theta, P0 = Pbar + H'' plus x-linear terms, and an
    # O(s^2) remainder: the main convergence test family
    "spade": dict(
        n=1,
        a0=[[f"0.25 + {_HESS_H} + 0.5*x1 + i*(1 + 0.3*x1)"]],
        rem=[["0.15*i*cos(2*pi*th1)"]],
    ),
    # x-independent, Q0 constant: an F_s pullback of a flat metric
    "constq": dict(n=1, a0=[[f"0.25 + {_HESS_H} + i"]]),
    # theta-dependent Q0: Ricci unbounded below as s -> 0
    "varq": dict(n=1, a0=[["i*(2 + sin(2*pi*th1))"]]),
    # n = 2 constant structure with nonzero P
    "const2": dict(n=2, a0=[["0.3 + 1.2*i", "0.1 + 0.2*i"], ["0.1 + 0.2*i", "-0.4 + 0.9*i"]]),
    # n = 2 non-integrable example: A11 depends on th2
    "counter2": dict(n=2, a0=[["i*(2 + sin(2*pi*th2))", "0"], ["0", "i"]]),
}


def builtin(name: str) -> SpadeFamily:
    try:
        spec = SPECS[name]
    except KeyError:
        raise KeyError(f"unknown family {name!r}; choose from {sorted(SPECS)}") from None
    return SpadeFamily(n=spec["n"], a0_entries=spec["a0"], rem_entries=spec.get("rem"), name=name)
