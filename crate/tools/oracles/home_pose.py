"""Solves for a home configuration placing the rod tip inside the box cavity,
pointing straight down. q1 = q3 = q5 = 0 and q7 = pi/4 are fixed; q2, q4, q6
are solved numerically."""
import numpy as np
from scipy.optimize import least_squares
from panda_fk import fk

TARGET = np.array([0.45, 0.0, 0.03])


def resid(x):
    q = np.array([0.0, x[0], 0.0, x[1], 0.0, x[2], np.pi / 4])
    T = fk(q)
    return np.concatenate([T[:3, 3] - TARGET, [T[0, 2], T[1, 2]]])


sol = least_squares(resid, [0.3, -2.3, 2.6], xtol=1e-15, ftol=1e-15, gtol=1e-15)
q = np.array([0.0, sol.x[0], 0.0, sol.x[1], 0.0, sol.x[2], np.pi / 4])
print("residual", np.abs(sol.fun).max())
print("q0 =", ", ".join(f"{v:.12f}" for v in q))
print("tip", fk(q)[:3, 3], "z-axis", fk(q)[:3, 2])
