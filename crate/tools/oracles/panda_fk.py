"""Independent forward-kinematics oracle for the Panda arm.

Uses the modified (Craig) Denavit-Hartenberg table published by Franka,
which is a different parameterisation from the URDF-style joint origins the
Rust crate loads from its config. Values printed here are frozen into the
kinematics tests.
"""
import sys
import numpy as np

# a_{i-1}, d_i, alpha_{i-1}
DH = [
    (0.0, 0.333, 0.0),
    (0.0, 0.0, -np.pi / 2),
    (0.0, 0.316, np.pi / 2),
    (0.0825, 0.0, np.pi / 2),
    (-0.0825, 0.384, -np.pi / 2),
    (0.0, 0.0, np.pi / 2),
    (0.088, 0.0, np.pi / 2),
]
FLANGE_D = 0.107
ROD = 0.1


def mdh(a, d, alpha, theta):
    ca, sa = np.cos(alpha), np.sin(alpha)
    ct, st = np.cos(theta), np.sin(theta)
    return np.array([
        [ct, -st, 0, a],
        [st * ca, ct * ca, -sa, -d * sa],
        [st * sa, ct * sa, ca, d * ca],
        [0, 0, 0, 1],
    ])


def fk(q, rod=ROD):
    T = np.eye(4)
    for (a, d, al), th in zip(DH, q):
        T = T @ mdh(a, d, al, th)
    T = T @ mdh(0.0, FLANGE_D + rod, 0.0, 0.0)
    return T


def quat(R):
    w = np.sqrt(max(0.0, 1 + R[0, 0] + R[1, 1] + R[2, 2])) / 2
    x = np.sqrt(max(0.0, 1 + R[0, 0] - R[1, 1] - R[2, 2])) / 2
    y = np.sqrt(max(0.0, 1 - R[0, 0] + R[1, 1] - R[2, 2])) / 2
    z = np.sqrt(max(0.0, 1 - R[0, 0] - R[1, 1] + R[2, 2])) / 2
    x = np.copysign(x, R[2, 1] - R[1, 2])
    y = np.copysign(y, R[0, 2] - R[2, 0])
    z = np.copysign(z, R[1, 0] - R[0, 1])
    return np.array([w, x, y, z])


if __name__ == "__main__":
    qs = [np.array(list(map(float, a.split(",")))) for a in sys.argv[1:]]
    for q in qs:
        T = fk(q)
        print("q =", ", ".join(f"{v:.17g}" for v in q))
        print("  p =", ", ".join(f"{v:.17g}" for v in T[:3, 3]))
        print("  quat =", ", ".join(f"{v:.17g}" for v in quat(T[:3, :3])))
