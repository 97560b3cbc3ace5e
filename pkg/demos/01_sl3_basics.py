"""Homography parametrization basics.

An 8-vector in the Lie algebra sl(3) maps through the matrix exponential
to a unit-determinant homography, so an unconstrained least-squares
update can never leave the group.  This script walks that mapping and
its composition rules on a few concrete vectors.
"""

import numpy as np

from homreg import (
    exp_lie, inverse, lie_to_matrix, normalize_det, sl3_point_jacobian,
    translation, warp_points,
)

np.set_printoptions(precision=4, suppress=True)

# A pure-translation vector: the first two generators move the image
# along u and v and commute with each other.
v = np.zeros(8)
v[:2] = (3.0, -2.0)
H = exp_lie(v)
print("translation vector", v[:2], "->")
print(H)
print("det =", np.linalg.det(H))

# The same point warped through the matrix or the helper agree.
p = np.array([[10.0, 20.0], [0.0, 0.0]])
print("warped points:")
print(warp_points(H, p))

# A mixed motion: some rotation, scale and a little perspective.
v = np.array([1.0, 0.5, 0.2, 0.05, 0.02, 0.01, 1e-4, -5e-5])
H = exp_lie(v)
print("\nmixed motion H =")
print(H)
print("det =", np.linalg.det(H), "(exactly 1 up to rounding)")

# Composition in the group equals composing the warps.
H2 = translation(5.0, 1.0)
left = warp_points(H @ H2, p)
right = warp_points(H, warp_points(H2, p))
print("\ncomposition mismatch:", np.abs(left - right).max())

# Round trip through the inverse.
print("H @ inverse(H) - I:", np.abs(H @ inverse(H) - np.eye(3)).max())

# Each basis vector produces a traceless matrix, which is what keeps
# the exponential inside SL(3).
print()
for k in range(8):
    e = np.zeros(8)
    e[k] = 1.0
    A = lie_to_matrix(e)
    print(f"generator {k}: trace = {np.trace(A):+.1f}")

# The warp Jacobian at the identity tells the solver how each Lie
# coordinate moves a pixel; far from the origin the projective rows
# grow quadratically, which is why coarse pyramid levels are tame.
pts = np.array([[1.0, 1.0], [100.0, 100.0]])
J = sl3_point_jacobian(pts)
print("\n|dw/dv| at (1,1):   max", np.abs(J[0]).max())
print("|dw/dv| at (100,100): max", np.abs(J[1]).max())

# normalize_det rescales any nonsingular matrix back onto SL(3).
M = 3.0 * translation(1.0, 2.0)
print("\nnormalize_det(3*T) det =", np.linalg.det(normalize_det(M)))
