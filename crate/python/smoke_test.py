"""Smoke test for the kinsdf Python module.

Build and run from the repository root:

    cargo build --release -p kinsdf-py
    cp target/release/libkinsdf_py.so python/kinsdf.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import kinsdf


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    theta = [(0.0, 0.0, 0.0)] * 16
    theta[0] = (0.3, -0.7, 0.2)
    theta[6] = (-0.9, 0.0, 0.1)
    joints = kinsdf.forward_kinematics(theta)
    assert len(joints) == 21

    rec_theta, rec_phi, degenerate = kinsdf.inverse_kinematics(joints)
    again = kinsdf.forward_kinematics(rec_theta, rec_phi)
    err = max(abs(a - b) for p, q in zip(joints, again) for a, b in zip(p, q))
    assert err < 1e-6, err
    assert not any(degenerate)

    assert len(kinsdf.hand_features(joints[9], joints)) == 51
    of = kinsdf.object_features((0.01, 0.05, 0.0), (0.01, 0.05, 0.0), joints)
    assert len(of) == 72 and of[3:6] == [0.0, 0.0, 0.0]

    sphere = kinsdf.Mesh.icosphere(1.0, 4)
    assert len(sphere.vertices) == 2562 and sphere.is_watertight()
    d = sphere.signed_distance([(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)])
    assert close(d[0], -1.0, 2e-3) and close(d[1], 1.0, 2e-3), d

    n = 32
    step = 2.0 / (n - 1)
    values = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                x, y, z = -1 + i * step, -1 + j * step, -1 + k * step
                values.append(math.sqrt(x * x + y * y + z * z) - 0.5)
    iso = kinsdf.marching_cubes(values, n, (-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    assert iso.is_watertight() and iso.euler_characteristic() == 2
    assert iso.signed_volume() > 0

    pts = iso.sample_surface(2000, 0)
    assert kinsdf.chamfer_distance(pts, pts) == 0.0
    assert kinsdf.f_score(pts, pts, 0.01) == 1.0
    scale, shift, residual = kinsdf.align_scale_translation([(2 * x, 2 * y, 2 * z) for x, y, z in pts], pts)
    assert close(scale, 0.5, 1e-6) and residual < 1e-10
    assert kinsdf.joint_error(joints, joints) == 0.0

    try:
        kinsdf.inverse_kinematics(joints[:5])
    except ValueError:
        pass
    else:
        raise AssertionError("short joint list accepted")

    print(f"kinsdf {kinsdf.__version__}: python smoke test passed ({iso!r})")


if __name__ == "__main__":
    main()
