import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from guidedmvs.geometry import Camera, Extrinsics, Intrinsics, look_at

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng: np.random.Generator, width=64, height=48, max_angle=None) -> Camera:
    K = Intrinsics(
        rng.uniform(40, 120), rng.uniform(40, 120),
        rng.uniform(0.3, 0.7) * width, rng.uniform(0.3, 0.7) * height, width, height,
    )
    if max_angle is None:
        R = random_rotation(rng)
    else:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        ang = rng.uniform(-max_angle, max_angle)
        Kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        R = np.eye(3) + np.sin(ang) * Kx + (1 - np.cos(ang)) * Kx @ Kx
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
    return Camera(K, Extrinsics(R, rng.normal(size=3)))


def camera_pair(rng: np.random.Generator, width=64, height=48, baseline=0.5, target=(0.0, 0.0, 6.0)):
    """Reference at the origin and a source looking at ``target`` from a nearby position."""
    K = Intrinsics(80.0, 80.0, (width - 1) / 2, (height - 1) / 2, width, height)
    ref = Camera(K)
    center = rng.normal(size=3) * baseline
    src = Camera(K, look_at(center, target))
    return ref, src


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    reports = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "") == "call" and "test_acceptance.py::test_criterion_" in rep.nodeid:
                reports.append(rep)
    if not reports:
        return
    reports.sort(key=lambda r: int(r.nodeid.split("test_criterion_")[1].split("_")[0]))
    terminalreporter.section("acceptance criteria")
    for rep in reports:
        name = rep.nodeid.split("::")[-1].replace("test_", "", 1)
        detail = ", ".join(f"{k}={v}" for k, v in rep.user_properties)
        terminalreporter.write_line(f"{name}: {'pass' if rep.passed else 'FAIL'}  [{detail}]")
