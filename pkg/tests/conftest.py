import numpy as np
import pytest

from sembox.geometry import Box3D


def random_box(rng, span=20.0, max_extent=6.0, class_id=1) -> Box3D:
    return Box3D(
        rng.uniform(-span, span), rng.uniform(-span, span), rng.uniform(-2, 2),
        rng.uniform(0.3, max_extent), rng.uniform(0.3, max_extent),
        rng.uniform(0.3, 3.0), rng.uniform(-np.pi, np.pi), class_id)


def monte_carlo_bev_iou(a: Box3D, b: Box3D, n_side: int = 256,
                        rng=None) -> float:
    """Stratified-jittered Monte-Carlo estimate of the BEV IoU.

    Samples cover the joint bounding rectangle on an n_side x n_side grid
    with one uniformly jittered sample per stratum; intersection area comes
    from the hit fraction, union from the exact footprint areas.
    """
    rng = rng or np.random.default_rng(0)
    ca, cb = a.corners_bev(), b.corners_bev()
    lo = np.minimum(ca.min(axis=0), cb.min(axis=0))
    hi = np.maximum(ca.max(axis=0), cb.max(axis=0))
    base = (np.stack(np.meshgrid(np.arange(n_side), np.arange(n_side)),
                     axis=-1).reshape(-1, 2) +
            rng.uniform(0, 1, (n_side * n_side, 2))) / n_side
    pts = lo + base * (hi - lo)
    bbox_area = float(np.prod(hi - lo))

    def inside(box, p):
        c, s = np.cos(box.yaw), np.sin(box.yaw)
        dx = p[:, 0] - box.cx
        dy = p[:, 1] - box.cy
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (np.abs(u) <= box.l / 2) & (np.abs(v) <= box.w / 2)

    inter = float((inside(a, pts) & inside(b, pts)).mean()) * bbox_area
    union = a.bev_area + b.bev_area - inter
    return 0.0 if union <= 0 else inter / union


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
