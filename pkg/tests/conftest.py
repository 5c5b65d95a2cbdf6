import numpy as np
import pytest

from mvrecon.sfm_io import CameraIntrinsics, PosedImage, ScenePoint, SfmModel


def make_camera(camera_id=1, model="PINHOLE", width=64, height=48,
                fx=100.0, fy=100.0, cx=32.0, cy=24.0, radial_k=0.0):
    return CameraIntrinsics(camera_id, model, width, height, fx, fy, cx, cy, radial_k)


def make_image(image_id=1, camera_id=1, qvec=(1, 0, 0, 0), tvec=(0, 0, 0),
               name=None, xys=None, pids=None):
    if xys is None:
        xys = np.zeros((0, 2))
        pids = np.zeros(0, dtype=np.int64)
    return PosedImage(
        image_id, camera_id, np.asarray(qvec, float), np.asarray(tvec, float),
        name or f"img_{image_id:03d}.png", np.asarray(xys, float),
        np.asarray(pids, np.int64),
    )


def make_point(pid, xyz, track):
    """track: list of (image_id, obs_index)."""
    return ScenePoint(
        pid, np.asarray(xyz, float), (10, 20, 30), 0.5,
        [t[0] for t in track], [t[1] for t in track],
    )


def random_model(rng: np.random.Generator, n_cameras=2, n_images=3, n_points=20):
    """A random but internally consistent SfM model for round-trip tests."""
    models = ["SIMPLE_PINHOLE", "PINHOLE", "SIMPLE_RADIAL"]
    cameras = {}
    for cid in range(1, n_cameras + 1):
        w = int(rng.integers(16, 256))
        h = int(rng.integers(16, 256))
        model_name = models[int(rng.integers(len(models)))]
        fx = float(rng.uniform(50, 500))
        fy = fx if model_name != "PINHOLE" else float(rng.uniform(50, 500))
        k = float(rng.uniform(-0.1, 0.1)) if model_name == "SIMPLE_RADIAL" else 0.0
        cameras[cid] = CameraIntrinsics(
            cid, model_name, w, h, fx, fy,
            float(rng.uniform(0, w)), float(rng.uniform(0, h)), k,
        )
    # images with observations; some point to 3D points, some to -1
    track_lists: dict[int, list[tuple[int, int]]] = {p: [] for p in range(1, n_points + 1)}
    images = {}
    obs_plan: dict[int, list[int]] = {}
    for iid in range(1, n_images + 1):
        n_obs = int(rng.integers(0, 12))
        pid_choices = []
        for _ in range(n_obs):
            if n_points and rng.random() < 0.7:
                pid_choices.append(int(rng.integers(1, n_points + 1)))
            else:
                pid_choices.append(-1)
        obs_plan[iid] = pid_choices
    used_points = sorted({p for pids in obs_plan.values() for p in pids if p != -1})
    for iid, pid_choices in obs_plan.items():
        seen = set()
        for k, p in enumerate(pid_choices):
            if p != -1:
                if p in seen:
                    pid_choices[k] = -1  # one observation of a point per image
                else:
                    seen.add(p)
                    track_lists[p].append((iid, k))
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        images[iid] = PosedImage(
            iid, int(rng.integers(1, n_cameras + 1)), q,
            rng.normal(size=3) * 5, f"frame_{iid:04d}.png",
            rng.uniform(0, 200, size=(len(pid_choices), 2)),
            np.asarray(pid_choices, np.int64),
        )
    points = {}
    for p in used_points:
        if not track_lists[p]:
            continue
        points[p] = ScenePoint(
            p, rng.normal(size=3) * 10,
            tuple(int(c) for c in rng.integers(0, 256, size=3)),
            float(rng.uniform(0, 2)),
            [t[0] for t in track_lists[p]], [t[1] for t in track_lists[p]],
        )
    model = SfmModel(cameras, images, points)
    model.validate()
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(0)
