import pytest
from fastapi.testclient import TestClient

from mvrecon.service.app import app

client = TestClient(app)


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("svc_scene")
    resp = client.post("/synth", json={
        "output_dir": str(d),
        "shape": "room",
        "n_views": 8,
        "image_width": 32, "image_height": 32,
        "sparse_points_per_view": 200,
        "fov_deg": 100.0,
        "seed": 11,
    })
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["views"] == 8
    assert body["points"] == 8 * 200
    return d


def config_payload(scene, out_dir) -> dict:
    return {
        "config": {
            "model_dir": str(scene / "model"),
            "output_dir": str(out_dir),
            "provider": {
                "kind": "synthetic_oracle",
                "directory": str(scene / "gt_depth"),
                "scale": 1.5, "shift": 0.2,
            },
            "fusion": {"mode": "tsdf", "voxel_budget": 48**3},
            "evaluation": {
                "gt_mesh": str(scene / "gt_mesh.ply"),
                "tau": 0.15, "sample_count": 10000,
            },
        }
    }


def test_health():
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_stagewise_endpoints(scene, tmp_path):
    payload = config_payload(scene, tmp_path)
    for endpoint in ("project", "condition", "predict"):
        resp = client.post(f"/{endpoint}", json=payload)
        assert resp.status_code == 200, resp.text
        assert resp.json()["stage"] == endpoint
        assert len(resp.json()["views"]) == 8
    resp = client.post("/align", json=payload)
    assert resp.status_code == 200
    entries = resp.json()["alignment"]
    assert len(entries) == 8
    for e in entries:
        assert abs(e["scale"] - 1 / 1.5) < 0.02
    resp = client.post("/fuse", json=payload)
    assert resp.status_code == 200
    assert resp.json()["mode"] == "tsdf"
    assert resp.json()["triangles"] > 0
    resp = client.post("/evaluate", json=payload)
    assert resp.status_code == 200
    body = resp.json()
    assert body["gates_passed"] is True
    assert body["metrics"]["fscore"] > 0.9


def test_reconstruct_endpoint(scene, tmp_path):
    payload = config_payload(scene, tmp_path)
    resp = client.post("/reconstruct", json=payload)
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert body["stage"] == "reconstruct"
    assert body["gates_passed"] is True
    assert body["metrics"]["chamfer"] < 0.12
    assert len(body["alignment"]) == 8


def test_missing_model_maps_to_404(tmp_path):
    payload = {
        "config": {
            "model_dir": str(tmp_path / "absent"),
            "output_dir": str(tmp_path / "out"),
        }
    }
    resp = client.post("/project", json=payload)
    assert resp.status_code == 404
    body = resp.json()
    assert body["error"] == "MissingFile"


def test_validation_error_rejected(tmp_path):
    payload = {
        "config": {
            "model_dir": str(tmp_path),
            "output_dir": str(tmp_path),
            "alignment": {"method": "magic"},
        }
    }
    resp = client.post("/align", json=payload)
    assert resp.status_code == 422


def test_mvrecon_error_maps_to_422(scene, tmp_path):
    # alignment without predictions on disk -> MissingFile -> 404
    payload = config_payload(scene, tmp_path)
    resp = client.post("/align", json=payload)
    assert resp.status_code == 404


def test_synth_invalid_spec():
    resp = client.post("/synth", json={"output_dir": "/tmp/x", "shape": "torus"})
    assert resp.status_code == 422
    assert resp.json()["error"] == "InvalidSpec"
