import base64
import io
import json
import threading

import numpy as np
import pytest
import requests
import torch
from PIL import Image

from tcupgan.model import ConvLSTMUNet, DiscriminatorConfig, GeneratorConfig, PatchDiscriminator
from tcupgan.pipeline import SynthConfig, synthesize_dataset
from tcupgan.service import ReviewService, serve
from tcupgan.triage import SelectionCut, apply_cut, export_review_queue, score_dataset


@pytest.fixture(scope="module")
def queue_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("loop")
    manifest = synthesize_dataset(
        SynthConfig(n_cubes=2, depth=3, size=64, radius_range=(5.0, 12.0),
                    depth_radius_range=(1.0, 2.0), seed=13), root / "data")
    torch.manual_seed(1)
    gen = ConvLSTMUNet(GeneratorConfig(widths=(2, 4)))
    disc = PatchDiscriminator(DiscriminatorConfig(widths=(2, 2, 2, 2)))
    stats = score_dataset(gen, disc, manifest)
    selection = apply_cut(stats, SelectionCut(w_mean=1.0, w_var=0.0, bias=-1.0))
    queue_path = export_review_queue(selection, manifest, gen, disc, root / "queue")
    return manifest, queue_path


@pytest.fixture()
def service(queue_setup, tmp_path):
    manifest, queue_path = queue_setup
    return ReviewService(queue_path, manifest, tmp_path / "state")


def make_mask_png(size=64, seed=0) -> bytes:
    arr = (np.random.default_rng(seed).random((size, size)) > 0.5).astype(np.uint8) * 255
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


class TestReviewServiceState:
    def test_queue_starts_pending(self, service):
        views = service.queue_view()
        assert len(views) == 6
        assert all(v["status"] == "pending" and not v["broken"] for v in views)

    def test_correction_transitions_item(self, service):
        first = service.queue_view()[0]
        cid = service.ingest_correction(first["cube_id"], first["slice_index"],
                                        "tester", make_mask_png())
        assert cid.startswith("corr-")
        views = {(v["cube_id"], v["slice_index"]): v for v in service.queue_view()}
        assert views[(first["cube_id"], first["slice_index"])]["status"] == "corrected"
        assert len(service.queue_view(status="corrected")) == 1
        assert len(service.queue_view(status="pending")) == 5

    def test_idempotent_resubmission(self, service):
        item = service.queue_view()[0]
        payload = make_mask_png(seed=3)
        a = service.ingest_correction(item["cube_id"], item["slice_index"], "t", payload)
        log_len = len(service.log)
        b = service.ingest_correction(item["cube_id"], item["slice_index"], "t", payload)
        assert a == b
        assert len(service.log) == log_len

    def test_newer_correction_supersedes(self, service):
        item = service.queue_view()[1]
        key = (item["cube_id"], item["slice_index"])
        first = make_mask_png(seed=4)
        second = make_mask_png(seed=5)
        id1 = service.ingest_correction(*key, "t", first)
        id2 = service.ingest_correction(*key, "t", second)
        assert id1 != id2
        assert service.latest[key].correction_id == id2
        assert service.latest[key].supersedes == id1
        assert service.latest_correction_bytes(*key) == second

    def test_wrong_dimensions_rejected_with_expected(self, service):
        item = service.queue_view()[0]
        with pytest.raises(ValueError, match=r"\(64, 64\)"):
            service.ingest_correction(item["cube_id"], item["slice_index"], "t",
                                      make_mask_png(size=32))

    def test_unknown_slice_rejected(self, service):
        with pytest.raises(KeyError, match="not in the review queue"):
            service.ingest_correction("nope", 0, "t", make_mask_png())

    def test_nonbinary_mask_rejected(self, service):
        item = service.queue_view()[0]
        buf = io.BytesIO()
        Image.fromarray(np.full((64, 64), 128, dtype=np.uint8), mode="L").save(buf, "PNG")
        with pytest.raises(ValueError, match="0 and 255"):
            service.ingest_correction(item["cube_id"], item["slice_index"], "t", buf.getvalue())

    def test_restart_replays_log(self, queue_setup, tmp_path):
        manifest, queue_path = queue_setup
        state_dir = tmp_path / "state"
        svc = ReviewService(queue_path, manifest, state_dir)
        items = svc.queue_view()
        svc.ingest_correction(items[0]["cube_id"], items[0]["slice_index"], "a", make_mask_png(seed=1))
        svc.ingest_correction(items[2]["cube_id"], items[2]["slice_index"], "b", make_mask_png(seed=2))

        reborn = ReviewService(queue_path, manifest, state_dir)

        # independent replay oracle: fold the log file by hand
        folded = {}
        for line in (state_dir / "corrections.jsonl").read_text().splitlines():
            rec = json.loads(line)
            folded[(rec["cube_id"], rec["slice_index"])] = rec["correction_id"]
        assert {k: v.correction_id for k, v in reborn.latest.items()} == folded
        assert [r.correction_id for r in reborn.log] == [r.correction_id for r in svc.log]
        statuses = {(v["cube_id"], v["slice_index"]): v["status"] for v in reborn.queue_view()}
        for key, status in statuses.items():
            assert status == ("corrected" if key in folded else "pending")

    def test_mask_asset_returns_latest_correction(self, service):
        item = service.queue_view()[0]
        key = (item["cube_id"], item["slice_index"])
        machine = service.asset_bytes(*key, "mask")
        posted = make_mask_png(seed=9)
        assert posted != machine
        service.ingest_correction(*key, "t", posted)
        assert service.asset_bytes(*key, "mask") == posted

    def test_broken_asset_flagged_not_fatal(self, queue_setup, tmp_path):
        manifest, queue_path = queue_setup
        svc = ReviewService(queue_path, manifest, tmp_path / "s1")
        victim = svc.items[0].record["heatmap"]
        (queue_path.parent / victim).rename(queue_path.parent / (victim + ".bak"))
        try:
            svc2 = ReviewService(queue_path, manifest, tmp_path / "s2")
            assert svc2.items[0].broken
            assert sum(1 for it in svc2.items if it.broken) == 1
        finally:
            (queue_path.parent / (victim + ".bak")).rename(queue_path.parent / victim)

    def test_export_replaces_only_corrected_masks(self, queue_setup, tmp_path):
        manifest, queue_path = queue_setup
        source_bytes = {rel: (manifest.root / rel).read_bytes()
                        for entry in manifest.cubes for rel in entry.slices + entry.masks}
        svc = ReviewService(queue_path, manifest, tmp_path / "state")
        with pytest.raises(ValueError, match="no corrections"):
            svc.export_retrain_manifest(tmp_path / "retrain")

        item = svc.queue_view()[0]
        key = (item["cube_id"], item["slice_index"])
        machine_mask = svc.asset_bytes(*key, "mask")
        svc.ingest_correction(*key, "t", machine_mask)

        payload = svc.export_retrain_manifest(tmp_path / "retrain")
        assert f"{key[0]}:{key[1]}" in payload["notes"][-1]

        out = tmp_path / "retrain"
        for entry in manifest.cubes:
            for idx, rel in enumerate(entry.masks):
                exported = (out / rel).read_bytes()
                if (entry.cube_id, idx) == key:
                    assert exported == machine_mask
                else:
                    assert exported == source_bytes[rel]
            for rel in entry.slices:
                assert (out / rel).read_bytes() == source_bytes[rel]

        # source dataset files are bit-identical to their pre-service state
        for rel, original in source_bytes.items():
            assert (manifest.root / rel).read_bytes() == original

    def test_each_slice_exported_exactly_once(self, queue_setup, tmp_path):
        manifest, queue_path = queue_setup
        svc = ReviewService(queue_path, manifest, tmp_path / "state")
        item = svc.queue_view()[0]
        key = (item["cube_id"], item["slice_index"])
        svc.ingest_correction(*key, "t", make_mask_png(seed=1))
        svc.ingest_correction(*key, "t", make_mask_png(seed=2))
        payload = svc.export_retrain_manifest(tmp_path / "retrain")
        listed = [(c["cube_id"], i) for c in payload["cubes"] for i in range(len(c["masks"]))]
        assert len(listed) == len(set(listed))
        assert len(listed) == 2 * 3


@pytest.fixture()
def live_server(queue_setup, tmp_path):
    manifest, queue_path = queue_setup
    server, service = serve(queue_path, manifest, tmp_path / "state", port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base, service
    server.shutdown()
    thread.join(timeout=5)


class TestHttpApi:
    def test_health_and_version_header(self, live_server):
        base, _ = live_server
        r = requests.get(f"{base}/api/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok"}
        assert r.headers["tcupgan-api"] == "1"

    def test_queue_endpoint_with_filters(self, live_server):
        base, _ = live_server
        items = requests.get(f"{base}/api/queue").json()["items"]
        assert len(items) == 6
        limited = requests.get(f"{base}/api/queue?limit=2").json()["items"]
        assert len(limited) == 2
        assert requests.get(f"{base}/api/queue?status=corrected").json()["items"] == []

    def test_post_correction_round_trip(self, live_server):
        base, _ = live_server
        item = requests.get(f"{base}/api/queue").json()["items"][0]
        cube, idx = item["cube_id"], item["slice_index"]

        served = requests.get(f"{base}/api/slices/{cube}/{idx}/mask")
        assert served.status_code == 200
        assert served.headers["Content-Type"] == "image/png"

        r = requests.post(f"{base}/api/corrections", json={
            "cube_id": cube, "slice_index": idx, "author": "script",
            "mask_png_base64": base64.b64encode(served.content).decode(),
        })
        assert r.status_code == 200
        assert r.json()["correction_id"].startswith("corr-")

        again = requests.get(f"{base}/api/slices/{cube}/{idx}/mask")
        assert again.content == served.content

        queue = requests.get(f"{base}/api/queue").json()["items"]
        status = {(q["cube_id"], q["slice_index"]): q["status"] for q in queue}
        assert status[(cube, idx)] == "corrected"

    def test_post_validation_errors(self, live_server):
        base, _ = live_server
        r = requests.post(f"{base}/api/corrections", json={"cube_id": "x"})
        assert r.status_code == 400
        r = requests.post(f"{base}/api/corrections", json={
            "cube_id": "x", "slice_index": 0,
            "mask_png_base64": base64.b64encode(make_mask_png()).decode(),
        })
        assert r.status_code == 404

    def test_image_and_heatmap_assets(self, live_server):
        base, _ = live_server
        item = requests.get(f"{base}/api/queue").json()["items"][0]
        for kind in ("image", "heatmap"):
            r = requests.get(f"{base}/api/slices/{item['cube_id']}/{item['slice_index']}/{kind}")
            assert r.status_code == 200
            Image.open(io.BytesIO(r.content)).verify()

    def test_export_endpoint(self, live_server):
        base, _ = live_server
        item = requests.get(f"{base}/api/queue").json()["items"][0]
        cube, idx = item["cube_id"], item["slice_index"]
        mask = requests.get(f"{base}/api/slices/{cube}/{idx}/mask").content
        requests.post(f"{base}/api/corrections", json={
            "cube_id": cube, "slice_index": idx, "author": "script",
            "mask_png_base64": base64.b64encode(mask).decode(),
        })
        r = requests.get(f"{base}/api/export")
        assert r.status_code == 200
        payload = r.json()
        assert payload["slice_depth"] == 3
        assert any("corrected slices" in note for note in payload["notes"])

    def test_unknown_path_404(self, live_server):
        base, _ = live_server
        assert requests.get(f"{base}/api/nope").status_code == 404
