"""Discriminator-guided triage and the human correction loop, end to end.

Scores every slice of a dataset with the trained pair, fits the selection
cut on labeled calibration stats, exports the review queue, runs the HTTP
service, and plays the human: fetches an item, submits a corrected mask,
and exports the retraining dataset.
"""

import base64
import tempfile
import threading
from pathlib import Path

import numpy as np
import requests

from tcupgan.pipeline import SynthConfig, synthesize_dataset
from tcupgan.service import serve
from tcupgan.training import TrainConfig, train
from tcupgan.triage import apply_cut, export_review_queue, fit_selection_cut, score_dataset

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    synth = dict(depth=4, size=128, radius_range=(8.0, 20.0), depth_radius_range=(1.0, 2.5))
    train_data = synthesize_dataset(SynthConfig(n_cubes=12, seed=3, **synth), tmp / "train")
    # calibration cubes are fainter and busier so some slices are genuinely hard
    calib_data = synthesize_dataset(
        SynthConfig(n_cubes=30, seed=4, droplets_per_cube=(5, 12),
                    intensity_range=(0.2, 0.55), noise_sigma=0.03, **synth),
        tmp / "calib")

    gen, disc, _ = train(
        TrainConfig(seed=1, epochs=35, batch_size=2, gen_widths=(4, 8, 16),
                    disc_widths=(4, 4, 8, 8), lr_generator=1e-3,
                    lr_discriminator=1e-4, lambda_adv=0.05, val_fraction=0.0),
        train_data,
    )

    # per-slice discriminator statistics, with ground-truth TL for calibration
    stats = score_dataset(gen, disc, calib_data, with_ground_truth=True)
    print(f"scored {len(stats)} slices; "
          f"mean score range {min(s.mean for s in stats):.3f}..{max(s.mean for s in stats):.3f}")

    cut = fit_selection_cut(stats, tl0=0.3)
    selection = apply_cut(stats, cut)
    print(f"cut: {cut.w_mean:.3f}*mean + {cut.w_var:.3f}*var + {cut.bias:.3f} < 0 -> human review")
    print(f"selected {selection.summary['n_selected']} of {selection.summary['n_total']} "
          f"(effort reduction {selection.summary['reduction_fraction']:.1%})")

    queue_path = export_review_queue(selection, calib_data, gen, disc, tmp / "queue")

    # --- serve the queue and act as the human reviewer -----------------------
    server, _ = serve(queue_path, calib_data, tmp / "state", port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"

    items = requests.get(f"{base}/api/queue").json()["items"]
    print(f"\nservice reports {len(items)} items, worst first "
          f"(d={items[0]['decision_value']:.4f})")

    worst = items[0]
    mask_png = requests.get(
        f"{base}/api/slices/{worst['cube_id']}/{worst['slice_index']}/mask").content
    ack = requests.post(f"{base}/api/corrections", json={
        "cube_id": worst["cube_id"],
        "slice_index": worst["slice_index"],
        "author": "demo-human",
        "mask_png_base64": base64.b64encode(mask_png).decode(),
    }).json()
    print(f"submitted correction: {ack}")

    manifest = requests.get(f"{base}/api/export").json()
    print(f"retrain manifest: {len(manifest['cubes'])} cubes; note: {manifest['notes'][-1]}")
    server.shutdown()
