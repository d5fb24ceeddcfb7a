"""Tour of the segmentation losses.

Walks the Tversky index from raw confusion counts to the focal loss used in
training, then the adversarial terms, printing each intermediate value.
"""

import numpy as np

from tcupgan.losses import (
    ConfusionCounts,
    TverskyParams,
    confusion,
    discriminator_bce,
    focal_tversky_loss,
    generator_objective,
    segmentation_metrics,
)

params = TverskyParams()  # alpha=0.7 (misses), beta=0.3 (false alarms), gamma=0.7
print(f"params: {params}\n")

# A worked example straight from the formula: 2 hits, 1 miss, 1 false alarm.
out = focal_tversky_loss(ConfusionCounts(tp=2, fn=1, fp=1, tn=60), params)
print(f"tp=2 fn=1 fp=1  ->  TI={out.ti:.4f}  TL={out.tl:.4f}  FTL={out.ftl:.4f}")

# Soft counts from a probabilistic prediction.
rng = np.random.default_rng(0)
target = (rng.random((4, 16, 16)) > 0.8).astype(float)
pred = np.clip(target * 0.85 + rng.random(target.shape) * 0.1, 0, 1)
for i, counts in enumerate(confusion(pred, target, granularity="slice")):
    slice_loss = focal_tversky_loss(counts, params)
    print(f"slice {i}: tp={counts.tp:7.2f} fn={counts.fn:6.2f} fp={counts.fp:6.2f} "
          f"-> FTL={slice_loss.ftl:.4f}")

# The asymmetry: alpha > beta punishes misses harder than false alarms.
miss_heavy = focal_tversky_loss(ConfusionCounts(tp=50, fn=20, fp=0, tn=0), params)
alarm_heavy = focal_tversky_loss(ConfusionCounts(tp=50, fn=0, fp=20, tn=0), params)
print(f"\n20 misses: FTL={miss_heavy.ftl:.4f}   20 false alarms: FTL={alarm_heavy.ftl:.4f}")

# Adversarial side: BCE for the discriminator, -log(fake) for the generator.
real = np.full((10, 8, 8), 0.9)
fake = np.full((10, 8, 8), 0.2)
print(f"\ndiscriminator BCE (real=0.9, fake=0.2): {discriminator_bce(real, fake):.4f}")

obj = generator_objective(pred, target, fake_scores=np.full((4, 8, 8), 0.5), lambda_adv=0.2)
print(f"generator objective: ftl={obj.ftl:.4f} + 0.2 * adv={obj.adv:.4f} -> total={obj.total:.4f}")

# Hard metrics at threshold 0.5.
m = segmentation_metrics(pred, target)
print(f"\nmetrics: accuracy={m.accuracy:.4f} precision={m.precision:.4f} recall={m.recall:.4f}")
