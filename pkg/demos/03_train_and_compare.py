"""Train on synthetic phantoms, then compare all eight fusion strategies.

Mirrors the smoke configuration of the acceptance suite. ``EPOCHS`` can be
lowered for a quick look (30 epochs take a few minutes on one core).
"""

# %%
import logging
import sys
from pathlib import Path

from fusenet.dataio import make_splits
from fusenet.losses import LossConfig
from fusenet.pipeline import compare_strategies, plot_metrics, write_report_csv
from fusenet.phantom import write_phantom_dataset
from fusenet.training import TrainConfig, train

EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 30
out = Path("demo_out")
logging.basicConfig(level=logging.INFO, format="%(message)s")

# %%
manifest = make_splits(write_phantom_dataset(out / "data", 20, size=96, seed=0), n_test=10, seed=0)
manifest.save(out / "manifest.json")
print({s: len(manifest.ids(s)) for s in ("train", "val", "test")})

# %% [markdown]
# Training never sees the fusion rule: the network learns to encode and
# decode single images. Fusion happens between the two halves afterwards.

# %%
cfg = TrainConfig(learning_rate=1e-4, epochs=EPOCHS, batch_size=2, crop=64, checkpoint_dir=str(out / "run"))
result = train(manifest, cfg, LossConfig())
print(f"loss {result.train_losses[0]:.4f} -> {result.train_losses[-1]:.4f}, best epoch {result.best_epoch}")

# %%
rows = compare_strategies(manifest, result.model)
print(f"{'strategy':10s} {'psnr':>7s} {'ssim':>6s} {'fsim':>6s} {'mi':>6s} {'fmi':>6s} {'ent':>6s}")
for r in rows:
    print(f"{r.pair_id:10s} {r.psnr:7.3f} {r.ssim:6.4f} {r.fsim:6.4f} {r.mi:6.4f} {r.fmi_pixel:6.4f} {r.entropy:6.4f}")
write_report_csv(rows, out / "strategies.csv")
plot_metrics(rows[0], out / "sfnn_max.png", title="sfnn-max")
