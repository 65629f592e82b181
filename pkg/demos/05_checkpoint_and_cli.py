"""Checkpoints and the command-line workflow.

The same steps are available from a shell:

    sslv3 synth --out-dir data --n-subjects 8 --clips-per-subject 4
    sslv3 train --data data --out-dir run
    sslv3 eval  --data data --checkpoint run/model.ckpt --out-dir run
    sslv3 kfold --folds 4 --out-dir cv
    sslv3 ablate --max-folds 1 --out-dir grid
    sslv3 gradcheck --seed 7
"""

import tempfile
from pathlib import Path

from sslv3.checkpoint import checkpoint_load, checkpoint_save, to_bytes
from sslv3.cli import main
from sslv3.config import TrainConfig, save_config
from sslv3.model import init_model

cfg = TrainConfig(T=8, H=16, W=16, t=2, h=4, w=4, d=16, spatial_layers=1, temporal_layers=1, heads=2,
                  epochs=2, batch_size=4, hflip=0.0, n_subjects=4, clips_per_subject=3)
store = init_model(cfg.model_config(), 0)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    path = checkpoint_save(store, tmp / "init.ckpt")
    back = checkpoint_load(path)
    print(f"checkpoint: {path.stat().st_size} bytes, {len(back)} tensors, "
          f"bit-exact round trip: {to_bytes(back) == to_bytes(store)}")

    save_config(cfg, tmp / "tiny.cfg")
    common = ["--config", str(tmp / "tiny.cfg")]
    steps = [
        ["synth", "--out-dir", str(tmp / "data")],
        ["train", "--data", str(tmp / "data"), "--out-dir", str(tmp / "run")],
        ["eval", "--data", str(tmp / "data"), "--checkpoint", str(tmp / "run" / "model.ckpt"), "--out-dir", str(tmp / "run")],
        ["kfold", "--folds", "2", "--out-dir", str(tmp / "cv")],
        ["train"],  # missing --data: usage error
    ]
    for argv in steps:
        print(f"\n$ sslv3 {' '.join(argv[:1] + ['...'] if len(argv) > 1 else argv)}")
        print(f"exit code {main(common + argv)}")
    print("\nkfold metrics.csv:\n" + (tmp / "cv" / "metrics.csv").read_text())
