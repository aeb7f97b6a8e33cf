"""End-to-end smoke test of the Python bindings.

Build and install first:  maturin develop --release -m crates/python/Cargo.toml
Then run:                 python python/smoke_test.py
"""

import math
import sys
import tempfile
from pathlib import Path

import pyddunet

TINY = [
    "model.stage_channels=8,16,32",
    "model.convs_per_stage=1,1,1",
    "data.phantom_size=16",
    "data.phantom_count=2",
    "data.crop=16",
    "data.split_ratio=0.5",
    "run.epochs=2",
    "optim.max_lr=0.01",
]


def check(cond, msg):
    if not cond:
        sys.exit(f"FAIL: {msg}")
    print(f"ok    {msg}")


def main():
    work = Path(tempfile.mkdtemp(prefix="pyddunet-"))

    text = pyddunet.resolve_config(overrides=["run.epochs=3"])
    check("run.epochs = 3" in text, "config overrides are applied")
    try:
        pyddunet.resolve_config(overrides=["no.such=1"])
        check(False, "unknown keys raise")
    except ValueError as e:
        check("no.such" in str(e), "unknown keys raise ValueError")

    subjects = pyddunet.synth(str(work / "subjects"), seed=1, size=16, count=2)
    check(len(subjects) == 2, "synth wrote two subjects")
    check(len(list(Path(subjects[0]).iterdir())) == 5, "five volumes per subject")

    run = work / "run"
    result = pyddunet.train(overrides=TINY + [f"run.out={run}", "run.eval_splits=train,test"])
    check(result["steps"] == 2 and len(result["epochs"]) == 2, "two training steps")
    last = result["epochs"][-1]["evals"][-1]
    check(last["split"] == "test" and math.isfinite(last["loss"]), "final test evaluation logged")

    ckpt = run / "checkpoint_last.ddun"
    rows = pyddunet.evaluate(str(ckpt), "test")
    check(all(rows[0][c] == last[c] for c in pyddunet.METRIC_COLUMNS), "evaluate reproduces logged metrics")

    loaded = pyddunet.load_checkpoint(str(ckpt))
    check(loaded["optimizer_step"] == 2 and "enc/0/0/w" in loaded["params"], "checkpoint loads")

    out = pyddunet.predict(str(ckpt), subjects[0], str(work / "pred"), attention=True)
    dims, labels = pyddunet.read_nifti(out["labels"])
    check(dims == [16, 16, 16] and set(labels) <= {0.0, 1.0, 2.0, 3.0}, "labels within {0,1,2,3}")
    check(len(out["attention"]) == 2 and out["notice"] is None, "two attention maps exported")

    try:
        import nibabel as nib
        import numpy as np
    except ImportError:
        print("skip  nibabel cross-check (nibabel not installed)")
    else:
        img = nib.load(out["labels"])
        ours = np.asarray(labels, dtype=np.float32).reshape(dims[::-1]).transpose(2, 1, 0)
        check(img.shape == (16, 16, 16) and np.array_equal(img.get_fdata(), ours), "nibabel reads the same labels")
        alpha = nib.load(out["attention"][0]).get_fdata()
        check(img.get_data_dtype() == np.uint8, "label volume stored as uint8")
        check(alpha.min() > 0.0 and alpha.max() < 1.0, "attention maps lie in (0, 1)")

    scopes = pyddunet.gradcheck("conv3d", 3)
    check(scopes[0]["passed"], "conv3d gradient check passes")
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
