"""Train a small MixNet on a handful of synthetic videos and save it.

Episodes are snapshots of a plain tracking run; training backpropagates the
query loss through the tracker update into the kernel predictor.

    python3 demos/train_tiny_mixnet.py
"""

import tempfile
from pathlib import Path

import numpy as np

from deepmix import CorpusConfig, TrainConfig, build_corpus, load_weights, save_weights, train_mixnet

corpus = build_corpus("classifier", CorpusConfig(videos=6, frames=30, seed=1))
ep = corpus[0]
print(f"{len(corpus)} episodes; bank {ep.samples.shape}, queries {ep.queries.shape}")

result = train_mixnet(corpus, TrainConfig(epochs=3, samples_per_epoch=6, seed=1))
print("mean loss per epoch:", [round(v, 4) for v in result.loss_history])

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "tiny.dmix"
    save_weights(result.weights, path)
    back = load_weights(path)
    same = all(np.array_equal(back.params[k], result.weights.params[k]) for k in back.params)
    print(f"saved {path.stat().st_size} bytes; reloaded bit-exact: {same}")
