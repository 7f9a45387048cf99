"""Track one synthetic sequence with and without online kernel optimization.

    python3 demos/track_one_sequence.py
"""

from deepmix import Augmentor, EmbeddingExtractor, FrameResult, gen_sequence, ope_summary, run_tracker

seq = gen_sequence(seed=3, length=80)
print(f"{len(seq)} frames of {seq.frames[0].shape}, object box {seq.truth[0]}")

extractor = EmbeddingExtractor()
embeddings = [extractor(f) for f in seq.frames]
print("embedding shape:", embeddings[0].shape)

for name in ("none", "opt"):
    res = run_tracker(seq, "classifier", Augmentor(name), embeddings=embeddings)
    frames = [FrameResult("demo", t, b, seq.truth[t], s) for t, (b, s) in enumerate(zip(res.boxes, res.seconds))]
    s = ope_summary(frames)
    print(f"{name:>5}: AUC {s.auc:.3f}  precision {s.precision:.3f}  {s.mean_fps:.0f} fps")
