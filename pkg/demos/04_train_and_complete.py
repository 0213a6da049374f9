"""Train a small cascade on synthetic EEG and fill a gap in an unseen segment.

Takes about a minute on one core.
Run: python3 demos/04_train_and_complete.py
"""
import numpy as np

from eeg_completion import (CascadeModel, ModelConfig, TrainConfig, apply_mask, build_mask,
                            extract_segments, normalize, train)
from eeg_completion.cascade import evaluate_model, stack_segments
from eeg_completion.harness import complete
from eeg_completion.synthetic import synthetic_subjects

recs = synthetic_subjects(4, 60)


def segments(i):
    z, _ = normalize(recs[i])
    return extract_segments(z, 100, source=f"s{i}")


spec = build_mask(100, 10, "middle")
train_set = [apply_mask(s, spec) for i in (0, 1) for s in segments(i)]
val_set = [apply_mask(s, spec) for s in segments(2)]
test_set = [apply_mask(s, spec) for s in segments(3)]

# Whole-segment tokens: the linear embedding sees all 100 samples in order.
cfg = ModelConfig(n_encoders=2, n_decoders=2, patch_len=100)
results = {}
for cascade in (False, True):
    model = CascadeModel(cfg, seed=0, cascade=cascade)
    report = train(model, train_set, val_set,
                   TrainConfig(learning_rate=1e-3, max_epochs=150, patience=15))
    miss, whole = evaluate_model(model, *stack_segments(test_set))
    results[cascade] = model
    print(f"{'cascade' if cascade else 'basic  '}: stopped after {len(report.epochs)} epochs, "
          f"test NRMSE missing {miss.mean():.3f}, entire segment {whole.mean():.3f}")

# Fill a gap in microvolts. Observed samples come back untouched.
held_out = recs[3][1000:1100]
done = complete(results[True], held_out, spec)
print("observed kept exactly:", np.array_equal(done.completed[~done.missing], held_out[~done.missing]))
for i in range(44, 56, 2):
    tag = "gen" if done.missing[i] else "obs"
    print(f"  [{i}] {tag} real {held_out[i]:8.2f}  completed {done.completed[i]:8.2f} uV")
