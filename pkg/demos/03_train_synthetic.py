"""End-to-end training on procedural textures, library API only.

Generates a small 4-class scene dataset, splits it 70/15/15, trains a
reduced mixer for a handful of epochs, and scores the held-out split.
Takes around a minute on a laptop CPU; raise EPOCHS for better numbers.
"""
import numpy as np

from scenemixer import data as dm
from scenemixer import metrics as mx
from scenemixer import model as sm
from scenemixer import train as tr

EPOCHS = 15
SEED = 7

manifest = dm.synth_generate(classes=4, per_class=100, side=64, seed=SEED)
dm.stratified_split(manifest, dm.SplitSpec(seed=SEED))
print("classes:", manifest.class_names)
print("train/val/test per class:",
      manifest.per_class_counts("train"),
      manifest.per_class_counts("val"),
      manifest.per_class_counts("test"))

train_xy = dm.split_arrays(manifest, "train", 64, 64)
val_xy = dm.split_arrays(manifest, "val", 64, 64)
test_xy = dm.split_arrays(manifest, "test", 64, 64)

# bn_momentum 0.9 lets the running statistics track the batch statistics
# within a few short epochs; the 0.99 default wants longer runs
cfg = sm.ModelConfig(input_h=64, input_w=64, input_c=3, patch=4, embed_dim=48,
                     depth=2, kernels=(3, 5), num_classes=4, bn_momentum=0.9)
net = sm.build(cfg, seed=SEED)
net.class_names = manifest.class_names

net, history = tr.fit(net, train_xy, val_xy,
                      tr.TrainConfig(epochs=EPOCHS, batch_size=32, seed=SEED),
                      log=print)
print(f"best epoch: {history.best_epoch} "
      f"(val OA {history.records[history.best_epoch - 1].val_oa:.3f})")

pred = sm.predict(net, test_xy[0])
cm = mx.confusion(test_xy[1], pred, 4, class_names=manifest.class_names)
summary = mx.metrics_summary(cm)
print(f"test OA {summary['OA'] * 100:.2f}%  AA {summary['AA'] * 100:.2f}%  "
      f"kappa x100 {summary['kappa_x100']:.2f}")
print(mx.confusion_to_csv(cm))
