"""The three evaluation statistics on hand-checkable confusion matrices,
including the case where the two average-accuracy definitions disagree."""
import numpy as np

from scenemixer import metrics as mx

cm = mx.ConfusionMatrix(np.array([[40, 10], [20, 30]]), class_names=["urban", "rural"])
print("counts:")
print(mx.confusion_to_csv(cm))
print(f"OA    = {mx.overall_accuracy(cm):.4f}   (70 correct of 100)")
print(f"kappa = {mx.kappa(cm):.4f}   (P_o=0.7, P_e=0.5)")

# Mean per-class recall and mean one-vs-rest binary accuracy coincide on
# balanced diagonals but split apart as soon as errors are asymmetric:
tri = mx.ConfusionMatrix(np.array([[10, 0, 0], [0, 10, 0], [5, 0, 5]]))
print()
print(f"AA (macro recall)       = {mx.average_accuracy(tri, 'macro_recall'):.5f}")
print(f"AA_eq2 (one-vs-rest)    = {mx.average_accuracy(tri, 'eq2'):.5f}")

# For two classes the one-vs-rest mean collapses to OA identically.
two = mx.ConfusionMatrix(np.array([[33, 9], [4, 54]]))
print()
print(f"2-class OA      = {mx.overall_accuracy(two):.10f}")
print(f"2-class AA_eq2  = {mx.average_accuracy(two, 'eq2'):.10f}")

print()
print("full summary of the first matrix:")
print(mx.metrics_to_csv(cm))
