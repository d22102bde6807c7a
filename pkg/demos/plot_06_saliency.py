"""
Where does the model look?
==========================

Grad-CAM on the reinvented feature map of a briefly trained model; the
overlay is written as a P6 image and the peak is checked against the
lesion box.  Four epochs are not enough for the heads to find lesions, so
expect peaks on bright tissue instead; a fully trained model lands inside
the box in most views.
"""

from pathlib import Path

from dchanet.model import ModelConfig, build_model
from dchanet.phantom import PhantomConfig, generate_dataset
from dchanet.saliency import grad_cam, hit_rate, overlay_and_save, saliency_report
from dchanet.train import TrainConfig, train

cases, _ = generate_dataset(PhantomConfig(seed=11), 48)
model = build_model(ModelConfig(seed=1))
train(cases[:40], model, TrainConfig(lr0=1e-3, epochs=4))

malignant = [c for c in cases[40:] if c.label == 1]
smap = grad_cam(model, malignant[0], "CC")
print("heatmap grid", smap.heatmap.shape, "peak at", smap.peak, "lesion box", malignant[0].lesion_bbox_cc)

out = Path("demo_out")
out.mkdir(exist_ok=True)
print("csv row:", overlay_and_save(malignant[0], smap, out / "gradcam_cc.ppm", "CC"))
print("hit rate over held-out malignant views: %.2f" % hit_rate(saliency_report(malignant, model)))
