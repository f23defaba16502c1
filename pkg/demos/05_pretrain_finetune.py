"""
Pre-train, fine-tune, evaluate
==============================

A shortened version of the full pipeline (about a minute on one core).
"""
from crossmeta import EncoderConfig, TrainConfig, default_specs, generate
from crossmeta.data import sister_pairs
from crossmeta.evaluation import evaluate
from crossmeta.training import finetune, pretrain

specs = default_specs()
train, test = generate(specs, 160, seed=0)
enc = EncoderConfig()
cfg = TrainConfig(epochs=20, finetune_epochs=10, freeze_encoders=False, seed=0)

params, hist = pretrain(train, cfg, enc)
print("contrastive loss, first and last epoch: %.2f -> %.2f" % (hist.records[0]["total"], hist.records[-1]["total"]))

params, ft = finetune(train, params, cfg, enc, test)
print("test accuracy per epoch:", [round(r["test_accuracy"], 3) for r in ft.records])

report = evaluate(test, params, enc, sister_pairs(specs))
print("top-1 %.3f, sister pairs %.3f" % (report.accuracy, report.sister_accuracy))
