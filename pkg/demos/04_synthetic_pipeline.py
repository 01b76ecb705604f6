# End to end on a synthetic dataset, through the command-line entry point.
#
# Fake images are re-captures of each client's real face pattern: blurred,
# overlaid with a moire pattern and contrast-compressed. The pipeline trains
# on same-client pairs, enrolls one real image per client, calibrates the
# threshold on dev and reports FRR/FAR/HTER on test.
#
# Smaller than the default run so it finishes in well under a minute.

import json
import sys
import tempfile
from pathlib import Path

from idlv.cli import dispatch

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="idlv-demo-"))
work.mkdir(parents=True, exist_ok=True)
data, ckpt, gallery, report = work / "data", work / "model.ckpt", work / "gallery.bin", work / "report.csv"
(work / "run.cfg").write_text("image_size = 32\nepochs = 15\nbatch_size = 16\nlearning_rate = 0.01\nseed = 3\n")

steps = [
    ["synth", "--out", str(data), "--clients", "6", "--reals", "20", "--fakes", "20", "--size", "32", "--seed", "3"],
    ["train", "--data", str(data), "--config", str(work / "run.cfg"), "--out", str(ckpt), "--history", str(work / "loss.csv")],
    ["calibrate", "--data", str(data), "--ckpt", str(ckpt), "--gallery", str(gallery)],
    ["eval", "--data", str(data), "--ckpt", str(ckpt), "--gallery", str(gallery), "--report", str(report)],
]
for argv in steps:
    print("$ idlv", " ".join(argv))
    if dispatch(argv) != 0:
        sys.exit(1)

print("\nfinal report:", json.loads(report.with_suffix(".json").read_text())["report"])

probe = sorted((data / "test" / "client00" / "fake").iterdir())[0]
print("\n$ idlv verify ... --client client00 --image", probe.name)
dispatch(["verify", "--ckpt", str(ckpt), "--gallery", str(gallery), "--client", "client00", "--image", str(probe)])
