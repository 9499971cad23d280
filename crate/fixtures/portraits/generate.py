"""Regenerates the portrait fixtures and their face annotations.

Portraits come from sample images bundled with scikit-image and matplotlib.
Annotations are produced once with OpenCV 4.x `CascadeClassifier.detectMultiScale`
(scale factor 1.1, min neighbors 3) using ../haarcascade_frontalface_default.xml,
and committed alongside the images. Requires opencv-python < 5.
"""
import json
import os

import cv2
import matplotlib
import numpy as np
import skimage.data

HERE = os.path.dirname(os.path.abspath(__file__))
CASCADE = os.path.join(HERE, "..", "haarcascade_frontalface_default.xml")


def write_ppm(path, rgb):
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def lfw_portrait(index):
    face = (skimage.data.lfw_subset()[index] * 255).astype(np.uint8)
    big = cv2.resize(face, (100, 100), interpolation=cv2.INTER_CUBIC)
    canvas = np.full((200, 200), 128, np.uint8)
    canvas[50:150, 50:150] = big
    return np.dstack([canvas] * 3)


def main():
    grace_path = os.path.join(
        os.path.dirname(matplotlib.__file__), "mpl-data", "sample_data", "grace_hopper.jpg"
    )
    grace = cv2.cvtColor(cv2.imread(grace_path), cv2.COLOR_BGR2RGB)
    portraits = {
        "astronaut": cv2.resize(skimage.data.astronaut(), (256, 256), interpolation=cv2.INTER_AREA),
        "grace_hopper": cv2.resize(grace, (256, 300), interpolation=cv2.INTER_AREA),
        "lfw_000": lfw_portrait(0),
        "lfw_007": lfw_portrait(7),
    }
    detector = cv2.CascadeClassifier(CASCADE)
    annotations = {}
    for name, rgb in portraits.items():
        write_ppm(os.path.join(HERE, name + ".ppm"), rgb)
        gray = cv2.cvtColor(rgb, cv2.COLOR_RGB2GRAY)
        found = detector.detectMultiScale(gray, scaleFactor=1.1, minNeighbors=3)
        assert len(found) == 1, (name, found)
        x, y, w, h = (int(v) for v in found[0])
        annotations[name] = {"x": x, "y": y, "w": w, "h": h}
    with open(os.path.join(HERE, "annotations.json"), "w") as f:
        json.dump(annotations, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()
