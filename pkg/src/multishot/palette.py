"""Named colours and shapes shared by the synthetic generator and toy scorers."""
import colorsys

import numpy as np

CHARACTER_HUES = {
    "red": 0.0, "orange": 22.5, "yellow": 45.0, "green": 112.5,
    "cyan": 180.0, "blue": 225.0, "purple": 270.0, "pink": 315.0,
}
CHARACTER_SATURATION = 0.9
SHAPES = ("circle", "square", "triangle", "diamond")

# hue (deg), saturation, value; neighbouring hues alternate in brightness so
# adjacent pairs stay separable, and s*v stays clear of the detector
_BG_HSV = {
    "maroon": (0.0, 0.6, 0.7), "brown": (22.5, 0.6, 0.4), "olive": (67.5, 0.6, 0.7),
    "forest": (135.0, 0.6, 0.4), "teal": (180.0, 0.6, 0.7), "slate": (202.5, 0.3, 0.4),
    "navy": (225.0, 0.6, 0.7), "plum": (292.5, 0.6, 0.4),
}
BACKGROUNDS = {k: np.array(colorsys.hsv_to_rgb(h / 360.0, s, v)) for k, (h, s, v) in _BG_HSV.items()}


def hue_rgb(hue_deg, s=CHARACTER_SATURATION, v=1.0):
    return np.array(colorsys.hsv_to_rgb((hue_deg % 360.0) / 360.0, s, v))


def caption_descriptors(caption):
    """Colour words found in a caption: ``{"character": name, "background": name}``."""
    words = caption.lower().replace(",", " ").split()
    found = {}
    for i, w in enumerate(words):
        if w in BACKGROUNDS and i + 1 < len(words) and words[i + 1] == "background":
            found["background"] = w
        elif w in CHARACTER_HUES and "character" not in found:
            found["character"] = w
    return found
