"""nodulekit: dataset preparation and evaluation for thyroid-nodule
instance segmentation on ultrasound.

Pipeline surface area, by module:

- dicom       minimal Part-10 parser, 8-bit decode, [0,1] normalization, PNG out
- annotations canonical polygon-annotation JSON in/out + image cross-checks
- geometry    shoelace areas, even-odd rasterization, box/mask IoU
- manifest    dataset manifest, doppler variants (V1/V2), patient-level splits
- export      YOLO-seg labels, COCO instance JSON, per-nodule mask PNGs
- evaluation  Dice / precision / recall / AP@0.5 for masks and boxes
- synth       speckled synthetic frames + planted-error prediction sets
- report      CSV row, full JSON, SVG PR-curve rendering
- cli         `nodulekit <subcommand>` batch interface
"""

__version__ = "0.1.0"

from .errors import NoduleKitError  # noqa: F401
