"""Walk a single frame through the ingestion path: build a tiny DICOM file,
parse it, decode the pixels, normalize to [0, 1], and write a lossless PNG.

Run:  python demos/01_dicom_to_png.py
"""

from pathlib import Path

import numpy as np

from nodulekit import dicom, pngio

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)

# --- 1. synthesize a Part-10 file the way a scanner export would look -----
rng = np.random.default_rng(7)
pixels = (140 + 40 * rng.standard_normal((96, 128))).clip(0, 255).astype(np.uint8)
blob = dicom.encode_dicom(pixels, patient_id="DEMO-PATIENT-1")
dicom_path = out_dir / "frame.dcm"
dicom_path.write_bytes(blob)
print(f"wrote {dicom_path} ({len(blob)} bytes, explicit VR little-endian)")

# --- 2. parse and inspect the element map ---------------------------------
obj = dicom.parse_dicom(blob)
print(f"parsed {len(obj.elements)} elements, transfer syntax {obj.transfer_syntax}")
print(f"  PatientID = {obj.patient_id}")
print(f"  Rows x Columns = {obj.uint16(dicom.TAG_ROWS)} x "
      f"{obj.uint16(dicom.TAG_COLUMNS)}")

# --- 3. decode pixels (MONOCHROME1 would be inverted here) ----------------
image = dicom.decode_image(obj)
print(f"decoded {image.width}x{image.height}x{image.channels}, "
      f"mean intensity {image.samples.mean():.1f}")

# --- 4. normalize to [0, 1] for downstream analysis -----------------------
normalized = dicom.normalize(image)
print(f"normalized range [{normalized.values.min():.3f}, "
      f"{normalized.values.max():.3f}]")

# --- 5. write the PNG and prove the round trip is bit-exact ---------------
png_path = out_dir / "frame.png"
dicom.write_png(image, png_path)
reread = pngio.read_png_file(png_path)
assert np.array_equal(reread, pixels), "round trip must be lossless"
print(f"wrote {png_path}; PNG re-read is bit-identical to the DICOM pixels")
