"""The fixed mapping from VGG16 feature layers to archive entries.

Nine convolutions, block1_conv1 through block4_conv2. Source weights use
the torch [Cout, Cin, kh, kw] layout; archive entries are [kh, kw, Cin,
Cout] so the consumer never transposes.
"""

# (torchvision features index, archive layer name, Cin, Cout)
CONV_LAYERS = (
    (0, "block1_conv1", 3, 64),
    (2, "block1_conv2", 64, 64),
    (5, "block2_conv1", 64, 128),
    (7, "block2_conv2", 128, 128),
    (10, "block3_conv1", 128, 256),
    (12, "block3_conv2", 256, 256),
    (14, "block3_conv3", 256, 256),
    (17, "block4_conv1", 256, 512),
    (19, "block4_conv2", 512, 512),
)


def manifest():
    """List of (source-key, archive-entry, archive-shape) for all 18 tensors."""
    rows = []
    for idx, name, cin, cout in CONV_LAYERS:
        rows.append((f"features.{idx}.weight", f"{name}.weight", (3, 3, cin, cout)))
        rows.append((f"features.{idx}.bias", f"{name}.bias", (cout,)))
    return rows


def source_shape(archive_shape):
    """Torch-layout shape corresponding to an archive-layout shape."""
    if len(archive_shape) == 1:
        return archive_shape
    kh, kw, cin, cout = archive_shape
    return (cout, cin, kh, kw)


def total_parameters():
    n = 0
    for _, _, shape in manifest():
        count = 1
        for d in shape:
            count *= d
        n += count
    return n
