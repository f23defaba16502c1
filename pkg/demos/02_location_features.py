"""
Encoding where and when
=======================

Latitude, longitude and day of year become multi-frequency sine/cosine
features, and a residual MLP maps them onto the shared unit sphere.
"""
import numpy as np

from crossmeta import EncoderConfig, ModelParams, encode_meta_features
from crossmeta.autodiff import Tensor
from crossmeta.encoders import embed_meta

# three coordinates, four frequencies each, sin and cos: 24 numbers
f = encode_meta_features(45.0, -120.0, 170, frequencies=4)
print(f.shape)
print(np.round(f.reshape(3, 4, 2), 3))

enc = EncoderConfig()
params = ModelParams.initialize(enc)
p = {k: Tensor(v) for k, v in params.arrays.items()}

# untrained weights: the embeddings are unit length but not yet meaningful;
# demos/06 shows the trained geometry
places = [(45.0, -120.0), (45.5, -119.5), (-45.0, 60.0)]
feats = encode_meta_features([a for a, _ in places], [b for _, b in places], [170] * 3)
z = embed_meta(feats, p).data
print("row norms:", np.linalg.norm(z, axis=1))
print("cos(near) = %.3f, cos(far) = %.3f" % (z[0] @ z[1], z[0] @ z[2]))
