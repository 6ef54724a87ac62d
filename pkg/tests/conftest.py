import numpy as np
import pytest

import facesal


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Trigger jit compilation once so timed tests measure math, not warmup."""
    spec = facesal.NetworkSpec(
        (facesal.conv(2, 2, 2, stride=1, pad=1, trainable=True), facesal.relu(),
         facesal.maxpool(2), facesal.flatten(), facesal.dense(3, trainable=True),
         facesal.softmax()),
        (1, 4, 4))
    for dtype in (np.float32, np.float64):
        ck = facesal.init_checkpoint(spec, seed=0).astype(dtype)
        image = np.linspace(0, 1, 16, dtype=dtype).reshape(1, 4, 4)
        _, trace = facesal.forward(ck, image)
        facesal.guided_backward(ck, trace, 0)
        facesal.backward(ck, trace, 0, trainable_only=False)
