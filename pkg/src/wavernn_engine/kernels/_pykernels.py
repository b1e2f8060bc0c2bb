"""numpy implementations of the kernel surface, used when the extension is absent.

Results agree with the compiled kernels to float32 rounding but not
bit-for-bit: BLAS picks its own summation order. Lanes are still processed one
at a time so a lane's output never depends on the other lanes in the call.
"""

import numpy as np

NAME = "python"


def dense_matvec_lanes(W, X, Y, r0=0, r1=-1):
    if r1 < 0:
        r1 = W.shape[0]
    Wr = W[r0:r1]
    for lane in range(X.shape[0]):
        Y[lane, r0:r1] = Wr @ np.ascontiguousarray(X[lane])


def bsr_matvec_lanes(ptr, cols, vals, br, bc, X, Y, rb0=0, rb1=-1):
    if rb1 < 0:
        rb1 = len(ptr) - 1
    ptr = np.asarray(ptr)
    k0, k1 = int(ptr[rb0]), int(ptr[rb1])
    m = br * bc
    blocks = np.asarray(vals[k0 * m:k1 * m]).view(np.float16).astype(np.float32)
    blocks = blocks.reshape(-1, br, bc)
    bcols = np.asarray(cols[k0:k1], dtype=np.intp)
    counts = np.diff(ptr[rb0:rb1 + 1])
    live = np.nonzero(counts)[0]
    starts = (ptr[rb0:rb1] - k0)[live]
    for lane in range(X.shape[0]):
        xb = X[lane].reshape(-1, bc)[bcols]
        contrib = np.einsum("krc,kc->kr", blocks, xb)
        out = np.zeros((rb1 - rb0, br), dtype=np.float32)
        if len(live):
            out[live] = np.add.reduceat(contrib, starts, axis=0)
        Y[lane, rb0 * br:rb1 * br] = out.reshape(-1)


def half_to_float(bits):
    return np.asarray(bits, dtype=np.uint16).view(np.float16).astype(np.float32)


def gate_nonlinearities(pre, out):
    split = (2 * len(pre)) // 3
    out[:split] = 1.0 / (1.0 + np.exp(-pre[:split]))
    out[split:] = np.tanh(pre[split:])
