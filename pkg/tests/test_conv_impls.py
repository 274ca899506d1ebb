"""Cross-check of the direct-loop and im2col convolution paths."""
import numpy as np

from lithocnn.engine import ConvParams, Tensor, conv2d, conv2d_direct, no_grad


def random_case(rng):
    B = int(rng.integers(1, 3))
    C = int(rng.integers(1, 4))
    K = int(rng.integers(1, 5))
    F = int(rng.choice([1, 3, 5]))
    S = int(rng.integers(1, 4))
    P = int(rng.integers(0, 3))
    # smallest H giving at least two output positions
    span = S * int(rng.integers(1, 4))
    H = F - 2 * P + span
    while H < F - 2 * P or H < 1:
        H += S
    x = rng.normal(size=(B, C, H, H))
    k = rng.normal(size=(K, C, F, F))
    b = rng.normal(size=K)
    return x, k, b, ConvParams(F, S, P, C, K)


def test_paths_agree_on_100_random_geometries():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        x, k, b, params = random_case(rng)
        with no_grad():
            fast = conv2d(Tensor(x), Tensor(k), Tensor(b), params).data
        ref = conv2d_direct(x, k, b, params)
        worst = max(worst, float(np.abs(fast - ref).max()))
    assert worst <= 1e-10, f"paths diverge by {worst:.3e}"


def test_single_image_layout_matches_batched():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 9, 9)).astype(np.float32)
    k = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    b = rng.normal(size=4).astype(np.float32)
    params = ConvParams(3, 2, 1, 3, 4)
    with no_grad():
        single = conv2d(Tensor(x), Tensor(k), Tensor(b), params).data
        batched = conv2d(Tensor(x[None]), Tensor(k), Tensor(b), params).data[0]
    assert np.array_equal(single, batched)
    assert np.allclose(single, conv2d_direct(x, k, b, params), atol=1e-5)
