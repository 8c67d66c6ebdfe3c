"""
Property suites run by the ``check`` command.

Every check runs with fixed seeds and reports its worst observed error; a failing
check names the seed of its first counterexample.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.kernel import ops
from app.kernel.gradcheck import gradcheck, gradcheck_params
from app.kernel.tensor import WIDE, Tape, Tensor, backward
from app.services import oracles
from app.services.backbone import DFormerV2, GSABlock, ModelConfig
from app.services.data_pipeline import synth_scene
from app.services.geo_attention import (
    DECAY_STRATEGY_TABLE,
    AttentionLayerWeights,
    AttentionMode,
    DecaySchedule,
    DecayStrategy,
    decayed_attention_weights,
    gsa_axial,
    gsa_full,
    multi_head_gsa,
    sample_decay_rates,
    vanilla_attention,
)
from app.services.geometry_prior import (
    DepthGrid,
    FusionMemory,
    FusionMode,
    StagePriorBasis,
    axial_priors,
    build_geometry_prior,
    decay_tensor,
    depth_distance_matrix,
    fuse_priors,
    spatial_distance_matrix,
)

logger = logging.getLogger(__name__)

SUITE_NAMES = ("kernel", "priors", "attention", "gradients")
FAULTS = ("beta-above-one",)
FAULT_BETA = 1.25

ORACLE_TOL = 1e-12
GRAD_TOL = 1e-4
E2E_GRAD_TOL = 1e-3


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    worst: float = 0.0
    tolerance: Optional[float] = None
    seed: Optional[int] = None
    seconds: float = 0.0
    detail: str = ""


DecayFn = Callable[[Tensor, float], np.ndarray]


def _checked_decay(G: Tensor, beta: float) -> np.ndarray:
    return decay_tensor(G, beta).data


def _faulty_decay(G: Tensor, beta: float) -> np.ndarray:
    # Skips rate validation and forces a rate above 1
    return np.exp(G.data * np.log(FAULT_BETA))


class _Violation(Exception):
    def __init__(self, seed: Optional[int], worst: float, detail: str):
        super().__init__(detail)
        self.seed = seed
        self.worst = worst
        self.detail = detail


def _run(suite: str, name: str, fn: Callable[[], Tuple[float, str]], tolerance: Optional[float]) -> CheckResult:
    start = time.perf_counter()
    try:
        worst, detail = fn()
        passed = tolerance is None or worst <= tolerance
        result = CheckResult(suite, name, passed, worst, tolerance, detail=detail)
    except _Violation as v:
        result = CheckResult(suite, name, False, v.worst, tolerance, seed=v.seed, detail=v.detail)
    except Exception as e:
        logger.warning(f"{suite}.{name} raised {type(e).__name__}: {e}")
        result = CheckResult(suite, name, False, float("inf"), tolerance, detail=f"{type(e).__name__}: {e}")
    result.seconds = time.perf_counter() - start
    logger.debug(f"{suite}.{name}: passed={result.passed} worst={result.worst:.3e}")
    return result


def _random_grid(rng: np.random.Generator, H: int, W: int) -> DepthGrid:
    return DepthGrid(Tensor(rng.random((H, W))))


def _random_memory(rng: np.random.Generator, fusion_mode: FusionMode = FusionMode.MEMORY) -> FusionMemory:
    return FusionMemory(fusion_mode=fusion_mode, w_depth=rng.uniform(-2, 2), w_spatial=rng.uniform(-2, 2))


# Kernel ----------------------------------------------------------------------

SOFTMAX_SUM_TOL = 1e-9


def check_matmul_oracle() -> Tuple[float, str]:
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(140_000 + seed)
        m, k, n = (int(v) for v in rng.integers(1, 9, size=3))
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
        err = float(np.abs(ops.matmul(Tensor(a), Tensor(b)).data - oracles.matmul_oracle(a, b)).max())
        worst = max(worst, err)
        if err > ORACLE_TOL:
            raise _Violation(140_000 + seed, err, f"matmul {m}x{k} @ {k}x{n} disagrees with the loop oracle")
    return worst, "100 random shapes up to 8x8x8"


def check_conv2d_oracle() -> Tuple[float, str]:
    worst = 0.0
    for seed in range(40):
        rng = np.random.default_rng(150_000 + seed)
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        H, W = int(rng.integers(3, 9)), int(rng.integers(3, 9))
        x, w, bias = rng.normal(size=(c_in, H, W)), rng.normal(size=(c_out, c_in, k, k)), rng.normal(size=c_out)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(bias), stride=stride, pad=pad).data
        err = float(np.abs(got - oracles.conv2d_oracle(x, w, bias, stride=stride, pad=pad)).max())
        worst = max(worst, err)
        if err > ORACLE_TOL:
            raise _Violation(150_000 + seed, err, f"conv2d k={k} stride={stride} pad={pad} disagrees with the loop oracle")
    return worst, "40 random convolutions"


def check_avg_pool_oracle() -> Tuple[float, str]:
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(160_000 + seed)
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        if seed % 2:
            sh, sw = kh, kw
            H, W = kh * int(rng.integers(1, 5)), kw * int(rng.integers(1, 5))
        else:
            sh, sw = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            H, W = int(rng.integers(kh, 9)), int(rng.integers(kw, 9))
            if (sh, sw) == (kh, kw):
                H, W = H - H % kh, W - W % kw
        x = rng.normal(size=(H, W))
        err = float(np.abs(ops.avg_pool2d(Tensor(x), kh, kw, sh, sw).data
                           - oracles.avg_pool_oracle(x, kh, kw, sh, sw)).max())
        worst = max(worst, err)
        if err > ORACLE_TOL:
            raise _Violation(160_000 + seed, err, f"avg_pool2d {kh}x{kw}/{sh}x{sw} on {H}x{W} disagrees with the loop oracle")
    return worst, "100 random windows, tiling and overlapping"


def check_softmax_rows(trials: int = 1000) -> Tuple[float, str]:
    """Rows sum to 1 and match the scalar softmax, including large logits."""
    worst = 0.0
    for seed in range(trials):
        rng = np.random.default_rng(170_000 + seed)
        rows, cols = int(rng.integers(1, 6)), int(rng.integers(1, 17))
        logits = rng.normal(size=(rows, cols)) * float(rng.choice([1.0, 30.0, 500.0]))
        y = ops.softmax_rows(Tensor(logits)).data
        err = float(np.abs(y.sum(axis=-1) - 1.0).max())
        if seed % 10 == 0:
            err = max(err, float(max(np.abs(np.asarray(oracles.softmax_oracle(list(r))) - y[i]).max()
                                     for i, r in enumerate(logits))))
        worst = max(worst, err)
        if err > SOFTMAX_SUM_TOL or y.min() < 0:
            raise _Violation(170_000 + seed, err, f"softmax rows off by {err:.2e} on a {rows}x{cols} input")
    return worst, f"{trials} random logit matrices"


def _tiny_model_gradients(model: DFormerV2, sample) -> List[np.ndarray]:
    model.zero_grad()
    rgb = Tensor(sample.rgb, requires_grad=True)
    with Tape() as tape:
        logits = model(rgb, sample.depth)
        K = logits.shape[0]
        flat = ops.reshape(ops.transpose(logits, (1, 2, 0)), (sample.labels.size, K))
        loss = ops.cross_entropy(flat, sample.labels.reshape(-1))
    backward(loss, tape)
    grads = [rgb.grad.copy()]
    grads += [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in model.parameters()]
    return grads


def check_backward_determinism() -> Tuple[float, str]:
    worst = 0.0
    for seed, arm in ((180_000, "both"), (180_001, "both-axial")):
        config = ModelConfig.tiny(init_seed=seed).for_arm(arm)
        model = DFormerV2(config)
        sample = synth_scene(seed, 32, 32, config.num_classes)
        first, second = _tiny_model_gradients(model, sample), _tiny_model_gradients(model, sample)
        for a, b in zip(first, second):
            if not np.array_equal(a, b):
                err = float(np.abs(a - b).max())
                raise _Violation(seed, err, f"two backward passes of the {arm} model disagree by {err:.2e}")
    return worst, "tiny model, full and axial, bit-identical gradients"


def kernel_suite(fault: Optional[str] = None) -> List[CheckResult]:
    return [
        _run("kernel", "matmul_oracle", check_matmul_oracle, ORACLE_TOL),
        _run("kernel", "conv2d_oracle", check_conv2d_oracle, ORACLE_TOL),
        _run("kernel", "avg_pool_oracle", check_avg_pool_oracle, ORACLE_TOL),
        _run("kernel", "softmax_rows", check_softmax_rows, SOFTMAX_SUM_TOL),
        _run("kernel", "backward_determinism", check_backward_determinism, 0.0),
    ]


# Priors ----------------------------------------------------------------------

def _grid_cases(random_cases: int, seed_base: int = 10_000, largest: int = 12) -> List[Tuple[int, int, int]]:
    """Every grid up to 6x6, then random larger ones."""
    cases = [(H, W, 100 * H + W) for H in range(1, 7) for W in range(1, 7)]
    rng = np.random.default_rng(seed_base)
    cases += [(int(rng.integers(7, largest + 1)), int(rng.integers(7, largest + 1)), seed_base + i)
              for i in range(random_cases)]
    return cases


def check_prior_structure(random_cases: int = 500) -> Tuple[float, str]:
    """D, S and G (every fusion mode) symmetric, nonnegative, zero-diagonal."""
    worst = 0.0
    cases = _grid_cases(random_cases)
    for H, W, seed in cases:
        rng = np.random.default_rng(seed)
        grid = _random_grid(rng, H, W)
        D = depth_distance_matrix(grid).data
        S = spatial_distance_matrix(H, W).data
        mats = {"D": D, "S": S}
        modes = list(FusionMode) if H * W <= 36 else [FusionMode.MEMORY]
        for mode in modes:
            mats[f"G[{mode.value}]"] = fuse_priors(Tensor(D), Tensor(S), _random_memory(rng, mode)).data
        for label, m in mats.items():
            asym = float(np.max(np.abs(m - m.T)))
            diag = float(np.max(np.abs(np.diag(m))))
            neg = float(max(0.0, -m.min()))
            worst = max(worst, asym, diag, neg)
            if asym or diag or neg:
                raise _Violation(seed, max(asym, diag, neg), f"{label} on {H}x{W}: asym={asym} diag={diag} neg={neg}")
    return worst, f"{len(cases)} grids"


def check_triangle_inequality() -> Tuple[float, str]:
    worst = 0.0
    for H in range(1, 6):
        for W in range(1, 6):
            S = spatial_distance_matrix(H, W).data
            excess = S[:, None, :] - (S[:, :, None] + S[None, :, :])
            worst = max(worst, float(excess.max()))
            if excess.max() > 0:
                raise _Violation(100 * H + W, float(excess.max()), f"triangle inequality broken on {H}x{W}")
    return 0.0, "grids up to 5x5, all triples"


def check_axial_consistency(random_cases: int = 50) -> Tuple[float, str]:
    worst = 0.0
    for H, W, seed in _grid_cases(random_cases, seed_base=20_000, largest=10):
        rng = np.random.default_rng(seed)
        grid = _random_grid(rng, H, W)
        mem = _random_memory(rng)
        G = fuse_priors(depth_distance_matrix(grid), spatial_distance_matrix(H, W), mem).data
        gx, gy = (t.data for t in axial_priors(grid, mem))
        p = np.arange(H * W)
        i, j = np.divmod(p, W)
        err_x = np.abs(gx - G[p[:, None], i[:, None] * W + np.arange(W)[None, :]]).max()
        err_y = np.abs(gy - G[p[:, None], np.arange(H)[None, :] * W + j[:, None]]).max()
        err = float(max(err_x, err_y))
        worst = max(worst, err)
        if err > ORACLE_TOL:
            raise _Violation(seed, err, f"axial slice mismatch on {H}x{W}")
    return worst, "Gx/Gy against same-row/column slices of G"


def check_decay_range(decay_fn: DecayFn) -> Tuple[float, str]:
    """Decay values in (0, 1], exactly 1 on the zero set of G and below 1 elsewhere."""
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(30_000 + seed)
        H, W = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        grid = _random_grid(rng, H, W)
        G = build_geometry_prior(grid, _random_memory(rng), axial=False).G
        beta = float(rng.choice([0.25, 0.5, 0.75, 0.8125, 0.9375]))
        decay = decay_fn(G, beta)
        over = float(max(0.0, decay.max() - 1.0))
        worst = max(worst, over)
        zero = G.data == 0
        if over > 0 or decay.min() <= 0:
            raise _Violation(30_000 + seed, over, f"decay outside (0, 1] (max {decay.max()}, beta {beta})")
        if np.any(decay[zero] != 1.0) or np.any(decay[~zero] >= 1.0):
            raise _Violation(30_000 + seed, over, "decay is not exactly 1 on the zero set of G")
    return worst, "200 random priors"


def check_decay_monotonic(decay_fn: DecayFn) -> Tuple[float, str]:
    for seed in range(100):
        rng = np.random.default_rng(40_000 + seed)
        H, W = int(rng.integers(2, 6)), int(rng.integers(2, 6))
        G = build_geometry_prior(_random_grid(rng, H, W), _random_memory(rng), axial=False).G.data.copy()
        p, q = rng.choice(H * W, size=2, replace=False)
        beta = float(rng.uniform(0.3, 0.99))
        before = decay_fn(Tensor(G), beta)[p, q]
        G[p, q] += float(rng.uniform(0.01, 1.0))
        after = decay_fn(Tensor(G), beta)[p, q]
        if not after < before:
            raise _Violation(40_000 + seed, float(after - before), f"decay did not decrease at ({p}, {q})")
    return 0.0, "100 single-entry increases"


def priors_suite(fault: Optional[str] = None) -> List[CheckResult]:
    decay_fn = _faulty_decay if fault == "beta-above-one" else _checked_decay
    return [
        _run("priors", "structure", check_prior_structure, 0.0),
        _run("priors", "triangle_inequality", check_triangle_inequality, 0.0),
        _run("priors", "axial_consistency", check_axial_consistency, ORACLE_TOL),
        _run("priors", "decay_range", lambda: check_decay_range(decay_fn), 0.0),
        _run("priors", "decay_monotonic", lambda: check_decay_monotonic(decay_fn), None),
    ]


# Attention -------------------------------------------------------------------

def _qkv(rng: np.random.Generator, N: int, d: int, lead: Tuple[int, ...] = ()) -> Tuple[Tensor, Tensor, Tensor]:
    return tuple(Tensor(rng.normal(size=lead + (N, d))) for _ in range(3))


def _random_prior_matrix(rng: np.random.Generator, N: int) -> Tensor:
    H = int(rng.integers(1, N + 1))
    while N % H:
        H -= 1
    grid = _random_grid(rng, H, N // H)
    return build_geometry_prior(grid, _random_memory(rng), axial=False).G.detach()


def check_boundary_equivalences() -> Tuple[float, str]:
    """gsa_full with beta = 1, and with G = 0 for any beta, equals vanilla attention."""
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(50_000 + seed)
        N, d = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        q, k, v = _qkv(rng, N, d)
        base = vanilla_attention(q, k, v).data
        G = _random_prior_matrix(rng, N)
        err = max(
            float(np.abs(gsa_full(q, k, v, G, 1.0).data - base).max()),
            float(np.abs(gsa_full(q, k, v, Tensor(np.zeros((N, N))), rng.uniform(0.1, 1.0)).data - base).max()),
        )
        worst = max(worst, err)
        if err > ORACLE_TOL:
            raise _Violation(50_000 + seed, err, f"boundary equivalence broken (N={N}, d={d})")
    return worst, "100 random instances"


def check_attenuation_bound() -> Tuple[float, str]:
    worst = 0.0
    for seed in range(1000):
        rng = np.random.default_rng(60_000 + seed)
        N, d = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        q, k, _ = _qkv(rng, N, d)
        G = _random_prior_matrix(rng, N)
        beta = float(rng.uniform(0.05, 1.0))
        pre = decayed_attention_weights(q, k).data
        post = decayed_attention_weights(q, k, decay_tensor(G, beta)).data
        excess = float((post - pre).max())
        sums = post.sum(axis=-1)
        worst = max(worst, excess, float(max(0.0, sums.max() - 1.0)))
        if excess > 0 or sums.min() <= 0 or sums.max() > 1.0 + 1e-12:
            raise _Violation(60_000 + seed, excess, "decayed weights exceed softmax weights or row sums leave (0, 1]")
    return worst, "1000 random instances"


def check_attention_oracles() -> Tuple[float, str]:
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(70_000 + seed)
        N, d = int(rng.integers(1, 7)), int(rng.integers(1, 5))
        q, k, v = _qkv(rng, N, d)
        G = _random_prior_matrix(rng, N)
        beta = float(rng.uniform(0.5, 1.0))
        errs = [
            np.abs(vanilla_attention(q, k, v).data - oracles.attention_oracle(q.data, k.data, v.data)).max(),
            np.abs(gsa_full(q, k, v, G, beta).data
                   - oracles.gsa_full_oracle(q.data, k.data, v.data, G.data, beta)).max(),
        ]
        H, W = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        grid = _random_grid(rng, H, W)
        gx, gy = (t.detach() for t in axial_priors(grid, _random_memory(rng)))
        qa, ka, va = (Tensor(rng.normal(size=(H, W, d))) for _ in range(3))
        errs.append(np.abs(gsa_axial(qa, ka, va, gx, gy, beta).data
                           - oracles.gsa_axial_oracle(qa.data, ka.data, va.data, gx.data, gy.data, beta)).max())
        err = float(max(errs))
        worst = max(worst, err)
        if err > ORACLE_TOL:
            raise _Violation(70_000 + seed, err, "attention kernel disagrees with its scalar oracle")
    return worst, "vanilla, full and axial against scalar loops"


def _permute_heads(w: AttentionLayerWeights, order: np.ndarray) -> AttentionLayerWeights:
    dh = w.head_dim
    cols = np.concatenate([np.arange(h * dh, (h + 1) * dh) for h in order])
    other = AttentionLayerWeights(w.dim, w.heads, np.random.default_rng(0), w.mode, w.fusion.kind, w.fusion.fusion_mode)
    other.wq.data = w.wq.data[:, cols].copy()
    other.wk.data = w.wk.data[:, cols].copy()
    other.wv.data = w.wv.data[:, cols].copy()
    other.wo.data = w.wo.data[cols, :].copy()
    other.fusion.load_state_dict(w.fusion.state_dict())
    return other


def check_head_permutation() -> Tuple[float, str]:
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(80_000 + seed)
        H, W, heads, dh = 2, 3, 4, 2
        C = heads * dh
        w = AttentionLayerWeights(C, heads, rng)
        sched = sample_decay_rates("linear(0.75,1.0)", heads)
        order = rng.permutation(heads)
        permuted = DecaySchedule(sched.strategy, tuple(sched.rates[h] for h in order))
        x = Tensor(rng.normal(size=(H * W, C)))
        grid = _random_grid(rng, H, W)
        for mode in AttentionMode:
            prior = build_geometry_prior(grid, w.fusion)
            a = multi_head_gsa(x, prior, w, sched, mode).data
            b = multi_head_gsa(x, prior, _permute_heads(w, order), permuted, mode).data
            err = float(np.abs(a - b).max())
            worst = max(worst, err)
            if err > ORACLE_TOL:
                raise _Violation(80_000 + seed, err, f"head permutation changed the {mode.value} output")
    return worst, "outputs equal up to summation order"


def check_determinism() -> Tuple[float, str]:
    rng = np.random.default_rng(90_000)
    w = AttentionLayerWeights(8, 2, rng)
    sched = sample_decay_rates(DecayStrategy.linear(0.75, 1.0), 2)
    x = Tensor(rng.normal(size=(12, 8)))
    prior = build_geometry_prior(_random_grid(rng, 3, 4), w.fusion)
    for mode in AttentionMode:
        a = multi_head_gsa(x, prior, w, sched, mode).data
        b = multi_head_gsa(x, prior, w, sched, mode).data
        if not np.array_equal(a, b):
            raise _Violation(90_000, float(np.abs(a - b).max()), f"{mode.value} attention is not deterministic")
    return 0.0, "bit-identical reruns"


def check_decay_schedules() -> Tuple[float, str]:
    rates = sample_decay_rates("linear(0.75,1.0)", 4).rates
    expected = (0.75, 0.8125, 0.875, 0.9375)
    if rates != expected:
        raise _Violation(None, float(np.abs(np.subtract(rates, expected)).max()), f"linear(0.75,1.0) gave {rates}")
    for strategy in DECAY_STRATEGY_TABLE:
        for heads in (1, 2, 4, 8):
            sched = sample_decay_rates(strategy, heads)
            if len(sched.rates) != heads or not all(0 < r < 1 for r in sched.rates):
                raise _Violation(None, 0.0, f"{strategy} with {heads} heads gave {sched.rates}")
    return 0.0, f"{len(DECAY_STRATEGY_TABLE)} strategies"


def attention_suite(fault: Optional[str] = None) -> List[CheckResult]:
    return [
        _run("attention", "boundary_equivalences", check_boundary_equivalences, ORACLE_TOL),
        _run("attention", "attenuation_bound", check_attenuation_bound, 1e-12),
        _run("attention", "scalar_oracles", check_attention_oracles, ORACLE_TOL),
        _run("attention", "head_permutation", check_head_permutation, ORACLE_TOL),
        _run("attention", "determinism", check_determinism, 0.0),
        _run("attention", "decay_schedules", check_decay_schedules, 0.0),
    ]


# Gradients -------------------------------------------------------------------

def _primitive_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable[[Tensor], Tensor], np.ndarray]]:
    b = Tensor(rng.normal(size=(5, 4)))
    w_conv = Tensor(rng.normal(size=(3, 2, 3, 3)))
    gamma, shift = Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))
    labels = rng.integers(0, 4, size=7)
    labels[0] = 255
    weights = Tensor(rng.normal(size=(4, 6)))
    readout = Tensor(rng.normal(size=(3, 4)))
    return {
        "matmul": (lambda x: ops.sum(ops.mul(ops.matmul(x, b), readout)), rng.normal(size=(3, 5))),
        "softmax_rows": (lambda x: ops.sum(ops.mul(ops.softmax_rows(x), weights)), rng.normal(size=(4, 6))),
        "exp_decay": (lambda x: ops.sum(ops.exp_decay(ops.abs(x), 0.75)), rng.uniform(0.2, 2.0, size=(4, 4))),
        "avg_pool2d": (lambda x: ops.sum(ops.mul(ops.avg_pool2d(x, 2, 2, 2, 2), ops.avg_pool2d(x, 2, 2, 2, 2))),
                       rng.normal(size=(4, 6))),
        "conv2d": (lambda x: ops.sum(ops.gelu(ops.conv2d(x, w_conv, stride=2, pad=1))), rng.normal(size=(2, 6, 6))),
        "layer_norm": (lambda x: ops.sum(ops.mul(ops.layer_norm(x, gamma, shift), weights)), rng.normal(size=(4, 6))),
        "cross_entropy": (lambda x: ops.cross_entropy(x, labels), rng.normal(size=(7, 4))),
        "gelu": (lambda x: ops.sum(ops.mul(ops.gelu(x), x)), rng.normal(size=(3, 5))),
        "resize_bilinear": (lambda x: ops.sum(ops.mul(ops.resize_bilinear(x, 6, 8), ops.resize_bilinear(x, 6, 8))),
                            rng.normal(size=(2, 3, 4))),
    }


def check_primitive_gradients() -> Tuple[float, str]:
    rng = np.random.default_rng(100_000)
    worst = 0.0
    for name, (fn, x0) in _primitive_cases(rng).items():
        err = gradcheck(fn, Tensor(x0))
        worst = max(worst, err)
        if err > GRAD_TOL:
            raise _Violation(100_000, err, f"{name} gradient off by {err:.2e}")
    return worst, "primitive ops"


def check_attention_gradients() -> Tuple[float, str]:
    worst = 0.0
    for seed, mode in ((110_000, AttentionMode.FULL), (110_001, AttentionMode.AXIAL)):
        rng = np.random.default_rng(seed)
        H, W, C, heads = 2, 3, 4, 2
        w = AttentionLayerWeights(C, heads, rng)
        w.wq.data = rng.normal(size=(C, C)) * 0.5
        w.wk.data = rng.normal(size=(C, C)) * 0.5
        sched = sample_decay_rates("linear(0.75,1.0)", heads)
        basis = StagePriorBasis.build(_random_grid(rng, H, W))
        x0 = Tensor(rng.normal(size=(H * W, C)))
        readout = Tensor(rng.normal(size=(H * W, C)))

        def loss_x(x: Tensor) -> Tensor:
            return ops.sum(ops.mul(multi_head_gsa(x, basis.fuse(w.fusion), w, sched, mode), readout))

        def loss_params() -> Tensor:
            return loss_x(x0)

        err = max(gradcheck(loss_x, x0, max_elements=32, rng=np.random.default_rng(1)),
                  gradcheck_params(loss_params, w.parameters()))
        worst = max(worst, err)
        if err > GRAD_TOL:
            raise _Violation(seed, err, f"multi_head_gsa ({mode.value}) gradient off by {err:.2e}")
    return worst, "multi-head GSA, full and axial, 2x3 grid, 2 heads"


def check_block_gradients() -> Tuple[float, str]:
    rng = np.random.default_rng(120_000)
    nano = ModelConfig.nano()
    H, W, C, heads = 2, 2, nano.stage_dims[0], nano.stage_heads[0]
    block = GSABlock(C, heads, nano.ffn_hidden(C), rng)
    sched = sample_decay_rates(nano.decay_strategy, heads)
    basis = StagePriorBasis.build(_random_grid(rng, H, W))
    x0 = Tensor(rng.normal(size=(H * W, C)))
    readout = Tensor(rng.normal(size=(H * W, C)))

    def loss_x(x: Tensor) -> Tensor:
        return ops.sum(ops.mul(block(x, basis, sched, AttentionMode.FULL), readout))

    err = max(gradcheck(loss_x, x0), gradcheck_params(lambda: loss_x(x0), block.parameters(), max_elements=6,
                                                         rng=np.random.default_rng(1)))
    if err > GRAD_TOL:
        raise _Violation(120_000, err, f"GSA block gradient off by {err:.2e}")
    return err, f"one stage-0 block on {H}x{W}x{C} features"


def check_model_gradients(config: Optional[ModelConfig] = None, size: int = 32) -> Tuple[float, str]:
    config = config or ModelConfig.nano(numeric_mode=WIDE)
    model = DFormerV2(config)
    sample = synth_scene(130_000, size, size, config.num_classes)
    labels = sample.labels.reshape(-1)

    def loss_rgb(rgb: Tensor) -> Tensor:
        logits = model(rgb, sample.depth)
        K = logits.shape[0]
        return ops.cross_entropy(ops.reshape(ops.transpose(logits, (1, 2, 0)), (size * size, K)), labels)

    rng = np.random.default_rng(130_001)
    params = [p for name, p in model.named_parameters() if "fusion" in name or "classifier" in name]
    err = max(
        gradcheck(loss_rgb, Tensor(sample.rgb), max_elements=12, rng=rng),
        gradcheck_params(lambda: loss_rgb(Tensor(sample.rgb)), params, max_elements=2, rng=rng),
    )
    if err > E2E_GRAD_TOL:
        raise _Violation(130_000, err, f"end-to-end gradient off by {err:.2e}")
    return err, f"{sum(config.stage_depths)}-block model on {size}x{size} input"


def gradients_suite(fault: Optional[str] = None) -> List[CheckResult]:
    return [
        _run("gradients", "primitives", check_primitive_gradients, GRAD_TOL),
        _run("gradients", "multi_head_gsa", check_attention_gradients, GRAD_TOL),
        _run("gradients", "gsa_block", check_block_gradients, GRAD_TOL),
        _run("gradients", "end_to_end", check_model_gradients, E2E_GRAD_TOL),
    ]


SUITES: Dict[str, Callable[[Optional[str]], List[CheckResult]]] = {
    "kernel": kernel_suite,
    "priors": priors_suite,
    "attention": attention_suite,
    "gradients": gradients_suite,
}


def run_suites(suite: str = "all", fault: Optional[str] = None) -> List[CheckResult]:
    names = SUITE_NAMES if suite == "all" else (suite,)
    results: List[CheckResult] = []
    for name in names:
        logger.info(f"Running {name} suite")
        results.extend(SUITES[name](fault))
    return results
